import sys

from inflaw.cli import main

sys.exit(main())
