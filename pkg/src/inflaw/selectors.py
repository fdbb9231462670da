"""Split-selector expressions over training runs.

Grammar::

    expr    := term ("or" term)*
    term    := factor ("and" factor)*
    factor  := "not" factor | "(" expr ")" | "true" | "false" | test
    test    := field ("==" | "!=") value
             | field "in" "{" value ("," value)* "}"
    field   := "tag" | "size" | "variant" | "label"

Values are bare words (``20N``, ``80M``, ``v1``) or quoted strings. ``size``
is the label prefix before the first dash (``80M`` for ``80M-v1``) and
``variant`` the ``vN`` suffix.

Example: ``tag in {20N} or (size == 80M and tag == 160N)``
"""

from __future__ import annotations

import re
from typing import Callable

from inflaw.data import TrainingRun

FIELDS = {
    "tag": lambda run: run.tag,
    "size": lambda run: run.size_label,
    "variant": lambda run: run.variant,
    "label": lambda run: run.label,
}

_TOKEN_RE = re.compile(
    r"""\s*(?:
        (?P<op>==|!=|[(){},])
      | "(?P<dq>[^"]*)"
      | '(?P<sq>[^']*)'
      | (?P<word>[A-Za-z0-9_.+\-/]+)
    )""",
    re.VERBOSE,
)

KEYWORDS = {"and", "or", "not", "in", "true", "false"}


class SelectorSyntaxError(ValueError):
    pass


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m or m.end() == pos:
            raise SelectorSyntaxError(f"unexpected character {text[pos:].lstrip()[:1]!r} at offset {pos}")
        pos = m.end()
        if m.group("op"):
            tokens.append(("op", m.group("op")))
        elif m.group("dq") is not None:
            tokens.append(("str", m.group("dq")))
        elif m.group("sq") is not None:
            tokens.append(("str", m.group("sq")))
        else:
            word = m.group("word")
            tokens.append(("kw" if word.lower() in KEYWORDS else "word", word.lower() if word.lower() in KEYWORDS else word))
    return tokens


Predicate = Callable[[TrainingRun], bool]


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else ("eof", "")

    def take(self, kind=None, value=None):
        tok = self.peek()
        if (kind and tok[0] != kind) or (value is not None and tok[1] != value):
            want = value or kind
            got = tok[1] or "end of expression"
            raise SelectorSyntaxError(f"expected {want!r}, got {got!r} in {self.text!r}")
        self.pos += 1
        return tok

    def parse(self) -> Predicate:
        pred = self.expr()
        if self.peek()[0] != "eof":
            raise SelectorSyntaxError(f"unexpected {self.peek()[1]!r} in {self.text!r}")
        return pred

    def expr(self) -> Predicate:
        parts = [self.term()]
        while self.peek() == ("kw", "or"):
            self.take()
            parts.append(self.term())
        if len(parts) == 1:
            return parts[0]
        return lambda run: any(p(run) for p in parts)

    def term(self) -> Predicate:
        parts = [self.factor()]
        while self.peek() == ("kw", "and"):
            self.take()
            parts.append(self.factor())
        if len(parts) == 1:
            return parts[0]
        return lambda run: all(p(run) for p in parts)

    def factor(self) -> Predicate:
        kind, value = self.peek()
        if (kind, value) == ("kw", "not"):
            self.take()
            inner = self.factor()
            return lambda run: not inner(run)
        if (kind, value) == ("op", "("):
            self.take()
            inner = self.expr()
            self.take("op", ")")
            return inner
        if (kind, value) == ("kw", "true"):
            self.take()
            return lambda run: True
        if (kind, value) == ("kw", "false"):
            self.take()
            return lambda run: False
        return self.test()

    def value(self) -> str:
        kind, value = self.peek()
        if kind not in ("word", "str"):
            raise SelectorSyntaxError(f"expected a value, got {value or 'end of expression'!r} in {self.text!r}")
        self.pos += 1
        return value

    def test(self) -> Predicate:
        _, name = self.take("word")
        if name not in FIELDS:
            raise SelectorSyntaxError(f"unknown field {name!r}; fields are {', '.join(FIELDS)}")
        getter = FIELDS[name]
        kind, op = self.peek()
        if (kind, op) in (("op", "=="), ("op", "!=")):
            self.take()
            target = self.value()
            if op == "==":
                return lambda run: getter(run) == target
            return lambda run: getter(run) != target
        if (kind, op) == ("kw", "in"):
            self.take()
            self.take("op", "{")
            values = {self.value()}
            while self.peek() == ("op", ","):
                self.take()
                values.add(self.value())
            self.take("op", "}")
            return lambda run: getter(run) in values
        raise SelectorSyntaxError(f"expected '==', '!=' or 'in' after {name!r} in {self.text!r}")


def parse_selector(text: str) -> Predicate:
    """Compile a selector expression into a predicate over runs."""
    if not text.strip():
        raise SelectorSyntaxError("empty selector")
    predicate = _Parser(text).parse()
    predicate.description = text.strip()
    return predicate
