"""Text format for timed policies (``.vdta`` files).

A policy file looks like::

    policy normal
    inputs R: array, v: scalar
    outputs d: scalar, a: scalar
    clocks x
    locations
      l_drive accepting initial
      l_warn
    transition l_drive -> l_warn when min_front(R) <= 1.2 reset {x}

See ``docs/dsl.md`` for the full grammar.  :func:`parse_policy` turns text
into a :class:`PolicyAst`, :func:`format_policy` goes the other way.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Union


class DslError(Exception):
    """Base class for policy text errors; carries a source position."""

    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.line = line
        self.col = col
        where = f"{line}:{col}: " if line else ""
        super().__init__(where + message)


class LexError(DslError):
    pass


class PolicySyntaxError(DslError):
    pass


class UndeclaredIdentifier(DslError):
    pass


class DuplicateIdentifier(DslError):
    pass


class MultipleInitialLocations(DslError):
    pass


class NoInitialLocation(DslError):
    pass


class NoAcceptingLocation(DslError):
    pass


# --------------------------------------------------------------------------
# AST

@dataclass(frozen=True)
class Const:
    value: Fraction


@dataclass(frozen=True)
class Ref:
    """A channel or clock name; which one is decided by the declarations."""
    name: str


@dataclass(frozen=True)
class Neg:
    term: "Term"


@dataclass(frozen=True)
class FnCall:
    name: str
    args: tuple["Term", ...]


Term = Union[Const, Ref, Neg, FnCall]

OPS = ("<", "<=", "=", ">=", ">", "!=")


@dataclass(frozen=True)
class Comparison:
    lhs: Term
    op: str
    rhs: Term


@dataclass(frozen=True)
class Conjunction:
    children: tuple[Comparison, ...] = ()


GuardExpr = Conjunction


@dataclass(frozen=True)
class ChannelDecl:
    name: str
    kind: str  # "scalar" | "array"


@dataclass(frozen=True)
class LocationDecl:
    name: str
    accepting: bool = False
    initial: bool = False


@dataclass(frozen=True)
class TransitionAst:
    src: str
    dst: str
    guard: Conjunction
    resets: frozenset[str] = frozenset()
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class PolicyAst:
    name: str
    inputs: tuple[ChannelDecl, ...]
    outputs: tuple[ChannelDecl, ...]
    clocks: tuple[str, ...]
    locations: tuple[LocationDecl, ...]
    transitions: tuple[TransitionAst, ...]


def term_refs(term: Term) -> set[str]:
    if isinstance(term, Ref):
        return {term.name}
    if isinstance(term, Neg):
        return term_refs(term.term)
    if isinstance(term, FnCall):
        out: set[str] = set()
        for a in term.args:
            out |= term_refs(a)
        return out
    return set()


def comparison_refs(cmp: Comparison) -> set[str]:
    return term_refs(cmp.lhs) | term_refs(cmp.rhs)


# --------------------------------------------------------------------------
# Lexer

KEYWORDS = {
    "policy", "inputs", "outputs", "clocks", "locations", "transition",
    "when", "reset", "and", "true", "accepting", "initial", "scalar", "array",
}

_OP_ALIASES = {
    "<": "<", "<=": "<=", "≤": "<=", "=": "=", "==": "=", ">=": ">=", "≥": ">=",
    ">": ">", "!=": "!=", "≠": "!=",
}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<nl>\n)
  | (?P<number>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<arrow>->|→)
  | (?P<op><=|>=|==|!=|[<>=≤≥≠])
  | (?P<conj>&&|∧)
  | (?P<punct>[(),:{}\-])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # nl | number | ident | kw | arrow | op | punct | eof
    text: str
    line: int
    col: int


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    pos, line, line_start = 0, 1, 0
    n = len(source)
    while pos < n:
        m = _TOKEN_RE.match(source, pos)
        col = pos - line_start + 1
        if m is None:
            raise LexError(f"unexpected character {source[pos]!r}", line, col)
        kind = m.lastgroup
        text = m.group()
        if kind == "nl":
            tokens.append(Token("nl", text, line, col))
            line += 1
            line_start = m.end()
        elif kind == "ident":
            tokens.append(Token("kw" if text in KEYWORDS else "ident", text, line, col))
        elif kind == "op":
            tokens.append(Token("op", _OP_ALIASES[text], line, col))
        elif kind == "conj":
            tokens.append(Token("kw", "and", line, col))
        elif kind in ("number", "arrow", "punct"):
            tokens.append(Token(kind, text, line, col))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


# --------------------------------------------------------------------------
# Parser

class _Parser:
    def __init__(self, tokens: list[Token]):
        self.toks = tokens
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def error(self, msg: str) -> PolicySyntaxError:
        t = self.tok
        found = "end of input" if t.kind == "eof" else ("newline" if t.kind == "nl" else repr(t.text))
        return PolicySyntaxError(f"{msg}, found {found}", t.line, t.col)

    def at(self, kind: str, text: str | None = None) -> bool:
        t = self.tok
        return t.kind == kind and (text is None or t.text == text)

    def accept(self, kind: str, text: str | None = None) -> Token | None:
        if self.at(kind, text):
            t = self.tok
            self.i += 1
            return t
        return None

    def expect(self, kind: str, text: str | None = None, what: str | None = None) -> Token:
        t = self.accept(kind, text)
        if t is None:
            raise self.error(f"expected {what or text or kind}")
        return t

    def skip_newlines(self) -> None:
        while self.accept("nl"):
            pass

    def end_of_line(self) -> None:
        if self.at("eof"):
            return
        self.expect("nl", what="end of line")
        self.skip_newlines()

    # -- sections --------------------------------------------------------

    def parse(self) -> tuple[PolicyAst, dict[str, tuple[int, int]]]:
        self.positions: dict[str, tuple[int, int]] = {}
        self.skip_newlines()
        self.expect("kw", "policy")
        name = self.expect("ident", what="policy name").text
        self.end_of_line()
        inputs: list[ChannelDecl] = []
        outputs: list[ChannelDecl] = []
        clocks: list[str] = []
        locations: list[LocationDecl] = []
        transitions: list[TransitionAst] = []
        while not self.at("eof"):
            if self.accept("kw", "inputs"):
                inputs.extend(self.channel_decls())
                self.end_of_line()
            elif self.accept("kw", "outputs"):
                outputs.extend(self.channel_decls())
                self.end_of_line()
            elif self.accept("kw", "clocks"):
                clocks.extend(self.ident_list(stop=("nl", "eof")))
                self.end_of_line()
            elif self.accept("kw", "locations"):
                self.skip_newlines()
                while self.at("ident"):
                    locations.append(self.location_decl())
                    self.end_of_line()
            elif self.at("kw", "transition"):
                transitions.append(self.transition())
                self.end_of_line()
            else:
                raise self.error("expected a section keyword")
        ast = PolicyAst(name, tuple(inputs), tuple(outputs), tuple(clocks),
                        tuple(locations), tuple(transitions))
        return ast, self.positions

    def declare(self, tok: Token) -> None:
        self.positions.setdefault(tok.text, (tok.line, tok.col))

    def channel_decls(self) -> list[ChannelDecl]:
        out = []
        if self.at("nl") or self.at("eof"):
            return out
        while True:
            tok = self.expect("ident", what="channel name")
            self.expect("punct", ":")
            kind = self.accept("kw", "scalar") or self.accept("kw", "array")
            if kind is None:
                raise self.error("expected 'scalar' or 'array'")
            self.declare(tok)
            out.append(ChannelDecl(tok.text, kind.text))
            if not self.accept("punct", ","):
                return out

    def ident_list(self, stop: tuple[str, ...]) -> list[str]:
        out = []
        if self.tok.kind in stop:
            return out
        while True:
            tok = self.expect("ident", what="identifier")
            self.declare(tok)
            out.append(tok.text)
            if not self.accept("punct", ","):
                return out

    def location_decl(self) -> LocationDecl:
        tok = self.expect("ident", what="location name")
        self.declare(tok)
        accepting = initial = False
        while True:
            if self.accept("kw", "accepting"):
                accepting = True
            elif self.accept("kw", "initial"):
                initial = True
            else:
                break
        return LocationDecl(tok.text, accepting, initial)

    def transition(self) -> TransitionAst:
        kw = self.expect("kw", "transition")
        src = self.expect("ident", what="source location").text
        self.expect("arrow", what="'->'")
        dst = self.expect("ident", what="target location").text
        self.expect("kw", "when")
        guard = self.guard()
        resets: list[str] = []
        if self.accept("kw", "reset"):
            self.expect("punct", "{")
            resets = self.ident_list(stop=("punct",))
            self.expect("punct", "}")
        return TransitionAst(src, dst, guard, frozenset(resets), line=kw.line)

    # -- expressions -----------------------------------------------------

    def guard(self) -> Conjunction:
        if self.accept("kw", "true"):
            return Conjunction(())
        parts = [self.comparison()]
        while self.accept("kw", "and"):
            if self.accept("kw", "true"):
                continue
            parts.append(self.comparison())
        return Conjunction(tuple(parts))

    def comparison(self) -> Comparison:
        lhs = self.term()
        op = self.expect("op", what="comparison operator").text
        rhs = self.term()
        return Comparison(lhs, op, rhs)

    def term(self) -> Term:
        if self.accept("punct", "-"):
            inner = self.term()
            if isinstance(inner, Const):
                return Const(-inner.value)
            return Neg(inner)
        num = self.accept("number")
        if num is not None:
            return Const(Fraction(num.text))
        if self.accept("punct", "("):
            inner = self.term()
            self.expect("punct", ")")
            return inner
        tok = self.expect("ident", what="a term")
        if self.accept("punct", "("):
            args: list[Term] = []
            if not self.accept("punct", ")"):
                args.append(self.term())
                while self.accept("punct", ","):
                    args.append(self.term())
                self.expect("punct", ")")
            return FnCall(tok.text, tuple(args))
        return Ref(tok.text)


def parse_policy(source: str | bytes) -> PolicyAst:
    """Parse and validate policy text.

    Raises a :class:`DslError` subclass carrying line/column on any problem.
    """
    if isinstance(source, (bytes, bytearray)):
        try:
            source = bytes(source).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise LexError(f"policy text is not valid UTF-8: {exc.reason}") from None
    tokens = tokenize(source)
    ast, positions = _Parser(tokens).parse()
    validate(ast, positions)
    return ast


def validate(ast: PolicyAst, positions: dict[str, tuple[int, int]] | None = None) -> None:
    positions = positions or {}

    def pos(name: str) -> tuple[int, int]:
        return positions.get(name, (0, 0))

    seen: set[str] = set()
    for name in ([c.name for c in ast.inputs] + [c.name for c in ast.outputs]
                 + list(ast.clocks) + [loc.name for loc in ast.locations]):
        if name in seen:
            raise DuplicateIdentifier(f"{name!r} declared twice", *pos(name))
        seen.add(name)

    if not ast.locations:
        raise NoInitialLocation("policy declares no locations")
    initials = [loc.name for loc in ast.locations if loc.initial]
    if len(initials) > 1:
        raise MultipleInitialLocations(
            f"several initial locations: {', '.join(initials)}", *pos(initials[1]))
    if not initials:
        raise NoInitialLocation("no location is marked initial")
    if not any(loc.accepting for loc in ast.locations):
        raise NoAcceptingLocation("no location is marked accepting")

    loc_names = {loc.name for loc in ast.locations}
    value_names = ({c.name for c in ast.inputs} | {c.name for c in ast.outputs}
                   | set(ast.clocks))
    clocks = set(ast.clocks)
    for tr in ast.transitions:
        for end in (tr.src, tr.dst):
            if end not in loc_names:
                raise UndeclaredIdentifier(f"undeclared location {end!r}", tr.line, 0)
        for cmp in tr.guard.children:
            for name in sorted(comparison_refs(cmp)):
                if name not in value_names:
                    raise UndeclaredIdentifier(f"undeclared identifier {name!r}", tr.line, 0)
        for name in sorted(tr.resets):
            if name not in clocks:
                raise UndeclaredIdentifier(f"reset of undeclared clock {name!r}", tr.line, 0)


# --------------------------------------------------------------------------
# Pretty printer

def format_const(value: Fraction) -> str:
    """Exact decimal text for a rational with a terminating expansion."""
    value = Fraction(value)
    sign = "-" if value < 0 else ""
    value = abs(value)
    whole, rem = divmod(value.numerator, value.denominator)
    if rem == 0:
        return f"{sign}{whole}"
    digits = []
    seen = 0
    while rem and seen < 64:
        rem *= 10
        d, rem = divmod(rem, value.denominator)
        digits.append(str(d))
        seen += 1
    if rem:
        raise ValueError(f"{value} has no finite decimal expansion")
    return f"{sign}{whole}.{''.join(digits)}"


def format_term(term: Term) -> str:
    if isinstance(term, Const):
        return format_const(term.value)
    if isinstance(term, Ref):
        return term.name
    if isinstance(term, Neg):
        inner = format_term(term.term)
        return f"-({inner})" if isinstance(term.term, (Neg, Const)) else f"-{inner}"
    args = ", ".join(format_term(a) for a in term.args)
    return f"{term.name}({args})"


def format_guard(guard: Conjunction) -> str:
    if not guard.children:
        return "true"
    return " and ".join(f"{format_term(c.lhs)} {c.op} {format_term(c.rhs)}"
                        for c in guard.children)


def format_policy(ast: PolicyAst) -> str:
    def decls(chans: tuple[ChannelDecl, ...]) -> str:
        return ", ".join(f"{c.name}: {c.kind}" for c in chans)

    lines = [f"policy {ast.name}"]
    lines.append(f"inputs {decls(ast.inputs)}".rstrip())
    lines.append(f"outputs {decls(ast.outputs)}".rstrip())
    lines.append(f"clocks {', '.join(ast.clocks)}".rstrip())
    lines.append("locations")
    for loc in ast.locations:
        flags = (" accepting" if loc.accepting else "") + (" initial" if loc.initial else "")
        lines.append(f"  {loc.name}{flags}")
    for tr in ast.transitions:
        line = f"transition {tr.src} -> {tr.dst} when {format_guard(tr.guard)}"
        if tr.resets:
            line += " reset {" + ", ".join(sorted(tr.resets)) + "}"
        lines.append(line)
    return "\n".join(lines) + "\n"
