"""Valued discrete timed automata: elaboration and per-tick execution.

A :class:`Vdta` is built from a parsed :class:`~ri_switch.dsl.PolicyAst` by
:func:`elaborate`.  Each guard comparison is classified as an input atom, an
output atom or a clock atom and compiled to a small closure, so that a tick
costs a handful of Python calls per outgoing transition.

Clocks advance by one on every consumed event and the guard's clock part is
evaluated on the advanced valuation; resets are applied afterwards.
"""

from __future__ import annotations

import itertools
import operator
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Iterable, Mapping

import numpy as np

from . import builtins as _builtins
from .builtins import EvalError
from .dsl import (
    ChannelDecl,
    Comparison,
    Const,
    DslError,
    FnCall,
    Neg,
    PolicyAst,
    Ref,
    Term,
    format_guard,
    format_term,
    parse_policy,
    term_refs,
)

CLOCK_MAX = 2**64 - 1


class ClockAtomMalformed(DslError):
    pass


class UnknownBuiltin(DslError):
    pass


class NonDeterministic(RuntimeError):
    """More than one outgoing transition is enabled."""


class Incomplete(RuntimeError):
    """No outgoing transition is enabled."""


class _Bottom:
    """The empty output of a suspended controller group."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "BOTTOM"

    def __reduce__(self):
        return (_Bottom, ())


BOTTOM = _Bottom()


@dataclass(frozen=True)
class IoEvent:
    """One tick of input and output channel values.

    ``output`` is either a full valuation of the output channels or
    :data:`BOTTOM`.
    """
    input: Mapping[str, Any]
    output: Any

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, IoEvent):
            return NotImplemented
        return _valuation_eq(self.input, other.input) and (
            self.output is other.output
            or (self.output is not BOTTOM and other.output is not BOTTOM
                and _valuation_eq(self.output, other.output)))

    __hash__ = None  # type: ignore[assignment]


def _valuation_eq(a: Mapping[str, Any], b: Mapping[str, Any]) -> bool:
    if a.keys() != b.keys():
        return False
    for k, va in a.items():
        vb = b[k]
        if isinstance(va, np.ndarray) or isinstance(vb, np.ndarray):
            if not np.array_equal(np.asarray(va), np.asarray(vb)):
                return False
        elif va != vb:
            return False
    return True


class Trace:
    """Append-only sequence of :class:`IoEvent`."""

    def __init__(self, events: Iterable[IoEvent] = ()):
        self._events: list[IoEvent] = list(events)

    def append(self, event: IoEvent) -> None:
        self._events.append(event)

    def __len__(self) -> int:
        return len(self._events)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Trace(self._events[i])
        return self._events[i]

    def __iter__(self):
        return iter(self._events)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Trace):
            return NotImplemented
        return len(self) == len(other) and all(a == b for a, b in zip(self, other))

    def is_prefix_of(self, other: "Trace") -> bool:
        return len(self) <= len(other) and all(a == b for a, b in zip(self, other))

    def inputs(self) -> list[Mapping[str, Any]]:
        return [e.input for e in self._events]

    def outputs(self) -> list[Any]:
        return [e.output for e in self._events]

    def __repr__(self) -> str:
        return f"Trace(len={len(self)})"


def io_word(inputs: Iterable[Mapping[str, Any]], outputs: Iterable[Any]) -> Trace:
    """Zip an input word and an equally long output word into a trace."""
    ins, outs = list(inputs), list(outputs)
    if len(ins) != len(outs):
        raise ValueError(f"input word has {len(ins)} events, output word {len(outs)}")
    return Trace(IoEvent(i, o) for i, o in zip(ins, outs))


# --------------------------------------------------------------------------
# compiled guards

class _Env:
    __slots__ = ("inp", "out", "clk", "memo")

    def __init__(self, inp, out, clk, memo):
        self.inp = inp
        self.out = out
        self.clk = clk
        self.memo = memo


_term_ids: dict[Term, int] = {}


def _term_id(term: Term) -> int:
    tid = _term_ids.get(term)
    if tid is None:
        tid = _term_ids[term] = len(_term_ids)
    return tid


_OPS: dict[str, Callable[[Any, Any], bool]] = {
    "<": operator.lt, "<=": operator.le, "=": operator.eq,
    ">=": operator.ge, ">": operator.gt, "!=": operator.ne,
}


@dataclass(frozen=True, eq=False)
class Atom:
    comparison: Comparison
    kind: str                 # "input" | "output" | "clock"
    output_dependent: bool    # for clock atoms: right side reads an output
    evaluate: Callable[[_Env], bool] = field(repr=False)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Atom) and self.comparison == other.comparison

    def __hash__(self) -> int:
        return hash(self.comparison)

    def __str__(self) -> str:
        c = self.comparison
        return f"{format_term(c.lhs)} {c.op} {format_term(c.rhs)}"


@dataclass(frozen=True, eq=False)
class Transition:
    src: int
    dst: int
    g_in: tuple[Atom, ...]
    g_out: tuple[Atom, ...]
    g_clk: tuple[Atom, ...]
    resets: frozenset[int]
    enabled: Callable[[_Env], bool] = field(repr=False)

    def guard_text(self) -> str:
        from .dsl import Conjunction
        return format_guard(Conjunction(tuple(a.comparison for a in self.g_in + self.g_clk + self.g_out)))


def _make_enabled(atoms: tuple[Atom, ...]) -> Callable[[_Env], bool]:
    fns = tuple(a.evaluate for a in atoms)
    if not fns:
        return lambda env: True
    if len(fns) == 1:
        return fns[0]
    if len(fns) == 2:
        f0, f1 = fns
        return lambda env: f0(env) and f1(env)

    def enabled(env):
        for f in fns:
            if not f(env):
                return False
        return True
    return enabled


@dataclass(frozen=True, eq=False)
class Vdta:
    """An elaborated policy automaton (immutable)."""
    name: str
    locations: tuple[str, ...]
    initial: int
    accepting: frozenset[int]
    clocks: tuple[str, ...]
    inputs: tuple[ChannelDecl, ...]
    outputs: tuple[ChannelDecl, ...]
    transitions: tuple[Transition, ...]
    outgoing: tuple[tuple[Transition, ...], ...] = field(repr=False)

    def location_index(self, name: str) -> int:
        return self.locations.index(name)

    def initial_state(self) -> "VdtaState":
        return VdtaState(self.initial, (0,) * len(self.clocks))

    def is_accepting(self, state: "VdtaState") -> bool:
        return state.location in self.accepting

    def state(self, location: str, **clocks: int) -> "VdtaState":
        values = tuple(clocks.get(c, 0) for c in self.clocks)
        return VdtaState(self.location_index(location), values)


class InputVdta(Vdta):
    """Projection of a :class:`Vdta` onto its inputs (may be non-deterministic)."""


@dataclass(frozen=True)
class VdtaState:
    location: int
    clocks: tuple[int, ...]

    def __post_init__(self):
        if any(c < 0 for c in self.clocks):
            raise ValueError("clock values must be non-negative")


StateSet = frozenset  # frozenset[VdtaState]


# --------------------------------------------------------------------------
# elaboration

class _Compiler:
    def __init__(self, ast: PolicyAst):
        self.inputs = {c.name: c.kind for c in ast.inputs}
        self.outputs = {c.name: c.kind for c in ast.outputs}
        self.clocks = {name: i for i, name in enumerate(ast.clocks)}

    def kind_of(self, term: Term) -> str:
        if isinstance(term, Ref):
            if term.name in self.inputs:
                return self.inputs[term.name]
            if term.name in self.outputs:
                return self.outputs[term.name]
            return "scalar"
        return "scalar"

    def reads_output(self, term: Term) -> bool:
        return any(n in self.outputs for n in term_refs(term))

    def reads_clock(self, term: Term) -> bool:
        return any(n in self.clocks for n in term_refs(term))

    def term(self, term: Term) -> Callable[[_Env], Any]:
        if isinstance(term, Const):
            v = float(term.value)
            return lambda env: v
        if isinstance(term, Ref):
            name = term.name
            if name in self.inputs:
                return lambda env: env.inp[name]
            if name in self.outputs:
                return lambda env: env.out[name]
            idx = self.clocks[name]
            return lambda env: env.clk[idx]
        if isinstance(term, Neg):
            inner = self.term(term.term)
            return lambda env: -inner(env)
        return self.call(term)

    def call(self, term: FnCall) -> Callable[[_Env], Any]:
        spec = _builtins.lookup(term.name)
        if spec is None:
            raise UnknownBuiltin(f"unknown builtin function {term.name!r}")
        problem = None
        if len(term.args) != len(spec.arg_kinds):
            problem = (f"{term.name} takes {len(spec.arg_kinds)} argument(s), "
                       f"got {len(term.args)}")
        else:
            for i, (arg, want) in enumerate(zip(term.args, spec.arg_kinds)):
                got = self.kind_of(arg)
                if got != want:
                    problem = f"{term.name} argument {i + 1} must be {want}, got {got}"
                    break
        if problem is not None:
            def broken(env, msg=problem):
                raise EvalError(msg)
            return broken

        func = spec.func
        args = tuple(self.term(a) for a in term.args)

        def invoke(env):
            try:
                return func(*[a(env) for a in args])
            except EvalError:
                raise
            except Exception as exc:
                raise EvalError(f"{term.name}: {exc}") from exc

        if self.reads_output(term) or self.reads_clock(term):
            return invoke

        key = _term_id(term)

        def memoised(env):
            memo = env.memo
            try:
                return memo[key]
            except KeyError:
                v = memo[key] = invoke(env)
                return v
        return memoised

    def scalar(self, term: Term) -> Callable[[_Env], Any]:
        f = self.term(term)
        if self.kind_of(term) != "scalar":
            name = format_term(term)

            def broken(env):
                raise EvalError(f"array channel {name} compared as a scalar")
            return broken
        return f

    def atom(self, cmp: Comparison) -> Atom:
        lhs_clock = self.reads_clock(cmp.lhs)
        rhs_clock = self.reads_clock(cmp.rhs)
        if lhs_clock or rhs_clock:
            if not (isinstance(cmp.lhs, Ref) and cmp.lhs.name in self.clocks) or rhs_clock:
                raise ClockAtomMalformed(
                    f"clock constraint must have a lone clock on the left: "
                    f"{format_term(cmp.lhs)} {cmp.op} {format_term(cmp.rhs)}")
            kind = "clock"
            out_dep = self.reads_output(cmp.rhs)
        elif self.reads_output(cmp.lhs) or self.reads_output(cmp.rhs):
            kind, out_dep = "output", True
        else:
            kind, out_dep = "input", False
        lf, rf, op = self.scalar(cmp.lhs), self.scalar(cmp.rhs), _OPS[cmp.op]
        return Atom(cmp, kind, out_dep, lambda env: op(lf(env), rf(env)))


def _build(cls, name, locations, initial, accepting, clocks, inputs, outputs, transitions):
    outgoing = [[] for _ in locations]
    for tr in transitions:
        outgoing[tr.src].append(tr)
    return cls(name, tuple(locations), initial, frozenset(accepting), tuple(clocks),
               tuple(inputs), tuple(outputs), tuple(transitions),
               tuple(tuple(o) for o in outgoing))


def _transition(src, dst, g_in, g_out, g_clk, resets) -> Transition:
    return Transition(src, dst, g_in, g_out, g_clk, frozenset(resets),
                      _make_enabled(g_in + g_clk + g_out))


def elaborate(ast: PolicyAst) -> Vdta:
    """Turn a validated AST into an executable automaton."""
    comp = _Compiler(ast)
    loc_index = {loc.name: i for i, loc in enumerate(ast.locations)}
    initial = next(i for i, loc in enumerate(ast.locations) if loc.initial)
    accepting = {i for i, loc in enumerate(ast.locations) if loc.accepting}
    transitions = []
    for tr in ast.transitions:
        atoms = [comp.atom(c) for c in tr.guard.children]
        g_in = tuple(a for a in atoms if a.kind == "input")
        g_out = tuple(a for a in atoms if a.kind == "output")
        g_clk = tuple(a for a in atoms if a.kind == "clock")
        resets = {comp.clocks[c] for c in tr.resets}
        transitions.append(_transition(loc_index[tr.src], loc_index[tr.dst],
                                       g_in, g_out, g_clk, resets))
    return _build(Vdta, ast.name, [loc.name for loc in ast.locations], initial, accepting,
                  ast.clocks, ast.inputs, ast.outputs, transitions)


def load_policy(source: str | bytes) -> Vdta:
    return elaborate(parse_policy(source))


# --------------------------------------------------------------------------
# execution

def _advance(clocks: tuple[int, ...]) -> tuple[int, ...]:
    return tuple(c + 1 if c < CLOCK_MAX else c for c in clocks)


def _after(tr: Transition, advanced: tuple[int, ...]) -> VdtaState:
    if tr.resets:
        return VdtaState(tr.dst, tuple(0 if i in tr.resets else c
                                       for i, c in enumerate(advanced)))
    return VdtaState(tr.dst, advanced)


def step(vdta: Vdta, state: VdtaState, event: IoEvent,
         memo: dict | None = None) -> tuple[VdtaState, bool]:
    """Consume one event; return the successor state and whether it accepts.

    ``memo`` may be shared between calls on the same input to avoid
    recomputing builtin functions of the inputs.
    """
    if event.output is BOTTOM:
        raise ValueError("step() needs a real output; use step_suspended for BOTTOM")
    return step_values(vdta, state, event.input, event.output, memo)


def step_values(vdta: Vdta, state: VdtaState, inputs: Mapping[str, Any],
                outputs: Mapping[str, Any], memo: dict | None = None) -> tuple[VdtaState, bool]:
    advanced = _advance(state.clocks)
    env = _Env(inputs, outputs, advanced, {} if memo is None else memo)
    chosen = None
    for tr in vdta.outgoing[state.location]:
        if tr.enabled(env):
            if chosen is not None:
                raise NonDeterministic(
                    f"{vdta.name}: transitions to {vdta.locations[chosen.dst]} and "
                    f"{vdta.locations[tr.dst]} both enabled in {vdta.locations[state.location]}")
            chosen = tr
    if chosen is None:
        raise Incomplete(f"{vdta.name}: no transition enabled in "
                         f"{vdta.locations[state.location]}")
    nxt = _after(chosen, advanced)
    return nxt, nxt.location in vdta.accepting


def step_suspended(vdta: Vdta, state: VdtaState) -> VdtaState:
    """A suspended group's policy keeps its location and clocks."""
    return state


def run(vdta: Vdta, events: Iterable[IoEvent], state: VdtaState | None = None) -> VdtaState:
    """Fold :func:`step` (or the suspended self-loop for BOTTOM) over events."""
    q = vdta.initial_state() if state is None else state
    for ev in events:
        q = step_suspended(vdta, q) if ev.output is BOTTOM else step(vdta, q, ev)[0]
    return q


def accepts(vdta: Vdta, events: Iterable[IoEvent]) -> bool:
    return run(vdta, events).location in vdta.accepting


def project_input(vdta: Vdta) -> InputVdta:
    """Drop output atoms and output-dependent clock atoms from every guard."""
    transitions = []
    for tr in vdta.transitions:
        g_clk = tuple(a for a in tr.g_clk if not a.output_dependent)
        transitions.append(_transition(tr.src, tr.dst, tr.g_in, (), g_clk, tr.resets))
    return _build(InputVdta, vdta.name, vdta.locations, vdta.initial, vdta.accepting,
                  vdta.clocks, vdta.inputs, vdta.outputs, transitions)


def step_input(ivdta: Vdta, states: Iterable[VdtaState], inputs: Mapping[str, Any],
               memo: dict | None = None) -> frozenset[VdtaState]:
    """All successors of ``states`` under every enabled projected transition."""
    env = _Env(inputs, None, (), {} if memo is None else memo)
    out = set()
    for q in states:
        advanced = _advance(q.clocks)
        env.clk = advanced
        for tr in ivdta.outgoing[q.location]:
            if tr.enabled(env):
                out.add(_after(tr, advanced))
    return frozenset(out)


def trap_locations(vdta: Vdta) -> frozenset[int]:
    """Locations from which no accepting location is reachable (guards ignored)."""
    preds: list[set[int]] = [set() for _ in vdta.locations]
    for tr in vdta.transitions:
        preds[tr.dst].add(tr.src)
    alive = set(vdta.accepting)
    queue = deque(alive)
    while queue:
        loc = queue.popleft()
        for p in preds[loc]:
            if p not in alive:
                alive.add(p)
                queue.append(p)
    return frozenset(range(len(vdta.locations))) - alive


def can_avoid_trap(ivdta: Vdta, states: Iterable[VdtaState], inputs: Mapping[str, Any],
                   traps: frozenset[int], memo: dict | None = None) -> bool:
    """Whether some input successor lies outside the trap locations.

    With no traps this is simply "some projected transition is enabled".
    """
    env = _Env(inputs, None, (), {} if memo is None else memo)
    for q in states:
        env.clk = _advance(q.clocks)
        for tr in ivdta.outgoing[q.location]:
            if tr.dst not in traps and tr.enabled(env):
                return True
    return False


# --------------------------------------------------------------------------
# diagnostics

def to_dot(vdta: Vdta) -> str:
    lines = [f'digraph "{vdta.name}" {{', "  rankdir=LR;"]
    for i, name in enumerate(vdta.locations):
        shape = "doublecircle" if i in vdta.accepting else "circle"
        lines.append(f'  "{name}" [shape={shape}];')
    lines.append(f'  "__start" [shape=point]; "__start" -> "{vdta.locations[vdta.initial]}";')
    for tr in vdta.transitions:
        label = tr.guard_text()
        if tr.resets:
            label += " / " + ", ".join(f"{vdta.clocks[c]} := 0" for c in sorted(tr.resets))
        label = label.replace('"', '\\"')
        lines.append(f'  "{vdta.locations[tr.src]}" -> "{vdta.locations[tr.dst]}" [label="{label}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


_FLIP = {"<": ">", "<=": ">=", ">": "<", ">=": "<=", "=": "=", "!=": "!="}


@dataclass
class _Interval:
    lo: Fraction | None = None
    lo_open: bool = False
    hi: Fraction | None = None
    hi_open: bool = False
    excluded: set = field(default_factory=set)

    def meet(self, op: str, c: Fraction) -> None:
        if op == "!=":
            self.excluded.add(c)
            return
        if op in (">", ">=", "="):
            strict = op == ">"
            if self.lo is None or c > self.lo or (c == self.lo and strict):
                self.lo, self.lo_open = c, strict
        if op in ("<", "<=", "="):
            strict = op == "<"
            if self.hi is None or c < self.hi or (c == self.hi and strict):
                self.hi, self.hi_open = c, strict

    def empty(self) -> bool:
        if self.lo is None or self.hi is None:
            return False
        if self.lo > self.hi:
            return True
        if self.lo == self.hi:
            return self.lo_open or self.hi_open or self.lo in self.excluded
        return False


def _intervals(atoms: Iterable[Atom]) -> dict[Term, list[tuple[str, Fraction]]]:
    out: dict[Term, list[tuple[str, Fraction]]] = {}
    for a in atoms:
        c = a.comparison
        if isinstance(c.rhs, Const) and not isinstance(c.lhs, Const):
            out.setdefault(c.lhs, []).append((c.op, c.rhs.value))
        elif isinstance(c.lhs, Const) and not isinstance(c.rhs, Const):
            out.setdefault(c.rhs, []).append((_FLIP[c.op], c.lhs.value))
        elif not isinstance(c.lhs, Const):
            # lhs op rhs  <=>  (lhs - rhs) op 0, keyed on a canonical ordering
            if repr(c.lhs) <= repr(c.rhs):
                out.setdefault(("diff", c.lhs, c.rhs), []).append((c.op, Fraction(0)))
            else:
                out.setdefault(("diff", c.rhs, c.lhs), []).append((_FLIP[c.op], Fraction(0)))
    return out


def lint_determinism(vdta: Vdta) -> list[str]:
    """Best-effort static check for overlapping outgoing guards.

    Only comparisons of a term against a constant are understood; two
    transitions are reported when every such term they share admits a common
    value.  Guards built from other atoms are treated as possibly overlapping.
    """
    warnings = []
    for loc, outs in enumerate(vdta.outgoing):
        for t1, t2 in itertools.combinations(outs, 2):
            c1 = _intervals(t1.g_in + t1.g_clk + t1.g_out)
            c2 = _intervals(t2.g_in + t2.g_clk + t2.g_out)
            disjoint = False
            for subject in c1.keys() & c2.keys():
                iv = _Interval()
                for op, c in c1[subject] + c2[subject]:
                    iv.meet(op, c)
                if iv.empty():
                    disjoint = True
                    break
            if not disjoint:
                warnings.append(
                    f"{vdta.name}: in {vdta.locations[loc]}, guards to "
                    f"{vdta.locations[t1.dst]} [{t1.guard_text()}] and "
                    f"{vdta.locations[t2.dst]} [{t2.guard_text()}] may overlap")
    return warnings
