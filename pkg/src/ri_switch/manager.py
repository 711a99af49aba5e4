"""Runtime interchange manager.

Each tick runs in two phases around the controllers:

* :meth:`RiManager.begin_tick` looks at the new input and decides which
  controller groups may run (``True``) and which must be suspended because
  every input successor of their policy is a trap location.
* :meth:`RiManager.end_tick` receives one output per group (``BOTTOM`` for
  suspended groups), keeps the outputs that move their own policy into an
  accepting location, picks one of them and releases it together with the
  input.  Every policy state is then advanced; suspended policies stay put.

:func:`check_trace` is an independent offline checker for released traces.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .vdta import (
    BOTTOM,
    Incomplete,
    IoEvent,
    NonDeterministic,
    Trace,
    Vdta,
    VdtaState,
    can_avoid_trap,
    project_input,
    step_input,
    step_suspended,
    step_values,
    trap_locations,
)


class ManagerError(RuntimeError):
    pass


class OutOfOrder(ManagerError):
    pass


class MaskViolation(ManagerError):
    pass


class PolicyDeadlock(ManagerError):
    """No controller group produced an output its policy accepts."""


class SelectionPolicy:
    """How to pick one group among those whose outputs are valid."""

    PREFER_LAST = "prefer_last"
    LOWEST_INDEX = "lowest_index"
    SEEDED_RANDOM = "seeded_random"

    def __init__(self, kind: str = PREFER_LAST, seed: int | None = None):
        if kind not in (self.PREFER_LAST, self.LOWEST_INDEX, self.SEEDED_RANDOM):
            raise ValueError(f"unknown selection policy {kind!r}")
        self.kind = kind
        self.seed = seed
        self._rng = random.Random(seed) if kind == self.SEEDED_RANDOM else None

    @classmethod
    def prefer_last(cls) -> "SelectionPolicy":
        return cls(cls.PREFER_LAST)

    @classmethod
    def lowest_index(cls) -> "SelectionPolicy":
        return cls(cls.LOWEST_INDEX)

    @classmethod
    def seeded_random(cls, seed: int) -> "SelectionPolicy":
        return cls(cls.SEEDED_RANDOM, seed)

    def choose(self, valid: Sequence[int], last: int | None) -> int:
        if not valid:
            raise ValueError("cannot choose from an empty set")
        if len(valid) == 1:
            return valid[0]
        if self.kind == self.PREFER_LAST:
            return last if last in valid else min(valid)
        if self.kind == self.LOWEST_INDEX:
            return min(valid)
        return self._rng.choice(sorted(valid))

    def __repr__(self) -> str:
        return f"SelectionPolicy({self.kind!r}" + (f", seed={self.seed})" if self.seed is not None else ")")


@dataclass
class TickRecord:
    tick: int
    input: Mapping[str, Any]
    mask: tuple[bool, ...]
    group_outputs: tuple[Any, ...]
    b_prime: tuple[bool, ...]
    selected: int
    released: IoEvent
    fallback: bool = False


def _same_channels(a: Vdta, b: Vdta) -> bool:
    return a.inputs == b.inputs and a.outputs == b.outputs


class RiManager:
    """Selects one controller group output per tick according to policies."""

    def __init__(self, policies: Sequence[Vdta], selection: SelectionPolicy | None = None,
                 fallback_group: int | None = None, record: bool = False):
        if not policies:
            raise ValueError("a manager needs at least one policy")
        for p in policies[1:]:
            if not _same_channels(policies[0], p):
                raise ValueError(f"policy {p.name!r} declares different channels "
                                 f"from {policies[0].name!r}")
        self.policies = list(policies)
        # projections and trap sets are shared between duplicated policies
        cache: dict[int, tuple[Vdta, frozenset[int]]] = {}
        self.input_policies = []
        self.traps = []
        for p in self.policies:
            if id(p) not in cache:
                cache[id(p)] = (project_input(p), trap_locations(p))
            iv, tr = cache[id(p)]
            self.input_policies.append(iv)
            self.traps.append(tr)
        self.selection = selection or SelectionPolicy.prefer_last()
        if fallback_group is not None and not 0 <= fallback_group < len(self.policies):
            raise ValueError("fallback group index out of range")
        self.fallback_group = fallback_group
        self.record = record
        self.reset()

    def reset(self) -> None:
        self.states: list[VdtaState] = [p.initial_state() for p in self.policies]
        self.last_selected: int | None = None
        self.released = Trace()
        self.tick_counter = 0
        self.log: list[TickRecord] = []
        self.histories: list[Trace] = [Trace() for _ in self.policies]
        self._pending: tuple[Mapping[str, Any], tuple[bool, ...], dict] | None = None

    @property
    def n(self) -> int:
        return len(self.policies)

    def state_sets(self) -> list[frozenset[VdtaState]]:
        return [frozenset((q,)) for q in self.states]

    def begin_tick(self, inputs: Mapping[str, Any]) -> tuple[bool, ...]:
        """Suspension mask for this tick's input (True = run the group)."""
        if self._pending is not None:
            raise OutOfOrder("begin_tick called twice without end_tick")
        memo: dict = {}
        mask = tuple(
            can_avoid_trap(iv, (q,), inputs, traps, memo)
            for iv, q, traps in zip(self.input_policies, self.states, self.traps))
        self._pending = (inputs, mask, memo)
        return mask

    def end_tick(self, outputs: Sequence[Any]) -> IoEvent:
        """Validate group outputs, release one, advance every policy."""
        if self._pending is None:
            raise OutOfOrder("end_tick called without begin_tick")
        inputs, mask, memo = self._pending
        n = len(self.policies)
        if len(outputs) != n:
            raise ValueError(f"expected {n} group outputs, got {len(outputs)}")
        successors: list[VdtaState | None] = [None] * n
        b_prime = [False] * n
        for i in range(n):
            y = outputs[i]
            if y is BOTTOM:
                continue
            if not mask[i]:
                raise MaskViolation(f"group {i} is suspended but produced an output")
            nxt, ok = step_values(self.policies[i], self.states[i], inputs, y, memo)
            successors[i] = nxt
            b_prime[i] = ok
        valid = [i for i in range(n) if b_prime[i]]
        fallback = False
        if valid:
            sel = self.selection.choose(valid, self.last_selected)
        elif self.fallback_group is not None and outputs[self.fallback_group] is not BOTTOM:
            sel, fallback = self.fallback_group, True
        else:
            self._pending = None
            raise PolicyDeadlock(
                f"tick {self.tick_counter}: no group output is accepted "
                f"(mask={list(mask)})")
        event = IoEvent(inputs, outputs[sel])
        self.released.append(event)
        for i in range(n):
            nxt = successors[i]
            if nxt is not None:
                self.states[i] = nxt
            else:
                self.states[i] = step_suspended(self.policies[i], self.states[i])
        if self.record:
            for i in range(n):
                self.histories[i].append(IoEvent(inputs, outputs[i]))
            self.log.append(TickRecord(self.tick_counter, inputs, mask, tuple(outputs),
                                       tuple(b_prime), sel, event, fallback))
        self.last_selected = sel
        self.tick_counter += 1
        self._pending = None
        if len(self.released) != self.tick_counter:
            raise AssertionError("released trace length differs from tick count")
        return event

    def tick(self, inputs: Mapping[str, Any],
             bank: Callable[[Mapping[str, Any], tuple[bool, ...]], Sequence[Any]]) -> IoEvent:
        mask = self.begin_tick(inputs)
        return self.end_tick(_call_bank(bank, inputs, mask))


def _call_bank(bank, inputs, mask):
    if hasattr(bank, "step"):
        return bank.step(inputs, mask)
    return bank(inputs, mask)


def run_word(mgr: RiManager, inputs: Iterable[Mapping[str, Any]], bank) -> Trace:
    """Drive a fresh manager over an input word; returns the released trace."""
    if mgr.tick_counter != 0:
        raise ValueError("run_word needs a fresh manager")
    for t, x in enumerate(inputs):
        try:
            mgr.tick(x, bank)
        except Exception as exc:
            exc.tick = t  # type: ignore[attr-defined]
            raise
    return mgr.released


# --------------------------------------------------------------------------
# offline trace checking

@dataclass
class ConstraintResult:
    passed: bool
    first_violation: int | None = None
    detail: str = ""

    def fail(self, tick: int, detail: str) -> None:
        if self.passed:
            self.passed = False
            self.first_violation = tick
            self.detail = detail


@dataclass
class TraceReport:
    snd: ConstraintResult = field(default_factory=lambda: ConstraintResult(True))
    mono: ConstraintResult = field(default_factory=lambda: ConstraintResult(True))
    inst: ConstraintResult = field(default_factory=lambda: ConstraintResult(True))
    ca: ConstraintResult = field(default_factory=lambda: ConstraintResult(True))
    snd_witness: ConstraintResult | None = None

    @property
    def all_passed(self) -> bool:
        parts = [self.snd, self.mono, self.inst, self.ca]
        if self.snd_witness is not None:
            parts.append(self.snd_witness)
        return all(p.passed for p in parts)

    def summary(self) -> dict[str, Any]:
        out = {}
        for name in ("snd", "mono", "inst", "ca", "snd_witness"):
            r = getattr(self, name)
            if r is not None:
                out[name] = {"passed": r.passed, "first_violation": r.first_violation,
                             "detail": r.detail}
        return out


def _try_step(p: Vdta, q: VdtaState, ev: IoEvent,
              memo: dict | None = None) -> tuple[VdtaState | None, bool]:
    try:
        return step_values(p, q, ev.input, ev.output, memo)
    except (NonDeterministic, Incomplete):
        return None, False


def _clock_cap(p: Vdta) -> int | None:
    """Clock value above which every clock guard of ``p`` is constant."""
    from .dsl import Const
    cap = 0
    for tr in p.transitions:
        for a in tr.g_clk:
            rhs = a.comparison.rhs
            if not isinstance(rhs, Const):
                return None
            cap = max(cap, int(np.ceil(float(rhs.value))))
    return cap + 1


def check_trace(policies: Sequence[Vdta], released: Trace,
                per_group_histories: Sequence[Trace],
                snapshots: Sequence[Trace] | None = None,
                witness: bool = False) -> TraceReport:
    """Check the four manager constraints on a recorded run.

    ``per_group_histories[i]`` holds, per tick, the shared input and group
    ``i``'s output (``BOTTOM`` when it was suspended).  Every policy is
    re-simulated from its initial state along its own history.

    * ``snd``: the released output is not BOTTOM and, for some policy, the
      group's history followed by the released event is accepted.
    * ``ca``: some group that was not suspended produced exactly the released
      output and its history followed by that event is accepted.
    * ``inst``: one released event per input.
    * ``mono``: each snapshot of the released trace is a prefix of the next
      one and of the final trace; without snapshots, released event ``t``
      must answer input ``t``.
    * ``snd_witness`` (only with ``witness=True``): the weaker reading where
      the witness history may use any outputs; approximated by the states
      reachable through the input projection.
    """
    n = len(policies)
    report = TraceReport()
    if len(per_group_histories) != n:
        raise ValueError("need one history per policy")
    inputs = per_group_histories[0].inputs() if n else []
    for i, h in enumerate(per_group_histories):
        if len(h) != len(inputs):
            raise ValueError(f"history {i} has a different length")

    if len(released) != len(inputs):
        report.inst.fail(min(len(released), len(inputs)),
                         f"{len(released)} released events for {len(inputs)} inputs")

    if snapshots is not None:
        chain = list(snapshots) + [released]
        for k in range(len(chain) - 1):
            if not chain[k].is_prefix_of(chain[k + 1]):
                report.mono.fail(len(chain[k]) - 1 if len(chain[k]) else 0,
                                 f"snapshot {k} is not a prefix of its successor")
                break
    for t in range(min(len(released), len(inputs))):
        ev = released[t]
        x = inputs[t]
        if not (ev.input is x or IoEvent(ev.input, BOTTOM) == IoEvent(x, BOTTOM)):
            report.mono.fail(t, "released event does not answer the input of its tick")
            break

    states = [p.initial_state() for p in policies]
    witness_sets = None
    caps = None
    if witness:
        witness_sets = [frozenset((p.initial_state(),)) for p in policies]
        caps = [_clock_cap(p) for p in policies]
        projections = [project_input(p) for p in policies]

    for t in range(min(len(released), len(inputs))):
        ev = released[t]
        x = inputs[t]
        # builtins of the input are shared by every event that carries it
        memo: dict = {}
        snd_ok = ca_ok = wit_ok = False
        stepped = [None] * n
        if ev.output is not BOTTOM:
            for i, p in enumerate(policies):
                stepped[i] = _try_step(p, states[i], ev, memo if ev.input is x else None)
                if stepped[i][1]:
                    snd_ok = True
                    y = per_group_histories[i][t].output
                    if y is not BOTTOM and IoEvent(ev.input, y) == ev:
                        ca_ok = True
            if witness_sets is not None:
                for i, p in enumerate(policies):
                    if any(_try_step(p, q, ev, memo if ev.input is x else None)[1]
                           for q in witness_sets[i]):
                        wit_ok = True
                        break
        if not snd_ok:
            report.snd.fail(t, "released output is BOTTOM" if ev.output is BOTTOM
                            else "no policy accepts its history extended by the released event")
        if not ca_ok:
            report.ca.fail(t, "no executed group's own output is accepted and released")
        if witness_sets is not None and not wit_ok:
            if report.snd_witness is None:
                report.snd_witness = ConstraintResult(True)
            report.snd_witness.fail(t, "no witness history makes the released event accepted")

        for i, p in enumerate(policies):
            h = per_group_histories[i][t]
            if h.output is BOTTOM:
                states[i] = step_suspended(p, states[i])
            else:
                if stepped[i] is not None and h.input is ev.input and h.output is ev.output:
                    nxt = stepped[i][0]
                else:
                    nxt, _ = _try_step(p, states[i], h, memo if h.input is x else None)
                if nxt is not None:
                    states[i] = nxt
        if witness_sets is not None:
            for i in range(n):
                succ = step_input(projections[i], witness_sets[i], x, memo)
                merged = witness_sets[i] | succ
                if caps[i] is not None:
                    merged = frozenset(VdtaState(q.location, tuple(min(c, caps[i]) for c in q.clocks))
                                       for q in merged)
                witness_sets[i] = merged
    if witness and report.snd_witness is None:
        report.snd_witness = ConstraintResult(True)
    return report


# --------------------------------------------------------------------------
# JSONL trace log

def _jsonable(value: Any) -> Any:
    if value is BOTTOM:
        return None
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Mapping):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def _valuation(obj: Any) -> Any:
    if obj is None:
        return BOTTOM
    return {k: (np.asarray(v, dtype=float) if isinstance(v, list) else v) for k, v in obj.items()}


def record_to_json(rec: TickRecord, **extra: Any) -> str:
    body = {
        "tick": rec.tick,
        "input": _jsonable(rec.input),
        "mask": list(rec.mask),
        "group_outputs": [_jsonable(y) for y in rec.group_outputs],
        "b_prime": list(rec.b_prime),
        "selected": rec.selected,
        "released": {"input": _jsonable(rec.released.input),
                     "output": _jsonable(rec.released.output)},
    }
    body.update(extra)
    return json.dumps(body, separators=(",", ":"))


def write_trace_log(records: Iterable[TickRecord], path, **extra: Any) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(record_to_json(rec, **extra) + "\n")


def read_trace_log(path) -> list[dict[str, Any]]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def traces_from_log(rows: Sequence[Mapping[str, Any]]) -> tuple[Trace, list[Trace]]:
    """Rebuild the released trace and per-group histories from log rows."""
    released = Trace()
    histories: list[Trace] = []
    for row in rows:
        x = _valuation(row["input"])
        outs = row["group_outputs"]
        if not histories:
            histories = [Trace() for _ in outs]
        for i, y in enumerate(outs):
            histories[i].append(IoEvent(x, _valuation(y)))
        rel = row["released"]
        released.append(IoEvent(_valuation(rel["input"]), _valuation(rel["output"])))
    return released, histories
