"""Trial grids, overhead timing and policy-count scaling."""

from __future__ import annotations

import csv
import gc
import io
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import numpy as np
from scipy import stats

from .controllers import ControllerConfig, f110_bank
from .policies import f110_policies
from .sim import MODES, Scenario, run_scenario

CSV_COLUMNS = ("scenario", "cars", "peds", "crash_rate", "normal_pct", "stopping_pct",
               "cautious_pct", "change_rate", "trials", "crash_ci_low", "crash_ci_high",
               "trial_crash_rate", "audit_failures")

FULL_SCALE_TRIALS = 1000
FULL_SCALE_COUNTS = (100_000, 200_000, 300_000, 400_000)
DESK_COUNTS = (1000, 2000, 3000, 4000)


class TrialError(RuntimeError):
    """A scenario failed inside a grid run; carries the cell and seed."""

    def __init__(self, cell: tuple[str, int, int], trial: int, seed: int, cause: BaseException):
        super().__init__(f"cell {cell} trial {trial} (seed {seed}): {cause!r}")
        self.cell, self.trial, self.seed = cell, trial, seed


# --------------------------------------------------------------------------
# plans

@dataclass(frozen=True)
class ExperimentPlan:
    cars: tuple[int, ...] = (1, 2, 3)
    peds: tuple[int, ...] = (0, 1, 2)
    modes: tuple[str, ...] = ("bare", "ri")
    trials: int = 200
    base_seed: int = 0
    max_ticks: int = 1600
    workers: int = 1
    audit: bool = True
    out_dir: str | None = None
    scenario: Scenario = field(default_factory=Scenario)

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        for m in self.modes:
            if m not in ("bare", "ri"):
                raise ValueError(f"unknown mode {m!r}")

    def cells(self) -> list[tuple[str, int, int]]:
        return [(m, c, p) for m in self.modes for c in self.cars for p in self.peds]

    def seed_for(self, cell_index: int, trial: int) -> int:
        """Seed derived from base seed, cell index and trial index."""
        ss = np.random.SeedSequence([self.base_seed, cell_index, trial])
        return int(ss.generate_state(1, dtype=np.uint32)[0])

    def scenario_for(self, cars: int, peds: int, seed: int) -> Scenario:
        return replace(self.scenario, car_count=cars, ped_count=peds, seed=seed,
                       max_ticks=self.max_ticks)

    def with_env(self, environ: dict[str, str] | None = None) -> "ExperimentPlan":
        """Apply the ``RI_SEED`` override, if set."""
        env = os.environ if environ is None else environ
        if env.get("RI_SEED"):
            return replace(self, base_seed=int(env["RI_SEED"]))
        return self

    @classmethod
    def full_scale(cls, **kw) -> "ExperimentPlan":
        return cls(trials=FULL_SCALE_TRIALS, **kw)


def _section(data: dict, key: str) -> dict:
    sec = data.get(key, {})
    if not isinstance(sec, dict):
        raise ValueError(f"[{key}] must be a table")
    return sec


def scenario_from_dict(data: dict[str, Any], base: Scenario | None = None) -> Scenario:
    """Build a :class:`Scenario` from parsed TOML.

    Top-level keys are scenario fields; ``[pedestrians]``, ``[track]``,
    ``[lidar]``, ``[vehicle]``, ``[controllers]`` and ``[controllers.pid]``
    override the matching config objects.  ``[controllers.wiring]`` is
    returned separately by :func:`load_scenario`.
    """
    sc = base or Scenario()
    top = {k: v for k, v in data.items() if not isinstance(v, dict)}
    if "car_spawn_times" in top:
        top["car_spawn_times"] = tuple(float(t) for t in top["car_spawn_times"])
    ctrl = dict(_section(data, "controllers"))
    ctrl.pop("wiring", None)
    pid = ctrl.pop("pid", None)
    controllers = replace(sc.controllers, **ctrl)
    if pid is not None:
        controllers = replace(controllers, pid=replace(controllers.pid, **pid))
    return replace(
        sc, **top,
        pedestrians=replace(sc.pedestrians, **_section(data, "pedestrians")),
        track=replace(sc.track, **_section(data, "track")),
        lidar=replace(sc.lidar, **_section(data, "lidar")),
        vehicle=replace(sc.vehicle, **_section(data, "vehicle")),
        controllers=controllers,
    )


def load_scenario(path: str | Path) -> tuple[Scenario, dict[str, dict[str, str]] | None]:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    wiring = _section(data, "controllers").get("wiring")
    return scenario_from_dict(data), wiring


def load_plan(path: str | Path) -> ExperimentPlan:
    """Read a plan file: top-level plan keys plus an optional ``[scenario]`` table."""
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    sc = scenario_from_dict(_section(data, "scenario"))
    kw = {k: v for k, v in data.items() if k != "scenario"}
    for key in ("cars", "peds", "modes"):
        if key in kw:
            kw[key] = tuple(kw[key])
    return ExperimentPlan(scenario=sc, **kw)


# --------------------------------------------------------------------------
# tables

@dataclass
class CellResult:
    mode: str
    cars: int
    peds: int
    trials: int = 0
    car_runs: int = 0
    crashed_cars: int = 0
    crashed_trials: int = 0
    mode_ticks: list[int] = field(default_factory=lambda: [0] * len(MODES))
    changes: int = 0
    active_ticks: int = 0
    trap_entries: int = 0
    pid_violations: int = 0
    audit_failures: int = 0
    audit_ns: int = 0
    crash_causes: dict[str, int] = field(default_factory=dict)

    def merge(self, other: "CellResult") -> "CellResult":
        out = CellResult(self.mode, self.cars, self.peds)
        for name in ("trials", "car_runs", "crashed_cars", "crashed_trials", "changes",
                     "active_ticks", "trap_entries", "pid_violations", "audit_failures",
                     "audit_ns"):
            setattr(out, name, getattr(self, name) + getattr(other, name))
        out.mode_ticks = [a + b for a, b in zip(self.mode_ticks, other.mode_ticks)]
        out.crash_causes = dict(self.crash_causes)
        for k, v in other.crash_causes.items():
            out.crash_causes[k] = out.crash_causes.get(k, 0) + v
        return out

    @property
    def crash_rate(self) -> float:
        """Per-car crash rate in percent."""
        return 0.0 if self.car_runs == 0 else 100.0 * self.crashed_cars / self.car_runs

    @property
    def trial_crash_rate(self) -> float:
        return 0.0 if self.trials == 0 else 100.0 * self.crashed_trials / self.trials

    def crash_ci(self, level: float = 0.95) -> tuple[float, float]:
        if self.car_runs == 0:
            return 0.0, 100.0
        ci = stats.binomtest(self.crashed_cars, self.car_runs).proportion_ci(level, "wilson")
        return 100.0 * ci.low, 100.0 * ci.high

    def mode_pct(self) -> list[float]:
        total = sum(self.mode_ticks)
        return [0.0] * len(MODES) if total == 0 else [100.0 * t / total for t in self.mode_ticks]

    @property
    def change_rate(self) -> float:
        return 0.0 if self.active_ticks == 0 else 100.0 * self.changes / self.active_ticks

    def row(self) -> dict[str, Any]:
        lo, hi = self.crash_ci()
        ri = self.mode == "ri"
        pct = self.mode_pct()
        return {
            "scenario": self.mode, "cars": self.cars, "peds": self.peds,
            "crash_rate": f"{self.crash_rate:.2f}",
            "normal_pct": f"{pct[0]:.2f}" if ri else "",
            "stopping_pct": f"{pct[1]:.2f}" if ri else "",
            "cautious_pct": f"{pct[2]:.2f}" if ri else "",
            "change_rate": f"{self.change_rate:.3f}" if ri else "",
            "trials": self.trials,
            "crash_ci_low": f"{lo:.2f}", "crash_ci_high": f"{hi:.2f}",
            "trial_crash_rate": f"{self.trial_crash_rate:.2f}",
            "audit_failures": self.audit_failures,
        }


def _run_trials(plan: ExperimentPlan, cell_index: int, cell: tuple[str, int, int],
                trials: Sequence[int]) -> CellResult:
    mode, cars, peds = cell
    acc = CellResult(mode, cars, peds)
    for t in trials:
        seed = plan.seed_for(cell_index, t)
        try:
            r = run_scenario(plan.scenario_for(cars, peds, seed), mode,
                             audit=plan.audit and mode == "ri")
        except Exception as exc:
            raise TrialError(cell, t, seed, exc) from exc
        acc.trials += 1
        acc.car_runs += len(r.crashed)
        acc.crashed_cars += sum(r.crashed)
        acc.crashed_trials += int(r.any_crash)
        for cause in r.crash_causes:
            if cause:
                acc.crash_causes[cause] = acc.crash_causes.get(cause, 0) + 1
        for m in r.mode_ticks:
            acc.mode_ticks = [a + b for a, b in zip(acc.mode_ticks, m)]
        acc.changes += sum(r.changes)
        acc.active_ticks += sum(r.active_ticks)
        acc.trap_entries += r.trap_entries
        acc.pid_violations += r.pid_violations
        acc.audit_failures += sum(not a.all_passed for a in r.audits)
        acc.audit_ns += r.audit_ns
    return acc


def _run_chunk(args):
    return _run_trials(*args)


@dataclass
class TablesResult:
    cells: list[CellResult]

    def cell(self, mode: str, cars: int, peds: int) -> CellResult:
        for c in self.cells:
            if (c.mode, c.cars, c.peds) == (mode, cars, peds):
                return c
        raise KeyError((mode, cars, peds))

    @property
    def audit_seconds(self) -> float:
        """Time spent re-checking traces, summed over cells."""
        return sum(c.audit_ns for c in self.cells) / 1e9

    def csv(self, mode: str | None = None) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for c in self.cells:
            if mode is None or c.mode == mode:
                w.writerow(c.row())
        return buf.getvalue()


def run_tables(plan: ExperimentPlan, progress: Callable[[CellResult], None] | None = None
               ) -> TablesResult:
    """Run every cell of the plan.

    Bare cells go to ``table1.csv`` and ri cells to ``table2.csv`` when the
    plan has an output directory.  With ``workers > 1`` trials are spread over
    a process pool; aggregation is order independent.
    """
    results = []
    pool = ProcessPoolExecutor(plan.workers) if plan.workers > 1 else None
    try:
        for idx, cell in enumerate(plan.cells()):
            if pool is None:
                res = _run_trials(plan, idx, cell, range(plan.trials))
            else:
                chunks = [(plan, idx, cell, range(k, plan.trials, plan.workers))
                          for k in range(plan.workers)]
                parts = list(pool.map(_run_chunk, chunks))
                res = parts[0]
                for p in parts[1:]:
                    res = res.merge(p)
            results.append(res)
            if progress:
                progress(res)
    finally:
        if pool is not None:
            pool.shutdown()
    out = TablesResult(results)
    if plan.out_dir:
        d = Path(plan.out_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / "table1.csv").write_text(out.csv("bare"))
        (d / "table2.csv").write_text(out.csv("ri"))
    return out


# --------------------------------------------------------------------------
# overhead

@dataclass(frozen=True)
class OverheadReport:
    kappa_ns: int            # begin_tick: input check and suspension mask
    gamma_ns: int            # end_tick: output validation, selection, bookkeeping
    controller_ns: int
    ticks: int
    stub: bool = False

    @property
    def manager_ns(self) -> int:
        return self.kappa_ns + self.gamma_ns

    @property
    def ratio(self) -> float:
        """Manager time over controller time; the denominator is floored at 1 ns."""
        return self.manager_ns / max(self.controller_ns, 1)

    def per_tick(self) -> dict[str, float]:
        n = max(self.ticks, 1)
        return {"kappa_ns": self.kappa_ns / n, "gamma_ns": self.gamma_ns / n,
                "controller_ns": self.controller_ns / n}


class _StubBank:
    """Bank whose controllers cost nothing: a constant output for every group."""

    def __init__(self, n: int):
        self.n = n
        self.controllers = {"pid": _Frozen()}

    def step(self, inputs, mask):
        from .vdta import BOTTOM
        return [{"d": 0.0, "a": -4.0} if m else BOTTOM for m in mask]


class _Frozen:
    state = None


class _PaddedBank:
    """Wraps a bank and busy-waits ``extra_ns`` per tick to simulate heavier controllers."""

    def __init__(self, inner, extra_ns: int):
        self.inner = inner
        self.extra_ns = extra_ns
        self.controllers = inner.controllers

    def step(self, inputs, mask):
        out = self.inner.step(inputs, mask)
        end = time.perf_counter_ns() + self.extra_ns
        while time.perf_counter_ns() < end:
            pass
        return out


def measure_overhead(cars: int = 1, peds: int = 1, trials: int = 5, base_seed: int = 0,
                     max_ticks: int = 1200, stub: bool = False, extra_controller_ns: int = 0,
                     scenario: Scenario | None = None) -> OverheadReport:
    """Time the manager phases against the controller bank over ri trials.

    ``stub`` swaps in zero-cost controllers (the report is flagged);
    ``extra_controller_ns`` pads every bank call with a calibrated busy wait.
    """
    base = scenario or Scenario()
    kappa = gamma = ctrl = ticks = 0
    plan = ExperimentPlan(trials=trials, base_seed=base_seed)

    def factory(cfg: ControllerConfig):
        bank = _StubBank(3) if stub else f110_bank(cfg)
        return _PaddedBank(bank, extra_controller_ns) if extra_controller_ns else bank

    for t in range(trials):
        sc = replace(base, car_count=cars, ped_count=peds, seed=plan.seed_for(0, t),
                     max_ticks=max_ticks)
        r = run_scenario(sc, "ri", timing=True, bank_factory=factory)
        kappa += r.timing_ns["begin_tick"]
        gamma += r.timing_ns["end_tick"]
        ctrl += r.timing_ns["controllers"]
        ticks += r.timed_ticks
    return OverheadReport(kappa, gamma, ctrl, ticks, stub=stub or ctrl == 0)


# --------------------------------------------------------------------------
# scaling

@dataclass(frozen=True)
class ScalingReport:
    counts: tuple[int, ...]
    seconds_per_tick: tuple[float, ...]
    slope: float
    intercept: float
    r_squared: float

    @property
    def ratios(self) -> tuple[float, ...]:
        first = self.seconds_per_tick[0]
        return tuple(t / first for t in self.seconds_per_tick)

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("copies", "policies", "seconds_per_tick", "ratio"))
        for k, s, r in zip(self.counts, self.seconds_per_tick, self.ratios):
            w.writerow((k, 3 * k, f"{s:.6g}", f"{r:.4f}"))
        return buf.getvalue()


def time_copies(copies: int, ticks: int = 100, seed: int = 0, repeats: int = 1) -> float:
    """Wall seconds per tick of the 1-car 1-pedestrian scenario with ``copies`` x 3 policies."""
    base = f110_policies()
    try:
        policies = base * copies
        sc = Scenario(car_count=1, ped_count=1, seed=seed, max_ticks=ticks)
        best = float("inf")
        # like timeit, keep the cyclic collector out of the measurement
        gc_was_enabled = gc.isenabled()
        gc.disable()
        try:
            for _ in range(repeats):
                t0 = time.perf_counter()
                run_scenario(sc, "ri", policies=policies,
                             bank_factory=lambda cfg: f110_bank(cfg, copies=copies))
                best = min(best, (time.perf_counter() - t0) / ticks)
        finally:
            if gc_was_enabled:
                gc.enable()
    except MemoryError as exc:
        raise MemoryError(f"out of memory with {copies} copies") from exc
    return best


def run_scaling(counts: Sequence[int] = DESK_COUNTS, ticks: int = 100, seed: int = 0,
                repeats: int = 1) -> ScalingReport:
    """Per-tick wall time against the number of policy copies, with a linear fit."""
    counts = tuple(int(c) for c in counts)
    if list(counts) != sorted(counts) or not counts or counts[0] < 1:
        raise ValueError("counts must be positive and ascending")
    # rounds are interleaved so slow drifts in machine load hit every count alike
    time_copies(counts[0], min(ticks, 10), seed)
    best = [float("inf")] * len(counts)
    for _ in range(max(repeats, 1)):
        for i, k in enumerate(counts):
            best[i] = min(best[i], time_copies(k, ticks, seed))
    secs = tuple(best)
    if len(counts) >= 2 and len(set(counts)) > 1:
        fit = stats.linregress(counts, secs)
        slope, intercept, r2 = fit.slope, fit.intercept, fit.rvalue ** 2
    else:
        slope, intercept, r2 = 0.0, secs[0], 1.0
    return ScalingReport(counts, secs, float(slope), float(intercept), float(r2))


__all__ = [
    "CSV_COLUMNS", "CellResult", "ExperimentPlan", "OverheadReport", "ScalingReport",
    "TablesResult", "TrialError", "load_plan", "load_scenario", "measure_overhead",
    "run_scaling", "run_tables", "scenario_from_dict", "time_copies",
    "FULL_SCALE_COUNTS", "FULL_SCALE_TRIALS", "DESK_COUNTS",
]
