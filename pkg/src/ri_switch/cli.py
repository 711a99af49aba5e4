"""``ri-switch`` command line entry point."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import experiments as ex
from .controllers import f110_bank
from .dsl import DslError
from .manager import check_trace, read_trace_log, record_to_json, traces_from_log
from .policies import f110_policies
from .sim import Scenario, run_scenario
from .vdta import load_policy, to_dot


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=False)
    sys.stdout.write("\n")


def _cmd_run_tables(args) -> int:
    plan = ex.load_plan(args.plan) if args.plan else ex.ExperimentPlan()
    kw = {}
    if args.full_scale:
        kw["trials"] = ex.FULL_SCALE_TRIALS
    if args.trials:
        kw["trials"] = args.trials
    if args.workers:
        kw["workers"] = args.workers
    plan = replace(plan, out_dir=args.out, **kw).with_env()

    def progress(cell):
        print(f"{cell.mode:>4} cars={cell.cars} peds={cell.peds} crash={cell.crash_rate:.2f}%",
              file=sys.stderr)

    res = ex.run_tables(plan, progress=progress)
    sys.stdout.write(res.csv())
    return 0


def _cmd_overhead(args) -> int:
    seed = ex.ExperimentPlan().with_env().base_seed if args.seed is None else args.seed
    rep = ex.measure_overhead(cars=args.cars, peds=args.peds, trials=args.trials,
                              base_seed=seed, max_ticks=args.ticks, stub=args.stub)
    _emit({"ratio": rep.ratio, "ratio_pct": 100 * rep.ratio, "stub": rep.stub,
           "ticks": rep.ticks, "per_tick_ns": rep.per_tick()})
    return 0


def _cmd_scaling(args) -> int:
    if args.full_scale:
        counts = ex.FULL_SCALE_COUNTS
    else:
        counts = tuple(int(c) for c in args.counts.split(","))
    try:
        rep = ex.run_scaling(counts, ticks=args.ticks, repeats=args.repeats)
    except MemoryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    sys.stdout.write(rep.csv())
    print(f"r_squared={rep.r_squared:.4f}", file=sys.stderr)
    return 0


def _load_policy_dir(path: str, order: str | None):
    d = Path(path)
    if order:
        files = [d / f"{name}.vdta" for name in order.split(",")]
    else:
        files = sorted(d.glob("*.vdta"))
    if not files:
        raise FileNotFoundError(f"no .vdta files in {d}")
    return [load_policy(f.read_text(encoding="utf-8")) for f in files]


def _cmd_check_trace(args) -> int:
    policies = _load_policy_dir(args.policies, args.order) if args.policies else f110_policies()
    rows = read_trace_log(args.trace)
    by_car: dict = {}
    for row in rows:
        by_car.setdefault(row.get("car", 0), []).append(row)
    ok = True
    out = {}
    for car, car_rows in sorted(by_car.items()):
        released, histories = traces_from_log(car_rows)
        rep = check_trace(policies, released, histories, witness=args.witness)
        ok &= rep.all_passed
        out[str(car)] = rep.summary()
    _emit({"passed": ok, "cars": out})
    return 0 if ok else 1


def _cmd_simulate(args) -> int:
    wiring = None
    if args.scenario:
        sc, wiring = ex.load_scenario(args.scenario)
    else:
        sc = Scenario()
    if args.seed is not None:
        sc = replace(sc, seed=args.seed)
    factory = (lambda cfg: f110_bank(cfg, wiring)) if wiring else None
    r = run_scenario(sc, args.mode, record=bool(args.trace), audit=args.audit,
                     bank_factory=factory)
    if args.trace and args.mode == "ri":
        with open(args.trace, "w", encoding="utf-8") as fh:
            for car, log in enumerate(r.logs):
                for rec in log:
                    fh.write(record_to_json(rec, car=car) + "\n")
    summary = {
        "mode": args.mode, "seed": sc.seed, "cars": sc.car_count, "peds": sc.ped_count,
        "crashed": r.crashed, "crash_causes": r.crash_causes,
        "crash_rate": r.crash_rate,
    }
    if args.mode == "ri":
        summary.update(mode_pct=dict(zip(("normal", "stopping", "cautious"), r.mode_pct())),
                       change_rate=r.change_rate(), trap_entries=r.trap_entries,
                       pid_violations=r.pid_violations)
        if args.audit:
            summary["audit_passed"] = all(a.all_passed for a in r.audits)
    _emit(summary)
    return 0


def _cmd_dump_dot(args) -> int:
    text = Path(args.policy).read_text(encoding="utf-8")
    sys.stdout.write(to_dot(load_policy(text)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ri-switch",
                                description="Runtime interchange of controller groups.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("run-tables", help="crash-rate and mode-occupancy tables")
    s.add_argument("--plan", help="plan file (TOML)")
    s.add_argument("--out", default="results", help="output directory for the CSVs")
    s.add_argument("--trials", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--full-scale", action="store_true", help="1000 trials per cell")
    s.set_defaults(func=_cmd_run_tables)

    s = sub.add_parser("overhead", help="manager time relative to controller time")
    s.add_argument("--cars", type=int, default=1)
    s.add_argument("--peds", type=int, default=1)
    s.add_argument("--trials", type=int, default=5)
    s.add_argument("--ticks", type=int, default=1200)
    s.add_argument("--seed", type=int)
    s.add_argument("--stub", action="store_true", help="use zero-cost controllers")
    s.set_defaults(func=_cmd_overhead)

    s = sub.add_parser("scaling", help="per-tick time against policy copies")
    s.add_argument("--counts", default=",".join(map(str, ex.DESK_COUNTS)))
    s.add_argument("--ticks", type=int, default=100)
    s.add_argument("--repeats", type=int, default=1)
    s.add_argument("--full-scale", action="store_true", help="1e5..4e5 copies")
    s.set_defaults(func=_cmd_scaling)

    s = sub.add_parser("check-trace", help="audit a JSONL tick log")
    s.add_argument("trace")
    s.add_argument("--policies", help="directory of .vdta files (default: shipped set)")
    s.add_argument("--order", help="comma-separated policy names, in group order")
    s.add_argument("--witness", action="store_true", help="also run the reachable-set check")
    s.set_defaults(func=_cmd_check_trace)

    s = sub.add_parser("simulate", help="run one scenario")
    s.add_argument("--scenario", help="scenario file (TOML)")
    s.add_argument("--trace", help="write the per-tick JSONL log here")
    s.add_argument("--mode", choices=("ri", "bare"), default="ri")
    s.add_argument("--seed", type=int)
    s.add_argument("--audit", action="store_true")
    s.set_defaults(func=_cmd_simulate)

    s = sub.add_parser("dump-dot", help="render a policy as Graphviz")
    s.add_argument("policy")
    s.set_defaults(func=_cmd_dump_dot)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DslError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
