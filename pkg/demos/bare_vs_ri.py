"""Run the same pedestrian scenarios with and without the manager.

Usage: python demos/bare_vs_ri.py [trials]
"""

import sys

from ri_switch.sim import MODES, Scenario, run_scenario


def main(trials=20):
    for cars, peds in [(1, 0), (1, 2), (3, 2)]:
        crashed = {"bare": 0, "ri": 0}
        total = 0
        pct = [0.0] * 3
        for seed in range(trials):
            sc = Scenario(car_count=cars, ped_count=peds, seed=seed)
            b = run_scenario(sc, "bare")
            r = run_scenario(sc, "ri")
            crashed["bare"] += sum(b.crashed)
            crashed["ri"] += sum(r.crashed)
            total += cars
            pct = [p + q / trials for p, q in zip(pct, r.mode_pct())]
        modes = ", ".join(f"{m} {p:.1f}%" for m, p in zip(MODES, pct))
        print(f"{cars} car(s), {peds} ped(s): crashes bare {crashed['bare']}/{total}, "
              f"ri {crashed['ri']}/{total}; ri modes {modes}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 20)
