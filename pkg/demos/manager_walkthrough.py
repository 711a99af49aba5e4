"""Drive the manager by hand for a 40-tick pedestrian encounter.

Shows the suspension mask computed before the controllers run, which
groups' outputs were acceptable afterwards, and which one was released.
The cautious group is suspended whenever the road is clear, so its PID
never integrates a large gap.
"""

import numpy as np

from ri_switch.builtins import front_sector
from ri_switch.controllers import f110_bank
from ri_switch.manager import RiManager, check_trace
from ri_switch.policies import NAMES, f110_policies


def scan(front, n=61):
    r = np.full(n, 5.0)
    r[front_sector(n)] = front
    return r


def main():
    mgr = RiManager(f110_policies(), record=True)
    bank = f110_bank()
    fronts = [3.0] * 10 + [1.0] * 10 + [3.0] * 20
    for t, front in enumerate(fronts):
        x = {"R": scan(front), "v": 1.0}
        mask = mgr.begin_tick(x)
        ev = mgr.end_tick(bank.step(x, mask))
        rec = mgr.log[-1]
        run = "".join("R" if m else "-" for m in mask)
        ok = "".join("+" if b else "." for b in rec.b_prime)
        print(f"{t:3d} front={front:3.1f} run={run} ok={ok} -> {NAMES[rec.selected]:<8} "
              f"a={ev.output['a']:+.2f} pid_integral={bank.controllers['pid'].state.integral:+.3f}")
    rep = check_trace(mgr.policies, mgr.released, mgr.histories, witness=True)
    print("trace audit:", "passed" if rep.all_passed else rep.summary())


if __name__ == "__main__":
    main()
