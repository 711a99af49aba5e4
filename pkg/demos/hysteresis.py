"""Step the normal and stopping policies through a scripted front reading.

An obstacle shows up at tick 3 and is gone from tick 5 on.  The normal
policy stops accepting immediately and comes back on the sixth clear
reading; the stopping policy does the opposite.
"""

import numpy as np

from ri_switch.builtins import front_sector
from ri_switch.policies import load
from ri_switch.vdta import IoEvent, step


def scan(front, n=61):
    r = np.full(n, 5.0)
    r[front_sector(n)] = front
    return r


def main():
    normal, stopping = load("normal"), load("stopping")
    qn, qs = normal.initial_state(), stopping.initial_state()
    readings = [3.0, 3.0, 3.0, 1.0, 0.8] + [3.0] * 8
    print("tick  front  normal              stopping")
    for t, front in enumerate(readings):
        ev = IoEvent({"R": scan(front), "v": 1.0}, {"d": 0.0, "a": 0.0})
        qn, ok_n = step(normal, qn, ev)
        qs, ok_s = step(stopping, qs, ev)
        n_txt = f"{normal.locations[qn.location]}(x={qn.clocks[0]}){'*' if ok_n else ''}"
        s_txt = f"{stopping.locations[qs.location]}(x={qs.clocks[0]}){'*' if ok_s else ''}"
        print(f"{t:4d}  {front:5.1f}  {n_txt:<18}  {s_txt}")
    print("(* = accepting)")


if __name__ == "__main__":
    main()
