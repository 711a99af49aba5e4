import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ri_switch.builtins import (DEFAULT_FOV_DEG, EvalError, NonPositiveDistance, front_sector,
                                kin, lookup, min_front, register, registered)


def test_front_sector_is_centred_and_spans_the_stated_angle():
    sl = front_sector(61)
    assert (sl.start, sl.stop) == (25, 36)
    spacing = DEFAULT_FOV_DEG / 60
    # every ray in the slice lies within +-20.75 degrees, the neighbours do not
    for k in range(61):
        angle = -DEFAULT_FOV_DEG / 2 + k * spacing
        assert (sl.start <= k < sl.stop) == (abs(angle) <= 41.5 / 2 + 1e-9)


@pytest.mark.parametrize("n", [3, 11, 61, 121, 1081])
def test_front_sector_angle_oracle(n):
    sl = front_sector(n)
    spacing = DEFAULT_FOV_DEG / (n - 1)
    inside = [k for k in range(n) if abs(-DEFAULT_FOV_DEG / 2 + k * spacing) <= 20.75 + 1e-9]
    if inside:
        assert (sl.start, sl.stop) == (inside[0], inside[-1] + 1)
    else:
        assert sl.stop - sl.start == 1  # only the centre ray


def test_min_front_examples(make_scan):
    assert min_front(np.full(61, 5.0)) == 5.0
    r = np.full(61, 5.0)
    r[30] = 0.8
    assert min_front(r) == 0.8
    r = np.full(61, 5.0)
    r[0] = 0.1
    assert min_front(r) == 5.0
    assert min_front(make_scan(front=1.1, rest=0.2)) == 1.1


def test_min_front_rejects_bad_shapes():
    with pytest.raises(EvalError):
        min_front(np.zeros((2, 2)))
    with pytest.raises(EvalError):
        min_front([])


def test_kin_examples():
    assert kin(3.0, 0.0) == 0.0
    assert kin(1.0, 2.0) == 2.0
    assert kin(0.5, 2.4) == pytest.approx(5.76)
    with pytest.raises(NonPositiveDistance):
        kin(0.0, 1.0)
    with pytest.raises(NonPositiveDistance):
        kin(-1.0, 1.0)


@given(st.floats(0.01, 100), st.floats(0, 50))
def test_kin_quadratic_in_speed(d, v):
    assert kin(d, 2 * v) == pytest.approx(4 * kin(d, v), rel=1e-12, abs=1e-300)
    assert kin(d, v) >= 0


def test_registry():
    assert {"min_front", "kin"} <= set(registered())
    assert lookup("nope") is None
    register("double_it", lambda x: 2 * x, ("scalar",))
    try:
        assert lookup("double_it").func(2) == 4
    finally:
        from ri_switch import builtins
        builtins._REGISTRY.pop("double_it")
    assert math.isclose(lookup("kin").func(1.0, 2.0), 2.0)
