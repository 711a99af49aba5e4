"""Black-box controllers for the F1/10 car and their grouping into modes.

Every controller exposes ``reset()`` and ``step(inputs) -> dict`` where
``inputs`` maps ``R`` (LiDAR ranges, right to left) and ``v`` (speed) to
values and the returned dict holds the channels the controller drives.
Steering ``d`` lies in [-1, 1]; positive values steer right.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Protocol, Sequence

import numpy as np

from .builtins import front_sector, min_front
from .vdta import BOTTOM


class DimensionMismatch(ValueError):
    pass


class Controller(Protocol):
    def reset(self) -> None: ...

    def step(self, inputs: Mapping[str, Any]) -> dict[str, float]: ...


# --------------------------------------------------------------------------
# MLP

_ACTIVATIONS = {
    "tanh": np.tanh,
    "relu": lambda z: np.maximum(z, 0.0),
    "linear": lambda z: z,
}


@dataclass(frozen=True)
class MlpLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray     # (out,)
    activation: str = "tanh"


@dataclass(frozen=True)
class MlpModel:
    layers: tuple[MlpLayer, ...]

    def __post_init__(self):
        if not self.layers:
            raise DimensionMismatch("an MLP needs at least one layer")
        prev = None
        for k, layer in enumerate(self.layers):
            w, b = layer.weights, layer.bias
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise DimensionMismatch(f"layer {k}: weights {w.shape} and bias {b.shape} disagree")
            if prev is not None and w.shape[1] != prev:
                raise DimensionMismatch(f"layer {k} expects {w.shape[1]} inputs, previous layer gives {prev}")
            if layer.activation not in _ACTIVATIONS:
                raise ValueError(f"layer {k}: unknown activation {layer.activation!r}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {k}: weights must be finite")
            prev = w.shape[0]

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weights.shape[0]

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MlpModel":
        layers = []
        for spec in data["layers"]:
            layers.append(MlpLayer(np.asarray(spec["weights"], dtype=float),
                                   np.asarray(spec["bias"], dtype=float),
                                   spec.get("activation", "tanh")))
        return cls(tuple(layers))

    @classmethod
    def load(cls, path: str | Path) -> "MlpModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict[str, Any]:
        return {"layers": [{"weights": l.weights.tolist(), "bias": l.bias.tolist(),
                            "activation": l.activation} for l in self.layers]}


def mlp_infer(model: MlpModel, x) -> np.ndarray:
    """Feed-forward evaluation, layer by layer."""
    h = np.asarray(x, dtype=float)
    if h.shape != (model.input_dim,):
        raise DimensionMismatch(f"expected input of length {model.input_dim}, got {h.shape}")
    for layer in model.layers:
        h = _ACTIVATIONS[layer.activation](layer.weights @ h + layer.bias)
    return h


# --------------------------------------------------------------------------
# steering

def _halves(rays: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = rays.size
    c = n // 2
    return rays[:c], rays[n - c:]  # right half, left half (centre ray excluded when n is odd)


def steer_geometric(rays, gain: float = 3.0, max_range: float | None = None) -> float:
    """Steer toward the side with more integrated clearance.

    Rays are clipped to ``max_range`` before integrating, so a short reach
    makes nearby walls dominate and the car holds the middle of the
    corridor.  Returns a value in [-1, 1]; negative turns left.  A perfectly
    symmetric scan whose centre ray is the nearest in the front sector is
    broken toward the left, proportionally to how close the blockage is.
    """
    r = np.asarray(rays, dtype=float)
    if max_range is not None:
        r = np.minimum(r, max_range)
    right, left = _halves(r)
    rs, ls = float(right.sum()), float(left.sum())
    total = rs + ls
    if total <= 0:
        return 0.0
    d = gain * (rs - ls) / total
    if abs(rs - ls) <= 1e-9 * total and r.size % 2:
        # only an obstruction straight ahead breaks the tie
        reach = float(r.max())
        centre = float(r[r.size // 2])
        if reach > 0 and centre < reach and centre <= float(r[front_sector(r.size)].min()):
            d = -min(1.0, gain * (1.0 - centre / reach))
    return max(-1.0, min(1.0, d))


def swerve_heuristic(rays, react_range: float = 0.9, lock_range: float = 0.0) -> float:
    """Steer away from the nearest ray of the front sector.

    The magnitude grows linearly from 0 at ``react_range`` to full lock at
    ``lock_range``.  An obstacle dead ahead is passed on the side with more
    clearance (left on a tie).
    """
    r = np.asarray(rays, dtype=float)
    sl = front_sector(r.size)
    sector = r[sl]
    k = int(np.argmin(sector))
    dist = float(sector[k])
    idx = sl.start + k
    centre = (r.size - 1) / 2.0
    if dist >= react_range:
        return 0.0
    mag = 1.0 if dist <= lock_range else (react_range - dist) / (react_range - lock_range)
    if idx > centre:        # obstacle on the left: steer right
        sign = 1.0
    elif idx < centre:
        sign = -1.0
    else:
        right, left = _halves(r)
        sign = 1.0 if float(right.sum()) > float(left.sum()) else -1.0
    return sign * min(1.0, mag)


# --------------------------------------------------------------------------
# longitudinal

def brake_linear(v: float, dt: float, r_max: float = 4.0, stop_time: float | None = None) -> float:
    """Braking acceleration: ``-min(r_max, v / stop_time)``.

    ``stop_time`` defaults to one tick, which also guarantees the speed never
    drops below zero within the tick.
    """
    if v <= 0:
        return 0.0
    target = dt if stop_time is None else max(stop_time, dt)
    return -min(r_max, v / target)


@dataclass(frozen=True)
class PidGains:
    kp: float = 1.5
    ki: float = 0.3
    kd: float = 0.0
    target_gap: float = 0.9
    windup: float = 2.0
    a_min: float = -2.0
    a_max: float = 2.0


@dataclass(frozen=True)
class PidState:
    integral: float = 0.0
    prev_error: float | None = None


def distance_pid(state: PidState, gap: float, dt: float,
                 gains: PidGains = PidGains()) -> tuple[PidState, float]:
    """One update of the car-following PID; returns the new state and acceleration."""
    e = gap - gains.target_gap
    integral = min(gains.windup, max(-gains.windup, state.integral + e * dt))
    deriv = 0.0 if state.prev_error is None or dt <= 0 else (e - state.prev_error) / dt
    a = gains.kp * e + gains.ki * integral + gains.kd * deriv
    a = min(gains.a_max, max(gains.a_min, a))
    return PidState(integral, e), a


# --------------------------------------------------------------------------
# controller objects

class GeometricSteering:
    stateless = True

    def __init__(self, gain: float = 3.0, max_range: float | None = None):
        self.gain = gain
        self.max_range = max_range

    def reset(self) -> None:
        pass

    def step(self, inputs):
        return {"d": steer_geometric(inputs["R"], self.gain, self.max_range)}


class MlpSteering:
    """Steering network: scan in, one steering value out (clipped to [-1, 1])."""

    stateless = True

    def __init__(self, model: MlpModel):
        if model.output_dim != 1:
            raise DimensionMismatch("steering network must have one output")
        self.model = model

    def reset(self) -> None:
        pass

    def step(self, inputs):
        d = float(mlp_infer(self.model, inputs["R"])[0])
        return {"d": max(-1.0, min(1.0, d))}


class SwerveSteering:
    stateless = True

    def __init__(self, react_range: float = 0.9, lock_range: float = 0.0):
        self.react_range = react_range
        self.lock_range = lock_range

    def reset(self) -> None:
        pass

    def step(self, inputs):
        return {"d": swerve_heuristic(inputs["R"], self.react_range, self.lock_range)}


class FullThrottle:
    stateless = True

    def __init__(self, a_max: float = 2.0):
        self.a_max = a_max

    def reset(self) -> None:
        pass

    def step(self, inputs):
        return {"a": self.a_max}


class LinearBrake:
    stateless = True

    def __init__(self, dt: float, r_max: float = 4.0, stop_time: float | None = None):
        self.dt = dt
        self.r_max = r_max
        self.stop_time = stop_time

    def reset(self) -> None:
        pass

    def step(self, inputs):
        return {"a": brake_linear(float(inputs["v"]), self.dt, self.r_max, self.stop_time)}


class DistancePid:
    """Car-following PID on the front gap; the only stateful controller."""

    stateless = False

    def __init__(self, dt: float, gains: PidGains = PidGains()):
        self.dt = dt
        self.gains = gains
        self.state = PidState()

    def reset(self) -> None:
        self.state = PidState()

    def step(self, inputs):
        self.state, a = distance_pid(self.state, min_front(inputs["R"]), self.dt, self.gains)
        return {"a": a}


# --------------------------------------------------------------------------
# groups

@dataclass
class ControllerGroup:
    """Controllers whose outputs are wired onto the system output channels.

    ``wiring`` maps each output channel to ``"controller"`` or
    ``"controller.key"``.
    """
    name: str
    wiring: dict[str, str]
    policy_index: int

    def sources(self) -> list[tuple[str, str, str]]:
        out = []
        for channel, src in self.wiring.items():
            ctrl, _, key = src.partition(".")
            out.append((channel, ctrl, key or channel))
        return out


class ControllerBank:
    """Runs the groups the manager allows and assembles their outputs.

    A controller shared by several groups is stepped at most once per tick.
    Controllers belonging only to suspended groups are not stepped at all.
    """

    def __init__(self, controllers: Mapping[str, Controller], groups: Sequence[ControllerGroup],
                 output_channels: Sequence[str] = ("d", "a")):
        self.controllers = dict(controllers)
        self.groups = list(groups)
        self.output_channels = tuple(output_channels)
        for g in self.groups:
            if set(g.wiring) != set(self.output_channels):
                raise ValueError(f"group {g.name!r} does not drive exactly {self.output_channels}")
            for _, ctrl, _ in g.sources():
                if ctrl not in self.controllers:
                    raise ValueError(f"group {g.name!r} uses unknown controller {ctrl!r}")
        self._sources = [g.sources() for g in self.groups]

    def reset(self) -> None:
        for c in self.controllers.values():
            c.reset()

    def step(self, inputs: Mapping[str, Any], mask: Sequence[bool]) -> list[Any]:
        cache: dict[str, dict[str, float]] = {}
        outs: list[Any] = []
        ctrls = self.controllers
        for run, sources in zip(mask, self._sources):
            if not run:
                outs.append(BOTTOM)
                continue
            y = {}
            for channel, name, key in sources:
                res = cache.get(name)
                if res is None:
                    res = cache[name] = ctrls[name].step(inputs)
                y[channel] = res[key]
            outs.append(y)
        return outs

    __call__ = step


@dataclass(frozen=True)
class ControllerConfig:
    dt: float = 0.05
    a_max: float = 2.0
    r_max: float = 4.0
    steer_gain: float = 4.0
    steer_reach: float | None = 3.5
    swerve_react: float = 0.9
    swerve_lock: float = 0.0
    pid: PidGains = field(default_factory=PidGains)
    mlp_weights: str | None = None

    def with_overrides(self, **kw) -> "ControllerConfig":
        return replace(self, **kw)


F110_WIRING = {
    "normal": {"d": "steer", "a": "throttle"},
    "stopping": {"d": "swerve", "a": "brake"},
    "cautious": {"d": "steer", "a": "pid"},
}


def make_steering(cfg: ControllerConfig) -> Controller:
    if cfg.mlp_weights:
        return MlpSteering(MlpModel.load(cfg.mlp_weights))
    return GeometricSteering(cfg.steer_gain, cfg.steer_reach)


def f110_bank(cfg: ControllerConfig = ControllerConfig(),
              wiring: Mapping[str, Mapping[str, str]] | None = None,
              copies: int = 1) -> ControllerBank:
    """The three mode groups in manager order: normal, stopping, cautious.

    With ``copies > 1`` the three groups are repeated in that order, all
    sharing one set of controllers, to match duplicated policy lists.
    """
    controllers = {
        "steer": make_steering(cfg),
        "throttle": FullThrottle(cfg.a_max),
        "swerve": SwerveSteering(cfg.swerve_react, cfg.swerve_lock),
        "brake": LinearBrake(cfg.dt, cfg.r_max),
        "pid": DistancePid(cfg.dt, cfg.pid),
    }
    wiring = wiring or F110_WIRING
    names = ("normal", "stopping", "cautious") * copies
    groups = [ControllerGroup(name, dict(wiring[name]), i) for i, name in enumerate(names)]
    return ControllerBank(controllers, groups)


def bare_controller(cfg: ControllerConfig = ControllerConfig()):
    """Original scheme: steering network plus full throttle, no manager."""
    steer = make_steering(cfg)
    throttle = FullThrottle(cfg.a_max)

    def control(inputs):
        return {"d": steer.step(inputs)["d"], "a": throttle.step(inputs)["a"]}
    return control
