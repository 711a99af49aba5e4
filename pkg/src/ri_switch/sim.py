"""Deterministic 2-D simulation of the rectangular F1/10 track.

Cars are discs driven by unicycle kinematics and sensed through a ray-cast
LiDAR.  Pedestrians appear at random on the corridor centreline, stand
still for a random number of ticks and leave.  A run is fully determined by
its :class:`Scenario` (including the seed).
"""

from __future__ import annotations

import functools
import math
import time
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .controllers import ControllerConfig, bare_controller, f110_bank
from .manager import PolicyDeadlock, RiManager, SelectionPolicy, check_trace
from .policies import f110_policies


@dataclass(frozen=True)
class TrackMap:
    """Outer rectangle ``width`` x ``height`` with a corridor of ``corridor`` metres."""
    width: float = 20.0
    height: float = 10.0
    corridor: float = 1.5

    def __post_init__(self):
        if not (0 < 2 * self.corridor < min(self.width, self.height)):
            raise ValueError("inner rectangle must lie strictly inside the outer one")

    @property
    def segments(self) -> np.ndarray:
        """Wall segments as rows (x0, y0, x1, y1)."""
        W, H, c = self.width, self.height, self.corridor
        return np.array([
            (0, 0, W, 0), (W, 0, W, H), (W, H, 0, H), (0, H, 0, 0),
            (c, c, W - c, c), (W - c, c, W - c, H - c),
            (W - c, H - c, c, H - c), (c, H - c, c, c),
        ], dtype=float)

    # The centreline is walked counter-clockwise starting at the middle of
    # the left side, heading south.
    def _centre_corners(self) -> list[tuple[float, float]]:
        h = self.corridor / 2
        W, H = self.width, self.height
        return [(h, H / 2), (h, h), (W - h, h), (W - h, H - h), (h, H - h), (h, H / 2)]

    @property
    def lap_length(self) -> float:
        return 2 * ((self.width - self.corridor) + (self.height - self.corridor))

    def start_pose(self) -> tuple[float, float, float]:
        x, y = self._centre_corners()[0]
        return x, y, -math.pi / 2

    def centreline_point(self, s: float) -> tuple[float, float, float]:
        """Point and heading at arc length ``s`` along the centreline."""
        s = s % self.lap_length
        pts = self._centre_corners()
        for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
            seg = math.hypot(x1 - x0, y1 - y0)
            if s <= seg:
                f = s / seg if seg else 0.0
                return x0 + f * (x1 - x0), y0 + f * (y1 - y0), math.atan2(y1 - y0, x1 - x0)
            s -= seg
        x, y = pts[-1]
        return x, y, -math.pi / 2

    def progress(self, x: float, y: float) -> float:
        """Arc length of the centreline point nearest to (x, y)."""
        pts = self._centre_corners()
        best, best_s, acc = math.inf, 0.0, 0.0
        for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
            dx, dy = x1 - x0, y1 - y0
            seg2 = dx * dx + dy * dy
            f = 0.0 if seg2 == 0 else max(0.0, min(1.0, ((x - x0) * dx + (y - y0) * dy) / seg2))
            px, py = x0 + f * dx, y0 + f * dy
            dist = math.hypot(x - px, y - py)
            if dist < best:
                best, best_s = dist, acc + f * math.sqrt(seg2)
            acc += math.sqrt(seg2)
        return best_s % self.lap_length


@dataclass(frozen=True)
class LidarConfig:
    field_of_view: float = 230.0  # degrees
    ray_count: int = 61
    max_range: float = 5.0

    def __post_init__(self):
        if self.ray_count < 3 or self.ray_count % 2 == 0:
            raise ValueError("ray_count must be odd and at least 3")

    def offsets(self) -> np.ndarray:
        """Ray angles relative to the heading, right to left (radians)."""
        half = math.radians(self.field_of_view) / 2
        return np.linspace(-half, half, self.ray_count)


@dataclass(frozen=True)
class VehicleConfig:
    radius: float = 0.3
    v_max: float = 2.4
    k_steer: float = 2.0  # path curvature per unit steering (1/m)


@dataclass
class VehicleState:
    x: float
    y: float
    heading: float
    speed: float = 0.0
    d: float = 0.0
    a: float = 0.0
    spawn_tick: int = 0
    crashed: bool = False
    crash_cause: str | None = None


@dataclass
class Pedestrian:
    x: float
    y: float
    spawn_tick: int
    dwell_ticks: int
    radius: float = 0.2
    drift: float = 0.0    # lateral speed (m/s); positive moves toward the inner wall
    arc: float = 0.0      # centreline arc length of the spawn point
    lateral: float = 0.0  # signed offset from the centreline (m)

    def present(self, tick: int) -> bool:
        return self.spawn_tick <= tick < self.spawn_tick + self.dwell_ticks


@dataclass(frozen=True)
class PedestrianProcess:
    spawn_prob: float = 0.002
    dwell_mean: float = 40.0
    radius: float = 0.2
    min_ahead: float = 3.0
    min_behind: float = 3.0
    lateral_drift: float = 0.0


@dataclass(frozen=True)
class Scenario:
    car_count: int = 1
    ped_count: int = 0
    seed: int = 0
    dt: float = 0.05
    max_ticks: int = 1600
    car_spawn_times: tuple[float, ...] = (0.0, 15.0, 30.0)
    pedestrians: PedestrianProcess = field(default_factory=PedestrianProcess)
    track: TrackMap = field(default_factory=TrackMap)
    lidar: LidarConfig = field(default_factory=LidarConfig)
    vehicle: VehicleConfig = field(default_factory=VehicleConfig)
    controllers: ControllerConfig = field(default_factory=ControllerConfig)

    def __post_init__(self):
        if self.car_count < 1:
            raise ValueError("need at least one car")
        if len(self.car_spawn_times) < self.car_count:
            raise ValueError("not enough car spawn times")


# --------------------------------------------------------------------------
# geometry

def _offset_point(track: TrackMap, s: float, lateral: float) -> tuple[float, float]:
    x, y, h = track.centreline_point(s)
    return x - math.sin(h) * lateral, y + math.cos(h) * lateral


@functools.lru_cache(maxsize=32)
def _wall_table(track: TrackMap):
    segs = track.segments
    vert = segs[segs[:, 0] == segs[:, 2]]
    horiz = segs[segs[:, 1] == segs[:, 3]]
    return (vert[:, 0][:, None], np.minimum(vert[:, 1], vert[:, 3])[:, None],
            np.maximum(vert[:, 1], vert[:, 3])[:, None],
            horiz[:, 1][:, None], np.minimum(horiz[:, 0], horiz[:, 2])[:, None],
            np.maximum(horiz[:, 0], horiz[:, 2])[:, None])


@functools.lru_cache(maxsize=32)
def _offset_trig(cfg: LidarConfig) -> tuple[np.ndarray, np.ndarray]:
    o = cfg.offsets()
    return np.cos(o), np.sin(o)


def raycast(track: TrackMap, vehicles: Sequence[VehicleState], pedestrians: Sequence[Pedestrian],
            pose: tuple[float, float, float], cfg: LidarConfig,
            radius: float = 0.3, exclude: int | None = None,
            offsets: np.ndarray | None = None) -> np.ndarray:
    """Ranges to the nearest wall, car disc or pedestrian disc for each ray."""
    px, py, heading = pose
    if offsets is None:
        co, so = _offset_trig(cfg)
        ch, sh = math.cos(heading), math.sin(heading)
        ux, uy = ch * co - sh * so, sh * co + ch * so
    else:
        ang = heading + offsets
        ux, uy = np.cos(ang), np.sin(ang)
    vx, vlo, vhi, hy, hlo, hhi = _wall_table(track)

    # walls are axis-aligned: intersect with the vertical and horizontal lines
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t = (vx - px) / ux
        yy = py + t * uy
        tv = np.where((t > 0) & (yy >= vlo) & (yy <= vhi), t, np.inf).min(axis=0)
        t = (hy - py) / uy
        xx = px + t * ux
        th = np.where((t > 0) & (xx >= hlo) & (xx <= hhi), t, np.inf).min(axis=0)
    best = np.minimum(np.minimum(tv, th), cfg.max_range)

    # discs out of sensor range cannot shorten any ray
    reach = cfg.max_range
    discs = [(v.x, v.y, radius) for i, v in enumerate(vehicles) if i != exclude]
    discs += [(p.x, p.y, p.radius) for p in pedestrians]
    discs = [d for d in discs if math.hypot(d[0] - px, d[1] - py) < reach + d[2]]
    if discs:
        c = np.asarray(discs)
        ox, oy = px - c[:, 0:1], py - c[:, 1:2]
        b = ox * ux + oy * uy
        cc = (ox * ox + oy * oy) - c[:, 2:3] ** 2
        disc = b * b - cc
        hit = disc >= 0
        t = -b - np.sqrt(np.where(hit, disc, 0.0))
        inside = cc <= 0
        t = np.where(inside, 0.0, np.where(hit & (t >= 0), t, np.inf))
        best = np.minimum(best, t.min(axis=0))
    return np.maximum(best, 1e-3)


def step_vehicle(state: VehicleState, d: float, a: float, dt: float,
                 cfg: VehicleConfig = VehicleConfig()) -> VehicleState:
    """Unicycle update; positive steering turns clockwise (right)."""
    if state.crashed:
        return VehicleState(state.x, state.y, state.heading, 0.0, d, a,
                            state.spawn_tick, True, state.crash_cause)
    speed = min(cfg.v_max, max(0.0, state.speed + a * dt))
    heading = state.heading - cfg.k_steer * d * speed * dt
    x = state.x + speed * math.cos(heading) * dt
    y = state.y + speed * math.sin(heading) * dt
    return VehicleState(x, y, heading, speed, d, a, state.spawn_tick)


def _point_segment_distance(px: float, py: float, seg) -> float:
    x0, y0, x1, y1 = seg
    dx, dy = x1 - x0, y1 - y0
    L2 = dx * dx + dy * dy
    f = 0.0 if L2 == 0 else max(0.0, min(1.0, ((px - x0) * dx + (py - y0) * dy) / L2))
    return math.hypot(px - (x0 + f * dx), py - (y0 + f * dy))


def wall_distance(track: TrackMap, x: float, y: float) -> float:
    W, H, c = track.width, track.height, track.corridor
    # inside the corridor band the nearest wall is one of the axis lines
    outer = min(x, W - x, y, H - y)
    dx = max(c - x, 0.0, x - (W - c))
    dy = max(c - y, 0.0, y - (H - c))
    if dx == 0.0 and dy == 0.0:
        inner = -min(x - c, (W - c) - x, y - c, (H - c) - y)  # inside inner block
    else:
        inner = math.hypot(dx, dy)
    return min(outer, inner) if inner >= 0 else inner


def detect_collisions(vehicles: Sequence[VehicleState], pedestrians: Sequence[Pedestrian],
                      track: TrackMap, radius: float = 0.3, tick: int | None = None) -> list[bool]:
    """Mark cars whose disc touches a wall, another car or a pedestrian.

    Crash flags are sticky.  ``crash_cause`` records what was hit; a
    pedestrian that appears on top of a car is reported as
    ``"pedestrian_walked_into_car"``.
    """
    flags = []
    for i, v in enumerate(vehicles):
        if v.crashed:
            flags.append(True)
            continue
        cause = None
        if wall_distance(track, v.x, v.y) < radius:
            cause = "wall"
        if cause is None:
            for j, o in enumerate(vehicles):
                if j != i and math.hypot(v.x - o.x, v.y - o.y) < 2 * radius:
                    cause = "car"
                    break
        if cause is None:
            for p in pedestrians:
                if math.hypot(v.x - p.x, v.y - p.y) < radius + p.radius:
                    cause = ("pedestrian_walked_into_car" if tick is not None and p.spawn_tick == tick
                             else "car_hit_pedestrian")
                    break
        if cause is not None:
            v.crashed = True
            v.crash_cause = cause
            v.speed = 0.0
        flags.append(v.crashed)
    return flags


# --------------------------------------------------------------------------
# scenario

MODES = ("normal", "stopping", "cautious")


@dataclass
class ScenarioResult:
    scenario: Scenario
    control_mode: str
    crashed: list[bool]
    crash_causes: list[str | None]
    active_ticks: list[int]
    mode_ticks: list[list[int]]          # per car: ticks per group
    changes: list[int]                   # per car: selected group changed vs previous tick
    trap_entries: int = 0
    pid_violations: int = 0
    deadlocks: int = 0
    timing_ns: dict[str, int] = field(default_factory=dict)
    timed_ticks: int = 0
    audits: list[Any] = field(default_factory=list)   # TraceReport per car when audited
    audit_ns: int = 0
    logs: list[list[Any]] = field(default_factory=list)

    @property
    def crash_rate(self) -> float:
        """Fraction of cars that crashed."""
        return sum(self.crashed) / len(self.crashed)

    @property
    def any_crash(self) -> bool:
        return any(self.crashed)

    def mode_pct(self) -> list[float]:
        total = sum(sum(m) for m in self.mode_ticks)
        if total == 0:
            return [0.0] * len(MODES)
        return [100.0 * sum(m[k] for m in self.mode_ticks) / total for k in range(len(MODES))]

    def change_rate(self) -> float:
        ticks = sum(self.active_ticks)
        return 0.0 if ticks == 0 else 100.0 * sum(self.changes) / ticks

    def signature(self) -> tuple:
        """Everything except timing, for determinism checks."""
        return (tuple(self.crashed), tuple(self.crash_causes), tuple(self.active_ticks),
                tuple(tuple(m) for m in self.mode_ticks), tuple(self.changes),
                self.trap_entries, self.pid_violations)


class _World:
    def __init__(self, sc: Scenario):
        self.sc = sc
        self.rng = np.random.default_rng(sc.seed)
        self.cars: list[VehicleState] = []
        self.peds: list[Pedestrian] = []
        self.spawned_peds = 0
        self.spawn_ticks = [int(round(t / sc.dt)) for t in sc.car_spawn_times[:sc.car_count]]

    def try_spawn_cars(self, tick: int, on_spawn) -> None:
        for k in range(len(self.cars), self.sc.car_count):
            if tick < self.spawn_ticks[k]:
                return
            x, y, h = self.sc.track.start_pose()
            r = self.sc.vehicle.radius
            clear = all(math.hypot(c.x - x, c.y - y) > 4 * r for c in self.cars) and \
                all(math.hypot(p.x - x, p.y - y) > r + p.radius + 0.5 for p in self.peds)
            if not clear:
                return
            self.cars.append(VehicleState(x, y, h, 0.0, spawn_tick=tick))
            on_spawn()

    def update_pedestrians(self, tick: int) -> None:
        """Retire expired pedestrians, move drifting ones, then spawn.

        Each of the ``ped_count`` pedestrians that is currently off the track
        reappears with probability ``spawn_prob`` per tick.
        """
        pp = self.sc.pedestrians
        track = self.sc.track
        self.peds = [p for p in self.peds if p.present(tick)]
        limit = track.corridor / 2 - pp.radius
        for p in self.peds:
            if p.drift:
                p.lateral += p.drift * self.sc.dt
                if abs(p.lateral) > limit:
                    p.lateral = math.copysign(limit, p.lateral)
                    p.drift = -p.drift
                p.x, p.y = _offset_point(track, p.arc, p.lateral)
        for _ in range(self.sc.ped_count - len(self.peds)):
            if self.rng.random() < pp.spawn_prob:
                self._spawn_pedestrian(tick)

    def _spawn_pedestrian(self, tick: int) -> None:
        pp = self.sc.pedestrians
        track = self.sc.track
        lap = track.lap_length
        progress = [track.progress(c.x, c.y) for c in self.cars]
        for _ in range(20):
            s = float(self.rng.uniform(0.0, lap))
            if any((s - pc) % lap < pp.min_ahead or (pc - s) % lap < pp.min_behind
                   for pc in progress):
                continue
            x, y, _ = track.centreline_point(s)
            if any(math.hypot(x - p.x, y - p.y) <= 2 * pp.radius for p in self.peds):
                continue
            dwell = int(self.rng.geometric(1.0 / pp.dwell_mean))
            drift = pp.lateral_drift * (1 if self.rng.random() < 0.5 else -1)
            self.peds.append(Pedestrian(x, y, tick, dwell, pp.radius, drift, arc=s))
            self.spawned_peds += 1
            return

    def scan(self, i: int) -> np.ndarray:
        c = self.cars[i]
        return raycast(self.sc.track, self.cars, self.peds, (c.x, c.y, c.heading), self.sc.lidar,
                       self.sc.vehicle.radius, exclude=i)


def run_scenario(scenario: Scenario, control_mode: str = "ri", *,
                 selection: SelectionPolicy | None = None,
                 audit: bool = False, record: bool = False, timing: bool = False,
                 policies=None, bank_factory=None) -> ScenarioResult:
    """Simulate one trial.

    ``control_mode`` is ``"bare"`` (steering plus full throttle) or ``"ri"``
    (one manager and controller bank per car).  ``audit`` re-checks every
    car's released trace with :func:`check_trace`; ``record`` keeps the
    managers' tick logs; ``timing`` accumulates per-phase nanoseconds.
    ``policies`` and ``bank_factory`` (called with the controller config)
    replace the shipped three-policy setup.
    """
    if control_mode not in ("bare", "ri"):
        raise ValueError(f"unknown control mode {control_mode!r}")
    sc = scenario
    world = _World(sc)
    pols = policies if policies is not None else f110_policies()
    managers: list[RiManager] = []
    banks = []
    bare = []
    n_groups = len(MODES)

    def on_spawn():
        if control_mode == "ri":
            managers.append(RiManager(pols, selection or SelectionPolicy.prefer_last(),
                                      record=audit or record))
            banks.append(bank_factory(sc.controllers) if bank_factory else f110_bank(sc.controllers))
        else:
            bare.append(bare_controller(sc.controllers))

    result = ScenarioResult(sc, control_mode, [], [], [], [], [])
    prev_sel: list[int | None] = []
    alone = pols[2].location_index("l_alone") if control_mode == "ri" and len(pols) > 2 \
        and "l_alone" in pols[2].locations else None
    clock = time.perf_counter_ns
    t_begin = t_ctrl = t_end = 0

    for tick in range(sc.max_ticks):
        world.try_spawn_cars(tick, on_spawn)
        world.update_pedestrians(tick)
        while len(result.crashed) < len(world.cars):
            result.crashed.append(False)
            result.crash_causes.append(None)
            result.active_ticks.append(0)
            result.mode_ticks.append([0] * n_groups)
            result.changes.append(0)
            prev_sel.append(None)

        commands = []
        for i, car in enumerate(world.cars):
            if car.crashed:
                commands.append((0.0, 0.0))
                continue
            inputs = {"R": world.scan(i), "v": car.speed}
            if control_mode == "bare":
                out = bare[i](inputs)
            else:
                mgr, bank = managers[i], banks[i]
                pid = bank.controllers["pid"]
                pid_before = pid.state
                if timing:
                    c0 = clock()
                    mask = mgr.begin_tick(inputs)
                    c1 = clock()
                    outs = bank.step(inputs, mask)
                    c2 = clock()
                    try:
                        ev = mgr.end_tick(outs)
                    except PolicyDeadlock as exc:
                        exc.trace_records = list(mgr.log)  # type: ignore[attr-defined]
                        raise
                    c3 = clock()
                    t_begin += c1 - c0
                    t_ctrl += c2 - c1
                    t_end += c3 - c2
                    result.timed_ticks += 1
                else:
                    mask = mgr.begin_tick(inputs)
                    outs = bank.step(inputs, mask)
                    try:
                        ev = mgr.end_tick(outs)
                    except PolicyDeadlock as exc:
                        exc.trace_records = list(mgr.log)  # type: ignore[attr-defined]
                        raise
                out = ev.output
                sel = mgr.last_selected
                result.mode_ticks[i][sel] += 1
                if prev_sel[i] is not None and prev_sel[i] != sel:
                    result.changes[i] += 1
                prev_sel[i] = sel
                if len(mask) > 2 and not mask[2] and pid.state != pid_before:
                    result.pid_violations += 1
                if alone is not None and mgr.states[2].location == alone:
                    result.trap_entries += 1
            result.active_ticks[i] += 1
            commands.append((out["d"], out["a"]))

        for i, (d, a) in enumerate(commands):
            world.cars[i] = step_vehicle(world.cars[i], d, a, sc.dt, sc.vehicle)
        detect_collisions(world.cars, world.peds, sc.track, sc.vehicle.radius, tick)
        for i, car in enumerate(world.cars):
            if car.crashed and not result.crashed[i]:
                result.crashed[i] = True
                result.crash_causes[i] = car.crash_cause

    # cars that never got onto the track count as not crashed and inactive
    while len(result.crashed) < sc.car_count:
        result.crashed.append(False)
        result.crash_causes.append(None)
        result.active_ticks.append(0)
        result.mode_ticks.append([0] * n_groups)
        result.changes.append(0)

    if timing:
        result.timing_ns = {"begin_tick": t_begin, "controllers": t_ctrl, "end_tick": t_end}
    if control_mode == "ri":
        if audit:
            t0 = time.perf_counter_ns()
            for mgr in managers:
                result.audits.append(check_trace(mgr.policies, mgr.released, mgr.histories))
            result.audit_ns = time.perf_counter_ns() - t0
        if record:
            result.logs = [mgr.log for mgr in managers]
    return result
