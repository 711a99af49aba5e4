"""Builtin functions callable from policy guards.

Guards may only call functions registered here.  ``min_front`` and ``kin``
are always present; projects can add more with :func:`register`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

#: Angular width of the forward LiDAR sector scanned for obstacles (degrees).
FRONT_SECTOR_DEG = 41.5

#: Full LiDAR field of view assumed by ``min_front`` (degrees).  The ray count
#: is taken from the scan itself.
DEFAULT_FOV_DEG = 230.0


class EvalError(Exception):
    """A builtin was applied to the wrong number or kind of arguments."""


class NonPositiveDistance(ValueError):
    pass


@dataclass(frozen=True)
class Builtin:
    name: str
    func: Callable
    arg_kinds: tuple[str, ...]  # "scalar" | "array"


_REGISTRY: dict[str, Builtin] = {}


def register(name: str, func: Callable, arg_kinds: tuple[str, ...]) -> None:
    _REGISTRY[name] = Builtin(name, func, tuple(arg_kinds))


def lookup(name: str) -> Builtin | None:
    return _REGISTRY.get(name)


def registered() -> list[str]:
    return sorted(_REGISTRY)


_sector_cache: dict[tuple[int, float, float], slice] = {}


def front_sector(ray_count: int, fov_deg: float = DEFAULT_FOV_DEG,
                 sector_deg: float = FRONT_SECTOR_DEG) -> slice:
    """Index slice of the rays whose angle lies within the centred sector.

    Rays are assumed evenly spread over ``fov_deg`` with the first and last
    ray on the field-of-view edges.
    """
    key = (ray_count, fov_deg, sector_deg)
    sl = _sector_cache.get(key)
    if sl is None:
        if ray_count < 2:
            sl = slice(0, ray_count)
        else:
            spacing = fov_deg / (ray_count - 1)
            centre = (ray_count - 1) / 2.0
            half = int(math.floor(sector_deg / 2.0 / spacing + 1e-9))
            lo = int(math.ceil(centre - half))
            hi = int(math.floor(centre + half))
            sl = slice(max(lo, 0), min(hi, ray_count - 1) + 1)
        _sector_cache[key] = sl
    return sl


def min_front(rays, fov_deg: float = DEFAULT_FOV_DEG) -> float:
    """Minimum range over the central 41.5 degree sector of a scan."""
    arr = np.asarray(rays, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise EvalError("min_front expects a non-empty 1-D ray array")
    return float(arr[front_sector(arr.size, fov_deg)].min())


#: Multiplier applied to the kinematic stopping deceleration.
KIN_SAFETY_FACTOR = 1.0


def kin(distance: float, speed: float) -> float:
    """Minimum constant deceleration that stops ``speed`` within ``distance``."""
    if not distance > 0:
        raise NonPositiveDistance(f"kin needs a positive distance, got {distance}")
    return KIN_SAFETY_FACTOR * speed * speed / (2.0 * distance)


register("min_front", min_front, ("array",))
register("kin", kin, ("scalar", "scalar"))
