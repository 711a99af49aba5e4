"""Policies for the F1/10 normal, stopping and cautious controller groups."""

from __future__ import annotations

import functools
from importlib import resources

from ..vdta import Vdta, load_policy

NAMES = ("normal", "stopping", "cautious")


def policy_text(name: str) -> str:
    return resources.files(__name__).joinpath(f"{name}.vdta").read_text(encoding="utf-8")


@functools.lru_cache(maxsize=None)
def load(name: str) -> Vdta:
    # compiled policies are immutable, so one instance per name is shared
    return load_policy(policy_text(name))


def f110_policies() -> list[Vdta]:
    """The three group policies in manager order (normal, stopping, cautious)."""
    return [load(n) for n in NAMES]
