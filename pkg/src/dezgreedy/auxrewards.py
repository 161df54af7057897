"""Reward wrappers for the count-bonus (CIR) and reward-shaping (RS) baselines."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

from .errors import ConfigError


class StateCounter:
    """Lifetime visit counts N(s) keyed by the exact discrete state."""

    def __init__(self):
        self.counts = Counter()

    def visit(self, key) -> int:
        self.counts[key] += 1
        return self.counts[key]

    def __getitem__(self, key) -> int:
        return self.counts[key]

    @property
    def unique(self) -> int:
        return len(self.counts)


def cir_reward(counter: StateCounter, key, r_e: float, eta: float) -> float:
    """Count the visit to ``key`` and return ``r_e + eta / sqrt(N(key))``."""
    if eta < 0:
        raise ConfigError("eta must be >= 0")
    n = counter.visit(key)
    return r_e + eta / math.sqrt(n)


@dataclass
class ShapingRule:
    bonus: float
    events: tuple
    paid: set = field(default_factory=set)

    def new_episode(self) -> None:
        self.paid.clear()


def shaped_reward(rule: ShapingRule, events, r_e: float) -> float:
    """Add ``rule.bonus`` once per episode for each shaped event that fires."""
    r = r_e
    for ev in rule.events:
        if ev in events and ev not in rule.paid:
            rule.paid.add(ev)
            r += rule.bonus
    return r
