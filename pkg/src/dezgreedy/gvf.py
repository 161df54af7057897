"""Handcrafted cumulants for the auxiliary value functions.

Each GVF asks "how soon do I reach event E?": it is paid +1 on the step
E first fires and is treated as terminal from then on.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import gridworlds as gw
from .errors import ConfigError

SUITES = {
    gw.TWO_ROOMS: (gw.CORRIDOR,),
    gw.SUBGOAL: (gw.CORRIDOR, gw.RED),
    gw.DOORKEY: (gw.KEY, gw.DOOR),
    gw.OPEN_GRID: (gw.CORRIDOR,),
}


@dataclass(frozen=True)
class GvfSpec:
    index: int  # 1..M; head 0 is the main task
    event: str
    gamma: float = 0.99

    def cumulant(self, events) -> float:
        return 1.0 if self.event in events else 0.0

    def terminates(self, events) -> bool:
        return self.event in events


def gvf_suite(env_kind: str, gamma: float = 0.99) -> list[GvfSpec]:
    if env_kind not in SUITES:
        raise ConfigError(f"unknown env kind {env_kind!r}")
    return [GvfSpec(i + 1, ev, gamma) for i, ev in enumerate(SUITES[env_kind])]


def cumulants(specs: Sequence[GvfSpec], events, done_before=None):
    """Cumulant vector and per-GVF terminal flags for one transition.

    ``done_before`` carries the flags from the previous step of the same
    episode (``None`` at episode start); a GVF whose event already fired
    earns nothing more and stays terminal.
    """
    m = len(specs)
    c = np.zeros(m, np.float32)
    done = np.zeros(m, bool) if done_before is None else np.array(done_before, bool)
    for i, spec in enumerate(specs):
        if done[i]:
            continue
        if spec.terminates(events):
            c[i] = spec.cumulant(events)
            done[i] = True
    return c, done
