"""Behaviour policies: epsilon-greedy, EZ-greedy and directed EZ-greedy.

``q`` arguments are callables ``q(obs, head) -> np.ndarray`` giving the
Q-vector of one head (0 = main task, 1..M = GVFs).  ``rng`` needs only
``random()`` and ``integers(low, high)``, so a numpy ``Generator`` or a
scripted stand-in both work.  Draw order on an exploration decision is:
``random()`` for the epsilon test, then ``z``, then ``g``, then ``w`` (only
when ``g == 0``).
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import gridworlds as gw
from .errors import ConfigError


@dataclass(frozen=True)
class ExplorationState:
    z: int = 0  # remaining countdown
    w: int = -1  # frozen choice for the random-repeat option
    g: int = 0  # active option: 0 = repeat w, g > 0 = follow GVF g
    started: bool = False  # an exploration event was sampled on this step


class ActionRepeat:
    """Option 0 as plain action repetition: the frozen choice is the action."""

    def __init__(self, n_actions: int):
        self.n = n_actions

    def act(self, w: int) -> int:
        return w


class MovementOptions:
    """DoorKey option 0: closed-loop "go <direction>" subroutines.

    Choices ``0..3`` head right, down, left and up (rotate toward the
    heading, at most two turns, then step forward); choices 4 and 5 repeat
    pickup and toggle.  ``heading`` is read from the live environment.
    """

    TARGETS = (0, 1, 2, 3)
    EXTRA = (gw.PICKUP, gw.TOGGLE)

    def __init__(self, env):
        self.env = env
        self.n = len(self.TARGETS) + len(self.EXTRA)

    @staticmethod
    def primitive(target: int, heading: int) -> int:
        diff = (target - heading) % 4
        if diff == 0:
            return gw.FORWARD
        return gw.TURN_RIGHT if diff == 1 else gw.TURN_LEFT

    def act(self, w: int) -> int:
        if w < len(self.TARGETS):
            return self.primitive(self.TARGETS[w], self.env.state.heading)
        return self.EXTRA[w - len(self.TARGETS)]


def greedy(qvec: np.ndarray) -> int:
    # np.argmax takes the lowest index on ties
    return int(np.argmax(qvec))


def eps_greedy_action(q, obs, epsilon: float, rng, n_actions: int) -> int:
    if rng.random() < epsilon:
        return int(rng.integers(0, n_actions))
    return greedy(q(obs, 0))


def dez_action(xs: ExplorationState, epsilon: float, z_max: int, n_gvfs: int, q, obs, rng,
               repeat) -> tuple[int, ExplorationState]:
    """One decision of directed EZ-greedy.

    With the countdown at zero: exploit head 0 with probability 1-epsilon,
    otherwise sample a duration ``z`` in ``[1, z_max]`` and an option ``g``
    in ``[0, M]`` and act from it without decrementing.  While the
    countdown runs, keep acting from the same option and decrement, so an
    exploration event lasts ``z + 1`` steps.
    """
    if xs.z == 0:
        if rng.random() < epsilon:
            z = int(rng.integers(1, z_max + 1))
            g = int(rng.integers(0, n_gvfs + 1))
            if g == 0:
                w = int(rng.integers(0, repeat.n))
                return repeat.act(w), ExplorationState(z, w, 0, True)
            return greedy(q(obs, g)), ExplorationState(z, xs.w, g, True)
        action = greedy(q(obs, 0))
        return action, (replace(xs, started=False) if xs.started else xs)
    action = repeat.act(xs.w) if xs.g == 0 else greedy(q(obs, xs.g))
    return action, ExplorationState(xs.z - 1, xs.w, xs.g, False)


def ez_action(xs: ExplorationState, epsilon: float, z_max: int, q, obs, rng,
              repeat) -> tuple[int, ExplorationState]:
    """EZ-greedy: :func:`dez_action` with the GVF options removed."""
    return dez_action(xs, epsilon, z_max, 0, q, obs, rng, repeat)


@dataclass(frozen=True)
class EpsilonSchedule:
    episodes: int
    start: float = 1.0
    stop: float = 0.01
    decay_base: float = 0.01
    beta: float = 1.0

    def __post_init__(self):
        if not 0 < self.beta <= 1:
            raise ConfigError(f"beta must be in (0, 1], got {self.beta}")
        if self.episodes <= 0:
            raise ConfigError("episodes must be positive")

    @property
    def decay(self) -> float:
        return self.decay_base ** (1.0 / (self.episodes * self.beta))


def epsilon_at(schedule: EpsilonSchedule, episode: int) -> float:
    return max(schedule.stop, schedule.start * schedule.decay ** episode)
