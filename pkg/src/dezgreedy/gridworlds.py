"""Gridworld environments: Two Rooms, SubGoal Two Rooms and DoorKey.

Coordinates are ``(x, y)`` with ``(0, 0)`` at the bottom-left and ``y``
growing upwards.  Two Rooms family grids have no outer wall: cells run over
``0..dim-1``.  DoorKey follows the MiniGrid convention of a ``dim x dim``
board whose border is wall, so the walkable interior is ``(dim-2)^2``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, OracleError, UsageError

TWO_ROOMS = "tworooms"
SUBGOAL = "subgoal"
DOORKEY = "doorkey"
OPEN_GRID = "opengrid"  # wall-free Two Rooms variant, used by the tabular check
ENV_KINDS = (TWO_ROOMS, SUBGOAL, DOORKEY, OPEN_GRID)

# Two Rooms family actions
UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3
MOVES = {UP: (0, 1), DOWN: (0, -1), LEFT: (-1, 0), RIGHT: (1, 0)}

# DoorKey actions (MiniGrid order, "drop" omitted)
TURN_LEFT, TURN_RIGHT, FORWARD, PICKUP, TOGGLE, DONE = range(6)
# headings, clockwise: 0 right, 1 down, 2 left, 3 up
HEADINGS = ((1, 0), (0, -1), (-1, 0), (0, 1))

CORRIDOR = "corridor_crossed"
RED = "red_visited"
KEY = "key_picked"
DOOR = "door_unlocked"
GOAL = "goal_reached"
EVENTS = (CORRIDOR, RED, KEY, DOOR, GOAL)

# DoorKey image encoding: (object id, object state, agent heading)
OBJ_EMPTY, OBJ_WALL, OBJ_DOOR, OBJ_KEY, OBJ_GOAL = 0, 1, 2, 3, 4
N_OBJ = 4
STATE_OPEN, STATE_CLOSED, STATE_LOCKED = 0, 1, 2
N_STATE = 2


@dataclass(frozen=True)
class GridLayout:
    kind: str
    width: int
    height: int
    walls: frozenset
    corridor: tuple
    spawn: tuple
    goal: tuple
    subgoal: tuple | None = None
    key: tuple | None = None
    door: tuple | None = None
    spawn_heading: int = 0

    @property
    def wall_column(self) -> int:
        return self.corridor[0]

    def passable(self, cell) -> bool:
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height and cell not in self.walls


@dataclass
class EnvState:
    pos: tuple
    t: int
    t_max: int
    visited_red: bool = False
    heading: int = 0
    has_key: bool = False
    door_open: bool = False
    door_unlocked: bool = False
    key_pos: tuple | None = None
    crossed: bool = False
    done: bool = False


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    terminal: bool
    events: frozenset = field(default_factory=frozenset)

    @property
    def goal_reached(self) -> bool:
        return GOAL in self.events


def _min_dim(kind: str) -> int:
    # the wall-free grid has no rooms to fit, so 3x3 is enough
    return 3 if kind == OPEN_GRID else 5


def terminal_reward(kind: str, t: int, t_max: int, visited_red: bool = False) -> float:
    """Reward paid on reaching the goal after ``t`` of ``t_max`` steps."""
    frac = t / t_max
    if kind == SUBGOAL:
        return 1.0 - 0.75 * frac if visited_red else 0.2 - 0.1 * frac
    return 1.0 - 0.9 * frac


def two_rooms_layout(dim: int, kind: str = TWO_ROOMS) -> GridLayout:
    if dim < _min_dim(kind):
        raise ConfigError(f"grid_dim must be >= {_min_dim(kind)} for {kind}, got {dim}")
    wall = dim // 2
    mid = dim // 2
    corridor = (wall, mid)
    walls = frozenset() if kind == OPEN_GRID else frozenset((wall, y) for y in range(dim) if y != mid)
    subgoal = ((wall - 1) // 2, (dim - 1) // 2) if kind == SUBGOAL else None
    layout = GridLayout(kind, dim, dim, walls, corridor, (0, 0), (dim - 1, dim - 1), subgoal)
    specials = [c for c in (layout.spawn, layout.goal, layout.subgoal, layout.corridor) if c is not None]
    if len(set(specials)) != len(specials):
        raise ConfigError(f"grid {dim} too small to host all special cells")
    return layout


def doorkey_layout(dim: int, rng: np.random.Generator) -> GridLayout:
    """Random DoorKey board: split column, door row, key, agent and heading."""
    if dim < 5:
        raise ConfigError(f"grid_dim must be >= 5, got {dim}")
    border = {(x, y) for x in range(dim) for y in range(dim) if x in (0, dim - 1) or y in (0, dim - 1)}
    split = int(rng.integers(2, dim - 2)) if dim > 5 else 2
    door = (split, int(rng.integers(1, dim - 1)))
    walls = border | {(split, y) for y in range(dim) if (split, y) != door}
    left = [(x, y) for x in range(1, split) for y in range(1, dim - 1)]
    i_key, i_agent = rng.choice(len(left), size=2, replace=False)
    heading = int(rng.integers(0, 4))
    return GridLayout(DOORKEY, dim, dim, frozenset(walls), door, left[int(i_agent)], (dim - 2, dim - 2),
                      key=left[int(i_key)], door=door, spawn_heading=heading)


class GridEnv:
    """One environment instance.

    ``reset()`` starts an episode and returns the first observation;
    ``step(action)`` returns a :class:`StepResult`.  DoorKey draws a fresh
    board from the env's seeded generator on every reset.
    """

    def __init__(self, kind: str, dim: int, seed: int = 0, onehot: bool = False):
        if kind not in ENV_KINDS:
            raise ConfigError(f"unknown env kind {kind!r}")
        if dim < _min_dim(kind):
            raise ConfigError(f"grid_dim must be >= {_min_dim(kind)} for {kind}, got {dim}")
        self.kind = kind
        self.dim = dim
        self.onehot = onehot
        self.rng = np.random.default_rng(seed)
        self.layout = doorkey_layout(dim, self.rng) if kind == DOORKEY else two_rooms_layout(dim, kind)
        self.t_max = 10 * dim * dim if kind == DOORKEY else 10 * dim
        self.n_actions = 6 if kind == DOORKEY else 4
        self.state: EnvState | None = None
        self._norm = 1.0 / (dim - 1)
        self._fresh = True

    # -- observations -------------------------------------------------------
    @property
    def obs_shape(self) -> tuple:
        if self.onehot:
            return (self.n_states,)
        if self.kind == DOORKEY:
            return (3, self.dim, self.dim)
        return (3,) if self.kind == SUBGOAL else (2,)

    @property
    def n_states(self) -> int:
        n = self.dim * self.dim
        return 2 * n if self.kind == SUBGOAL else n

    def state_key(self) -> tuple:
        """Exact discrete state, used for counting unique states."""
        s = self.state
        if self.kind == DOORKEY:
            return s.pos + (s.heading, s.has_key, s.door_open)
        if self.kind == SUBGOAL:
            return s.pos + (s.visited_red,)
        return s.pos

    def observe(self) -> np.ndarray:
        s = self.state
        if self.onehot:
            v = np.zeros(self.n_states, np.float32)
            x, y = s.pos
            v[(x + self.dim * y) + (self.dim * self.dim if s.visited_red else 0)] = 1.0
            return v
        if self.kind == DOORKEY:
            return self._image()
        x, y = s.pos
        if self.kind == SUBGOAL:
            return np.array([x * self._norm, y * self._norm, float(s.visited_red)], np.float32)
        return np.array([x * self._norm, y * self._norm], np.float32)

    def _image(self) -> np.ndarray:
        s, lay = self.state, self.layout
        img = np.zeros((3, self.dim, self.dim), np.float32)
        for (x, y) in lay.walls:
            img[0, y, x] = OBJ_WALL
        dx, dy = lay.door
        img[0, dy, dx] = OBJ_DOOR
        img[1, dy, dx] = STATE_OPEN if s.door_open else STATE_CLOSED if s.door_unlocked else STATE_LOCKED
        if s.key_pos is not None:
            img[0, s.key_pos[1], s.key_pos[0]] = OBJ_KEY
        gx, gy = lay.goal
        img[0, gy, gx] = OBJ_GOAL
        ax, ay = s.pos
        # agent plane: heading 1..4, plus 4 while carrying the key
        img[2, ay, ax] = s.heading + 1 + 4 * s.has_key
        img[0] /= N_OBJ
        img[1] /= N_STATE
        img[2] /= 8
        return img

    # -- dynamics -----------------------------------------------------------
    def reset(self) -> np.ndarray:
        if self.kind == DOORKEY and not self._fresh:
            self.layout = doorkey_layout(self.dim, self.rng)
        self._fresh = False
        lay = self.layout
        self.state = EnvState(pos=lay.spawn, t=0, t_max=self.t_max, heading=lay.spawn_heading,
                              key_pos=lay.key)
        return self.observe()

    def step(self, action: int) -> StepResult:
        s = self.state
        if s is None or s.done:
            raise UsageError("step() called on a finished episode; call reset()")
        if not 0 <= action < self.n_actions:
            raise UsageError(f"action {action} outside 0..{self.n_actions - 1}")
        events = set()
        if self.kind == DOORKEY:
            self._doorkey_move(action, events)
        else:
            dx, dy = MOVES[action]
            nxt = (s.pos[0] + dx, s.pos[1] + dy)
            if self.layout.passable(nxt):
                s.pos = nxt
        lay = self.layout
        if self.kind != DOORKEY and not s.crossed and s.pos[0] > lay.wall_column:
            s.crossed = True
            events.add(CORRIDOR)
        if lay.subgoal is not None and not s.visited_red and s.pos == lay.subgoal:
            s.visited_red = True
            events.add(RED)
        s.t += 1
        reward = 0.0
        if s.pos == lay.goal:
            events.add(GOAL)
            reward = terminal_reward(self.kind, s.t, s.t_max, s.visited_red)
            s.done = True
        elif s.t >= s.t_max:
            s.done = True
        return StepResult(self.observe(), reward, s.done, frozenset(events))

    def _doorkey_move(self, action: int, events: set) -> None:
        s, lay = self.state, self.layout
        hx, hy = HEADINGS[s.heading]
        front = (s.pos[0] + hx, s.pos[1] + hy)
        if action == TURN_LEFT:
            s.heading = (s.heading - 1) % 4
        elif action == TURN_RIGHT:
            s.heading = (s.heading + 1) % 4
        elif action == FORWARD:
            blocked = front == s.key_pos or (front == lay.door and not s.door_open)
            if lay.passable(front) and not blocked:
                s.pos = front
        elif action == PICKUP:
            if front == s.key_pos and not s.has_key:
                s.has_key = True
                s.key_pos = None
                events.add(KEY)
        elif action == TOGGLE:
            if front == lay.door:
                if not s.door_unlocked:
                    if s.has_key:
                        s.door_unlocked = True
                        s.door_open = True
                        events.add(DOOR)
                else:
                    s.door_open = not s.door_open

    def render(self) -> str:
        """ASCII picture, top row first."""
        s, lay = self.state, self.layout
        rows = []
        arrows = ">v<^"
        for y in range(lay.height - 1, -1, -1):
            row = []
            for x in range(lay.width):
                c = (x, y)
                if s is not None and c == s.pos:
                    row.append(arrows[s.heading] if self.kind == DOORKEY else "A")
                elif c == lay.door and self.kind == DOORKEY:
                    row.append("/" if s is not None and s.door_open else "D")
                elif c in lay.walls:
                    row.append("#")
                elif c == lay.goal:
                    row.append("G")
                elif c == lay.subgoal:
                    row.append("r" if s is not None and s.visited_red else "R")
                elif s is not None and c == s.key_pos:
                    row.append("K")
                else:
                    row.append(".")
            rows.append("".join(row))
        return "\n".join(rows)


def make_env(kind: str, dim: int, seed: int = 0, **kw) -> GridEnv:
    return GridEnv(kind, dim, seed, **kw)


def _bfs(layout: GridLayout, start, goal) -> int:
    if start == goal:
        return 0
    seen = {start}
    queue = deque([(start, 0)])
    while queue:
        (x, y), d = queue.popleft()
        for dx, dy in MOVES.values():
            nxt = (x + dx, y + dy)
            if nxt in seen or not layout.passable(nxt):
                continue
            if nxt == goal:
                return d + 1
            seen.add(nxt)
            queue.append((nxt, d + 1))
    raise OracleError(f"{goal} unreachable from {start}")


def optimal_steps(layout: GridLayout) -> int:
    """Fewest moves from spawn to goal; via the red dot for SubGoal layouts.

    DoorKey boards are measured as plain navigation with the door treated as
    open (turns, pickup and toggle are not counted).
    """
    if layout.kind == SUBGOAL:
        return _bfs(layout, layout.spawn, layout.subgoal) + _bfs(layout, layout.subgoal, layout.goal)
    return _bfs(layout, layout.spawn, layout.goal)


def best_reward(layout: GridLayout) -> float:
    """Highest attainable terminal reward on a Two Rooms family layout."""
    t_max = 10 * layout.width
    return terminal_reward(layout.kind, optimal_steps(layout), t_max, visited_red=True)


__all__ = [
    "GridLayout", "EnvState", "StepResult", "GridEnv", "make_env", "terminal_reward",
    "two_rooms_layout", "doorkey_layout", "optimal_steps", "best_reward",
]
