import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dezgreedy import gridworlds as gw
from dezgreedy.errors import ConfigError
from dezgreedy.explore import (ActionRepeat, EpsilonSchedule, ExplorationState, MovementOptions, dez_action,
                               epsilon_at, eps_greedy_action, ez_action, greedy)

from oracles import ScriptedRng

# constant heads: main prefers RIGHT, GVF 1 prefers UP, GVF 2 prefers DOWN
HEAD_Q = {0: np.array([0.0, 0.0, 0.0, 1.0]), 1: np.array([1.0, 0.0, 0.0, 0.0]),
          2: np.array([0.0, 1.0, 0.0, 0.0])}


def const_q(obs, head):
    return HEAD_Q[head]


class NoRng:
    def random(self):
        raise AssertionError("rng used")

    def integers(self, *a, **k):
        raise AssertionError("rng used")


# Hand-derived 30-step trace on a wall-free 5x5 grid, epsilon=0.5, Z_max=3, M=2.
# Rows are (position before acting, z after the decision, g after the decision, action).
# Exploiting leaves g at its last value.  Actions: 0 up, 1 down, 2 left, 3 right.
TRACE_UNIFORMS = [0.9, 0.1, 0.2, 0.7, 0.3, 0.5, 0.49, 0.0, 0.99, 0.8, 0.4, 0.25, 0.1, 0.6, 0.45]
TRACE_INTS = [2, 0, 0, 1, 1, 3, 2, 1, 0, 2, 2, 1, 3, 0, 3, 1, 2, 2, 0, 1, 1, 1]
TRACE = [
    ((0, 0), 0, 0, 3),  # u=.9: exploit head 0
    ((1, 0), 2, 0, 0),  # u=.1: explore, z=2, g=0, w=up
    ((1, 1), 1, 0, 0),  # countdown
    ((1, 2), 0, 0, 0),  # countdown
    ((1, 3), 1, 1, 0),  # u=.2: explore, z=1, g=1 -> head 1 argmax (up)
    ((1, 4), 0, 1, 0),  # countdown, bump into the top edge
    ((1, 4), 0, 1, 3),  # u=.7: exploit
    ((2, 4), 3, 2, 1),  # u=.3: explore, z=3, g=2 -> head 2 argmax (down)
    ((2, 3), 2, 2, 1),
    ((2, 2), 1, 2, 1),
    ((2, 1), 0, 2, 1),
    ((2, 0), 0, 2, 3),  # u=.5 equals epsilon: exploit
    ((3, 0), 1, 0, 2),  # u=.49: explore, z=1, g=0, w=left
    ((2, 0), 0, 0, 2),
    ((1, 0), 2, 1, 0),  # u=0: explore, z=2, g=1
    ((1, 1), 1, 1, 0),
    ((1, 2), 0, 1, 0),
    ((1, 3), 0, 1, 3),  # u=.99: exploit
    ((2, 3), 0, 1, 3),  # u=.8: exploit
    ((3, 3), 3, 0, 3),  # u=.4: explore, z=3, g=0, w=right
    ((4, 3), 2, 0, 3),  # bump into the right edge three times
    ((4, 3), 1, 0, 3),
    ((4, 3), 0, 0, 3),
    ((4, 3), 1, 2, 1),  # u=.25: explore, z=1, g=2
    ((4, 2), 0, 2, 1),
    ((4, 1), 2, 0, 1),  # u=.1: explore, z=2, g=0, w=down
    ((4, 0), 1, 0, 1),
    ((4, 0), 0, 0, 1),
    ((4, 0), 0, 0, 3),  # u=.6: exploit
    ((4, 0), 1, 1, 0),  # u=.45: explore, z=1, g=1
]


def run_trace():
    env = gw.GridEnv(gw.OPEN_GRID, 5)
    obs = env.reset()
    rng = ScriptedRng(TRACE_UNIFORMS, TRACE_INTS)
    xs = ExplorationState()
    rows = []
    for _ in range(30):
        pos = env.state.pos
        a, xs = dez_action(xs, 0.5, 3, 2, const_q, obs, rng, ActionRepeat(4))
        rows.append((pos, xs.z, xs.g, a))
        obs = env.step(a).obs
    return rows, rng


def test_algorithm_trace_matches_hand_computation():
    rows, rng = run_trace()
    assert rows == TRACE
    assert rng.exhausted()


def test_trace_covers_every_branch():
    starts = [i for i in range(30) if TRACE[i][1] > 0 and (i == 0 or TRACE[i - 1][1] == 0)]
    kinds = {"g0" if TRACE[i][2] == 0 else "gvf" for i in starts}
    assert kinds == {"g0", "gvf"}
    assert any(z == 0 and TRACE[i - 1][1] == 0 for i, (_, z, _, _) in enumerate(TRACE) if i)  # exploit
    assert any(TRACE[i][1] == TRACE[i - 1][1] - 1 for i in range(1, 30))  # countdown


def test_epsilon_zero_is_greedy():
    xs = ExplorationState()
    for _ in range(20):
        a, xs = dez_action(xs, 0.0, 5, 2, const_q, None, np.random.default_rng(0), ActionRepeat(4))
        assert a == 3 and xs.z == 0


@settings(max_examples=30, deadline=None)
@given(qs=st.lists(st.lists(st.floats(-5, 5), min_size=4, max_size=4), min_size=1, max_size=30))
def test_epsilon_zero_matches_plain_greedy(qs):
    xs = ExplorationState()
    rng = np.random.default_rng(0)
    for qv in qs:
        qv = np.array(qv)
        a, xs = dez_action(xs, 0.0, 4, 0, lambda o, h: qv, None, rng, ActionRepeat(4))
        assert a == int(np.argmax(qv))


def test_single_step_persistence_emits_pairs():
    rng = np.random.default_rng(5)
    xs = ExplorationState()
    acts, starts = [], []
    for _ in range(1000):
        a, xs = ez_action(xs, 1.0, 1, const_q, None, rng, ActionRepeat(4))
        acts.append(a)
        starts.append(xs.started)
    assert starts == [True, False] * 500
    assert all(acts[i] == acts[i + 1] for i in range(0, 1000, 2))
    assert len(set(acts)) == 4


@pytest.mark.parametrize("eps", [0.0, 1.0])
def test_mid_option_ignores_epsilon(eps):
    a, xs = dez_action(ExplorationState(3, -1, 2), eps, 5, 2, const_q, None, NoRng(), ActionRepeat(4))
    assert a == 1 and xs.z == 2 and xs.g == 2


def test_mid_option_repeat():
    a, xs = dez_action(ExplorationState(1, 2, 0), 0.0, 5, 2, const_q, None, NoRng(), ActionRepeat(4))
    assert a == 2 and xs == ExplorationState(0, 2, 0, False)


def test_event_lengths_are_z_plus_one():
    rng = np.random.default_rng(1)
    xs = ExplorationState()
    lengths, cur, z0 = [], 0, None
    for _ in range(5000):
        _, xs = dez_action(xs, 1.0, 4, 2, const_q, None, rng, ActionRepeat(4))
        if xs.started:
            if z0 is not None:
                lengths.append((z0, cur))
            z0, cur = xs.z, 0
        cur += 1
    assert all(n == z + 1 for z, n in lengths)


def test_option_and_duration_distributions():
    rng = np.random.default_rng(2024)
    xs = ExplorationState()
    gs, zs = [], []
    while len(gs) < 100_000:
        _, xs = dez_action(xs, 1.0, 5, 2, const_q, None, rng, ActionRepeat(4))
        if xs.started:
            gs.append(xs.g)
            zs.append(xs.z)
    assert stats.chisquare(np.bincount(gs, minlength=3)).pvalue > 0.01
    assert stats.chisquare(np.bincount(zs, minlength=6)[1:]).pvalue > 0.01


def test_movement_option_left_from_facing_right():
    env = gw.GridEnv(gw.DOORKEY, 8, seed=0)
    env.reset()
    env.state.heading = 0
    opts = MovementOptions(env)
    emitted = []
    for _ in range(3):
        a = opts.act(2)
        emitted.append(a)
        env.step(a)
    assert emitted == [gw.TURN_LEFT, gw.TURN_LEFT, gw.FORWARD]
    assert env.state.heading == 2


def test_movement_option_extras():
    env = gw.GridEnv(gw.DOORKEY, 6, seed=0)
    env.reset()
    opts = MovementOptions(env)
    assert opts.n == 6 and opts.act(4) == gw.PICKUP and opts.act(5) == gw.TOGGLE
    assert MovementOptions.primitive(1, 0) == gw.TURN_RIGHT


# -- epsilon-greedy ---------------------------------------------------------

def test_eps_greedy_extremes_and_ties():
    rng = np.random.default_rng(0)
    q = lambda o, h: np.array([0.2, 0.7, 0.7, 0.1])
    assert all(eps_greedy_action(q, None, 0.0, rng, 4) == 1 for _ in range(50))
    assert greedy(np.zeros(4)) == 0


def test_eps_greedy_uniform_at_one():
    rng = np.random.default_rng(3)
    draws = [eps_greedy_action(const_q, None, 1.0, rng, 4) for _ in range(100_000)]
    assert stats.chisquare(np.bincount(draws, minlength=4)).pvalue > 0.01


# -- schedule ---------------------------------------------------------------

def test_schedule_values():
    s = EpsilonSchedule(10000, beta=0.5)
    assert epsilon_at(s, 0) == 1.0
    # closed form exp(ln(0.01) / 5000) = 0.99907939..
    assert s.decay == pytest.approx(math.exp(math.log(0.01) / 5000), rel=1e-12)
    assert s.decay == pytest.approx(0.9990791, abs=5e-7)
    assert epsilon_at(s, 10**7) == 0.01


def test_schedule_reaches_stop_at_beta_fraction():
    s = EpsilonSchedule(1000, decay_base=0.01, beta=0.5)
    assert epsilon_at(s, 500) == pytest.approx(0.01)
    assert epsilon_at(s, 499) > 0.01


def test_schedule_rejects_bad_beta():
    with pytest.raises(ConfigError):
        EpsilonSchedule(100, beta=0.0)
    with pytest.raises(ConfigError):
        EpsilonSchedule(100, beta=1.5)


@settings(max_examples=30, deadline=None)
@given(episodes=st.integers(1, 5000), beta=st.floats(0.05, 1.0), base=st.floats(1e-4, 0.5))
def test_schedule_monotone(episodes, beta, base):
    s = EpsilonSchedule(episodes, decay_base=base, beta=beta)
    eps = [epsilon_at(s, e) for e in range(0, episodes, max(1, episodes // 50))]
    assert all(a >= b for a, b in zip(eps, eps[1:]))
    assert all(0.01 <= e <= 1.0 for e in eps)
