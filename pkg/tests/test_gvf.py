import numpy as np
import pytest

from dezgreedy import gridworlds as gw
from dezgreedy.errors import ConfigError
from dezgreedy.gvf import cumulants, gvf_suite


@pytest.mark.parametrize("kind,m", [(gw.TWO_ROOMS, 1), (gw.SUBGOAL, 2), (gw.DOORKEY, 2)])
def test_suite_sizes(kind, m):
    specs = gvf_suite(kind)
    assert len(specs) == m
    assert [s.index for s in specs] == list(range(1, m + 1))


def test_unknown_env():
    with pytest.raises(ConfigError):
        gvf_suite("maze")


def test_corridor_step():
    c, done = cumulants(gvf_suite(gw.TWO_ROOMS), {gw.CORRIDOR})
    np.testing.assert_array_equal(c, [1.0])
    np.testing.assert_array_equal(done, [True])


def test_plain_move_and_door_step():
    specs = gvf_suite(gw.DOORKEY)
    c, done = cumulants(specs, set())
    np.testing.assert_array_equal(c, [0.0, 0.0])
    assert not done.any()
    c, done = cumulants(specs, {gw.DOOR}, np.array([True, False]))
    np.testing.assert_array_equal(c, [0.0, 1.0])
    np.testing.assert_array_equal(done, [True, True])


def test_terminal_flag_is_sticky_and_silences_cumulant():
    specs = gvf_suite(gw.SUBGOAL)
    done = None
    totals = np.zeros(2)
    for events in [set(), {gw.RED}, set(), {gw.RED}, {gw.CORRIDOR}, set()]:
        c, done = cumulants(specs, events, done)
        totals += c
    np.testing.assert_array_equal(totals, [1.0, 1.0])
    assert done.all()


def test_gvf_events_from_real_episode():
    env = gw.GridEnv(gw.TWO_ROOMS, 5)
    env.reset()
    specs = gvf_suite(env.kind)
    done, paid = None, []
    for a in [gw.UP, gw.UP, gw.RIGHT, gw.RIGHT, gw.RIGHT, gw.LEFT, gw.RIGHT]:
        r = env.step(a)
        c, done = cumulants(specs, r.events, done)
        paid.append(float(c[0]))
    # crossing is the fifth step, corridor (2,2) -> (3,2); crossing again does not pay
    assert paid == [0, 0, 0, 0, 1, 0, 0]
