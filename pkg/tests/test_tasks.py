import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparkrl import tasks
from sparkrl.tasks import KickOutcome, SimpleKick, VelocityKick


def _outcome(final_pos, final_vel=(0.0, 0.0, 0.0), start=(0.0, 0.0, 0.0)):
    return KickOutcome(start_pos=start, final_pos=final_pos, final_vel=final_vel)


def test_simple_kick_345():
    assert tasks.simple_kick_reward(_outcome((3.0, 4.0, 0.0)), True) == 5.0


def test_simple_kick_is_euclidean_norm():
    out = _outcome((1.0, 2.0, 2.0), start=(0.0, 0.0, 0.0))
    assert tasks.simple_kick_reward(out, True) == 3.0
    shifted = _outcome((1.2, 2.0, 2.0), start=(0.2, 0.0, 0.0))
    assert tasks.simple_kick_reward(shifted, True) == pytest.approx(3.0)


def test_simple_kick_x_only_mode():
    out = _outcome((-1.5, 2.0, 0.0))
    assert tasks.simple_kick_reward(out, True, mode="x_only") == -1.5


def test_rewards_zero_until_completion():
    fat = _outcome((10.0, 0.0, 0.0), final_vel=(5.0, 0.0, 0.0))
    assert tasks.simple_kick_reward(fat, False) == 0.0
    assert tasks.velocity_kick_reward(fat, False) == 0.0
    assert tasks.simple_kick_reward(None, False) == 0.0
    assert tasks.velocity_kick_reward(None, False) == 0.0


def test_velocity_kick_table():
    cases = [
        # (dx, vx, dy) -> dx + 0.5*vx - 1.0*|dy|
        ((1.0, 0.0, 0.0), (2.0, 0.0, 0.0), 2.0),
        ((1.0, 0.5, 0.0), (0.0, 0.0, 0.0), 0.5),
        ((1.0, -0.5, 0.0), (0.0, 0.0, 0.0), 0.5),
        ((0.0, 0.0, 0.0), (0.0, 0.0, 0.0), 0.0),
        ((2.0, 1.0, 0.0), (1.0, 2.0, 0.0), 1.5),
        ((-1.0, 0.0, 0.0), (0.0, 0.0, 0.0), -1.0),
    ]
    for final_pos, final_vel, expected in cases:
        out = _outcome(final_pos, final_vel)
        assert tasks.velocity_kick_reward(out, True) == expected


def test_velocity_kick_custom_weights():
    out = _outcome((1.0, 2.0, 0.0), (4.0, 0.0, 0.0))
    assert tasks.velocity_kick_reward(out, True, alpha=0.25, beta=0.5) == 1.0 + 1.0 - 1.0


def test_builtin_wait_counts_and_names():
    assert SimpleKick().name == "simple_kick"
    assert SimpleKick().n_wait == 200
    assert VelocityKick().name == "velocity_kick"
    assert VelocityKick().n_wait == 20


def test_simple_kick_rejects_unknown_mode():
    with pytest.raises(ValueError):
        SimpleKick(reward_mode="sideways")


def test_task_reward_dispatch():
    out = _outcome((3.0, 4.0, 0.0), (2.0, 0.0, 0.0))
    assert SimpleKick().reward(out, True) == 5.0
    assert SimpleKick().reward(out, False) == 0.0
    assert VelocityKick().reward(out, True) == 3.0 + 1.0 - 4.0
    assert VelocityKick(alpha=0.0, beta=0.0).reward(out, True) == 3.0


def test_displacement():
    out = KickOutcome((0.2, 0.0, 0.042), (1.2, -0.5, 0.042), (0.0, 0.0, 0.0))
    assert out.displacement() == (1.0, -0.5, 0.0)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0, 2 * math.pi))
@settings(max_examples=200, deadline=None)
def test_simple_kick_rotation_invariant(dx, dy, theta):
    c, s = math.cos(theta), math.sin(theta)
    plain = tasks.simple_kick_reward(_outcome((dx, dy, 0.0)), True)
    spun = tasks.simple_kick_reward(_outcome((dx * c - dy * s, dx * s + dy * c, 0.0)), True)
    assert spun == pytest.approx(plain, abs=1e-9)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(0.01, 1))
@settings(max_examples=200, deadline=None)
def test_velocity_kick_monotonic(dx, vx, dy, bump):
    base = tasks.velocity_kick_reward(_outcome((dx, dy, 0.0), (vx, 0.0, 0.0)), True)
    more_x = tasks.velocity_kick_reward(_outcome((dx + bump, dy, 0.0), (vx, 0.0, 0.0)), True)
    more_v = tasks.velocity_kick_reward(_outcome((dx, dy, 0.0), (vx + bump, 0.0, 0.0)), True)
    wider = tasks.velocity_kick_reward(
        _outcome((dx, dy + bump if dy >= 0 else dy - bump, 0.0), (vx, 0.0, 0.0)), True)
    assert more_x > base
    assert more_v > base
    assert wider <= base + 1e-12


# -- registry ------------------------------------------------------------------

def test_registry_lists_builtins():
    names = tasks.list_tasks()
    assert "simple_kick" in names and "velocity_kick" in names


def test_make_task_passes_options():
    task = tasks.make_task("velocity_kick", alpha=0.1, beta=0.0)
    out = _outcome((1.0, 5.0, 0.0), (10.0, 0.0, 0.0))
    assert task.reward(out, True) == pytest.approx(2.0)


def test_duplicate_registration_rejected():
    with pytest.raises(tasks.DuplicateName):
        tasks.register_task(SimpleKick, name="simple_kick")


def test_unknown_task_lists_available():
    with pytest.raises(tasks.UnknownTask) as exc:
        tasks.task_factory("backflip")
    assert "simple_kick" in str(exc.value)


def test_custom_task_registration():
    class Noop(tasks.Task):
        name = "noop_test_only"

        def reward(self, outcome, completed):
            return 0.0

    tasks.register_task(Noop)
    try:
        assert isinstance(tasks.make_task("noop_test_only"), Noop)
        assert "noop_test_only" in tasks.list_tasks()
    finally:
        tasks._REGISTRY.pop("noop_test_only", None)
