"""Adapter construction, spaces, error surface, and resource lifecycle."""

import socket

import numpy as np
import pytest

import sparkrl_gym
from sparkrl import wire
from sparkrl_gym import Box, ClosedAdapter, EpisodeFinished, UnknownTask, make
from sparkrl_gym.adapter import _CLAIMED


def test_make_default_has_full_observation_space():
    ad = make("simple_kick")
    try:
        assert ad.observation_space.shape == (61,)
        assert ad.action_space.shape == (20,)
        assert ad.obs_dim == 61 and ad.act_dim == 20
        assert ad.task_name == "simple_kick"
    finally:
        ad.close()


def test_unknown_task():
    with pytest.raises(UnknownTask):
        make("nope")


def test_mock_needs_no_external_binary(port_block, monkeypatch):
    # the default server kind runs in-process; no binary, no env var
    monkeypatch.delenv(wire.SERVER_BIN_ENV, raising=False)
    with make("simple_kick", agent_port=port_block, max_episode_steps=5) as ad:
        obs, info = ad.reset()
        assert obs.shape == (61,)
        assert info["fall"] is False


def test_task_options_reach_the_task():
    with make("velocity_kick", task_options={"alpha": 2.0, "beta": 0.25}) as ad:
        assert ad.task_name == "velocity_kick"
        assert ad._task.alpha == 2.0
        assert ad._task.beta == 0.25


def test_unknown_config_field_rejected():
    with pytest.raises(TypeError):
        make("simple_kick", frobnication=3)
    assert not _CLAIMED  # the auto-claimed port must not leak on failure


def test_invalid_config_value_passes_through():
    with pytest.raises(Exception) as exc_info:
        make("simple_kick", max_episode_steps=0)
    assert "max_episode_steps" in str(exc_info.value)
    assert not _CLAIMED


def test_box_space_contract():
    space = Box(-1.0, 1.0, (4,))
    rng = np.random.default_rng(0)
    s = space.sample(rng)
    assert space.contains(s)
    assert s.dtype == np.float32
    assert not space.contains(np.zeros(5, dtype=np.float32))       # wrong shape
    assert not space.contains(np.full(4, 2.0, dtype=np.float32))   # out of bounds
    assert not space.contains(np.full(4, np.nan, dtype=np.float32))
    assert space == Box(-1.0, 1.0, (4,))
    assert space != Box(-2.0, 2.0, (4,))
    with pytest.raises(ValueError):
        Box(1.0, -1.0, (2,))


def test_reset_info_is_the_core_info(port_block):
    from sparkrl.envcore import CYCLE_DT

    with make("simple_kick", agent_port=port_block, max_episode_steps=5) as ad:
        _, info = ad.reset(seed=4)
        assert set(info) == {"sim_time", "ball_world", "fall"}
        assert info["ball_world"] == ad.config.ball_start_pos
        first_time = info["sim_time"]
        _, _, _, _, step_info = ad.step(np.zeros(20, dtype=np.float32))
        assert step_info["steps"] == 1
        assert step_info["sim_time"] == pytest.approx(first_time + CYCLE_DT)


def test_step_after_terminal_raises(port_block):
    with make("simple_kick", agent_port=port_block, max_episode_steps=3, n_wait=0) as ad:
        ad.reset(seed=0)
        action = np.zeros(20, dtype=np.float32)
        for _ in range(3):
            *_, truncated, _ = ad.step(action)
        assert truncated
        with pytest.raises(EpisodeFinished):
            ad.step(action)
        obs, _ = ad.reset()  # reset recovers without a new adapter
        assert ad.observation_space.contains(obs)


def test_closed_adapter(port_block):
    ad = make("simple_kick", agent_port=port_block, max_episode_steps=5)
    ad.reset()
    ad.close()
    ad.close()  # idempotent
    with pytest.raises(ClosedAdapter):
        ad.reset()
    with pytest.raises(ClosedAdapter):
        ad.step(np.zeros(20, dtype=np.float32))
    assert "closed" in repr(ad)


def test_two_adapters_coexist_on_distinct_auto_ports():
    a = make("simple_kick", max_episode_steps=5)
    b = make("simple_kick", max_episode_steps=5)
    try:
        assert a.config.agent_port != b.config.agent_port
        obs_a, _ = a.reset(seed=1)
        obs_b, _ = b.reset(seed=1)
        # same seed, same config -> the two servers evolve identically
        assert np.array_equal(obs_a, obs_b)
        a.step(np.ones(20, dtype=np.float32))
        b.step(np.ones(20, dtype=np.float32))
    finally:
        a.close()
        b.close()
    assert not _CLAIMED


def test_explicit_port_respected(port_block):
    with make("simple_kick", agent_port=port_block) as ad:
        assert ad.config.agent_port == port_block
        assert port_block not in _CLAIMED  # explicit ports aren't pool-managed


def test_hundred_adapters_leave_nothing_behind():
    seen_ports = set()
    for i in range(100):
        ad = make("simple_kick", max_episode_steps=4, n_wait=0, seed=i)
        seen_ports.add(ad.config.agent_port)
        obs, _ = ad.reset()
        ad.step(np.zeros(20, dtype=np.float32))
        ad.close()
    assert not _CLAIMED
    assert wire.ports_in_use() == frozenset()
    for port in seen_ports:  # every port (and its monitor) is free again
        for p in (port, port + wire.MONITOR_PORT_OFFSET):
            with socket.socket() as s:
                s.bind(("127.0.0.1", p))


def test_module_exports():
    assert sparkrl_gym.EnvAdapter is not None
    assert set(sparkrl_gym.__all__) == {
        "AdapterError", "Box", "ClosedAdapter", "EnvAdapter",
        "EpisodeFinished", "UnknownTask", "make",
    }
