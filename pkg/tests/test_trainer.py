import os

import numpy as np
import pytest
import torch

from sparkrl import nao, trainer
from sparkrl.envcore import EnvConfig
from sparkrl.trainer import (
    Policy,
    RolloutBuffer,
    TrainerConfig,
    compute_gae,
    load_checkpoint,
    ppo_update,
    save_checkpoint,
)
from helpers import gae_brute_force, scripted_kick_action

KICK4 = nao.kick_leg()


# -- GAE ---------------------------------------------------------------------

def test_gae_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(300):
        T = int(rng.integers(1, 65))
        rewards = rng.normal(size=T)
        values = rng.normal(size=T)
        dones = rng.random(T) < 0.15
        bootstrap = float(rng.normal())
        gamma = float(rng.uniform(0.5, 1.0))
        lam = float(rng.uniform(0.0, 1.0))
        adv, ret = compute_gae(rewards, values, dones, bootstrap, gamma, lam)
        expected = gae_brute_force(rewards, values, dones, bootstrap, gamma, lam)
        np.testing.assert_allclose(adv, expected, atol=1e-9, rtol=0)
        np.testing.assert_allclose(ret, expected + values, atol=1e-9, rtol=0)


def test_gae_lambda_zero_is_td_error():
    rng = np.random.default_rng(1)
    rewards = rng.normal(size=32)
    values = rng.normal(size=32)
    dones = rng.random(32) < 0.2
    adv, _ = compute_gae(rewards, values, dones, 0.5, 0.99, 0.0)
    nxt = np.append(values[1:], 0.5)
    delta = rewards + 0.99 * nxt * ~dones - values
    np.testing.assert_array_equal(adv, delta)


def test_gae_gamma_lambda_one_is_mc_advantage():
    rng = np.random.default_rng(2)
    rewards = rng.normal(size=16)
    values = rng.normal(size=16)
    dones = np.zeros(16, dtype=bool)
    bootstrap = 0.25
    adv, _ = compute_gae(rewards, values, dones, bootstrap, 1.0, 1.0)
    expected = np.array([rewards[t:].sum() + bootstrap - values[t] for t in range(16)])
    np.testing.assert_allclose(adv, expected, atol=1e-9, rtol=0)


def test_gae_hand_example_with_done():
    adv, ret = compute_gae([1.0, 2.0, 3.0], [0.5, 0.6, 0.7],
                           [False, True, False], 10.0, 0.9, 0.8)
    np.testing.assert_allclose(adv, [2.048, 1.4, 11.3], atol=1e-12)
    np.testing.assert_allclose(ret, [2.548, 2.0, 12.0], atol=1e-12)


def test_gae_batch_matches_columns():
    rng = np.random.default_rng(3)
    rewards = rng.normal(size=(40, 5))
    values = rng.normal(size=(40, 5))
    dones = rng.random((40, 5)) < 0.1
    bootstrap = rng.normal(size=5)
    adv, ret = compute_gae(rewards, values, dones, bootstrap, 0.99, 0.95)
    assert adv.shape == (40, 5)
    for i in range(5):
        col_adv, col_ret = compute_gae(rewards[:, i], values[:, i], dones[:, i],
                                       float(bootstrap[i]), 0.99, 0.95)
        np.testing.assert_array_equal(adv[:, i], col_adv)
        np.testing.assert_array_equal(ret[:, i], col_ret)


def test_gae_shape_errors():
    with pytest.raises(trainer.LengthMismatch):
        compute_gae(np.zeros(4), np.zeros(5), np.zeros(4, dtype=bool), 0.0, 0.9, 0.9)
    with pytest.raises(trainer.LengthMismatch):
        compute_gae(np.zeros((2, 2, 2)), np.zeros((2, 2, 2)),
                    np.zeros((2, 2, 2), dtype=bool), 0.0, 0.9, 0.9)
    with pytest.raises(trainer.LengthMismatch):
        compute_gae(np.zeros((4, 3)), np.zeros((4, 3)), np.zeros((4, 3), dtype=bool),
                    np.zeros(2), 0.9, 0.9)


# -- config ---------------------------------------------------------------------

def test_trainer_config_validation():
    with pytest.raises(ValueError):
        TrainerConfig(gamma=1.5)
    with pytest.raises(ValueError):
        TrainerConfig(gae_lambda=-0.1)
    with pytest.raises(ValueError):
        TrainerConfig(clip_range=0.0)
    with pytest.raises(ValueError):
        TrainerConfig(num_envs=0)
    with pytest.raises(ValueError):
        TrainerConfig(n_steps=48, num_envs=1, minibatch_size=64)
    with pytest.raises(ValueError):
        TrainerConfig(total_timesteps=-1)


def test_table_defaults():
    cfg = TrainerConfig()
    assert (cfg.gamma, cfg.gae_lambda, cfg.n_steps, cfg.epochs) == (0.99, 0.95, 64, 10)
    assert (cfg.clip_range, cfg.learning_rate, cfg.entropy_coef) == (0.2, 1e-4, 0.0)
    assert (cfg.total_timesteps, cfg.num_envs) == (50_000, 8)


# -- policy ----------------------------------------------------------------------

def test_policy_deterministic_act_is_mean():
    policy = Policy(6, 3)
    obs = torch.randn(4, 6)
    raw, log_prob, value = policy.act(obs, deterministic=True)
    mean, value2 = policy(obs)
    assert torch.equal(raw, mean)
    assert torch.equal(value, value2)
    assert log_prob.shape == value.shape == (4,)


def test_policy_sampling_reproducible():
    policy = Policy(6, 3)
    obs = torch.randn(2, 6)
    g1 = torch.Generator().manual_seed(99)
    g2 = torch.Generator().manual_seed(99)
    a1, lp1, _ = policy.act(obs, generator=g1)
    a2, lp2, _ = policy.act(obs, generator=g2)
    assert torch.equal(a1, a2) and torch.equal(lp1, lp2)


def test_policy_log_prob_matches_gaussian_formula():
    policy = Policy(5, 2)
    with torch.no_grad():
        policy.log_std.fill_(-0.3)
    obs = torch.randn(8, 5)
    raw, log_prob, _ = policy.act(obs)
    mean, _ = policy(obs)
    sigma = float(np.exp(-0.3))
    manual = -0.5 * (((raw - mean) / sigma) ** 2 + 2 * np.log(sigma)
                     + np.log(2 * np.pi)).sum(dim=-1)
    assert torch.allclose(log_prob, manual, atol=1e-5)
    lp2, value, entropy = policy.evaluate_actions(obs, raw)
    assert torch.allclose(lp2, log_prob, atol=1e-6)
    assert entropy.shape == (8,)


def test_policy_initialisation_shape():
    policy = Policy(10, 4)
    assert policy.log_std.shape == (4,)
    assert torch.equal(policy.log_std, torch.zeros(4))
    # hidden layers start orthogonal with gain sqrt(2): W W^T = 2 I
    w = policy.actor[2].weight.detach()
    np.testing.assert_allclose((w @ w.T).numpy(), 2 * np.eye(64), atol=1e-4)
    # the action head is near-zero (gain 0.01) so initial means stay tiny
    head = policy.actor[4].weight.detach()
    np.testing.assert_allclose((head @ head.T).numpy(), 1e-4 * np.eye(4), atol=1e-6)
    for layer in (policy.actor[0], policy.actor[2], policy.actor[4]):
        assert torch.equal(layer.bias, torch.zeros_like(layer.bias))


# -- update mechanics --------------------------------------------------------------

def _filled_buffer(policy, num_envs=64, reward=1.75, log_prob_shift=-3.0):
    # a dyadic reward keeps the advantage mean exact in any summation order
    buffer = RolloutBuffer(1, num_envs, policy.obs_dim, policy.act_dim)
    torch.manual_seed(5)
    obs = torch.randn(num_envs, policy.obs_dim)
    raw, log_prob, value = policy.act(obs)
    buffer.add(obs.numpy(), raw.numpy(),
               log_prob.numpy() + log_prob_shift,      # fake stale rollout
               np.zeros(num_envs),
               np.full(num_envs, reward),
               np.zeros(num_envs, dtype=bool))
    buffer.finish(np.zeros(num_envs), gamma=0.99, lam=0.95)
    return buffer


def test_update_constant_advantages_leave_actor_untouched():
    policy = Policy(4, 2)
    optimizer = torch.optim.Adam(policy.parameters(), lr=1e-2)
    buffer = _filled_buffer(policy)
    config = TrainerConfig(n_steps=1, num_envs=64, minibatch_size=64, epochs=3)
    actor_before = [p.detach().clone() for p in policy.actor.parameters()]
    log_std_before = policy.log_std.detach().clone()
    critic_before = [p.detach().clone() for p in policy.critic.parameters()]

    metrics = ppo_update(policy, optimizer, buffer, config, np.random.default_rng(0))

    # identical rewards normalise to zero advantage: no policy gradient at all
    assert metrics["policy_loss"] == 0.0
    assert metrics["clip_frac"] == 1.0          # ratios ~e^3 are far outside the clip
    assert metrics["approx_kl"] > 1.0
    assert metrics["value_loss"] > 0.0
    for before, after in zip(actor_before, policy.actor.parameters()):
        assert torch.equal(before, after)
    assert torch.equal(log_std_before, policy.log_std)
    assert any(not torch.equal(b, a)
               for b, a in zip(critic_before, policy.critic.parameters()))


def test_update_rejects_non_finite():
    policy = Policy(4, 2)
    optimizer = torch.optim.Adam(policy.parameters(), lr=1e-2)
    buffer = _filled_buffer(policy, reward=float("inf"))
    config = TrainerConfig(n_steps=1, num_envs=64, minibatch_size=64, epochs=1)
    with np.errstate(invalid="ignore"), pytest.raises(trainer.NonFiniteLoss):
        ppo_update(policy, optimizer, buffer, config, np.random.default_rng(0))


def test_update_requires_finished_buffer():
    policy = Policy(4, 2)
    buffer = RolloutBuffer(1, 64, 4, 2)
    config = TrainerConfig(n_steps=1, num_envs=64, minibatch_size=64)
    with pytest.raises(trainer.TrainerError):
        ppo_update(policy, torch.optim.Adam(policy.parameters()), buffer,
                   config, np.random.default_rng(0))


def test_ppo_learns_a_bandit():
    """End-to-end gradient sanity: reward -(a - 0.5)^2 pulls the mean to 0.5."""
    torch.manual_seed(0)
    policy = Policy(3, 1)
    optimizer = torch.optim.Adam(policy.parameters(), lr=3e-3)
    config = TrainerConfig(n_steps=32, num_envs=4, minibatch_size=64, epochs=4,
                           gamma=0.0, gae_lambda=0.0, learning_rate=3e-3)
    rng = np.random.default_rng(0)
    gen = torch.Generator().manual_seed(1)
    obs = torch.zeros(4, 3)
    with torch.no_grad():
        start_mean = float(policy(obs)[0].mean())
    for _ in range(40):
        buffer = RolloutBuffer(32, 4, 3, 1)
        for _ in range(32):
            raw, log_prob, value = policy.act(obs, generator=gen)
            rewards = -((raw.numpy()[:, 0] - 0.5) ** 2)
            buffer.add(obs.numpy(), raw.numpy(), log_prob.numpy(),
                       value.numpy(), rewards, np.zeros(4, dtype=bool))
        buffer.finish(np.zeros(4), config.gamma, config.gae_lambda)
        ppo_update(policy, optimizer, buffer, config, rng)
    with torch.no_grad():
        final_mean = float(policy(obs)[0].mean())
    assert abs(final_mean - 0.5) < abs(start_mean - 0.5)
    assert final_mean > 0.25


# -- checkpoints -------------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    policy = Policy(7, 3)
    path = str(tmp_path / "model.bin")
    save_checkpoint(path, policy, seed=42, config_hash="cafe0123cafe0123")
    loaded, meta = load_checkpoint(path)
    assert meta == {"seed": 42, "config_hash": "cafe0123cafe0123",
                    "obs_dim": 7, "act_dim": 3}
    for name, tensor in policy.state_dict().items():
        assert torch.equal(loaded.state_dict()[name], tensor), name
    assert not os.path.exists(path + ".tmp")


def test_checkpoint_save_is_deterministic(tmp_path):
    policy = Policy(5, 2)
    a, b = str(tmp_path / "a.bin"), str(tmp_path / "b.bin")
    save_checkpoint(a, policy, seed=1, config_hash="x")
    save_checkpoint(b, policy, seed=1, config_hash="x")
    assert open(a, "rb").read() == open(b, "rb").read()


def test_checkpoint_rejects_corruption(tmp_path):
    policy = Policy(4, 2)
    path = str(tmp_path / "model.bin")
    save_checkpoint(path, policy, seed=0, config_hash="h")
    data = open(path, "rb").read()

    bad_magic = str(tmp_path / "bad_magic.bin")
    open(bad_magic, "wb").write(b"not-a-checkpoint\n" + data)
    with pytest.raises(trainer.CheckpointError):
        load_checkpoint(bad_magic)

    truncated = str(tmp_path / "truncated.bin")
    open(truncated, "wb").write(data[:-40])
    with pytest.raises(trainer.CheckpointError):
        load_checkpoint(truncated)

    no_end = str(tmp_path / "no_end.bin")
    open(no_end, "wb").write(data[:data.find(b"\nend\n")])
    with pytest.raises(trainer.CheckpointError):
        load_checkpoint(no_end)


def test_format_row_repr_roundtrip():
    values = [0.1 + 0.2, 1e-17, -3.5, float(np.float64(2) / 3)]
    text = trainer._format_row(values)
    for original, token in zip(values, text.split(",")):
        assert float(token) == original  # repr is exact for binary64


# -- the training loop ---------------------------------------------------------------

def _small_run(port, out_dir, seed=3):
    env_cfg = EnvConfig(controllable=KICK4, agent_port=port,
                        max_episode_steps=20, n_wait=0, seed=seed)
    cfg = TrainerConfig(total_timesteps=256, num_envs=2, n_steps=32,
                        minibatch_size=64, epochs=2, seed=seed)
    return trainer.train("velocity_kick", cfg, env_cfg, out_dir)


def test_train_writes_metrics_and_checkpoint(port_block, tmp_path):
    out = str(tmp_path / "run")
    summary = _small_run(port_block, out)
    assert summary["timesteps"] == 256
    assert summary["updates"] == 4
    lines = open(summary["metrics"]).read().splitlines()
    assert lines[0].startswith("# ")
    assert lines[1] == "timestep,mean_ep_reward,policy_loss,value_loss,approx_kl,clip_frac"
    assert len(lines) == 2 + 4
    steps = [int(row.split(",")[0]) for row in lines[2:]]
    assert steps == [64, 128, 192, 256]
    policy, meta = load_checkpoint(summary["checkpoint"])
    assert meta["seed"] == 3
    assert (policy.obs_dim, policy.act_dim) == (29, 4)


def test_train_deterministic_across_runs(port_block, tmp_path):
    out_a = str(tmp_path / "a")
    out_b = str(tmp_path / "b")
    _small_run(port_block, out_a)
    _small_run(port_block, out_b)
    metrics_a = open(os.path.join(out_a, "metrics.csv"), "rb").read()
    metrics_b = open(os.path.join(out_b, "metrics.csv"), "rb").read()
    assert metrics_a == metrics_b
    ckpt_a = open(os.path.join(out_a, "ckpt_final.bin"), "rb").read()
    ckpt_b = open(os.path.join(out_b, "ckpt_final.bin"), "rb").read()
    assert ckpt_a == ckpt_b


def test_train_zero_timesteps(tmp_path):
    out = str(tmp_path / "empty")
    summary = trainer.train(
        "simple_kick",
        TrainerConfig(total_timesteps=0, num_envs=2, n_steps=32, minibatch_size=64),
        EnvConfig(controllable=KICK4, agent_port=5998),
        out,
    )
    assert summary["timesteps"] == 0
    policy, _ = load_checkpoint(summary["checkpoint"])
    assert policy.act_dim == 4
    assert len(open(summary["metrics"]).read().splitlines()) == 2  # header only


def test_periodic_checkpoints(port_block, tmp_path):
    out = str(tmp_path / "periodic")
    env_cfg = EnvConfig(controllable=KICK4, agent_port=port_block,
                        max_episode_steps=20, n_wait=0)
    cfg = TrainerConfig(total_timesteps=256, num_envs=2, n_steps=32,
                        minibatch_size=64, epochs=1, checkpoint_every=2)
    trainer.train("velocity_kick", cfg, env_cfg, out)
    names = sorted(os.listdir(out))
    assert "ckpt_final.bin" in names
    assert any(name.startswith("ckpt_") and name != "ckpt_final.bin" for name in names)


def test_evaluate_guards(tmp_path):
    policy = Policy(29, 4)
    path = str(tmp_path / "kick4.bin")
    save_checkpoint(path, policy, seed=0, config_hash="h")
    with pytest.raises(trainer.InvalidArgument):
        trainer.evaluate(path, "simple_kick", 0,
                         EnvConfig(controllable=KICK4, agent_port=5997))
    with pytest.raises(trainer.ShapeMismatch):
        trainer.evaluate(path, "simple_kick", 1, EnvConfig(agent_port=5997))


def test_evaluate_policy_scripted_kick(port_block):
    env_cfg = EnvConfig(controllable=KICK4, agent_port=port_block,
                        max_episode_steps=30)
    counter = {"k": 0}

    def act(obs):
        action = scripted_kick_action(counter["k"])
        counter["k"] += 1
        return action

    mean, std, rewards = trainer.evaluate_policy(act, "simple_kick", 1, env_cfg)
    assert len(rewards) == 1
    assert std == 0.0
    assert mean > 0.5
