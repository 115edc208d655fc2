"""On-policy PPO with generalized advantage estimation, driving a VecEnv.

The update follows the clipped-surrogate recipe: collect n_steps from every
env, normalise advantages once per update, then run several epochs of
shuffled minibatch ascent on
    min(ratio * A, clip(ratio, 1-eps, 1+eps) * A)
    - value_coef * (V - returns)^2 + entropy_coef * H,
with gradient-norm clipping and Adam. The policy is a pair of small tanh
MLPs (no shared layers) with a state-independent log-std head; actions are
sampled unbounded, their log-probability is taken on the unclipped sample,
and the environment clips to [-1, 1] when mapping to joint commands.

Checkpoints use a plain text manifest followed by one flat little-endian
float32 blob so they are byte-identical across platforms; metric rows are
written with repr() so two seeded runs produce bit-identical CSV files.
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .envcore import Env, EnvConfig
from .vecenv import VecEnv

METRICS_COLUMNS = ("timestep", "mean_ep_reward", "policy_loss",
                   "value_loss", "approx_kl", "clip_frac")

CHECKPOINT_MAGIC = "sparkrl-ckpt v1"


class TrainerError(Exception):
    pass


class LengthMismatch(TrainerError):
    pass


class NonFiniteLoss(TrainerError):
    pass


class ShapeMismatch(TrainerError):
    pass


class InvalidArgument(TrainerError):
    pass


class CheckpointError(TrainerError):
    pass


@dataclass(frozen=True)
class TrainerConfig:
    total_timesteps: int = 50_000  # desk scale; serious runs want millions
    num_envs: int = 8
    gamma: float = 0.99
    gae_lambda: float = 0.95
    n_steps: int = 64
    epochs: int = 10
    clip_range: float = 0.2
    learning_rate: float = 1e-4
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    minibatch_size: int = 64
    max_grad_norm: float = 0.5
    seed: int = 0
    checkpoint_every: int = 0  # updates between periodic checkpoints; 0 = final only

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must be in [0, 1]")
        if not self.clip_range > 0:
            raise ValueError("clip_range must be positive")
        if self.num_envs < 1 or self.n_steps < 1:
            raise ValueError("num_envs and n_steps must be >= 1")
        if (self.n_steps * self.num_envs) % self.minibatch_size != 0:
            raise ValueError("n_steps * num_envs must divide evenly into minibatches")
        if self.total_timesteps < 0:
            raise ValueError("total_timesteps must be >= 0")


def compute_gae(rewards, values, dones, bootstrap_value, gamma: float, lam: float):
    """Advantages and returns per the recursive GAE definition.

    Accepts (T,) vectors or (T, N) batches; `dones` marks transitions that
    ended an episode (the value bootstrap is masked there and the advantage
    accumulator restarts). Returns (advantages, returns) of the same shape.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    if rewards.shape != values.shape or rewards.shape != dones.shape:
        raise LengthMismatch(
            f"shape mismatch: rewards {rewards.shape}, values {values.shape}, dones {dones.shape}")
    flat = rewards.ndim == 1
    if flat:
        rewards = rewards[:, None]
        values = values[:, None]
        dones = dones[:, None]
    elif rewards.ndim != 2:
        raise LengthMismatch(f"expected 1-D or 2-D inputs, got {rewards.ndim}-D")
    steps, n = rewards.shape
    bootstrap = np.asarray(bootstrap_value, dtype=np.float64).reshape(-1)
    if bootstrap.size == 1 and n != 1:
        bootstrap = np.full(n, bootstrap[0])
    if bootstrap.size != n:
        raise LengthMismatch(f"bootstrap has {bootstrap.size} entries for {n} envs")

    advantages = np.zeros((steps, n))
    carry = np.zeros(n)
    next_values = bootstrap
    for t in range(steps - 1, -1, -1):
        alive = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_values * alive - values[t]
        carry = delta + gamma * lam * alive * carry
        advantages[t] = carry
        next_values = values[t]
    returns = advantages + values
    if flat:
        return advantages[:, 0], returns[:, 0]
    return advantages, returns


def _orthogonal(layer: nn.Linear, gain: float) -> nn.Linear:
    nn.init.orthogonal_(layer.weight, gain=gain)
    nn.init.constant_(layer.bias, 0.0)
    return layer


class Policy(nn.Module):
    """Separate 64x64 tanh actor and critic with a diagonal Gaussian head."""

    def __init__(self, obs_dim: int, act_dim: int):
        super().__init__()
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        hidden = 64
        gain = math.sqrt(2.0)
        self.actor = nn.Sequential(
            _orthogonal(nn.Linear(obs_dim, hidden), gain), nn.Tanh(),
            _orthogonal(nn.Linear(hidden, hidden), gain), nn.Tanh(),
            _orthogonal(nn.Linear(hidden, act_dim), 0.01),
        )
        self.critic = nn.Sequential(
            _orthogonal(nn.Linear(obs_dim, hidden), gain), nn.Tanh(),
            _orthogonal(nn.Linear(hidden, hidden), gain), nn.Tanh(),
            _orthogonal(nn.Linear(hidden, 1), 1.0),
        )
        self.log_std = nn.Parameter(torch.zeros(act_dim))

    def forward(self, obs: torch.Tensor):
        return self.actor(obs), self.critic(obs).squeeze(-1)

    def _log_prob(self, raw: torch.Tensor, mean: torch.Tensor) -> torch.Tensor:
        var = torch.exp(2.0 * self.log_std)
        per_dim = -0.5 * (raw - mean) ** 2 / var - self.log_std - 0.5 * math.log(2.0 * math.pi)
        return per_dim.sum(-1)

    @torch.no_grad()
    def act(self, obs: torch.Tensor, deterministic: bool = False,
            generator: torch.Generator | None = None):
        """Sample (or take the mean) action.

        Returns (raw_action, log_prob, value); raw actions are unbounded —
        the env clips them — and the log-prob is of the unclipped sample.
        """
        mean, value = self(obs)
        if deterministic:
            raw = mean
        else:
            noise = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
            raw = mean + torch.exp(self.log_std) * noise
        return raw, self._log_prob(raw, mean), value

    def evaluate_actions(self, obs: torch.Tensor, raw_actions: torch.Tensor):
        mean, value = self(obs)
        entropy = (self.log_std + 0.5 * math.log(2.0 * math.pi * math.e)).sum().expand(obs.shape[0])
        return self._log_prob(raw_actions, mean), value, entropy


class RolloutBuffer:
    """Fixed-capacity per-step storage for one collection window."""

    def __init__(self, n_steps: int, num_envs: int, obs_dim: int, act_dim: int):
        self.n_steps = n_steps
        self.num_envs = num_envs
        self.observations = np.zeros((n_steps, num_envs, obs_dim), dtype=np.float32)
        self.actions = np.zeros((n_steps, num_envs, act_dim), dtype=np.float32)
        self.log_probs = np.zeros((n_steps, num_envs), dtype=np.float32)
        self.values = np.zeros((n_steps, num_envs), dtype=np.float32)
        self.rewards = np.zeros((n_steps, num_envs), dtype=np.float64)
        self.dones = np.zeros((n_steps, num_envs), dtype=bool)
        self.advantages = None
        self.returns = None
        self.pos = 0

    @property
    def full(self) -> bool:
        return self.pos >= self.n_steps

    def add(self, obs, actions, log_probs, values, rewards, dones) -> None:
        if self.full:
            raise TrainerError("rollout buffer is already full")
        t = self.pos
        self.observations[t] = obs
        self.actions[t] = actions
        self.log_probs[t] = log_probs
        self.values[t] = values
        self.rewards[t] = rewards
        self.dones[t] = dones
        self.pos += 1

    def finish(self, bootstrap_values, gamma: float, lam: float) -> None:
        if not self.full:
            raise TrainerError("cannot finish a partially filled buffer")
        self.advantages, self.returns = compute_gae(
            self.rewards, self.values.astype(np.float64), self.dones,
            bootstrap_values, gamma, lam)

    def reset(self) -> None:
        self.pos = 0
        self.advantages = None
        self.returns = None


def ppo_update(policy: Policy, optimizer: torch.optim.Optimizer,
               buffer: RolloutBuffer, config: TrainerConfig,
               rng: np.random.Generator) -> dict:
    """One full update over a finished buffer; returns averaged metrics."""
    if buffer.advantages is None:
        raise TrainerError("buffer.finish() must run before ppo_update()")
    total = buffer.n_steps * buffer.num_envs
    obs = torch.as_tensor(buffer.observations.reshape(total, -1))
    actions = torch.as_tensor(buffer.actions.reshape(total, -1))
    old_log_probs = torch.as_tensor(buffer.log_probs.reshape(total))
    returns = torch.as_tensor(buffer.returns.reshape(total).astype(np.float32))
    advantages = buffer.advantages.reshape(total)
    advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)
    advantages = torch.as_tensor(advantages.astype(np.float32))

    eps = config.clip_range
    sums = {"policy_loss": 0.0, "value_loss": 0.0, "approx_kl": 0.0, "clip_frac": 0.0}
    batches = 0
    for _ in range(config.epochs):
        order = rng.permutation(total)
        for start in range(0, total, config.minibatch_size):
            idx = torch.as_tensor(order[start:start + config.minibatch_size])
            log_prob, value, entropy = policy.evaluate_actions(obs[idx], actions[idx])
            log_ratio = log_prob - old_log_probs[idx]
            ratio = torch.exp(log_ratio)
            adv = advantages[idx]
            surrogate = torch.minimum(ratio * adv,
                                      torch.clamp(ratio, 1.0 - eps, 1.0 + eps) * adv)
            policy_loss = -surrogate.mean()
            value_loss = ((value - returns[idx]) ** 2).mean()
            loss = (policy_loss + config.value_coef * value_loss
                    - config.entropy_coef * entropy.mean())
            if not torch.isfinite(loss):
                raise NonFiniteLoss(
                    f"non-finite loss (policy {policy_loss.item()!r}, value {value_loss.item()!r})")
            optimizer.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(policy.parameters(), config.max_grad_norm)
            optimizer.step()
            with torch.no_grad():
                sums["policy_loss"] += float(policy_loss)
                sums["value_loss"] += float(value_loss)
                sums["approx_kl"] += float((ratio - 1.0 - log_ratio).mean())
                sums["clip_frac"] += float(((ratio - 1.0).abs() > eps).float().mean())
            batches += 1
    return {k: v / batches for k, v in sums.items()}


# -- checkpoint format -----------------------------------------------------


def _config_hash(trainer_config: TrainerConfig, env_config: EnvConfig) -> str:
    text = repr(sorted(asdict(trainer_config).items()))
    text += repr(sorted(asdict(env_config).items()))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def save_checkpoint(path: str, policy: Policy, seed: int, config_hash: str) -> None:
    """Text manifest, then every parameter as little-endian float32.

    Manifest lines: magic, seed, config_hash, obs_dim, act_dim, one
    `param <name> <dim,dim,..> <byte offset> <element count>` line per
    tensor in state-dict order, then `end`. The write is atomic.
    """
    lines = [CHECKPOINT_MAGIC, f"seed {seed}", f"config_hash {config_hash}",
             f"obs_dim {policy.obs_dim}", f"act_dim {policy.act_dim}"]
    blobs = []
    offset = 0
    for name, tensor in policy.state_dict().items():
        array = tensor.detach().numpy().astype("<f4")
        shape = ",".join(str(d) for d in array.shape) or "1"
        count = array.size
        lines.append(f"param {name} {shape} {offset} {count}")
        blobs.append(array.tobytes())
        offset += count * 4
    lines.append("end")
    data = ("\n".join(lines) + "\n").encode("ascii") + b"".join(blobs)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load_checkpoint(path: str):
    """Returns (policy, meta dict with seed/config_hash/obs_dim/act_dim)."""
    with open(path, "rb") as fh:
        data = fh.read()
    newline = data.find(b"\n")
    if newline < 0 or data[:newline].decode("ascii", "replace") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    # the manifest ends at the first "end" line; the blob follows it
    end_marker = b"\nend\n"
    end = data.find(end_marker)
    if end < 0:
        raise CheckpointError(f"{path}: manifest has no end marker")
    manifest = data[:end].decode("ascii").splitlines()
    blob = data[end + len(end_marker):]
    meta = {}
    params = []
    for line in manifest[1:]:
        key, _, rest = line.partition(" ")
        if key == "param":
            name, shape_text, offset_text, count_text = rest.split(" ")
            shape = tuple(int(d) for d in shape_text.split(","))
            params.append((name, shape, int(offset_text), int(count_text)))
        else:
            meta[key] = rest
    for field in ("seed", "obs_dim", "act_dim"):
        if field not in meta:
            raise CheckpointError(f"{path}: manifest is missing {field}")
        meta[field] = int(meta[field])
    policy = Policy(meta["obs_dim"], meta["act_dim"])
    state = {}
    for name, shape, offset, count in params:
        raw = blob[offset:offset + count * 4]
        if len(raw) != count * 4:
            raise CheckpointError(f"{path}: blob truncated at parameter {name}")
        array = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        state[name] = torch.from_numpy(array)
    try:
        policy.load_state_dict(state)
    except RuntimeError as e:
        raise CheckpointError(f"{path}: {e}") from e
    return policy, meta


# -- training loop -----------------------------------------------------------


def _format_row(values) -> str:
    return ",".join(repr(v) if isinstance(v, float) else str(v) for v in values)


def train(task_name: str, config: TrainerConfig | None = None,
          env_config: EnvConfig | None = None, out_dir: str = "run",
          task_options: dict | None = None, log=None) -> dict:
    """Alternate collection and PPO updates until total_timesteps.

    Writes metrics.csv (one row per update), periodic ckpt_<timestep>.bin
    files when configured, and ckpt_final.bin — also on failure, so an
    interrupted run keeps its last state. Fully seeded: same config and
    seed give bit-identical metrics and checkpoints.
    """
    config = config if config is not None else TrainerConfig()
    env_config = env_config if env_config is not None else EnvConfig()
    os.makedirs(out_dir, exist_ok=True)
    torch.set_num_threads(1)
    torch.manual_seed(config.seed)
    sample_gen = torch.Generator().manual_seed(config.seed + 1)
    shuffle_rng = np.random.default_rng(config.seed + 2)

    policy = Policy(env_config.obs_dim, env_config.act_dim)
    optimizer = torch.optim.Adam(policy.parameters(), lr=config.learning_rate)
    chash = _config_hash(config, env_config)
    metrics_path = os.path.join(out_dir, "metrics.csv")
    final_path = os.path.join(out_dir, "ckpt_final.bin")

    steps_done = 0
    updates = 0
    last_mean_reward = 0.0
    vec = None
    metrics_file = open(metrics_path, "w", encoding="ascii")
    try:
        metrics_file.write(f"# ppo 64x64-tanh value_coef={config.value_coef} "
                           f"max_grad_norm={config.max_grad_norm} "
                           f"minibatch={config.minibatch_size} seed={config.seed}\n")
        metrics_file.write(",".join(METRICS_COLUMNS) + "\n")
        metrics_file.flush()
        if config.total_timesteps > 0:
            vec = VecEnv(config.num_envs, task_name, env_config,
                         task_options=task_options)
            buffer = RolloutBuffer(config.n_steps, config.num_envs,
                                   env_config.obs_dim, env_config.act_dim)
            obs = vec.reset()
            while steps_done < config.total_timesteps:
                buffer.reset()
                episode_rewards = []
                for _ in range(config.n_steps):
                    obs_t = torch.as_tensor(obs)
                    raw, log_prob, value = policy.act(obs_t, generator=sample_gen)
                    actions = raw.numpy()
                    next_obs, rewards, terminated, truncated, infos = vec.step(actions)
                    dones = terminated | truncated
                    buffer.add(obs, actions, log_prob.numpy(), value.numpy(),
                               rewards, dones)
                    for info in infos:
                        if "episode_reward" in info:
                            episode_rewards.append(info["episode_reward"])
                    obs = next_obs
                    steps_done += config.num_envs
                with torch.no_grad():
                    _, bootstrap = policy(torch.as_tensor(obs))
                buffer.finish(bootstrap.numpy().astype(np.float64),
                              config.gamma, config.gae_lambda)
                metrics = ppo_update(policy, optimizer, buffer, config, shuffle_rng)
                updates += 1
                if episode_rewards:
                    last_mean_reward = float(np.mean(episode_rewards))
                row = (steps_done, last_mean_reward, metrics["policy_loss"],
                       metrics["value_loss"], metrics["approx_kl"], metrics["clip_frac"])
                metrics_file.write(_format_row(row) + "\n")
                metrics_file.flush()
                if log is not None:
                    log(f"update {updates}: steps={steps_done} "
                        f"mean_ep_reward={last_mean_reward:.4f}")
                if config.checkpoint_every and updates % config.checkpoint_every == 0:
                    save_checkpoint(os.path.join(out_dir, f"ckpt_{steps_done:08d}.bin"),
                                    policy, config.seed, chash)
    finally:
        save_checkpoint(final_path, policy, config.seed, chash)
        metrics_file.close()
        if vec is not None:
            vec.close()
    return {
        "timesteps": steps_done,
        "updates": updates,
        "mean_ep_reward": last_mean_reward,
        "checkpoint": final_path,
        "metrics": metrics_path,
    }


# -- evaluation --------------------------------------------------------------


def evaluate_policy(act_fn, task_name: str, episodes: int,
                    env_config: EnvConfig | None = None,
                    task_options: dict | None = None):
    """Roll out `act_fn(observation) -> action` for whole episodes.

    Returns (mean, std, per-episode rewards). The callable sees the raw
    observation vector; anything callable works, including scripted openers.
    """
    if episodes < 1:
        raise InvalidArgument(f"episodes must be >= 1, got {episodes}")
    env_config = env_config if env_config is not None else EnvConfig()
    rewards = []
    from . import tasks as _tasks

    task = _tasks.make_task(task_name, **(task_options or {}))
    with Env(task, env_config) as env:
        for _ in range(episodes):
            obs = env.reset()
            total = 0.0
            while True:
                result = env.step(act_fn(obs))
                total += result.reward
                obs = result.observation
                if result.terminated or result.truncated:
                    break
            rewards.append(total)
    values = np.asarray(rewards)
    return float(values.mean()), float(values.std()), rewards


def evaluate(checkpoint_path: str, task_name: str, episodes: int,
             env_config: EnvConfig | None = None,
             task_options: dict | None = None):
    """Deterministic (mean-action) evaluation of a saved checkpoint."""
    env_config = env_config if env_config is not None else EnvConfig()
    policy, _ = load_checkpoint(checkpoint_path)
    if policy.obs_dim != env_config.obs_dim or policy.act_dim != env_config.act_dim:
        raise ShapeMismatch(
            f"checkpoint is {policy.obs_dim}/{policy.act_dim} (obs/act) but the env "
            f"needs {env_config.obs_dim}/{env_config.act_dim}")

    def act(obs):
        with torch.no_grad():
            raw, _, _ = policy.act(torch.as_tensor(obs).unsqueeze(0), deterministic=True)
        return np.clip(raw.numpy()[0], -1.0, 1.0)

    return evaluate_policy(act, task_name, episodes, env_config, task_options)
