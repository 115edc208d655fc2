"""The adapter itself: spaces, port bookkeeping, and the EnvAdapter class.

Design rule: no environment logic lives here. Reward shaping, observation
normalisation, termination — all of it stays in the core package, and this
module only reshapes the calling convention. The one piece of plumbing the
adapter does own is port allocation: callers that don't pass `agent_port`
get a free port pair picked for them, so several adapters can coexist in
one process without anyone hand-numbering servers.
"""

import dataclasses
import socket
import threading

import numpy as np

from sparkrl import envcore, tasks, wire
from sparkrl.envcore import EnvConfig, EpisodeFinished
from sparkrl.tasks import UnknownTask


class AdapterError(Exception):
    """Base for errors raised by this package (core errors pass through)."""


class ClosedAdapter(AdapterError):
    """The adapter was closed; make() a new one."""


class Box:
    """Bounded float array space: shape, dtype, low/high, contains, sample.

    Mirrors the surface generic trainer code expects from the standard
    environment API's Box space, without pulling in an RL framework.
    """

    def __init__(self, low: float, high: float, shape, dtype=np.float32):
        if not low < high:
            raise ValueError(f"empty interval [{low}, {high}]")
        self.shape = tuple(int(n) for n in shape)
        self.dtype = np.dtype(dtype)
        self.low = np.full(self.shape, low, dtype=self.dtype)
        self.high = np.full(self.shape, high, dtype=self.dtype)

    def contains(self, x) -> bool:
        arr = np.asarray(x)
        return (arr.shape == self.shape
                and np.issubdtype(arr.dtype, np.floating)
                and bool(np.all(np.isfinite(arr)))
                and bool(np.all(arr >= self.low))
                and bool(np.all(arr <= self.high)))

    def sample(self, rng: np.random.Generator | None = None) -> np.ndarray:
        rng = rng if rng is not None else np.random.default_rng()
        return rng.uniform(self.low, self.high).astype(self.dtype)

    def __repr__(self) -> str:
        return f"Box({self.low.flat[0]}, {self.high.flat[0]}, {self.shape}, {self.dtype})"

    def __eq__(self, other) -> bool:
        return (isinstance(other, Box) and self.shape == other.shape
                and self.dtype == other.dtype
                and np.array_equal(self.low, other.low)
                and np.array_equal(self.high, other.high))


# -- automatic port assignment ---------------------------------------------
#
# Each environment needs an agent port and the monitor port 1000 above it.
# We hand out the lowest pair that is neither claimed by a live adapter in
# this process nor bound by anything else on the host. The bind probe is
# inherently racy against other processes; callers that share a machine
# with unrelated server spawners should pass agent_port explicitly.

_PORT_LOCK = threading.Lock()
_CLAIMED: set[int] = set()
_PORT_SCAN_LIMIT = 2000


def _bindable(port: int) -> bool:
    with socket.socket() as s:
        try:
            s.bind(("127.0.0.1", port))
        except OSError:
            return False
    return True


def _claim_base_port(start: int = wire.DEFAULT_AGENT_PORT) -> int:
    with _PORT_LOCK:
        for base in range(start, start + _PORT_SCAN_LIMIT):
            if base in _CLAIMED or base in wire.ports_in_use():
                continue
            if _bindable(base) and _bindable(base + wire.MONITOR_PORT_OFFSET):
                _CLAIMED.add(base)
                return base
    raise AdapterError(f"no free port pair in [{start}, {start + _PORT_SCAN_LIMIT})")


def _release_base_port(base: int) -> None:
    with _PORT_LOCK:
        _CLAIMED.discard(base)


class EnvAdapter:
    """One kick environment behind the standard reset/step surface.

    Use through :func:`make`. One adapter drives exactly one core
    environment (and its server); it is not thread-safe, but any number of
    adapters on distinct ports can coexist. Works as a context manager.
    """

    metadata = {"render_modes": []}
    render_mode = None

    def __init__(self, task, config: EnvConfig, *, auto_port: bool = False):
        self._task = task
        self._config = config
        self._auto_port = auto_port
        self._closed = False
        self._env = envcore.Env(task, config)
        self.observation_space = Box(-config.obs_clip, config.obs_clip, (config.obs_dim,))
        self.action_space = Box(-1.0, 1.0, (config.act_dim,))

    # -- introspection ------------------------------------------------------

    @property
    def task_name(self) -> str:
        return self._task.name

    @property
    def config(self) -> EnvConfig:
        return self._config

    @property
    def obs_dim(self) -> int:
        return self._config.obs_dim

    @property
    def act_dim(self) -> int:
        return self._config.act_dim

    # -- the standard API ----------------------------------------------------

    def reset(self, *, seed: int | None = None, options: dict | None = None):
        """Start an episode; returns (observation, info).

        Passing `seed` restarts the environment from scratch with that
        seed (the server consumes its seed when it starts, so reseeding
        means rebuilding), which makes `reset(seed=n)` trajectories exactly
        reproducible. `options` is accepted for API compatibility and
        ignored — every knob here lives in the construction-time config.
        """
        self._ensure_open()
        del options
        if seed is not None:
            self._config = dataclasses.replace(self._config, seed=int(seed))
            self._env.close()
            self._env = envcore.Env(self._task, self._config)
        observation = self._env.reset()
        return observation, self._env.last_info

    def step(self, action):
        """Advance one control cycle; returns the standard five-tuple."""
        self._ensure_open()
        result = self._env.step(action)
        return (result.observation, result.reward, result.terminated,
                result.truncated, result.info)

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        self._env.close()
        if self._auto_port:
            _release_base_port(self._config.agent_port)

    def _ensure_open(self) -> None:
        if self._closed:
            raise ClosedAdapter("adapter is closed; create a new one with make()")

    def __enter__(self) -> "EnvAdapter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __repr__(self) -> str:
        state = "closed" if self._closed else f"port {self._config.agent_port}"
        return f"<EnvAdapter {self.task_name} obs={self.obs_dim} act={self.act_dim} ({state})>"


def make(task_name: str, *, task_options: dict | None = None, **config_overrides) -> EnvAdapter:
    """Build an adapter for a registered task.

    `task_options` goes to the task constructor (e.g. `{"alpha": 0.75}` for
    velocity_kick); remaining keyword arguments are EnvConfig fields
    (`controllable=nao.kick_leg()`, `seed=3`, `max_episode_steps=50`, ...).
    Unknown tasks raise UnknownTask. If `agent_port` isn't given, a free
    port pair is claimed automatically and released on close(). No server
    starts until the first reset().
    """
    task = tasks.make_task(task_name, **(task_options or {}))
    auto_port = "agent_port" not in config_overrides
    if auto_port:
        config_overrides["agent_port"] = _claim_base_port()
    try:
        config = EnvConfig(**config_overrides)
    except BaseException:
        if auto_port:
            _release_base_port(config_overrides["agent_port"])
        raise
    return EnvAdapter(task, config, auto_port=auto_port)
