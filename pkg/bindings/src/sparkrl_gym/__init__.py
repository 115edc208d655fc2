"""Standard reset/step environment API over the sparkrl kick tasks.

`make("simple_kick")` returns an adapter with the de-facto standard RL
environment surface — `reset(seed=...) -> (obs, info)`, `step(action) ->
(obs, reward, terminated, truncated, info)`, `close()`, and Box space
descriptors — so generic trainer code can drive a kick environment without
knowing anything about the server underneath. The adapter is a pure
pass-through: every observation, reward, flag and info field comes from
the core environment untouched, so a seeded run through the adapter is
bit-identical to the same run against `sparkrl.envcore.Env` directly.
"""

from .adapter import (
    AdapterError,
    Box,
    ClosedAdapter,
    EnvAdapter,
    EpisodeFinished,
    UnknownTask,
    make,
)

__all__ = [
    "AdapterError",
    "Box",
    "ClosedAdapter",
    "EnvAdapter",
    "EpisodeFinished",
    "UnknownTask",
    "make",
]
