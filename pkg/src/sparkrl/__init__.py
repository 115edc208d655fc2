"""Robot-soccer kick training stack: wire client, tasks, vec envs, PPO.

Importing the package stays light (no torch); the trainer and CLI modules
pull in their heavier dependencies only when imported themselves.
"""

from . import nao, protocol, sexpr, tasks, wire
from .envcore import (
    Env,
    EnvConfig,
    EpisodeFinished,
    FallDetector,
    StepResult,
    build_observation,
    detect_fall,
    map_action,
)
from .mockserver import MockServer, MockWorld
from .protocol import CYCLE_DT, EffectorBatch, PerceptorSnapshot, decode_snapshot
from .tasks import (
    KickOutcome,
    SimpleKick,
    Task,
    VelocityKick,
    make_task,
    register_task,
    simple_kick_reward,
    velocity_kick_reward,
)
from .vecenv import VecEnv, throughput_bench

__version__ = "0.1.0"

__all__ = [
    "CYCLE_DT",
    "EffectorBatch",
    "Env",
    "EnvConfig",
    "EpisodeFinished",
    "FallDetector",
    "KickOutcome",
    "MockServer",
    "MockWorld",
    "PerceptorSnapshot",
    "SimpleKick",
    "StepResult",
    "Task",
    "VecEnv",
    "VelocityKick",
    "build_observation",
    "decode_snapshot",
    "detect_fall",
    "make_task",
    "map_action",
    "nao",
    "protocol",
    "register_task",
    "sexpr",
    "simple_kick_reward",
    "tasks",
    "throughput_bench",
    "velocity_kick_reward",
    "wire",
    "__version__",
]
