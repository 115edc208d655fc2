"""Kick tasks and the registry that makes them constructible by name.

Rewards are sparse: zero on every mid-episode step, with the single payoff
computed from the ball's state once the post-episode wait phase has run.
A task bundles its reward function with the wait length it needs — a plain
distance kick must wait until the ball stops rolling (200 cycles), while the
velocity-based variant samples much earlier (20 cycles).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

Vec3 = tuple[float, float, float]


class TaskError(Exception):
    pass


class DuplicateName(TaskError):
    pass


class UnknownTask(TaskError):
    pass


@dataclass(frozen=True)
class KickOutcome:
    """Ball state recorded after the wait phase completes."""

    start_pos: Vec3
    final_pos: Vec3
    final_vel: Vec3  # finite-differenced over the last two cycles

    def displacement(self) -> Vec3:
        return (
            self.final_pos[0] - self.start_pos[0],
            self.final_pos[1] - self.start_pos[1],
            self.final_pos[2] - self.start_pos[2],
        )


def simple_kick_reward(outcome: KickOutcome | None, completed: bool, *,
                       mode: str = "norm") -> float:
    """Distance the ball was kicked; 0 until the episode has completed.

    mode "norm" is the Euclidean displacement; "x_only" scores the forward
    component alone (and goes negative for a backward kick).
    """
    if not completed or outcome is None:
        return 0.0
    dx, dy, dz = outcome.displacement()
    if mode == "x_only":
        return dx
    return math.sqrt(dx * dx + dy * dy + dz * dz)


def velocity_kick_reward(outcome: KickOutcome | None, completed: bool, *,
                         alpha: float = 0.5, beta: float = 1.0) -> float:
    """Forward displacement plus alpha * forward speed, minus beta * |lateral drift|."""
    if not completed or outcome is None:
        return 0.0
    dx, dy, _ = outcome.displacement()
    return dx + alpha * outcome.final_vel[0] - beta * abs(dy)


class Task:
    """Base task: subclasses override reward() and may override termination.

    n_wait is the number of zero-velocity cycles the environment runs after
    the episode ends, before the outcome is sampled and reward() is called.
    """

    name = "task"
    n_wait = 0

    def reward(self, outcome: KickOutcome | None, completed: bool) -> float:
        raise NotImplementedError

    def check_termination(self, snapshot) -> bool:
        """Task-specific early termination; falls are handled by the env."""
        return False


class SimpleKick(Task):
    name = "simple_kick"
    n_wait = 200

    def __init__(self, reward_mode: str = "norm"):
        if reward_mode not in ("norm", "x_only"):
            raise ValueError(f"reward_mode must be norm or x_only, got {reward_mode!r}")
        self.reward_mode = reward_mode

    def reward(self, outcome, completed):
        return simple_kick_reward(outcome, completed, mode=self.reward_mode)


class VelocityKick(Task):
    name = "velocity_kick"
    n_wait = 20

    def __init__(self, alpha: float = 0.5, beta: float = 1.0):
        self.alpha = alpha
        self.beta = beta

    def reward(self, outcome, completed):
        return velocity_kick_reward(outcome, completed, alpha=self.alpha, beta=self.beta)


_REGISTRY: dict[str, type[Task]] = {}


def register_task(factory: type[Task], name: str | None = None) -> None:
    """Register a task factory under its name; names are claimed once."""
    key = name or factory.name
    if key in _REGISTRY:
        raise DuplicateName(f"task name {key!r} is already registered")
    _REGISTRY[key] = factory


def task_factory(name: str) -> type[Task]:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise UnknownTask(
            f"unknown task {name!r}; registered: {', '.join(list_tasks())}"
        ) from None


def make_task(name: str, **options) -> Task:
    return task_factory(name)(**options)


def list_tasks() -> list[str]:
    return sorted(_REGISTRY)


register_task(SimpleKick)
register_task(VelocityKick)
