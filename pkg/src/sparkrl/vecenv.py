"""Lockstep execution of N environments in worker processes.

Each worker owns one Env (and, for the mock kind, the in-process server
behind it); env i listens on agent_port + i and is seeded with seed + i, so a
vectorized run is exactly the concatenation of N independent single-env runs.
step() fans a batch of action rows out to all workers and blocks until every
row comes back — on-policy collection wants synchronized batches, and the
sync-mode server contract gives no benefit to anything fancier.

A finished episode is reset inside the worker: the returned row holds the
post-reset observation while the terminal observation rides along in that
row's info under "terminal_observation" (the rest of the terminal step's
fields — reward, flags, outcome — are already in the row).
"""

from __future__ import annotations

import math
import multiprocessing as mp
import time
import traceback

import numpy as np

from . import tasks
from .envcore import DimensionMismatch, Env, EnvConfig


class VecEnvError(Exception):
    pass


def _worker(pipe, task_name: str, task_options: dict, config: EnvConfig) -> None:
    env = None
    try:
        env = Env(tasks.make_task(task_name, **task_options), config)
        while True:
            command = pipe.recv()
            op = command[0]
            if op == "reset":
                pipe.send(("ok", env.reset()))
            elif op == "step":
                result = env.step(command[1])
                if result.terminated or result.truncated:
                    info = dict(result.info)
                    info["terminal_observation"] = result.observation
                    observation = env.reset()
                else:
                    info = result.info
                    observation = result.observation
                pipe.send(("ok", (observation, result.reward,
                                  result.terminated, result.truncated, info)))
            elif op == "close":
                pipe.send(("ok", None))
                return
            else:
                pipe.send(("error", f"unknown command {op!r}"))
                return
    except EOFError:
        pass  # parent went away
    except Exception:
        try:
            pipe.send(("error", traceback.format_exc()))
        except OSError:
            pass
    finally:
        if env is not None:
            env.close()


class VecEnv:
    """N lockstep environments sharing one config and task."""

    def __init__(self, num_envs: int, task_name: str,
                 config: EnvConfig | None = None, *,
                 task_options: dict | None = None,
                 start_method: str = "spawn"):
        if num_envs < 1:
            raise ValueError("num_envs must be >= 1")
        tasks.task_factory(task_name)  # fail fast on unknown names
        self.num_envs = num_envs
        self.task_name = task_name
        self.config = config if config is not None else EnvConfig()
        self.obs_dim = self.config.obs_dim
        self.act_dim = self.config.act_dim
        self._closed = False
        ctx = mp.get_context(start_method)
        self._pipes = []
        self._procs = []
        options = task_options or {}
        try:
            for i in range(num_envs):
                parent_end, child_end = ctx.Pipe()
                worker_config = self.config.with_port(
                    self.config.agent_port + i, seed=self.config.seed + i)
                proc = ctx.Process(
                    target=_worker,
                    args=(child_end, task_name, options, worker_config),
                    name=f"env-worker-{i}", daemon=True,
                )
                proc.start()
                child_end.close()
                self._pipes.append(parent_end)
                self._procs.append(proc)
        except BaseException:
            self.close()
            raise

    @staticmethod
    def _send(pipe, message) -> None:
        try:
            pipe.send(message)
        except OSError:
            pass  # a dead worker is reported with context by _collect

    def _collect(self, expect: str):
        """Read one reply per worker; tear everything down on any failure."""
        replies = []
        errors = []
        for i, pipe in enumerate(self._pipes):
            try:
                status, payload = pipe.recv()
            except (EOFError, OSError):
                status, payload = "error", "worker process died"
            if status == "ok":
                replies.append(payload)
            else:
                replies.append(None)
                errors.append(f"env {i}: {payload}")
        if errors:
            self.close()
            raise VecEnvError(f"{expect} failed in {len(errors)} worker(s):\n" + "\n".join(errors))
        return replies

    def reset(self) -> np.ndarray:
        if self._closed:
            raise VecEnvError("vec env is closed")
        for pipe in self._pipes:
            self._send(pipe, ("reset",))
        rows = self._collect("reset")
        return np.stack(rows).astype(np.float32)

    def step(self, actions):
        """actions: N x act_dim. Returns (obs, rewards, terminated, truncated, infos)."""
        if self._closed:
            raise VecEnvError("vec env is closed")
        actions = np.asarray(actions, dtype=np.float64)
        if actions.shape != (self.num_envs, self.act_dim):
            raise DimensionMismatch(
                f"expected actions of shape {(self.num_envs, self.act_dim)}, got {actions.shape}")
        for pipe, row in zip(self._pipes, actions):
            self._send(pipe, ("step", row))
        rows = self._collect("step")
        obs = np.stack([r[0] for r in rows]).astype(np.float32)
        rewards = np.array([r[1] for r in rows], dtype=np.float64)
        terminated = np.array([r[2] for r in rows], dtype=bool)
        truncated = np.array([r[3] for r in rows], dtype=bool)
        infos = tuple(r[4] for r in rows)
        return obs, rewards, terminated, truncated, infos

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        for pipe in self._pipes:
            try:
                pipe.send(("close",))
            except OSError:
                pass
        for pipe in self._pipes:
            try:
                if pipe.poll(2.0):
                    pipe.recv()
            except (EOFError, OSError):
                pass
            pipe.close()
        for proc in self._procs:
            proc.join(timeout=5.0)
            if proc.is_alive():
                proc.terminate()
                proc.join(timeout=2.0)
            if proc.is_alive():
                proc.kill()
                proc.join()
        self._pipes.clear()
        self._procs.clear()

    def __enter__(self) -> "VecEnv":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def throughput_bench(n_list, steps: int, task_name: str = "simple_kick",
                     config: EnvConfig | None = None) -> list[tuple[int, float, float]]:
    """Measure env-steps/second for each worker count.

    `steps` is the total number of env-steps per configuration (rounded up
    to a whole number of lockstep batches). Actions are all zeros, so runs
    with identical seeds take identical step counts. Returns rows
    (n, steps_per_sec, wall_s).
    """
    config = config if config is not None else EnvConfig()
    rows = []
    for n in n_list:
        batches = max(1, math.ceil(steps / n))
        with VecEnv(n, task_name, config) as vec:
            actions = np.zeros((n, vec.act_dim))
            vec.reset()
            start = time.perf_counter()
            for _ in range(batches):
                vec.step(actions)
            wall = time.perf_counter() - start
        rows.append((n, (batches * n) / wall, wall))
    return rows
