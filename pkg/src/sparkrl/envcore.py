"""The environment lifecycle: reset, step, action mapping, observations.

One Env owns one agent connection to one simulation server (usually the
built-in mock) and drives it in lockstep sync mode: every effector payload
ends with the sync token and the env blocks for the next perceptor payload.
Episodes end on a fall, task termination, or the step cap; the terminal step
then runs the task's wait phase (zero-velocity cycles) before the sparse
reward is computed, so the reward lands on the same StepResult that reports
termination.
"""

from __future__ import annotations

import math
import socket
from dataclasses import dataclass, field, replace

import numpy as np

from . import nao, protocol, tasks, wire
from .protocol import CYCLE_DT, EffectorBatch, PerceptorSnapshot

ACTION_MODES = ("velocity", "target_angle", "target_angle_with_speed")


class EnvError(Exception):
    pass


class DimensionMismatch(EnvError):
    pass


class EpisodeFinished(EnvError):
    """step() was called after termination without an intervening reset()."""


class HandshakeTimeout(EnvError):
    pass


class MissingGroundTruth(EnvError):
    """The server never reported a ground-truth ball position."""


@dataclass(frozen=True)
class EnvConfig:
    """Everything an Env needs to run one robot against one server."""

    controllable: tuple[int, ...] = nao.default_controllable()
    action_mode: str = "velocity"
    max_episode_steps: int = 100
    n_wait: int | None = None  # None: use the task's default
    ball_start_pos: tuple[float, float, float] = (0.2, 0.0, 0.042)
    beam_pose: tuple[float, float, float] = (-0.05, 0.0, 0.0)  # x, y, rot deg
    obs_clip: float = 1.0
    target_angle_gain: float = 10.0  # proportional gain, 1/s
    server_kind: str = wire.KIND_MOCK
    host: str = "127.0.0.1"
    agent_port: int = wire.DEFAULT_AGENT_PORT
    server_binary: str | None = None
    seed: int = 0
    team: str = "RLTeam"
    unum: int = 1
    scene: str = protocol.DEFAULT_SCENE
    connect_timeout: float = 10.0

    def __post_init__(self):
        if self.action_mode not in ACTION_MODES:
            raise ValueError(f"action_mode must be one of {ACTION_MODES}")
        if self.max_episode_steps < 1:
            raise ValueError("max_episode_steps must be >= 1")
        if self.n_wait is not None and self.n_wait < 0:
            raise ValueError("n_wait must be >= 0")
        if not self.obs_clip > 0:
            raise ValueError("obs_clip must be positive")
        if self.server_kind not in wire.SERVER_KINDS:
            raise ValueError(f"server_kind must be one of {wire.SERVER_KINDS}")
        if not self.controllable:
            raise ValueError("controllable joint set is empty")
        seen = set()
        for index in self.controllable:
            nao.joint(index)  # raises on unknown index
            if index in seen:
                raise ValueError(f"joint index {index} listed twice")
            seen.add(index)
        if tuple(self.controllable) != tuple(sorted(self.controllable)):
            raise ValueError("controllable joint indices must be ascending")

    @property
    def num_joints(self) -> int:
        return len(self.controllable)

    @property
    def act_dim(self) -> int:
        j = self.num_joints
        return 2 * j if self.action_mode == "target_angle_with_speed" else j

    @property
    def obs_dim(self) -> int:
        return 2 * self.num_joints + 21

    def with_port(self, agent_port: int, seed: int | None = None) -> "EnvConfig":
        return replace(self, agent_port=agent_port,
                       seed=self.seed if seed is None else seed)


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    terminated: bool
    truncated: bool
    info: dict = field(default_factory=dict)


def observation_scales(config: EnvConfig) -> np.ndarray:
    """Fixed per-dimension normalisation divisors (no running statistics)."""
    specs = [nao.joint(i) for i in config.controllable]
    scales = [180.0] * len(specs)
    scales += [spec.max_speed for spec in specs]
    scales += [10.0, 10.0, 10.0]  # ball position, metres
    for _ in range(2):  # left foot then right foot
        scales += [10.0, 10.0, 10.0, 50.0, 50.0, 50.0]  # contact point, force
    scales += [20.0, 20.0, 20.0]  # accelerometer
    scales += [500.0, 500.0, 500.0]  # gyroscope
    return np.asarray(scales, dtype=np.float64)


def build_observation(snapshot: PerceptorSnapshot,
                      previous: PerceptorSnapshot,
                      config: EnvConfig) -> np.ndarray:
    """Assemble, normalise and clip the flat observation vector.

    Layout: joint angles, joint velocities (finite-differenced over one
    cycle), agent-relative ball position (zeros while the ball has never
    been seen), per-foot contact point and force, accelerometer, gyroscope.
    """
    raw: list[float] = []
    for index in config.controllable:
        raw.append(snapshot.joint_angles.get(index, 0.0))
    for index in config.controllable:
        now = snapshot.joint_angles.get(index, 0.0)
        before = previous.joint_angles.get(index, 0.0)
        raw.append((now - before) / CYCLE_DT)
    raw.extend(snapshot.ball_rel if snapshot.ball_rel is not None else (0.0, 0.0, 0.0))
    for foot in protocol.FOOT_NAMES:
        point, force = snapshot.foot_force[foot]
        raw.extend(point)
        raw.extend(force)
    raw.extend(snapshot.accel)
    raw.extend(snapshot.gyro)
    obs = np.asarray(raw, dtype=np.float64) / observation_scales(config)
    np.clip(obs, -config.obs_clip, config.obs_clip, out=obs)
    return obs.astype(np.float32)


def map_action(action, mode: str, snapshot: PerceptorSnapshot,
               config: EnvConfig) -> EffectorBatch:
    """Translate a policy action in [-1, 1]^A into velocity commands.

    velocity: each entry scales the joint's speed cap directly.
    target_angle: each entry picks a target angle across the joint's range;
    the command is proportional control toward it, clipped to the cap.
    target_angle_with_speed: first half as target_angle, second half sets
    each joint's own speed cap as a fraction of the hardware cap.
    """
    action = np.clip(np.asarray(action, dtype=np.float64).reshape(-1), -1.0, 1.0)
    joints = config.controllable
    j = len(joints)
    expected = 2 * j if mode == "target_angle_with_speed" else j
    if action.shape[0] != expected:
        raise DimensionMismatch(
            f"mode {mode} with {j} joints needs {expected} action entries, got {action.shape[0]}"
        )
    velocities: dict[int, float] = {}
    for k, index in enumerate(joints):
        spec = nao.joint(index)
        if mode == "velocity":
            velocities[index] = action[k] * spec.max_speed
            continue
        target = spec.min_angle + (action[k] + 1.0) / 2.0 * (spec.max_angle - spec.min_angle)
        current = snapshot.joint_angles.get(index, 0.0)
        v = config.target_angle_gain * (target - current)
        cap = spec.max_speed
        if mode == "target_angle_with_speed":
            cap = min(cap, abs(action[j + k]) * spec.max_speed)
        velocities[index] = max(-cap, min(cap, v))
    return EffectorBatch(velocities=velocities, sync=True)


_UPRIGHT_ACCEL = (0.0, 0.0, -1.0)  # direction of the accelerometer reading when upright


class FallDetector:
    """Declares a fall when the mock says so, or when the low-passed
    accelerometer direction stays > 75 degrees away from the upright
    reading for 10 consecutive cycles."""

    EMA_ALPHA = 0.3
    ANGLE_LIMIT_DEG = 75.0
    PERSIST_CYCLES = 10
    MIN_MAGNITUDE = 1.0  # below this the reading carries no direction

    def __init__(self):
        self._ema: tuple[float, float, float] | None = None
        self._run = 0
        self._fallen = False

    def update(self, snapshot: PerceptorSnapshot) -> bool:
        if snapshot.fallen_hint:
            self._fallen = True
        if self._fallen:
            return True
        ax, ay, az = snapshot.accel
        if self._ema is None:
            self._ema = (ax, ay, az)
        else:
            a = self.EMA_ALPHA
            ex, ey, ez = self._ema
            self._ema = (a * ax + (1 - a) * ex, a * ay + (1 - a) * ey, a * az + (1 - a) * ez)
        ex, ey, ez = self._ema
        magnitude = math.sqrt(ex * ex + ey * ey + ez * ez)
        if magnitude < self.MIN_MAGNITUDE:
            self._run = 0
            return False
        cos = (ex * _UPRIGHT_ACCEL[0] + ey * _UPRIGHT_ACCEL[1] + ez * _UPRIGHT_ACCEL[2]) / magnitude
        deviation = math.degrees(math.acos(max(-1.0, min(1.0, cos))))
        if deviation > self.ANGLE_LIMIT_DEG:
            self._run += 1
        else:
            self._run = 0
        if self._run >= self.PERSIST_CYCLES:
            self._fallen = True
        return self._fallen


def detect_fall(snapshots) -> bool:
    """Run a fresh detector over a snapshot history (oldest first)."""
    detector = FallDetector()
    fallen = False
    for snapshot in snapshots:
        fallen = detector.update(snapshot)
    return fallen


class Env:
    """One robot, one server, lockstep stepping.

    The server connection outlives episodes: reset() re-beams the robot and
    re-places the ball rather than reconnecting, matching how training loops
    run against the real server. A trace recorder (callable taking direction
    and payload) may be attached before the first reset to tap agent traffic.
    """

    def __init__(self, task, config: EnvConfig | None = None, *,
                 server: wire.ServerHandle | None = None, recorder=None):
        self.config = config if config is not None else EnvConfig()
        self.task = tasks.make_task(task) if isinstance(task, str) else task
        self.n_wait = self.config.n_wait if self.config.n_wait is not None else self.task.n_wait
        self.recorder = recorder
        self._server = server
        self._owns_server = server is None
        self._agent: wire.Connection | None = None
        self._monitor: wire.Connection | None = None
        self._snapshot: PerceptorSnapshot | None = None
        self._previous: PerceptorSnapshot | None = None
        self._fall = FallDetector()
        self._steps = 0
        self._episode_active = False
        self._closed = False
        self.last_info: dict = {}

    # -- connection management -------------------------------------------

    def _ensure_connected(self) -> None:
        if self._agent is not None:
            return
        if self._server is None:
            self._server = wire.spawn_server(
                self.config.server_kind, self.config.agent_port,
                binary=self.config.server_binary, seed=self.config.seed,
                timeout=self.config.connect_timeout,
            )
        try:
            self._agent = wire.Connection.connect(
                self.config.host, self._server.agent_port,
                timeout=self.config.connect_timeout, recorder=self.recorder,
            )
            for payload in protocol.encode_init(self.config.scene, self.config.team,
                                                self.config.unum):
                self._agent.send_payload(payload)
            self._recv()  # first perceptor payload follows the handshake
            self._monitor = wire.Connection.connect(
                self.config.host, self._server.monitor_port,
                timeout=self.config.connect_timeout,
            )
        except socket.timeout as e:
            raise HandshakeTimeout(f"no server response within {self.config.connect_timeout}s") from e

    def _recv(self) -> PerceptorSnapshot:
        payload = self._agent.recv_payload()
        snapshot = protocol.decode_snapshot(payload, self._snapshot)
        self._previous = self._snapshot
        self._snapshot = snapshot
        return snapshot

    def _send_raw(self, payload: bytes) -> None:
        self._agent.send_payload(payload)

    # -- lifecycle ---------------------------------------------------------

    def reset(self) -> np.ndarray:
        """Start a fresh episode; tears down any live one implicitly."""
        if self._closed:
            raise EnvError("env is closed")
        self._ensure_connected()
        beam_x, beam_y, beam_rot = self.config.beam_pose
        self._send_raw(protocol.encode_beam(beam_x, beam_y, beam_rot) + protocol.encode_sync())
        self._recv()
        self._monitor.send_payload(protocol.encode_ball_placement(self.config.ball_start_pos))
        if self.config.server_kind == wire.KIND_MOCK:
            self._monitor.recv_payload()  # mock acknowledges; keeps ordering strict
        self._send_raw(protocol.encode_sync())
        snapshot = self._recv()
        self._fall = FallDetector()
        self._fall.update(snapshot)
        self._steps = 0
        self._episode_active = True
        self.last_info = {
            "sim_time": snapshot.sim_time,
            "ball_world": snapshot.ball_world,
            "fall": False,
        }
        return build_observation(snapshot, self._previous, self.config)

    def step(self, action) -> StepResult:
        if self._closed:
            raise EnvError("env is closed")
        if not self._episode_active:
            raise EpisodeFinished("episode over; call reset() before stepping again")
        batch = map_action(action, self.config.action_mode, self._snapshot, self.config)
        self._send_raw(protocol.encode_effectors(batch))
        snapshot = self._recv()
        observation = build_observation(snapshot, self._previous, self.config)
        self._steps += 1
        fallen = self._fall.update(snapshot)
        terminated = fallen or self.task.check_termination(snapshot)
        truncated = (not terminated) and self._steps >= self.config.max_episode_steps
        info = {
            "sim_time": snapshot.sim_time,
            "ball_world": snapshot.ball_world,
            "fall": fallen,
            "steps": self._steps,
        }
        reward = 0.0
        if terminated or truncated:
            outcome = self._wait_phase()
            reward = self.task.reward(outcome, True)
            info["outcome"] = outcome
            info["episode_reward"] = reward
            self._episode_active = False
        else:
            reward = self.task.reward(None, False)
        self.last_info = info
        return StepResult(observation, float(reward), terminated, truncated, info)

    def _wait_phase(self) -> tasks.KickOutcome:
        """Hold every controllable joint at zero velocity for n_wait cycles,
        then sample the ball. Commanded velocities persist on the server, so
        the zeros must be sent explicitly."""
        zero = EffectorBatch({i: 0.0 for i in self.config.controllable}, sync=True)
        payload = protocol.encode_effectors(zero)
        for _ in range(self.n_wait):
            self._send_raw(payload)
            self._recv()
        final = self._snapshot
        before = self._previous
        if final.ball_world is None:
            raise MissingGroundTruth(
                "no ground-truth ball position on this connection; task rewards "
                "need the training-mode ball expression (mock) or a monitor feed"
            )
        if before is not None and before.ball_world is not None:
            bw, fw = before.ball_world, final.ball_world
            velocity = tuple((fw[i] - bw[i]) / CYCLE_DT for i in range(3))
        else:
            velocity = (0.0, 0.0, 0.0)
        return tasks.KickOutcome(
            start_pos=tuple(self.config.ball_start_pos),
            final_pos=tuple(final.ball_world),
            final_vel=velocity,
        )

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        for conn in (self._agent, self._monitor):
            if conn is not None:
                conn.close()
        self._agent = self._monitor = None
        if self._owns_server and self._server is not None:
            self._server.close()
        self._server = None

    def __enter__(self) -> "Env":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    @property
    def obs_dim(self) -> int:
        return self.config.obs_dim

    @property
    def act_dim(self) -> int:
        return self.config.act_dim
