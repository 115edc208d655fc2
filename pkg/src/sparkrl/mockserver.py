"""A deterministic, protocol-compatible stand-in for the real simulation server.

Speaks the same framing, handshake, perceptor and effector dialect as
`rcssserver3d`, but the body behind it is deliberately simple: the pelvis is
fixed in space at the beam pose, each leg is a planar three-link chain (hip
pitch, knee pitch, ankle pitch), and ball contact is an instantaneous
velocity transfer. It exists so the full client stack (and RL training loops)
can run without the external binary — it is NOT a physics replacement.

Simplifications worth knowing when reading tests:
  - joints integrate commanded velocity exactly, clipped to speed and angle
    limits; commanded velocities persist until overwritten (as on the real
    server), and a beam zeroes pose, joints and commands;
  - only the three pitch joints move a foot; hip roll/yaw matter only for
    the fall thresholds;
  - feet may pass through the ground plane (there is no collision model);
    a foot at or below z=0 counts as ground contact for force readings;
  - the ball lives on the ground plane and decelerates under rolling
    friction; a foot within the contact radius moving toward it sets the
    ball's planar velocity to 0.8x the foot's;
  - numbers are emitted with 5 decimals (the real server uses 2) so that
    emit -> decode round-trips tightly;
  - the monitor connection answers every payload with `(ok)` so a caller
    can sequence ball placement against the sync-gated agent cycle. The
    real server sends no such acknowledgement.

Everything is deterministic given the command stream; the seed is stored for
forward compatibility but no noise is currently drawn from it.
"""

from __future__ import annotations

import math
import socket
import threading

from . import nao, sexpr, wire
from .protocol import CYCLE_DT

LINK_THIGH = 0.12  # metres
LINK_SHANK = 0.10
LINK_FOOT = 0.05
FOOT_LATERAL = 0.055  # lateral offset of each foot from the pelvis centreline
HIP_HEIGHT = 0.20  # pelvis height; chosen so a swung leg can reach the ball

BALL_RADIUS = 0.042
CONTACT_RADIUS = 0.08  # foot-to-ball distance that counts as touching
CONTACT_TRANSFER = 0.8  # ball velocity = this fraction of foot velocity
ROLL_FRICTION = 0.4  # m/s^2 deceleration while rolling

FALL_HIP_PITCH_DEG = 60.0
FALL_HIP_ROLL_DEG = 45.0
FOOT_FORCE_N = 22.0  # roughly half the robot's weight

_FEET = ("lf", "rf")
_HIP_PITCH = {"lf": nao.by_perceptor("llj3").index, "rf": nao.by_perceptor("rlj3").index}
_KNEE = {"lf": nao.by_perceptor("llj4").index, "rf": nao.by_perceptor("rlj4").index}
_ANKLE = {"lf": nao.by_perceptor("llj5").index, "rf": nao.by_perceptor("rlj5").index}
_HIP_ROLL = (nao.by_perceptor("llj2").index, nao.by_perceptor("rlj2").index)
_LATERAL = {"lf": FOOT_LATERAL, "rf": -FOOT_LATERAL}


class MockWorld:
    """The simulation state and update rules, free of any networking."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.reset_world()

    def reset_world(self) -> None:
        self.cycle = 0
        self.angles = [0.0] * nao.NUM_JOINTS
        self.commands = [0.0] * nao.NUM_JOINTS  # deg/s, persist across cycles
        self.pelvis_x = 0.0
        self.pelvis_y = 0.0
        self.pelvis_rot = 0.0  # degrees about z
        self.ball_pos = [0.0, 0.0, BALL_RADIUS]
        self.ball_vel = [0.0, 0.0]  # planar; the ball stays on the ground
        self.fallen = False
        self._prev_feet = self.foot_points()

    @property
    def sim_time(self) -> float:
        return self.cycle * CYCLE_DT

    def foot_points(self) -> dict[str, tuple[float, float, float]]:
        """World position of each foot tip from the per-leg pitch chain."""
        points = {}
        cr = math.cos(math.radians(self.pelvis_rot))
        sr = math.sin(math.radians(self.pelvis_rot))
        for name in _FEET:
            p1 = math.radians(self.angles[_HIP_PITCH[name]])
            p2 = p1 + math.radians(self.angles[_KNEE[name]])
            p3 = p2 + math.radians(self.angles[_ANKLE[name]])
            forward = (
                LINK_THIGH * math.sin(p1)
                + LINK_SHANK * math.sin(p2)
                + LINK_FOOT * math.sin(p3)
            )
            drop = (
                LINK_THIGH * math.cos(p1)
                + LINK_SHANK * math.cos(p2)
                + LINK_FOOT * math.cos(p3)
            )
            lat = _LATERAL[name]
            points[name] = (
                self.pelvis_x + forward * cr - lat * sr,
                self.pelvis_y + forward * sr + lat * cr,
                HIP_HEIGHT - drop,
            )
        return points

    def set_commands(self, commands: dict[int, float]) -> None:
        for index, v in commands.items():
            self.commands[index] = v

    def apply_beam(self, x: float, y: float, rot_deg: float) -> None:
        """Teleport and zero the robot. The ball is untouched."""
        self.pelvis_x = x
        self.pelvis_y = y
        self.pelvis_rot = rot_deg
        self.angles = [0.0] * nao.NUM_JOINTS
        self.commands = [0.0] * nao.NUM_JOINTS
        self.fallen = False
        self._prev_feet = self.foot_points()

    def place_ball(self, pos, vel=(0.0, 0.0, 0.0)) -> None:
        self.ball_pos = [pos[0], pos[1], max(pos[2], BALL_RADIUS)]
        self.ball_vel = [vel[0], vel[1]]

    def advance_cycle(self, new_commands: dict[int, float] | None = None) -> None:
        if new_commands:
            self.set_commands(new_commands)
        for spec in nao.registry():
            v = self.commands[spec.index]
            v = max(-spec.max_speed, min(spec.max_speed, v))
            angle = self.angles[spec.index] + v * CYCLE_DT
            self.angles[spec.index] = max(spec.min_angle, min(spec.max_angle, angle))

        feet = self.foot_points()
        contact = False
        for name in _FEET:  # fixed order keeps double-touch cycles deterministic
            fx, fy, fz = feet[name]
            px, py, pz = self._prev_feet[name]
            foot_vel = ((fx - px) / CYCLE_DT, (fy - py) / CYCLE_DT)
            dx = self.ball_pos[0] - fx
            dy = self.ball_pos[1] - fy
            dz = self.ball_pos[2] - fz
            if math.sqrt(dx * dx + dy * dy + dz * dz) > CONTACT_RADIUS:
                continue
            planar = math.hypot(dx, dy)
            if planar < 1e-9:
                continue
            approach = (foot_vel[0] * dx + foot_vel[1] * dy) / planar
            if approach > 0.0:
                self.ball_vel = [CONTACT_TRANSFER * foot_vel[0], CONTACT_TRANSFER * foot_vel[1]]
                contact = True
                break
        if not contact:
            speed = math.hypot(*self.ball_vel)
            drop = ROLL_FRICTION * CYCLE_DT
            if speed <= drop:
                self.ball_vel = [0.0, 0.0]
            else:
                scale = (speed - drop) / speed
                self.ball_vel = [self.ball_vel[0] * scale, self.ball_vel[1] * scale]
        self.ball_pos[0] += self.ball_vel[0] * CYCLE_DT
        self.ball_pos[1] += self.ball_vel[1] * CYCLE_DT

        hip_pitch = max(abs(self.angles[i]) for i in _HIP_PITCH.values())
        hip_roll = max(abs(self.angles[i]) for i in _HIP_ROLL)
        # the roll limit IS the fall threshold, so reaching the hard stop counts
        if hip_pitch > FALL_HIP_PITCH_DEG or hip_roll >= FALL_HIP_ROLL_DEG:
            self.fallen = True  # latched until the next beam

        self._prev_feet = feet
        self.cycle += 1

    def emit_snapshot(self) -> bytes:
        """Render the perceptor payload for the current cycle."""
        t = f"{self.sim_time:.2f}"
        parts = [f"(time (now {t}))", f"(GS (t {t}) (pm PlayOn))"]
        ax, ay, az = (-9.8, 0.0, 0.0) if self.fallen else (0.0, 0.0, -9.8)
        parts.append("(GYR (n torso) (rt 0.00000 0.00000 0.00000))")
        parts.append(f"(ACC (n torso) (a {ax:.5f} {ay:.5f} {az:.5f}))")
        for spec in nao.registry():
            parts.append(f"(HJ (n {spec.perceptor_name}) (ax {self.angles[spec.index]:.5f}))")
        feet = self.foot_points()
        for name in _FEET:
            fx, fy, fz = feet[name]
            if fz <= 0.0:
                cx = fx - self.pelvis_x
                cy = fy - self.pelvis_y
                parts.append(
                    f"(FRP (n {name}) (c {cx:.5f} {cy:.5f} {fz:.5f})"
                    f" (f 0.00000 0.00000 {FOOT_FORCE_N:.5f}))"
                )
        rx = self.ball_pos[0] - self.pelvis_x
        ry = self.ball_pos[1] - self.pelvis_y
        rz = self.ball_pos[2] - HIP_HEIGHT
        dist = math.sqrt(rx * rx + ry * ry + rz * rz)
        if dist > 1e-9:
            azimuth = math.degrees(math.atan2(ry, rx)) - self.pelvis_rot
            elevation = math.degrees(math.asin(rz / dist))
            parts.append(f"(See (B (pol {dist:.5f} {azimuth:.5f} {elevation:.5f})))")
        bx, by, bz = self.ball_pos
        parts.append(
            f"(gt (ball {bx:.5f} {by:.5f} {bz:.5f}) (fallen {1 if self.fallen else 0}))"
        )
        return "".join(parts).encode("ascii")


def _child_args(expr: list, key: bytes) -> list | None:
    for child in expr[1:]:
        if isinstance(child, list) and child and child[0] == key:
            return child[1:]
    return None


def _floats(atoms) -> list[float] | None:
    out = []
    for a in atoms:
        if not isinstance(a, bytes):
            return None
        try:
            out.append(float(a.decode("ascii")))
        except (ValueError, UnicodeDecodeError):
            return None
    return out


class MockServer:
    """Socket front end: one agent connection at a time plus a monitor port.

    The agent side runs the handshake (scene, then init), after which every
    payload containing the sync token advances the world one cycle and gets
    the next perceptor payload back. A new agent connection resets the world.
    """

    def __init__(self, agent_port: int, monitor_port: int, seed: int = 0):
        self.agent_port = agent_port
        self.monitor_port = monitor_port
        self.world = MockWorld(seed)
        self._lock = threading.Lock()
        self._stopping = False
        self._listeners: list[socket.socket] = []
        self._threads: list[threading.Thread] = []
        self._conns: set[socket.socket] = set()
        self._conns_lock = threading.Lock()

    def start(self) -> None:
        for port, handler in ((self.agent_port, self._serve_agent),
                              (self.monitor_port, self._serve_monitor)):
            listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            try:
                listener.bind(("127.0.0.1", port))
            except OSError as e:
                listener.close()
                self.stop()
                raise wire.PortInUse(f"cannot bind 127.0.0.1:{port}: {e}") from e
            listener.listen(1)
            listener.settimeout(0.5)  # lets the accept loop notice stop()
            self._listeners.append(listener)
            thread = threading.Thread(
                target=self._accept_loop, args=(listener, handler),
                name=f"mock-{port}", daemon=True,
            )
            thread.start()
            self._threads.append(thread)

    def stop(self) -> None:
        self._stopping = True
        for listener in self._listeners:
            listener.close()
        with self._conns_lock:
            conns = list(self._conns)
        for conn in conns:
            try:
                conn.shutdown(socket.SHUT_RDWR)  # unblocks a blocked recv
            except OSError:
                pass
            conn.close()
        for thread in self._threads:
            thread.join(timeout=2.0)
        self._listeners.clear()
        self._threads.clear()

    def _accept_loop(self, listener: socket.socket, handler) -> None:
        while not self._stopping:
            try:
                conn, _ = listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            with self._conns_lock:
                self._conns.add(conn)
            try:
                handler(conn)
            except wire.WireError:
                pass  # peer went away or sent garbage; wait for the next one
            except OSError:
                pass
            finally:
                with self._conns_lock:
                    self._conns.discard(conn)
                conn.close()

    def _serve_agent(self, conn: socket.socket) -> None:
        with self._lock:
            self.world.reset_world()
        stage = 0  # 0: expect scene, 1: expect init, 2: running
        while not self._stopping:
            payload = wire.frame_read(conn)
            try:
                exprs = sexpr.parse(payload)
            except sexpr.SExprError:
                return  # malformed input: drop the connection
            sync = False
            commands: dict[int, float] = {}
            beams = []
            saw_scene = saw_init = False
            for expr in exprs:
                if expr == b"syn" or (isinstance(expr, list) and expr[:1] == [b"syn"]):
                    sync = True
                    continue
                if not isinstance(expr, list) or not expr or not isinstance(expr[0], bytes):
                    continue
                head = expr[0]
                if head == b"scene":
                    saw_scene = True
                elif head == b"init":
                    saw_init = True
                elif head == b"beam":
                    values = _floats(expr[1:])
                    if values is not None and len(values) == 3:
                        beams.append(values)
                elif len(expr) == 2:
                    try:
                        spec = nao.by_effector(head.decode("latin1"))
                    except KeyError:
                        continue
                    values = _floats(expr[1:])
                    if values is not None:
                        commands[spec.index] = values[0]
            if stage == 0 and saw_scene:
                stage = 1
                continue
            if stage == 1 and saw_init:
                stage = 2
                with self._lock:
                    self.world.advance_cycle()
                    out = self.world.emit_snapshot()
                conn.sendall(wire.frame_encode(out))
                continue
            if stage != 2:
                continue  # ignore chatter before the handshake completes
            with self._lock:
                for x, y, rot in beams:
                    self.world.apply_beam(x, y, rot)
                if sync:
                    self.world.advance_cycle(commands)
                    out = self.world.emit_snapshot()
                elif commands:
                    self.world.set_commands(commands)
                    out = None
                else:
                    out = None
            if out is not None:
                conn.sendall(wire.frame_encode(out))

    def _serve_monitor(self, conn: socket.socket) -> None:
        while not self._stopping:
            payload = wire.frame_read(conn)
            try:
                exprs = sexpr.parse(payload)
            except sexpr.SExprError:
                return
            for expr in exprs:
                if not isinstance(expr, list) or not expr or expr[0] != b"ball":
                    continue
                pos = _floats(_child_args(expr, b"pos") or [])
                vel = _floats(_child_args(expr, b"vel") or [])
                if pos and len(pos) == 3:
                    with self._lock:
                        self.world.place_ball(pos, vel if vel and len(vel) == 3 else (0.0, 0.0, 0.0))
            conn.sendall(wire.frame_encode(b"(ok)"))


def serve(agent_port: int, monitor_port: int, seed: int = 0) -> MockServer:
    """Start a mock server; the caller owns stop()."""
    server = MockServer(agent_port, monitor_port, seed)
    server.start()
    return server
