"""Perceptor/effector payload codec for the SimSpark agent dialect.

Decoding turns one server payload (a sequence of S-expressions) into a
PerceptorSnapshot; encoding renders effector commands, the connection
handshake, beam requests, and monitor ball placement. Everything here is
pure — carry-over state between cycles is owned by the caller, which passes
the previous snapshot back in.

Recognised perceptors: time, HJ (hinge joint), GYR, ACC, FRP (foot force),
See (ball only), GS (game state), and the training-mode ground-truth
expression `(gt (ball x y z) (fallen 0|1))` emitted by the mock server.
Unrecognised expressions are skipped for forward compatibility, as are HJ/FRP
entries naming joints or feet outside the 22-joint table (robot variants with
toe joints have more).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

from . import nao, sexpr

CYCLE_DT = 0.02  # seconds of simulation per server cycle

FIELD_HALF_LENGTH = 15.0  # metres
FIELD_HALF_WIDTH = 10.0

Vec3 = tuple[float, float, float]
_ZERO3: Vec3 = (0.0, 0.0, 0.0)

FOOT_NAMES = ("lf", "rf")


class ProtocolError(Exception):
    pass


class MalformedPerceptor(ProtocolError):
    """A recognised perceptor head with the wrong shape or a non-numeric field."""


class VelocityOutOfRange(ProtocolError):
    pass


class InvalidUnum(ProtocolError):
    pass


class OutOfField(ProtocolError):
    pass


def _zero_feet() -> dict[str, tuple[Vec3, Vec3]]:
    return {name: (_ZERO3, _ZERO3) for name in FOOT_NAMES}


@dataclass
class PerceptorSnapshot:
    """Everything the server told us as of one cycle.

    joint_angles maps joint index (see module nao) to degrees. foot_force
    holds (contact_point, force) per foot and is zeroed on cycles without a
    contact reading; all other fields carry over from the previous snapshot
    when absent from the payload.
    """

    sim_time: float = 0.0
    joint_angles: dict[int, float] = field(default_factory=dict)
    gyro: Vec3 = _ZERO3
    accel: Vec3 = _ZERO3
    foot_force: dict[str, tuple[Vec3, Vec3]] = field(default_factory=_zero_feet)
    ball_rel: Vec3 | None = None
    ball_world: Vec3 | None = None
    fallen_hint: bool | None = None
    game_state: str | None = None


@dataclass(frozen=True)
class EffectorBatch:
    """Velocity commands keyed by joint index, plus the sync token flag."""

    velocities: dict[int, float]
    sync: bool = True


def _text(expr: sexpr.SExpr) -> str:
    return sexpr.serialize(expr).decode("latin1")


def _args(expr: list, key: bytes) -> list | None:
    """Arguments of the first child list headed by `key`, or None."""
    for child in expr[1:]:
        if isinstance(child, list) and child and child[0] == key:
            return child[1:]
    return None


def _num(atom: sexpr.SExpr, owner: list) -> float:
    if isinstance(atom, bytes):
        try:
            value = float(atom.decode("ascii"))
        except (ValueError, UnicodeDecodeError):
            value = math.nan
        if math.isfinite(value):
            return value
    raise MalformedPerceptor(f"non-numeric field in {_text(owner)}")


def _vec(args: list | None, n: int, owner: list) -> tuple[float, ...]:
    if args is None or len(args) != n:
        raise MalformedPerceptor(f"expected {n} numbers in {_text(owner)}")
    return tuple(_num(a, owner) for a in args)


def _atom_arg(args: list | None, owner: list) -> bytes:
    if args is None or len(args) != 1 or not isinstance(args[0], bytes):
        raise MalformedPerceptor(f"expected one atom in {_text(owner)}")
    return args[0]


def polar_to_cartesian(dist: float, azimuth_deg: float, elevation_deg: float) -> Vec3:
    az = math.radians(azimuth_deg)
    el = math.radians(elevation_deg)
    return (
        dist * math.cos(el) * math.cos(az),
        dist * math.cos(el) * math.sin(az),
        dist * math.sin(el),
    )


def decode_snapshot(payload: bytes, previous: PerceptorSnapshot | None = None) -> PerceptorSnapshot:
    """Decode one server payload, carrying over fields absent this cycle.

    Raises MalformedPerceptor for a recognised perceptor with the wrong
    arity or a non-numeric field; parse errors propagate from sexpr.
    """
    exprs = sexpr.parse(payload)
    if previous is None:
        snap = PerceptorSnapshot()
    else:
        snap = PerceptorSnapshot(
            sim_time=previous.sim_time,
            joint_angles=dict(previous.joint_angles),
            gyro=previous.gyro,
            accel=previous.accel,
            foot_force=_zero_feet(),  # contact is instantaneous: never carried
            ball_rel=previous.ball_rel,
            ball_world=previous.ball_world,
            fallen_hint=previous.fallen_hint,
            game_state=previous.game_state,
        )

    for expr in exprs:
        if not isinstance(expr, list) or not expr or not isinstance(expr[0], bytes):
            continue
        head = expr[0]
        if head == b"time":
            (snap.sim_time,) = _vec(_args(expr, b"now"), 1, expr)
        elif head == b"HJ":
            name = _atom_arg(_args(expr, b"n"), expr)
            try:
                spec = nao.by_perceptor(name.decode("latin1"))
            except KeyError:
                continue
            (snap.joint_angles[spec.index],) = _vec(_args(expr, b"ax"), 1, expr)
        elif head == b"GYR":
            snap.gyro = _vec(_args(expr, b"rt"), 3, expr)
        elif head == b"ACC":
            snap.accel = _vec(_args(expr, b"a"), 3, expr)
        elif head == b"FRP":
            name = _atom_arg(_args(expr, b"n"), expr).decode("latin1")
            if name not in snap.foot_force:
                continue
            point = _vec(_args(expr, b"c"), 3, expr)
            force = _vec(_args(expr, b"f"), 3, expr)
            snap.foot_force[name] = (point, force)
        elif head == b"See":
            for child in expr[1:]:
                if isinstance(child, list) and child and child[0] == b"B":
                    pol = _vec(_args(child, b"pol"), 3, child)
                    snap.ball_rel = polar_to_cartesian(*pol)
                    break
        elif head == b"GS":
            pm = _args(expr, b"pm")
            if pm is not None:
                snap.game_state = _atom_arg(pm, expr).decode("latin1")
        elif head == b"gt":
            ball = _args(expr, b"ball")
            if ball is not None:
                snap.ball_world = _vec(ball, 3, expr)
            fallen = _args(expr, b"fallen")
            if fallen is not None:
                snap.fallen_hint = _vec(fallen, 1, expr)[0] != 0.0
        # anything else: unrecognised, skipped
    return snap


def encode_effectors(batch: EffectorBatch) -> bytes:
    """Render velocity commands, one expression per joint in index order,
    each velocity with 5 decimal places; `(syn)` appended when sync is set."""
    parts = []
    for index in sorted(batch.velocities):
        spec = nao.joint(index)
        v = batch.velocities[index]
        if not math.isfinite(v) or abs(v) > spec.max_speed + 1e-9:
            raise VelocityOutOfRange(
                f"{spec.perceptor_name}: {v!r} deg/s exceeds cap {spec.max_speed}"
            )
        parts.append(f"({spec.effector_name} {v:.5f})")
    if batch.sync:
        parts.append("(syn)")
    return "".join(parts).encode("ascii")


_ATOM_UNSAFE = re.compile(r"[()\s\x00]+")


def _sanitize_atom(text: str, what: str) -> str:
    cleaned = _ATOM_UNSAFE.sub("_", text.strip())
    if not cleaned:
        raise ValueError(f"{what} is empty after sanitising")
    return cleaned


DEFAULT_SCENE = "rsg/agent/nao/nao.rsg"


def encode_init(scene_path: str = DEFAULT_SCENE, team: str = "RLTeam", unum: int = 1) -> list[bytes]:
    """The two handshake payloads: scene creation, then init."""
    if not isinstance(unum, int) or isinstance(unum, bool) or not 1 <= unum <= 11:
        raise InvalidUnum(f"uniform number must be 1..11, got {unum!r}")
    scene = _sanitize_atom(scene_path, "scene path")
    name = _sanitize_atom(team, "team name")
    return [
        f"(scene {scene})".encode("ascii"),
        f"(init (unum {unum})(teamname {name}))".encode("ascii"),
    ]


def encode_beam(x: float, y: float, rot_deg: float) -> bytes:
    if abs(x) > FIELD_HALF_LENGTH or abs(y) > FIELD_HALF_WIDTH:
        raise OutOfField(f"beam target ({x}, {y}) is outside the field")
    return f"(beam {x:g} {y:g} {rot_deg:g})".encode("ascii")


def encode_ball_placement(pos: Vec3, vel: Vec3 = _ZERO3) -> bytes:
    """Monitor-port command to place the ball (and set its velocity)."""
    return (
        f"(ball (pos {pos[0]:g} {pos[1]:g} {pos[2]:g})"
        f" (vel {vel[0]:g} {vel[1]:g} {vel[2]:g}))"
    ).encode("ascii")


def encode_sync() -> bytes:
    return b"(syn)"
