"""Static model of the simulated Nao robot's 22 hinge joints.

The registry is loaded once from a bundled plain-text table and is immutable
at runtime. Joint sets are ordered ascending by index; that order fixes the
layout of observation and action vectors everywhere else.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

GROUPS = ("head", "left_arm", "right_arm", "left_leg", "right_leg")
GROUP_SIZES = {"head": 2, "left_arm": 4, "right_arm": 4, "left_leg": 6, "right_leg": 6}
NUM_JOINTS = 22
DEFAULT_MAX_SPEED = 350.0  # deg/s, uniform approximation


@dataclass(frozen=True)
class JointSpec:
    index: int
    perceptor_name: str
    effector_name: str
    group: str
    min_angle: float
    max_angle: float
    max_speed: float


def _load_table() -> tuple[JointSpec, ...]:
    text = resources.files("sparkrl").joinpath("data/nao_joints.txt").read_text()
    joints = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        idx, perc, eff, group, lo, hi, speed = line.split()
        joints.append(
            JointSpec(int(idx), perc, eff, group, float(lo), float(hi), float(speed))
        )
    _validate(joints)
    return tuple(joints)


def _validate(joints: list[JointSpec]) -> None:
    if len(joints) != NUM_JOINTS:
        raise ValueError(f"joint table has {len(joints)} entries, expected {NUM_JOINTS}")
    if [j.index for j in joints] != list(range(NUM_JOINTS)):
        raise ValueError("joint table indices must be 0..21 in order")
    names = [j.perceptor_name for j in joints] + [j.effector_name for j in joints]
    if len(set(names)) != 2 * NUM_JOINTS:
        raise ValueError("perceptor/effector names must be unique")
    for j in joints:
        if not (j.min_angle < j.max_angle and j.max_speed > 0 and j.group in GROUPS):
            raise ValueError(f"bad joint spec: {j}")
    counts = {g: sum(1 for j in joints if j.group == g) for g in GROUPS}
    if counts != GROUP_SIZES:
        raise ValueError(f"group sizes {counts} do not partition 2+4+4+6+6")


_REGISTRY = _load_table()
_BY_PERCEPTOR = {j.perceptor_name: j for j in _REGISTRY}
_BY_EFFECTOR = {j.effector_name: j for j in _REGISTRY}


def registry() -> tuple[JointSpec, ...]:
    """The 22-entry joint table, in index order."""
    return _REGISTRY


def joint(index: int) -> JointSpec:
    if not 0 <= index < NUM_JOINTS:
        raise IndexError(f"joint index {index} out of range 0..{NUM_JOINTS - 1}")
    return _REGISTRY[index]


def by_perceptor(name: str) -> JointSpec:
    return _BY_PERCEPTOR[name]


def by_effector(name: str) -> JointSpec:
    return _BY_EFFECTOR[name]


def default_controllable() -> tuple[int, ...]:
    """The 20 non-head joints, ascending by index."""
    return tuple(j.index for j in _REGISTRY if j.group != "head")


def legs() -> tuple[int, ...]:
    """All 12 leg joints."""
    return tuple(j.index for j in _REGISTRY if j.group.endswith("leg"))


def kick_leg() -> tuple[int, ...]:
    """Reduced 4-joint set for desk-scale training: right hip roll/pitch,
    knee, and ankle pitch."""
    return tuple(by_perceptor(n).index for n in ("rlj2", "rlj3", "rlj4", "rlj5"))


def normalize_joint_set(indices) -> tuple[int, ...]:
    """Validate and sort a joint set: unique indices, ascending."""
    out = tuple(sorted(int(i) for i in indices))
    if len(set(out)) != len(out):
        raise ValueError(f"duplicate joint indices in {indices}")
    for i in out:
        if not 0 <= i < NUM_JOINTS:
            raise ValueError(f"joint index {i} out of range")
    return out


_NAMED_SETS = {
    "all": default_controllable,
    "legs": legs,
    "kick4": kick_leg,
}


def resolve_joint_set(spec: str) -> tuple[int, ...]:
    """Resolve a joint-set config value: a named set ("all", "legs",
    "kick4") or a comma-separated list of perceptor names."""
    spec = spec.strip()
    if spec in _NAMED_SETS:
        return _NAMED_SETS[spec]()
    names = [s.strip() for s in spec.split(",") if s.strip()]
    try:
        return normalize_joint_set(_BY_PERCEPTOR[n].index for n in names)
    except KeyError as e:
        raise ValueError(f"unknown joint name {e.args[0]!r} in joint set {spec!r}") from None
