"""Camera poses, discrete-action accumulation and retrieval distances.

World frame is z-up. A camera with identity rotation looks along +x, with
+y to its left. Positive yaw turns left (counter-clockwise seen from above),
positive pitch looks up.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from posekv.errors import ConfigError, NoCandidatesError

_POSE_STRUCT = struct.Struct("<7d")


def _qmul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


def _qnormalize(q):
    n = math.sqrt(sum(c * c for c in q))
    if n == 0.0:
        raise ValueError("zero quaternion")
    if abs(n - 1.0) <= 1e-15:
        return tuple(q)
    return tuple(c / n for c in q)


def _qaxis(axis, angle):
    s = math.sin(angle / 2.0)
    return (math.cos(angle / 2.0), axis[0] * s, axis[1] * s, axis[2] * s)


def quat_rotate(q, v):
    """Rotate the 3-vector ``v`` by unit quaternion ``q``."""
    w, x, y, z = q
    vx, vy, vz = v
    # t = 2 * cross(q.xyz, v); v' = v + w*t + cross(q.xyz, t)
    tx = 2.0 * (y * vz - z * vy)
    ty = 2.0 * (z * vx - x * vz)
    tz = 2.0 * (x * vy - y * vx)
    return (
        vx + w * tx + (y * tz - z * ty),
        vy + w * ty + (z * tx - x * tz),
        vz + w * tz + (x * ty - y * tx),
    )


def quat_from_yaw_pitch(yaw: float, pitch: float = 0.0):
    q = _qaxis((0.0, 0.0, 1.0), yaw)
    return _qnormalize(_qmul(q, _qaxis((0.0, 1.0, 0.0), -pitch)))


@dataclass(frozen=True)
class PoseState:
    translation: tuple = (0.0, 0.0, 0.0)
    rotation: tuple = (1.0, 0.0, 0.0, 0.0)
    pseudo: bool = True

    def __post_init__(self):
        t = tuple(float(c) for c in self.translation)
        if len(t) != 3:
            raise ValueError("translation must have 3 components")
        q = tuple(float(c) for c in self.rotation)
        if len(q) != 4:
            raise ValueError("rotation must be a (w, x, y, z) quaternion")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", _qnormalize(q))

    @classmethod
    def identity(cls, pseudo: bool = True) -> "PoseState":
        return cls(pseudo=pseudo)

    @classmethod
    def from_yaw_pitch(cls, translation=(0.0, 0.0, 0.0), yaw=0.0, pitch=0.0, pseudo=True):
        return cls(translation, quat_from_yaw_pitch(yaw, pitch), pseudo)

    @property
    def forward(self):
        return quat_rotate(self.rotation, (1.0, 0.0, 0.0))

    @property
    def right(self):
        return quat_rotate(self.rotation, (0.0, -1.0, 0.0))

    @property
    def yaw(self) -> float:
        fx, fy, _ = self.forward
        return math.atan2(fy, fx)

    @property
    def pitch(self) -> float:
        return math.asin(max(-1.0, min(1.0, self.forward[2])))

    def to_bytes(self) -> bytes:
        return _POSE_STRUCT.pack(*self.translation, *self.rotation)

    @classmethod
    def from_bytes(cls, data: bytes, pseudo: bool = True) -> "PoseState":
        tx, ty, tz, qw, qx, qy, qz = _POSE_STRUCT.unpack(data)
        return cls((tx, ty, tz), (qw, qx, qy, qz), pseudo)

    def to_dict(self) -> dict:
        tx, ty, tz = self.translation
        qw, qx, qy, qz = self.rotation
        return {"tx": tx, "ty": ty, "tz": tz, "qw": qw, "qx": qx, "qy": qy, "qz": qz}

    @classmethod
    def from_dict(cls, d: dict, pseudo: bool = True) -> "PoseState":
        return cls((d["tx"], d["ty"], d["tz"]), (d["qw"], d["qx"], d["qy"], d["qz"]), pseudo)


class Move(str, enum.Enum):
    FORWARD = "forward"
    BACK = "back"
    STRAFE_LEFT = "strafe_left"
    STRAFE_RIGHT = "strafe_right"
    NONE = "none"


@dataclass(frozen=True)
class StepConfig:
    translation_step: float = 1.0
    yaw_step_rad: float = math.pi / 8
    pitch_step_rad: float = math.pi / 16
    pitch_clamp_rad: float = math.pi / 3
    max_steps: int = 8

    def __post_init__(self):
        if min(self.translation_step, self.yaw_step_rad, self.pitch_step_rad) <= 0:
            raise ConfigError("step sizes must be > 0")
        if not 0 < self.pitch_clamp_rad <= math.pi / 2:
            raise ConfigError("pitch_clamp_rad must lie in (0, pi/2]")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")


@dataclass(frozen=True)
class DiscreteAction:
    move: Move = Move.NONE
    yaw_delta: int = 0
    pitch_delta: int = 0

    def __post_init__(self):
        object.__setattr__(self, "move", Move(self.move))

    def check(self, cfg: StepConfig) -> None:
        if abs(self.yaw_delta) > cfg.max_steps or abs(self.pitch_delta) > cfg.max_steps:
            raise ConfigError(f"action {self} exceeds max_steps={cfg.max_steps}")


_MOVE_AXES = {
    Move.FORWARD: (1.0, 0.0, 0.0),
    Move.BACK: (-1.0, 0.0, 0.0),
    Move.STRAFE_LEFT: (0.0, 1.0, 0.0),
    Move.STRAFE_RIGHT: (0.0, -1.0, 0.0),
}


def accumulate_action(state: PoseState, action: DiscreteAction, cfg: StepConfig) -> PoseState:
    """Apply one keyboard/mouse command to a pseudo-pose.

    Yaw (world z) and pitch (camera y) are applied first; the move then
    follows the updated camera axes.
    """
    action.check(cfg)
    q = state.rotation
    if action.yaw_delta:
        q = _qmul(_qaxis((0.0, 0.0, 1.0), action.yaw_delta * cfg.yaw_step_rad), q)
    if action.pitch_delta:
        current = PoseState(rotation=q).pitch
        target = max(-cfg.pitch_clamp_rad, min(cfg.pitch_clamp_rad, current + action.pitch_delta * cfg.pitch_step_rad))
        q = _qmul(q, _qaxis((0.0, 1.0, 0.0), -(target - current)))
    q = _qnormalize(q)
    t = state.translation
    axis = _MOVE_AXES.get(action.move)
    if axis is not None:
        dx, dy, dz = quat_rotate(q, axis)
        s = cfg.translation_step
        t = (t[0] + s * dx, t[1] + s * dy, t[2] + s * dz)
    return PoseState(t, q, state.pseudo)


def accumulate(actions: Sequence[DiscreteAction], cfg: StepConfig, start: PoseState | None = None) -> list[PoseState]:
    """Poses before each action plus the final pose (len(actions) + 1 entries)."""
    pose = start or PoseState.identity()
    poses = [pose]
    for action in actions:
        pose = accumulate_action(pose, action, cfg)
        poses.append(pose)
    return poses


def interpolate(a: PoseState, b: PoseState, frac: float) -> PoseState:
    """Linear translation and spherical rotation interpolation."""
    t = tuple(x + frac * (y - x) for x, y in zip(a.translation, b.translation))
    qa, qb = a.rotation, b.rotation
    dot = sum(x * y for x, y in zip(qa, qb))
    if dot < 0.0:
        qb, dot = tuple(-c for c in qb), -dot
    if dot > 0.9995:
        q = tuple(x + frac * (y - x) for x, y in zip(qa, qb))
    else:
        theta = math.acos(dot)
        s = math.sin(theta)
        wa = math.sin((1.0 - frac) * theta) / s
        wb = math.sin(frac * theta) / s
        q = tuple(wa * x + wb * y for x, y in zip(qa, qb))
    return PoseState(t, q, a.pseudo)


def translation_distance(a: PoseState, b: PoseState) -> float:
    return sum((x - y) ** 2 for x, y in zip(a.translation, b.translation))


def rotation_distance(a: PoseState, b: PoseState, yaw_only: bool = False) -> float:
    """Geodesic angle between two rotations, in [0, pi]."""
    if yaw_only:
        d = abs(a.yaw - b.yaw) % (2 * math.pi)
        return min(d, 2 * math.pi - d)
    qa, qb = a.rotation, b.rotation
    if sum(x * y for x, y in zip(qa, qb)) < 0.0:
        qb = tuple(-c for c in qb)
    # equals 2 * acos(|qa . qb|) but stays accurate for nearly equal rotations
    diff = math.sqrt(sum((x - y) ** 2 for x, y in zip(qa, qb)))
    total = math.sqrt(sum((x + y) ** 2 for x, y in zip(qa, qb)))
    return 4.0 * math.atan2(diff, total)


def normalize_over_candidates(raw: Sequence[float]) -> np.ndarray:
    """Min-max normalise to [0, 1]; a constant sequence maps to zeros."""
    x = np.asarray(raw, dtype=np.float64)
    if x.size == 0:
        raise NoCandidatesError("no retrieval candidates")
    if not np.all(np.isfinite(x)):
        raise ValueError("distances must be finite")
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def combined_distance(query: PoseState, candidates: Sequence[PoseState], yaw_only: bool = False) -> np.ndarray:
    trans = [translation_distance(query, c) for c in candidates]
    rot = [rotation_distance(query, c, yaw_only) for c in candidates]
    if not trans:
        raise NoCandidatesError("no retrieval candidates")
    return normalize_over_candidates(trans) + normalize_over_candidates(rot)
