"""Shared pose types, validation helpers and elementary pose operations.

Poses travel through the package as float64 numpy arrays:

* 2D poses: ``(V, 2)`` or batched ``(n, V, 2)``, normalized image units
  (the longer image side spans [-1, 1]).
* 3D poses: ``(V, 3)`` or batched ``(n, V, 3)``, millimeters, root-relative.

The root joint is always index 0.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

ROOT = 0


class PoseError(ValueError):
    """Raised for malformed or non-finite pose data."""


class JointCountError(PoseError):
    """Raised when two pieces of data disagree on the joint count V."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


def check_poses(X, dim: int, n_joints: int | None = None, *, allow_flat: bool = True,
                name: str = "pose") -> np.ndarray:
    """Validate a pose or pose batch and return it as a float64 array.

    Accepts ``(V, dim)``, ``(n, V, dim)`` and, when ``allow_flat``, the flat
    layouts ``(n, V*dim)`` used by sklearn-style estimators. Flat input is
    reshaped to ``(n, V, dim)`` which requires ``n_joints`` or a length
    divisible by ``dim``.
    """
    a = np.asarray(X, dtype=np.float64)
    if a.ndim == 2 and a.shape[-1] != dim:
        if not allow_flat or a.shape[1] % dim:
            raise PoseError(f"{name}: expected trailing dimension {dim}, got shape {a.shape}")
        a = a.reshape(a.shape[0], -1, dim)
    if a.ndim not in (2, 3) or a.shape[-1] != dim:
        raise PoseError(f"{name}: expected (V, {dim}) or (n, V, {dim}), got shape {a.shape}")
    if n_joints is not None and a.shape[-2] != n_joints:
        raise JointCountError(f"{name}: expected V={n_joints}, got V={a.shape[-2]}")
    if not np.all(np.isfinite(a)):
        raise PoseError(f"{name}: non-finite coordinates")
    return a


def check_pose2d(X, n_joints: int | None = None) -> np.ndarray:
    return check_poses(X, 2, n_joints, name="pose2d")


def check_pose3d(X, n_joints: int | None = None) -> np.ndarray:
    return check_poses(X, 3, n_joints, name="pose3d")


def check_variance(sigmas, n_joints: int | None = None, *, nonneg: bool = True) -> np.ndarray:
    """Validate a per-joint sigma vector ``(V,)`` or batch ``(n, V)``."""
    s = np.asarray(sigmas, dtype=np.float64)
    if s.ndim not in (1, 2):
        raise PoseError(f"variance: expected (V,) or (n, V), got shape {s.shape}")
    if n_joints is not None and s.shape[-1] != n_joints:
        raise JointCountError(f"variance: expected V={n_joints}, got V={s.shape[-1]}")
    if not np.all(np.isfinite(s)):
        raise PoseError("variance: non-finite values")
    if nonneg and np.any(s < 0):
        raise PoseError("variance: negative values")
    return s


def root_center(pose) -> np.ndarray:
    """Translate a 3D pose (or batch) so the root joint sits at the origin.

    Subtracting the root from itself yields an exact zero, so the operation
    is idempotent bit for bit.
    """
    p = check_pose3d(pose)
    return p - p[..., ROOT:ROOT + 1, :]


@dataclass(frozen=True)
class Skeleton:
    """Kinematic tree. ``parents[0]`` is -1; every other parent precedes its child."""

    parents: tuple[int, ...]
    bone_lengths: tuple[float, ...]  # per joint, mm; entry 0 (root) unused and stored as 0
    joint_names: tuple[str, ...]

    def __post_init__(self):
        V = len(self.parents)
        if V < 2:
            raise ValueError("skeleton needs at least two joints")
        if len(self.bone_lengths) != V or len(self.joint_names) != V:
            raise JointCountError("parents, bone_lengths and joint_names must all have length V")
        if self.parents[0] != -1:
            raise ValueError("joint 0 must be the root (parent -1)")
        for j in range(1, V):
            if not 0 <= self.parents[j] < j:
                raise ValueError(f"joint {j}: parent {self.parents[j]} must precede it")
            if not self.bone_lengths[j] > 0:
                raise ValueError(f"joint {j}: bone length must be positive")

    @property
    def n_joints(self) -> int:
        return len(self.parents)

    @property
    def skeleton_id(self) -> str:
        payload = json.dumps([self.parents, self.bone_lengths, self.joint_names])
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def reach(self) -> float:
        """Upper bound on the distance of any joint from the root."""
        depth = [0.0] * self.n_joints
        for j in range(1, self.n_joints):
            depth[j] = depth[self.parents[j]] + self.bone_lengths[j]
        return max(depth)

    def index(self, name: str) -> int:
        return self.joint_names.index(name)


@dataclass(frozen=True)
class HypothesisSet:
    """S root-relative 3D hypotheses for one input sample."""

    hypotheses: np.ndarray = field(repr=False)
    source_sample_id: int | str = 0

    def __post_init__(self):
        h = np.asarray(self.hypotheses, dtype=np.float64)
        if h.ndim == 2:
            h = h[None]
        h = check_pose3d(h)
        if h.ndim != 3 or h.shape[0] < 1:
            raise PoseError("hypothesis set needs at least one (V, 3) pose")
        object.__setattr__(self, "hypotheses", _readonly(h))

    def __len__(self) -> int:
        return self.hypotheses.shape[0]

    @property
    def n_joints(self) -> int:
        return self.hypotheses.shape[1]


def as_hypotheses(hyps) -> np.ndarray:
    """Return hypotheses as an ``(S, V, 3)`` array from a HypothesisSet or array."""
    if isinstance(hyps, HypothesisSet):
        return hyps.hypotheses
    h = check_pose3d(hyps)
    if h.ndim == 2:
        h = h[None]
    if h.shape[0] < 1:
        raise PoseError("empty hypothesis set")
    return h
