"""Seeded synthetic lifting benchmark: poses, pinhole projection, detector noise.

Dataset file format (one JSON object per line, UTF-8)::

    {"format": "prpose-dataset", "format_version": 1, "V": ..., "skeleton_id": ...,
     "count": ..., "split": ..., "mm_per_unit": ..., "camera": {...}}
    {"sample_id": int, "gt3d": [3V floats, mm], "clean2d": [2V floats],
     "det2d": [2V floats], "occl": [V booleans]}
    ...

Coordinates are flattened joint-major (x0, y0, z0, x1, ...). Floats are
written with ``repr`` precision so files round-trip bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .core import JointCountError, Skeleton, check_pose2d, check_pose3d

DATASET_FORMAT = "prpose-dataset"
DATASET_VERSION = 1


class DatasetFormatError(ValueError):
    pass


class ProjectionError(ValueError):
    pass


# -- reference skeleton -----------------------------------------------------

H36M16_NAMES = (
    "pelvis", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle",
    "spine", "thorax", "head", "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist",
)
H36M16 = Skeleton(
    parents=(-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 8, 10, 11, 8, 13, 14),
    bone_lengths=(0.0, 130.0, 450.0, 440.0, 130.0, 450.0, 440.0,
                  230.0, 250.0, 260.0, 150.0, 280.0, 250.0, 150.0, 280.0, 250.0),
    joint_names=H36M16_NAMES,
)

# limb groups occluded as units: left arm, right arm, left leg, right leg
H36M16_LIMB_GROUPS = ((11, 12), (14, 15), (5, 6), (2, 3))

_DOWN, _UP, _LEFT, _RIGHT = (0, -1, 0), (0, 1, 0), (1, 0, 0), (-1, 0, 0)


@dataclass(frozen=True)
class JointLimits:
    """Per-joint local Euler ranges ``(V, 3, 2)`` in radians plus rest bone directions.

    Row ``j`` rotates bone ``parent(j) -> j`` about x, y, z relative to the
    parent frame; row 0 holds the global root orientation.
    """

    ranges: np.ndarray
    rest_directions: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.ranges, dtype=np.float64)
        d = np.asarray(self.rest_directions, dtype=np.float64)
        if r.size == 0:
            raise ValueError("joint limits are empty")
        if r.ndim != 3 or r.shape[1:] != (3, 2) or d.shape != (r.shape[0], 3):
            raise ValueError(f"limits must be (V, 3, 2) with rest directions (V, 3); got {r.shape}, {d.shape}")
        if np.any(r[..., 0] > r[..., 1]):
            raise ValueError("angle range lower bound exceeds upper bound")
        norms = np.linalg.norm(d[1:], axis=1)
        if not np.allclose(norms, 1.0):
            raise ValueError("rest directions must be unit vectors")
        object.__setattr__(self, "ranges", r)
        object.__setattr__(self, "rest_directions", d)

    @classmethod
    def rest(cls, limits: "JointLimits") -> "JointLimits":
        """Same rest directions with all ranges collapsed to zero width."""
        return cls(np.zeros_like(limits.ranges), limits.rest_directions)


def h36m16_limits() -> JointLimits:
    rng3 = lambda x, y, z: [list(x), list(y), list(z)]  # noqa: E731
    sym = lambda a: (-a, a)  # noqa: E731
    rows = {
        0: rng3(sym(0.15), (-1.75, 1.75), sym(0.15)),           # root orientation
        1: rng3(sym(0.1), sym(0.1), sym(0.1)),                   # pelvis -> hips
        4: rng3(sym(0.1), sym(0.1), sym(0.1)),
        2: rng3((-1.6, 0.5), sym(0.3), (-0.5, 0.2)),            # thighs
        5: rng3((-1.6, 0.5), sym(0.3), (-0.2, 0.5)),
        3: rng3((0.0, 2.0), sym(0.05), sym(0.05)),               # shins
        6: rng3((0.0, 2.0), sym(0.05), sym(0.05)),
        7: rng3(sym(0.35), sym(0.3), sym(0.2)),                  # spine, thorax, head
        8: rng3(sym(0.2), sym(0.2), sym(0.15)),
        9: rng3(sym(0.4), sym(0.5), sym(0.3)),
        10: rng3(sym(0.15), sym(0.15), sym(0.15)),               # collar bones
        13: rng3(sym(0.15), sym(0.15), sym(0.15)),
        11: rng3((-2.5, 0.8), sym(0.5), (-0.2, 2.4)),           # upper arms
        14: rng3((-2.5, 0.8), sym(0.5), (-2.4, 0.2)),
        12: rng3((-2.3, 0.0), sym(0.1), sym(0.1)),               # forearms
        15: rng3((-2.3, 0.0), sym(0.1), sym(0.1)),
    }
    ranges = np.array([rows[j] for j in range(16)], dtype=np.float64)
    rest = np.array([(0, 0, 0), _RIGHT, _DOWN, _DOWN, _LEFT, _DOWN, _DOWN, _UP, _UP, _UP,
                     _LEFT, _DOWN, _DOWN, _RIGHT, _DOWN, _DOWN], dtype=np.float64)
    return JointLimits(ranges, rest)


# -- pose sampling ----------------------------------------------------------

def _euler_matrices(angles: np.ndarray) -> np.ndarray:
    """Rz(c) @ Ry(b) @ Rx(a) for angles ``(..., 3)``."""
    a, b, c = angles[..., 0], angles[..., 1], angles[..., 2]
    ca, sa, cb, sb, cc, sc = np.cos(a), np.sin(a), np.cos(b), np.sin(b), np.cos(c), np.sin(c)
    R = np.empty(angles.shape[:-1] + (3, 3))
    R[..., 0, 0] = cc * cb
    R[..., 0, 1] = cc * sb * sa - sc * ca
    R[..., 0, 2] = cc * sb * ca + sc * sa
    R[..., 1, 0] = sc * cb
    R[..., 1, 1] = sc * sb * sa + cc * ca
    R[..., 1, 2] = sc * sb * ca - cc * sa
    R[..., 2, 0] = -sb
    R[..., 2, 1] = cb * sa
    R[..., 2, 2] = cb * ca
    return R


def sample_poses(skeleton: Skeleton, limits: JointLimits, rng: np.random.Generator,
                 n: int) -> np.ndarray:
    """Draw ``n`` root-relative poses ``(n, V, 3)`` by forward kinematics."""
    V = skeleton.n_joints
    if limits.ranges.shape[0] != V:
        raise JointCountError(f"limits cover {limits.ranges.shape[0]} joints, skeleton has {V}")
    lo, hi = limits.ranges[..., 0], limits.ranges[..., 1]
    angles = lo + (hi - lo) * rng.random((n, V, 3))
    R_local = _euler_matrices(angles)
    R_global = np.empty_like(R_local)
    R_global[:, 0] = R_local[:, 0]
    pos = np.zeros((n, V, 3))
    for j in range(1, V):
        p = skeleton.parents[j]
        R_global[:, j] = R_global[:, p] @ R_local[:, j]
        bone = R_global[:, j] @ limits.rest_directions[j]
        pos[:, j] = pos[:, p] + skeleton.bone_lengths[j] * bone
    return pos


def sample_pose(skeleton: Skeleton, limits: JointLimits, rng: np.random.Generator) -> np.ndarray:
    return sample_poses(skeleton, limits, rng, 1)[0]


# -- camera -----------------------------------------------------------------

@dataclass(frozen=True)
class Camera:
    focal: float = 2.29  # normalized units; ~1145 px focal on a 1000 px wide frame
    principal: tuple[float, float] = (0.0, 0.0)
    subject_distance: float = 5000.0  # mm, camera to skeleton root along the optical axis

    def __post_init__(self):
        if not self.focal > 0:
            raise ValueError("focal must be positive")
        if not self.subject_distance > 0:
            raise ValueError("subject_distance must be positive")

    def validate_for(self, skeleton: Skeleton) -> None:
        if not self.subject_distance > skeleton.reach():
            raise ValueError(f"subject_distance {self.subject_distance} mm does not exceed "
                             f"skeleton reach {skeleton.reach():.1f} mm")

    @property
    def mm_per_unit(self) -> float:
        """Approximate mm per normalized image unit at the subject's depth."""
        return self.subject_distance / self.focal


def project(pose, camera: Camera) -> np.ndarray:
    """Pinhole projection of a root-relative pose (or batch) placed ``subject_distance`` ahead."""
    p = check_pose3d(pose)
    depth = p[..., 2] + camera.subject_distance
    if np.any(depth <= 0):
        raise ProjectionError("joint at or behind the camera plane")
    uv = camera.focal * p[..., :2] / depth[..., None]
    return uv + np.asarray(camera.principal, dtype=np.float64)


# -- detector noise ---------------------------------------------------------

@dataclass(frozen=True)
class NoiseProfile:
    base_sigma: tuple[float, ...]
    occlusion_groups: tuple[tuple[int, ...], ...] = ()
    occlusion_prob: float = 0.0
    occlusion_multiplier: float = 1.0

    def __post_init__(self):
        base = tuple(float(s) for s in self.base_sigma)
        object.__setattr__(self, "base_sigma", base)
        object.__setattr__(self, "occlusion_groups",
                           tuple(tuple(int(j) for j in g) for g in self.occlusion_groups))
        if any(not np.isfinite(s) or s < 0 for s in base):
            raise ValueError("base_sigma must be finite and >= 0")
        if not 0.0 <= self.occlusion_prob <= 1.0:
            raise ValueError("occlusion_prob must lie in [0, 1]")
        if not self.occlusion_multiplier >= 1.0:
            raise ValueError("occlusion_multiplier must be >= 1")
        for g in self.occlusion_groups:
            if any(not 0 <= j < len(base) for j in g):
                raise ValueError(f"occlusion group {g} references unknown joints")

    @classmethod
    def uniform(cls, n_joints: int, sigma: float, **kwargs) -> "NoiseProfile":
        return cls(base_sigma=(sigma,) * n_joints, **kwargs)

    @property
    def n_joints(self) -> int:
        return len(self.base_sigma)


def corrupt_2d(pose2d, profile: NoiseProfile, rng: np.random.Generator):
    """Add heteroscedastic detector noise; returns ``(noisy, occlusion_mask)``.

    Each limb group is drawn occluded independently with ``occlusion_prob``;
    occluded joints get their base sigma scaled by ``occlusion_multiplier``.
    """
    x = check_pose2d(pose2d, profile.n_joints)
    single = x.ndim == 2
    xb = x[None] if single else x
    n, V = xb.shape[:2]
    mask = np.zeros((n, V), dtype=bool)
    if profile.occlusion_groups:
        drawn = rng.random((n, len(profile.occlusion_groups))) < profile.occlusion_prob
        for g, joints in enumerate(profile.occlusion_groups):
            mask[:, list(joints)] |= drawn[:, g:g + 1]
    std = np.asarray(profile.base_sigma) * np.where(mask, profile.occlusion_multiplier, 1.0)
    noisy = xb + rng.standard_normal((n, V, 2)) * std[..., None]
    return (noisy[0], mask[0]) if single else (noisy, mask)


# -- datasets ---------------------------------------------------------------

@dataclass(frozen=True)
class DatasetRecord:
    sample_id: int
    gt_pose3d: np.ndarray = field(repr=False)
    clean_pose2d: np.ndarray = field(repr=False)
    detected_pose2d: np.ndarray = field(repr=False)
    occlusion_mask: np.ndarray = field(repr=False)

    def __eq__(self, other):
        if not isinstance(other, DatasetRecord):
            return NotImplemented
        return (self.sample_id == other.sample_id
                and np.array_equal(self.gt_pose3d, other.gt_pose3d)
                and np.array_equal(self.clean_pose2d, other.clean_pose2d)
                and np.array_equal(self.detected_pose2d, other.detected_pose2d)
                and np.array_equal(self.occlusion_mask, other.occlusion_mask))


class Dataset:
    """Columnar collection of :class:`DatasetRecord` sharing one V."""

    def __init__(self, sample_ids, gt3d, clean2d, det2d, occl, header: dict | None = None):
        self.sample_ids = np.asarray(sample_ids, dtype=np.int64)
        self.gt3d = check_pose3d(gt3d)
        n, V = self.gt3d.shape[:2]
        self.clean2d = check_pose2d(clean2d, V)
        self.det2d = check_pose2d(det2d, V)
        self.occl = np.asarray(occl, dtype=bool)
        if not (self.sample_ids.shape == (n,) and self.clean2d.shape[0] == n
                and self.det2d.shape[0] == n and self.occl.shape == (n, V)):
            raise JointCountError("dataset columns disagree on sample count or V")
        self.header = dict(header or {})

    def __len__(self) -> int:
        return len(self.sample_ids)

    def __getitem__(self, i) -> DatasetRecord:
        return DatasetRecord(int(self.sample_ids[i]), self.gt3d[i], self.clean2d[i],
                             self.det2d[i], self.occl[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def n_joints(self) -> int:
        return self.gt3d.shape[1]

    @property
    def mm_per_unit(self) -> float:
        return float(self.header["mm_per_unit"])

    def subset(self, idx) -> "Dataset":
        return Dataset(self.sample_ids[idx], self.gt3d[idx], self.clean2d[idx],
                       self.det2d[idx], self.occl[idx], self.header)

    def to_bytes(self) -> bytes:
        header = {
            "format": DATASET_FORMAT,
            "format_version": DATASET_VERSION,
            "V": self.n_joints,
            "skeleton_id": self.header.get("skeleton_id", ""),
            "count": len(self),
            "split": self.header.get("split", ""),
            "mm_per_unit": self.header.get("mm_per_unit"),
            "camera": self.header.get("camera"),
        }
        lines = [json.dumps(header, sort_keys=True)]
        for i in range(len(self)):
            lines.append(json.dumps({
                "sample_id": int(self.sample_ids[i]),
                "gt3d": self.gt3d[i].ravel().tolist(),
                "clean2d": self.clean2d[i].ravel().tolist(),
                "det2d": self.det2d[i].ravel().tolist(),
                "occl": self.occl[i].tolist(),
            }))
        return ("\n".join(lines) + "\n").encode()

    @cached_property
    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def write_dataset(dataset: Dataset, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dataset.to_bytes())
    tmp.replace(path)
    return path


def load_dataset(path) -> Dataset:
    """Parse a dataset file; any defect raises before a dataset is returned."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    lines = path.read_bytes().decode().splitlines()
    if not lines:
        raise DatasetFormatError(f"{path}: empty file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: bad header: {exc}") from None
    if header.get("format") != DATASET_FORMAT or header.get("format_version") != DATASET_VERSION:
        raise DatasetFormatError(f"{path}: unsupported format/version "
                                 f"{header.get('format')}/{header.get('format_version')}")
    V = int(header["V"])
    n = len(lines) - 1
    if n != header.get("count"):
        raise DatasetFormatError(f"{path}: header declares {header.get('count')} records, found {n}")
    ids = np.empty(n, dtype=np.int64)
    gt3d, clean, det = np.empty((n, V, 3)), np.empty((n, V, 2)), np.empty((n, V, 2))
    occl = np.empty((n, V), dtype=bool)
    for i, line in enumerate(lines[1:]):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"{path}: record {i}: {exc}") from None
        if (len(rec["gt3d"]) != 3 * V or len(rec["clean2d"]) != 2 * V
                or len(rec["det2d"]) != 2 * V or len(rec["occl"]) != V):
            raise JointCountError(f"{path}: record {i} (sample {rec.get('sample_id')}) "
                                  f"does not match V={V}")
        ids[i] = rec["sample_id"]
        gt3d[i] = np.reshape(rec["gt3d"], (V, 3))
        clean[i] = np.reshape(rec["clean2d"], (V, 2))
        det[i] = np.reshape(rec["det2d"], (V, 2))
        occl[i] = rec["occl"]
    meta = {k: header.get(k) for k in ("skeleton_id", "split", "mm_per_unit", "camera")}
    return Dataset(ids, gt3d, clean, det, occl, meta)


@dataclass(frozen=True)
class DatasetConfig:
    count: int = 22000
    split: tuple[float, float] = (10.0, 1.0)  # train : test weights
    seed: int = 0
    skeleton: str = "h36m16"
    base_sigma: float = 0.005
    occlusion_prob: float = 0.3
    occlusion_multiplier: float = 4.0
    focal: float = 2.29  # normalized units; ~1145 px focal on a 1000 px wide frame
    principal: tuple[float, float] = (0.0, 0.0)
    subject_distance: float = 5000.0

    def camera(self) -> Camera:
        return Camera(self.focal, tuple(self.principal), self.subject_distance)

    def noise_profile(self, skeleton: Skeleton) -> NoiseProfile:
        return NoiseProfile.uniform(skeleton.n_joints, self.base_sigma,
                                    occlusion_groups=H36M16_LIMB_GROUPS,
                                    occlusion_prob=self.occlusion_prob,
                                    occlusion_multiplier=self.occlusion_multiplier)

    def n_train(self) -> int:
        w_train, w_test = self.split
        return int(round(self.count * w_train / (w_train + w_test)))

    def to_dict(self) -> dict:
        return asdict(self)


SKELETONS = {"h36m16": (H36M16, h36m16_limits)}


def make_dataset(config: DatasetConfig) -> tuple[Dataset, Dataset]:
    """Build the (train, test) splits in memory; a pure function of ``config``."""
    if config.count < 1:
        raise ValueError("sample count must be >= 1")
    if config.skeleton not in SKELETONS:
        raise ValueError(f"unknown skeleton {config.skeleton!r}")
    skeleton, limits_fn = SKELETONS[config.skeleton]
    camera = config.camera()
    camera.validate_for(skeleton)
    rng = np.random.default_rng(config.seed)
    gt3d = sample_poses(skeleton, limits_fn(), rng, config.count)
    clean = project(gt3d, camera)
    det, occl = corrupt_2d(clean, config.noise_profile(skeleton), rng)
    ids = np.arange(config.count)
    meta = {"skeleton_id": skeleton.skeleton_id, "mm_per_unit": camera.mm_per_unit,
            "camera": {"focal": camera.focal, "principal": list(camera.principal),
                       "subject_distance": camera.subject_distance}}
    k = config.n_train()
    train = Dataset(ids[:k], gt3d[:k], clean[:k], det[:k], occl[:k], {**meta, "split": "train"})
    test = Dataset(ids[k:], gt3d[k:], clean[k:], det[k:], occl[k:], {**meta, "split": "test"})
    return train, test


def generate_dataset(config: DatasetConfig, out_dir) -> tuple[Path, Path]:
    """Write ``train.jsonl`` and ``test.jsonl`` into ``out_dir``."""
    out_dir = Path(out_dir)
    train, test = make_dataset(config)
    return write_dataset(train, out_dir / "train.jsonl"), write_dataset(test, out_dir / "test.jsonl")
