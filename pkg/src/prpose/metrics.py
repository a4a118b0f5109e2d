"""Pose-error metrics in millimeters: MPJPE, Procrustes-aligned MPJPE, best-of-S selection, PCK.

All functions are pure and broadcast over leading axes. Poses are ``(..., V, 3)``,
hypothesis sets are ``(..., S, V, 3)`` with the matching ground truth ``(..., V, 3)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import JointCountError, check_pose3d


class AlignmentError(ValueError):
    """Procrustes alignment is undefined (coincident or collinear joints)."""


class EmptyHypothesisSetError(ValueError):
    pass


class Protocol(str, Enum):
    P1 = "p1"
    P2 = "p2"


class Selection(str, Enum):
    PBEST = "pbest"
    JBEST = "jbest"


def _enum(cls, v):
    return v if isinstance(v, cls) else cls(str(v).lower())


@dataclass(frozen=True)
class EvalProtocol:
    kind: Protocol = Protocol.P1
    selection: Selection = Selection.PBEST
    pck_threshold_mm: float = 150.0

    def __post_init__(self):
        object.__setattr__(self, "kind", _enum(Protocol, self.kind))
        object.__setattr__(self, "selection", _enum(Selection, self.selection))
        if not self.pck_threshold_mm > 0:
            raise ValueError("PCK threshold must be positive")


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape[-1] != 3 or g.shape[-1] != 3:
        raise ValueError("poses must have a trailing coordinate axis of size 3")
    if p.shape[-2] != g.shape[-2]:
        raise JointCountError(f"V mismatch: {p.shape[-2]} vs {g.shape[-2]}")
    return p, g


def joint_errors(pred, gt) -> np.ndarray:
    """Per-joint Euclidean distances ``(..., V)``."""
    p, g = _pair(pred, gt)
    return np.linalg.norm(p - g, axis=-1)


def mpjpe(pred, gt):
    """Mean per-joint position error; a float for single poses, an array otherwise."""
    out = joint_errors(pred, gt).mean(axis=-1)
    return float(out) if out.ndim == 0 else out


def procrustes_align(pred, gt, rank_tol: float = 1e-10) -> np.ndarray:
    """Similarity transform ``s R pred + t`` closest to ``gt`` in least squares.

    ``R`` is a proper rotation (a reflection in the SVD solution is corrected by
    flipping the last singular direction) and ``s > 0``.
    """
    p, g = _pair(pred, gt)
    p, g = np.broadcast_arrays(p, g)
    mu_p = p.mean(axis=-2, keepdims=True)
    mu_g = g.mean(axis=-2, keepdims=True)
    pc, gc = p - mu_p, g - mu_g
    H = np.swapaxes(pc, -1, -2) @ gc  # (..., 3, 3)
    U, sv, Vt = np.linalg.svd(H)
    scale_ref = np.maximum(np.sqrt((pc ** 2).sum(axis=(-2, -1)) * (gc ** 2).sum(axis=(-2, -1))), 1e-300)
    if np.any(sv[..., 1] <= rank_tol * scale_ref):
        raise AlignmentError("degenerate pose: cross-covariance has rank < 2")
    V_ = np.swapaxes(Vt, -1, -2)
    Ut = np.swapaxes(U, -1, -2)
    d = np.sign(np.linalg.det(V_ @ Ut))
    d = np.where(d == 0, 1.0, d)
    V_ = V_.copy()
    V_[..., :, 2] *= d[..., None]
    R = V_ @ Ut
    sv = sv.copy()
    sv[..., 2] *= d
    s = sv.sum(axis=-1) / (pc ** 2).sum(axis=(-2, -1))
    return s[..., None, None] * pc @ np.swapaxes(R, -1, -2) + mu_g


def p_mpjpe(pred, gt):
    """MPJPE after similarity Procrustes alignment."""
    p, g = _pair(pred, gt)
    return mpjpe(procrustes_align(p, g), np.broadcast_to(g, np.broadcast_shapes(p.shape, g.shape)))


def _hyp_errors(hyps, gt, kind: Protocol) -> np.ndarray:
    """Per-hypothesis, per-joint errors ``(..., S, V)``."""
    H = np.asarray(hyps.hypotheses if hasattr(hyps, "hypotheses") else hyps, dtype=np.float64)
    if H.ndim < 3 or H.shape[-3] == 0:
        raise EmptyHypothesisSetError("hypothesis set is empty")
    g = np.asarray(gt, dtype=np.float64)[..., None, :, :]
    if kind is Protocol.P2:
        H = procrustes_align(H, g)
    return joint_errors(H, g)


def min_mpjpe(hyps, gt, protocol: EvalProtocol | None = None, return_index: bool = False):
    """Best-of-S MPJPE (after per-hypothesis alignment under P2).

    With ``return_index`` also returns the argmin; ties go to the lowest index.
    """
    protocol = protocol or EvalProtocol()
    per = _hyp_errors(hyps, gt, protocol.kind).mean(axis=-1)
    idx = np.argmin(per, axis=-1)
    val = np.take_along_axis(per, idx[..., None], axis=-1)[..., 0]
    val = float(val) if val.ndim == 0 else val
    if return_index:
        return val, (int(idx) if np.ndim(idx) == 0 else idx)
    return val


def j_best_mpjpe(hyps, gt, protocol: EvalProtocol | None = None):
    """Per-joint minimum over hypotheses, then the mean over joints."""
    protocol = protocol or EvalProtocol(selection=Selection.JBEST)
    out = _hyp_errors(hyps, gt, protocol.kind).min(axis=-2).mean(axis=-1)
    return float(out) if out.ndim == 0 else out


def pck(hyps, gt, protocol: EvalProtocol | None = None):
    """Fraction of joints strictly within the threshold, on the P1-best hypothesis."""
    protocol = protocol or EvalProtocol()
    err = _hyp_errors(hyps, gt, Protocol.P1)
    idx = np.argmin(err.mean(axis=-1), axis=-1)
    best = np.take_along_axis(err, idx[..., None, None], axis=-2)[..., 0, :]
    out = (best < protocol.pck_threshold_mm).mean(axis=-1)
    return float(out) if out.ndim == 0 else out


def score(hyps, gt, protocol: EvalProtocol):
    """The protocol's selection metric: P-Best or J-Best."""
    if protocol.selection is Selection.JBEST:
        return j_best_mpjpe(hyps, gt, protocol)
    return min_mpjpe(hyps, gt, protocol)


def nested_scores(hyps, gt, S_list, protocols, pck_threshold_mm: float = 150.0,
                  chunk: int = 50) -> dict:
    """Per-sample scores for every prefix size in ``S_list`` from one ``(n, S_max, V, 3)`` batch.

    Hypothesis ``i`` is the same for every ``S > i``, so the score at ``S`` is a
    reduction over the first ``S`` hypotheses. Returns ``{(protocol, S): (n,)}``
    plus ``{("pck", S): (n,)}``.
    """
    H = np.asarray(hyps, dtype=np.float64)
    G = check_pose3d(gt)
    n, S_max = H.shape[:2]
    S_list = sorted(set(int(s) for s in S_list))
    if not S_list or S_list[0] < 1 or S_list[-1] > S_max:
        raise ValueError(f"S values must lie in [1, {S_max}]")
    out: dict = {}
    kinds = {p.kind for p in protocols} | {Protocol.P1}
    for start in range(0, n, chunk):
        sl = slice(start, start + chunk)
        errs = {k: _hyp_errors(H[sl], G[sl], k) for k in kinds}
        for S in S_list:
            for p in protocols:
                e = errs[p.kind][:, :S]
                if p.selection is Selection.JBEST:
                    v = e.min(axis=1).mean(axis=-1)
                else:
                    v = e.mean(axis=-1).min(axis=1)
                out.setdefault((p, S), []).append(v)
            e1 = errs[Protocol.P1][:, :S]
            idx = np.argmin(e1.mean(axis=-1), axis=1)
            best = e1[np.arange(len(idx)), idx]
            out.setdefault(("pck", S), []).append((best < pck_threshold_mm).mean(axis=-1))
    return {k: np.concatenate(v) for k, v in out.items()}
