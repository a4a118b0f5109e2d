"""Multi-hypothesis generation by adaptive noise amplification of the 2D input.

Pipeline per input pose ``x``:

1. raw per-joint sigma from the chosen strategy (constant, per-joint prior,
   AVG output averaged per sample, or full AVG output);
2. ``sigma_tilde = alpha * max(sigma, 1)``;
3. ``S`` samples ``x + z`` with ``z ~ N(0, sigma_tilde^2)`` independently per
   coordinate (pre-sample), or the same noise added in 3D after a single lift
   (post-sample);
4. lift every sample.

Noise is drawn from a stream keyed by ``(seed, sample_id, stream)``; hypothesis
``i`` consumes row ``i`` of that stream, so the first ``S1`` hypotheses of an
``S2 > S1`` run coincide with an ``S1`` run and results never depend on the
order in which samples are processed. All strategies share the same standard
normal draws for a given key.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import HypothesisSet, JointCountError, check_pose2d, check_variance

STREAM_2D = 0
STREAM_3D = 1


class NoiseKind(str, Enum):
    NO_ADAPTED = "NoAdapted"
    JOINTS_ADAPTED = "JointsAdapted"
    SAMPLE_ADAPTED = "SampleAdapted"
    SAMPLE_JOINTS_ADAPTED = "SampleJointsAdapted"

    @property
    def uses_avg(self) -> bool:
        return self in (NoiseKind.SAMPLE_ADAPTED, NoiseKind.SAMPLE_JOINTS_ADAPTED)


class Layer(str, Enum):
    PRE = "pre"
    POST = "post"


@dataclass(frozen=True)
class NoiseStrategy:
    kind: NoiseKind = NoiseKind.SAMPLE_JOINTS_ADAPTED
    alpha: float = 0.005
    layer: Layer = Layer.PRE

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        object.__setattr__(self, "layer", Layer(self.layer))
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    @property
    def label(self) -> str:
        return f"{self.kind.value}/{self.layer.value}/alpha={self.alpha!r}"


def adjust_sigma(raw, alpha: float) -> np.ndarray:
    """``alpha * max(sigma, 1)`` elementwise; negative raw values fall on the clamp."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    return alpha * np.maximum(check_variance(raw, nonneg=False), 1.0)


def noise_stream(seed: int, sample_id: int, stream: int = STREAM_2D) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(sample_id), int(stream)])


def standard_draws(seed: int, sample_ids, S: int, n_joints: int, dim: int,
                   stream: int) -> np.ndarray:
    """Standard normal draws ``(n, S, V, dim)``, one keyed stream per sample."""
    return np.stack([noise_stream(seed, sid, stream).standard_normal((S, n_joints, dim))
                     for sid in np.asarray(sample_ids).tolist()])


def amplify_2d(pose2d, sigma_tilde, S: int, rng: np.random.Generator) -> np.ndarray:
    """``S`` noisy copies ``(S, V, 2)`` of one 2D pose, joint ``v`` perturbed with std ``sigma_tilde[v]``."""
    if S < 1:
        raise ValueError("S must be >= 1")
    x = check_pose2d(pose2d)
    if x.ndim != 2:
        raise ValueError("amplify_2d takes a single (V, 2) pose")
    s = check_variance(sigma_tilde, x.shape[0])
    if s.ndim != 1:
        raise ValueError("sigma_tilde must have shape (V,)")
    return x[None] + rng.standard_normal((S,) + x.shape) * s[None, :, None]


def joint_prior(pseudo) -> np.ndarray:
    """Training-set mean pseudo-label per joint (the sample-independent prior)."""
    return np.asarray(pseudo.labels, dtype=np.float64).mean(axis=0)


def raw_sigma(kind: NoiseKind, n: int, n_joints: int, avg_out=None, prior=None) -> np.ndarray:
    """Raw sigma ``(n, V)`` before clamping, per strategy kind."""
    kind = NoiseKind(kind)
    if kind is NoiseKind.NO_ADAPTED:
        return np.ones((n, n_joints))
    if kind is NoiseKind.JOINTS_ADAPTED:
        if prior is None:
            raise ValueError("JointsAdapted needs a joint prior")
        return np.broadcast_to(check_variance(prior, n_joints), (n, n_joints)).copy()
    if avg_out is None:
        raise ValueError(f"{kind.value} needs AVG output")
    a = check_variance(avg_out, n_joints, nonneg=False).reshape(n, n_joints)
    if kind is NoiseKind.SAMPLE_ADAPTED:
        return np.repeat(a.mean(axis=1, keepdims=True), n_joints, axis=1)
    return a.copy()


@dataclass
class HypothesisBatch:
    hypotheses: np.ndarray          # (n, S, V, 3)
    sigma_tilde: np.ndarray         # (n, V)
    samples2d: np.ndarray | None    # (n, S, V, 2), pre-sample only


def generate_hypotheses_batch(lifter, avg, prior, poses2d, sample_ids, strategy: NoiseStrategy,
                              S: int, seed: int = 0, mm_per_unit: float = 1.0,
                              keep_samples: bool = False, chunk: int = 100) -> HypothesisBatch:
    """Hypotheses for a batch of 2D poses ``(n, V, 2)``.

    ``mm_per_unit`` converts sigma_tilde to millimeters for post-sample noise.
    """
    if S < 1:
        raise ValueError("S must be >= 1")
    X = check_pose2d(poses2d)
    X = X[None] if X.ndim == 2 else X
    n, V = X.shape[:2]
    if V != lifter.n_joints_:
        raise JointCountError(f"lifter expects V={lifter.n_joints_}, got V={V}")
    ids = np.asarray(sample_ids).reshape(-1)
    if len(ids) != n:
        raise ValueError("one sample id per pose required")
    avg_out = avg.predict(X) if strategy.kind.uses_avg else None
    sig = adjust_sigma(raw_sigma(strategy.kind, n, V, avg_out, prior), strategy.alpha)

    hyps = np.empty((n, S, V, 3))
    samples = np.empty((n, S, V, 2)) if keep_samples and strategy.layer is Layer.PRE else None
    for s in range(0, n, chunk):
        e = slice(s, s + chunk)
        m = len(ids[e])
        if strategy.layer is Layer.PRE:
            z = standard_draws(seed, ids[e], S, V, 2, STREAM_2D) * sig[e, None, :, None]
            x = X[e, None] + z
            if samples is not None:
                samples[e] = x
            hyps[e] = lifter.predict(x.reshape(m * S, V, 2)).reshape(m, S, V, 3)
        else:
            base = lifter.predict(X[e])
            z = standard_draws(seed, ids[e], S, V, 3, STREAM_3D) * (sig[e] * mm_per_unit)[:, None, :, None]
            z[:, :, 0] = 0.0  # root stays at the origin
            hyps[e] = base[:, None] + z
    return HypothesisBatch(hyps, sig, samples)


def generate_hypotheses(lifter, avg, prior, pose2d, strategy: NoiseStrategy, S: int,
                        seed: int = 0, sample_id: int = 0,
                        mm_per_unit: float = 1.0) -> HypothesisSet:
    """``S`` hypotheses for a single ``(V, 2)`` pose."""
    x = check_pose2d(pose2d)
    if x.ndim != 2:
        raise ValueError("generate_hypotheses takes a single (V, 2) pose")
    batch = generate_hypotheses_batch(lifter, avg, prior, x[None], [sample_id], strategy, S,
                                      seed, mm_per_unit)
    return HypothesisSet(batch.hypotheses[0], sample_id)


class MultiHypothesisLifter(BaseEstimator):
    """Extends a single-hypothesis lifter to ``n_hypotheses`` outputs per input.

    ``fit`` trains whatever is not already fitted: the lifter, then
    pseudo-labels and the AVG (the lifter stays frozen throughout).
    ``predict`` returns the single-hypothesis lift; ``sample`` returns
    ``(n, n_hypotheses, V, 3)`` hypotheses.
    """

    def __init__(self, lifter=None, avg=None, kind="SampleJointsAdapted", alpha=0.005,
                 layer="pre", n_hypotheses=10, mm_per_unit=1.0, random_state=0):
        self.lifter = lifter
        self.avg = avg
        self.kind = kind
        self.alpha = alpha
        self.layer = layer
        self.n_hypotheses = n_hypotheses
        self.mm_per_unit = mm_per_unit
        self.random_state = random_state

    def fit(self, X, y):
        from .avgnoise import AdaptiveVarianceRegressor, normalize_errors
        from .lifter import LifterRegressor

        lifter = self.lifter if self.lifter is not None else LifterRegressor(random_state=self.random_state)
        if not hasattr(lifter, "network_"):
            lifter.fit(X, y)
        pred = lifter.predict(X)
        gt = np.asarray(y, dtype=np.float64).reshape(pred.shape)
        gt = gt - gt[:, :1]
        labels, C = normalize_errors(np.linalg.norm(pred - gt, axis=-1))
        avg = self.avg if self.avg is not None else AdaptiveVarianceRegressor(random_state=self.random_state)
        if not hasattr(avg, "network_"):
            if avg.paradigm == "shared" and avg.lifter is None:
                avg.set_params(lifter=lifter)
            avg.fit(X, labels)
        self.lifter_, self.avg_ = lifter, avg
        self.joint_prior_ = labels.mean(axis=0)
        self.normalizer_ = C
        self.strategy_ = NoiseStrategy(self.kind, self.alpha, self.layer)
        return self

    def predict(self, X):
        check_is_fitted(self, "lifter_")
        return self.lifter_.predict(X)

    def sample(self, X, sample_ids=None):
        check_is_fitted(self, "lifter_")
        X = check_pose2d(X)
        X = X[None] if X.ndim == 2 else X
        ids = np.arange(len(X)) if sample_ids is None else sample_ids
        return generate_hypotheses_batch(self.lifter_, self.avg_, self.joint_prior_, X, ids,
                                         self.strategy_, self.n_hypotheses, self.random_state,
                                         self.mm_per_unit).hypotheses


def export_hypotheses(path, sample_ids, poses2d, batch: HypothesisBatch, strategy: NoiseStrategy,
                      seed: int) -> Path:
    """Plot-ready JSON lines: input pose, sigma_tilde, 2D samples and 3D hypotheses per sample."""
    path = Path(path)
    X = check_pose2d(poses2d)
    lines = [json.dumps({"format": "prpose-hypotheses", "format_version": 1,
                         "strategy": strategy.kind.value, "layer": strategy.layer.value,
                         "alpha": strategy.alpha, "seed": seed,
                         "S": int(batch.hypotheses.shape[1]), "count": len(X)}, sort_keys=True)]
    for i, sid in enumerate(np.asarray(sample_ids).tolist()):
        lines.append(json.dumps({
            "sample_id": sid,
            "input2d": X[i].tolist(),
            "sigma_tilde": batch.sigma_tilde[i].tolist(),
            "samples2d": None if batch.samples2d is None else batch.samples2d[i].tolist(),
            "hypotheses3d": batch.hypotheses[i].tolist(),
        }))
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(path)
    return path
