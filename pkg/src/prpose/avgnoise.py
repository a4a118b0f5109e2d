"""Weakly supervised adaptive-variance learning.

A frozen lifter's per-joint 3D errors on the training set, divided by their
dataset-wide mean ``C``, become pseudo-labels for the adaptive variance
generator (AVG), a network mapping a 2D pose to one raw sigma per joint.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from . import nn
from .core import JointCountError, check_pose2d, check_pose3d, check_variance, root_center
from .lifter import LifterRegressor, _standardizer, fit_network

PSEUDO_FORMAT = "prpose-pseudo-labels"
PSEUDO_VERSION = 1
MIN_NORMALIZER_MM = 1e-12
PARADIGMS = ("independent", "shared")


class DegenerateLabelsError(ValueError):
    """The lifter's mean error is (numerically) zero, so labels cannot be normalized."""


class PseudoLabelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class PseudoLabelSet:
    labels: np.ndarray = field(repr=False)  # (P, V), dimensionless, mean 1
    C: float  # mm
    sample_ids: np.ndarray = field(repr=False)
    dataset_hash: str = ""
    lifter_hash: str = ""

    @property
    def n_joints(self) -> int:
        return self.labels.shape[1]

    def joint_prior(self) -> np.ndarray:
        """Per-joint mean label over the training set."""
        return self.labels.mean(axis=0)

    def to_bytes(self) -> bytes:
        header = {"format": PSEUDO_FORMAT, "format_version": PSEUDO_VERSION,
                  "dataset_hash": self.dataset_hash, "lifter_hash": self.lifter_hash,
                  "C": self.C, "V": self.n_joints, "count": len(self.labels)}
        buf = io.StringIO()
        buf.write(json.dumps(header, sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        for sid, row in zip(self.sample_ids.tolist(), self.labels.tolist()):
            w.writerow([sid] + [repr(v) for v in row])
        return buf.getvalue().encode()


def save_pseudo_labels(pseudo: PseudoLabelSet, path) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(pseudo.to_bytes())
    tmp.replace(path)
    return path


def load_pseudo_labels(path) -> PseudoLabelSet:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise PseudoLabelFormatError("empty pseudo-label file")
    header = json.loads(lines[0])
    if header.get("format") != PSEUDO_FORMAT or header.get("format_version") != PSEUDO_VERSION:
        raise PseudoLabelFormatError("unsupported pseudo-label format/version")
    rows = list(csv.reader(lines[1:]))
    if len(rows) != header["count"] or any(len(r) != header["V"] + 1 for r in rows):
        raise PseudoLabelFormatError("pseudo-label file is truncated or has the wrong V")
    ids = np.array([int(r[0]) for r in rows], dtype=np.int64)
    labels = np.array([[float(v) for v in r[1:]] for r in rows], dtype=np.float64)
    return PseudoLabelSet(labels.reshape(-1, header["V"]), float(header["C"]), ids,
                          header["dataset_hash"], header["lifter_hash"])


def normalize_errors(distances) -> tuple[np.ndarray, float]:
    """Divide per-joint errors ``(P, V)`` by their mean ``C``; returns ``(labels, C)``.

    ``C`` uses an exactly rounded sum, so it does not depend on summation order.
    """
    D = np.asarray(distances, dtype=np.float64)
    if D.ndim != 2 or D.size == 0:
        raise ValueError("expected a non-empty (P, V) array of distances")
    C = math.fsum(D.ravel().tolist()) / D.size
    if not C >= MIN_NORMALIZER_MM:
        raise DegenerateLabelsError(f"normalization constant C={C!r} mm is below "
                                    f"{MIN_NORMALIZER_MM} (lifter reproduces the ground truth)")
    return D / C, C


def compute_pseudo_labels(lifter: LifterRegressor, train_set) -> PseudoLabelSet:
    """Pseudo-labels from a frozen lifter's per-joint Euclidean errors on ``train_set``."""
    check_is_fitted(lifter, "network_")
    if not lifter.network_.frozen:
        raise ValueError("pseudo-labels require a trained, frozen lifter")
    if len(train_set) == 0:
        raise ValueError("empty training set")
    pred = lifter.predict(train_set.det2d)
    gt = root_center(check_pose3d(train_set.gt3d, lifter.n_joints_))
    labels, C = normalize_errors(np.linalg.norm(pred - gt, axis=-1))
    return PseudoLabelSet(labels, C, np.asarray(train_set.sample_ids), train_set.digest,
                          lifter.digest())


class AdaptiveVarianceRegressor(RegressorMixin, BaseEstimator):
    """Adaptive variance generator: 2D pose ``(n, V, 2)`` -> raw per-joint sigma ``(n, V)``.

    ``paradigm="independent"`` trains a standalone residual MLP on
    standardized 2D input. ``paradigm="shared"`` reuses the frozen lifter's
    first hidden layer as encoder and trains a single dense head on top, so
    the only new parameters are that head's. The output head is linear;
    negative outputs are clamped later by :func:`prpose.sampler.adjust_sigma`.
    """

    def __init__(self, hidden_dim=128, n_blocks=1, epochs=40, batch_size=256, lr=1e-3,
                 lr_decay_epoch=30, lr_decay=0.1, paradigm="independent", lifter=None,
                 random_state=0):
        self.hidden_dim = hidden_dim
        self.n_blocks = n_blocks
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_decay_epoch = lr_decay_epoch
        self.lr_decay = lr_decay
        self.paradigm = paradigm
        self.lifter = lifter
        self.random_state = random_state

    def _check_paradigm(self):
        if self.paradigm not in PARADIGMS:
            raise ValueError(f"unknown paradigm {self.paradigm!r}")
        if self.paradigm == "shared":
            if self.lifter is None:
                raise ValueError("shared paradigm needs a lifter to share layers with")
            check_is_fitted(self.lifter, "network_")

    def fit(self, X, y):
        self._check_paradigm()
        X2 = check_pose2d(X)
        if X2.ndim != 3 or len(X2) == 0:
            raise ValueError("AVG needs a non-empty batch of 2D poses")
        V = X2.shape[1]
        Y = check_variance(y, V, nonneg=False)
        if Y.shape != (len(X2), V):
            raise ValueError("labels must have shape (n, V)")
        rng = np.random.default_rng(self.random_state)
        meta = {"role": "avg", "paradigm": self.paradigm, "n_joints": V}
        if self.paradigm == "shared":
            feats = self.lifter.encode(X2)
            spec = nn.NetSpec(feats.shape[1], V, 0)
            meta["lifter_hash"] = self.lifter.digest()
        else:
            Xf = X2.reshape(len(X2), -1)
            x_mean, x_scale = _standardizer(Xf)
            feats = (Xf - x_mean) / x_scale
            spec = nn.NetSpec(2 * V, V, self.hidden_dim, self.n_blocks)
            meta.update(x_mean=x_mean.tolist(), x_scale=x_scale.tolist())
        net = nn.Network.init(spec, rng)
        curve = fit_network(net, feats, Y, nn.MSELoss, epochs=self.epochs,
                            batch_size=self.batch_size, lr=self.lr, rng=rng,
                            lr_decay_epoch=self.lr_decay_epoch, lr_decay=self.lr_decay)
        meta["final_loss"] = curve[-1] if curve else None
        net.meta = meta
        self._set_network(net.freeze())
        self.loss_curve_ = curve
        return self

    def _set_network(self, net: nn.Network):
        self.network_ = net
        self.n_joints_ = int(net.meta["n_joints"])
        if net.meta["paradigm"] == "independent":
            self.x_mean_ = np.asarray(net.meta["x_mean"])
            self.x_scale_ = np.asarray(net.meta["x_scale"])

    @classmethod
    def from_network(cls, net: nn.Network, lifter: LifterRegressor | None = None):
        if net.meta.get("role") != "avg":
            raise ValueError("checkpoint does not hold an AVG model")
        paradigm = net.meta["paradigm"]
        if paradigm == "shared":
            if lifter is None:
                raise ValueError("shared-paradigm AVG needs its lifter")
            if lifter.digest() != net.meta.get("lifter_hash"):
                raise ValueError("lifter does not match the one this AVG was trained on")
        model = cls(hidden_dim=net.spec.hidden_dim, n_blocks=net.spec.block_count,
                    paradigm=paradigm, lifter=lifter if paradigm == "shared" else None)
        model._set_network(net if net.frozen else net.freeze())
        return model

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "network_")
        X2 = check_pose2d(X)
        if X2.shape[-2] != self.n_joints_:
            raise JointCountError(f"AVG expects V={self.n_joints_}, got V={X2.shape[-2]}")
        single = X2.ndim == 2
        X2 = X2[None] if single else X2
        if self.network_.meta["paradigm"] == "shared":
            feats = self.lifter.encode(X2)
        else:
            feats = (X2.reshape(len(X2), -1) - self.x_mean_) / self.x_scale_
        out = nn.forward(self.network_, feats)
        return out[0] if single else out

    @property
    def n_new_params_(self) -> int:
        """Trainable parameters this model adds on top of the lifter."""
        check_is_fitted(self, "network_")
        return self.network_.spec.n_params

    def digest(self) -> str:
        check_is_fitted(self, "network_")
        return self.network_.digest()


def train_avg(train_set, pseudo: PseudoLabelSet, paradigm: str = "independent",
              lifter: LifterRegressor | None = None, hidden_dim=128, n_blocks=1, epochs=40,
              batch_size=256, lr=1e-3, lr_decay_epoch=30, lr_decay=0.1,
              seed=0) -> AdaptiveVarianceRegressor:
    """Fit the AVG to pseudo-labels with the lifter held frozen.

    The lifter checkpoint bytes are hashed before and after training; any
    change is an error.
    """
    if pseudo.dataset_hash and pseudo.dataset_hash != train_set.digest:
        raise ValueError("pseudo-labels were computed on a different dataset")
    if not np.array_equal(pseudo.sample_ids, np.asarray(train_set.sample_ids)):
        raise ValueError("pseudo-label rows do not match the training samples")
    before = None
    if lifter is not None:
        if not lifter.network_.frozen:
            raise ValueError("lifter must be frozen before AVG training")
        before = lifter.digest()
    model = AdaptiveVarianceRegressor(hidden_dim, n_blocks, epochs, batch_size, lr,
                                      lr_decay_epoch, lr_decay, paradigm=paradigm,
                                      lifter=lifter if paradigm == "shared" else None,
                                      random_state=seed)
    model.fit(train_set.det2d, pseudo.labels)
    if before is not None and lifter.digest() != before:
        raise RuntimeError("lifter weights changed during AVG training")
    return model


def predict_variance(avg: AdaptiveVarianceRegressor, pose2d) -> np.ndarray:
    return avg.predict(pose2d)


def kl_gaussian(sigma, sigma_hat):
    """KL( N(mu, sigma^2) || N(mu, sigma_hat^2) ) for positive scales (elementwise)."""
    s = np.asarray(sigma, dtype=np.float64)
    sh = np.asarray(sigma_hat, dtype=np.float64)
    if np.any(~(s > 0)) or np.any(~(sh > 0)):
        raise ValueError("kl_gaussian requires strictly positive sigmas")
    out = 0.5 * (np.log((sh / s) ** 2) + s ** 2 / sh ** 2 - 1.0)
    return float(out) if out.ndim == 0 else out
