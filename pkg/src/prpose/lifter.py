"""Single-hypothesis 2D-to-3D lifter: residual MLP trained with an L1 loss."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from . import nn
from .core import JointCountError, check_pose2d, check_pose3d, root_center


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training diverged (non-finite loss) at epoch {epoch}")
        self.epoch = epoch


def _standardizer(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale < 1e-12] = 1.0
    return mean, scale


def iterate_minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def fit_network(net: nn.Network, X: np.ndarray, Y: np.ndarray, loss_cls, *, epochs: int,
                batch_size: int, lr: float, rng: np.random.Generator,
                lr_decay_epoch: int | None = None, lr_decay: float = 0.1) -> list[float]:
    """Minibatch Adam on ``loss_cls(target)``; returns the per-epoch mean loss."""
    opt = nn.Adam.for_network(net, lr=lr)
    curve = []
    for epoch in range(epochs):
        if lr_decay_epoch is not None and epoch == lr_decay_epoch:
            opt.lr *= lr_decay
        total = 0.0
        for idx in iterate_minibatches(len(X), batch_size, rng):
            value, grads = nn.loss_gradients(net, X[idx], loss_cls(Y[idx]))
            if not np.isfinite(value):
                raise TrainingDivergedError(epoch)
            nn.adam_step(opt, net, grads)
            total += value * len(idx)
        curve.append(total / len(X))
    return curve


class LifterRegressor(RegressorMixin, BaseEstimator):
    """Residual-MLP lifter mapping 2D poses ``(n, V, 2)`` to root-relative 3D ``(n, V, 3)``.

    Inputs are standardized per feature; targets are shifted by the per-coordinate
    training mean and divided by one global scale (the RMS of the root-relative
    coordinates), so the L1 objective stays proportional to the L1 error in mm.
    The fitted network is frozen.

    Parameters
    ----------
    hidden_dim, n_blocks : int
        Width and number of residual blocks.
    epochs, batch_size, lr : training schedule (Adam).
    lr_decay_epoch : int or None
        Epoch at which the learning rate is multiplied by ``lr_decay``.
    random_state : int
        Seeds initialization and minibatch order.
    """

    def __init__(self, hidden_dim=256, n_blocks=2, epochs=40, batch_size=256, lr=1e-3,
                 lr_decay_epoch=30, lr_decay=0.1, random_state=0):
        self.hidden_dim = hidden_dim
        self.n_blocks = n_blocks
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_decay_epoch = lr_decay_epoch
        self.lr_decay = lr_decay
        self.random_state = random_state

    def fit(self, X, y, dataset_hash: str = ""):
        X2 = check_pose2d(X)
        if X2.ndim != 3 or len(X2) == 0:
            raise ValueError("lifter needs a non-empty batch of 2D poses")
        V = X2.shape[1]
        Y3 = root_center(check_pose3d(y, V))
        if len(Y3) != len(X2):
            raise ValueError("X and y have different sample counts")
        Xf = X2.reshape(len(X2), -1)
        Yf = Y3.reshape(len(Y3), -1)
        x_mean, x_scale = _standardizer(Xf)
        y_mean = Yf.mean(axis=0)
        y_scale = float(np.sqrt(np.mean(Yf ** 2))) or 1.0

        rng = np.random.default_rng(self.random_state)
        spec = nn.NetSpec(2 * V, 3 * V, self.hidden_dim, self.n_blocks)
        net = nn.Network.init(spec, rng)
        curve = fit_network(net, (Xf - x_mean) / x_scale, (Yf - y_mean) / y_scale, nn.L1Loss,
                            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr, rng=rng,
                            lr_decay_epoch=self.lr_decay_epoch, lr_decay=self.lr_decay)
        net.meta = {
            "role": "lifter",
            "n_joints": V,
            "x_mean": x_mean.tolist(), "x_scale": x_scale.tolist(),
            "y_mean": y_mean.tolist(), "y_scale": y_scale,
            "dataset_hash": dataset_hash,
            "epochs": self.epochs,
            "final_loss_mm": curve[-1] * y_scale if curve else None,
        }
        self._set_network(net.freeze())
        self.loss_curve_ = [v * y_scale for v in curve]
        return self

    def _set_network(self, net: nn.Network):
        m = net.meta
        self.network_ = net
        self.n_joints_ = int(m["n_joints"])
        self.x_mean_ = np.asarray(m["x_mean"])
        self.x_scale_ = np.asarray(m["x_scale"])
        self.y_mean_ = np.asarray(m["y_mean"])
        self.y_scale_ = float(m["y_scale"])

    @classmethod
    def from_network(cls, net: nn.Network) -> "LifterRegressor":
        if net.meta.get("role") != "lifter":
            raise ValueError("checkpoint does not hold a lifter")
        model = cls(hidden_dim=net.spec.hidden_dim, n_blocks=net.spec.block_count,
                    epochs=net.meta.get("epochs", 0))
        model._set_network(net if net.frozen else net.freeze())
        return model

    def _inputs(self, X) -> tuple[np.ndarray, bool]:
        check_is_fitted(self, "network_")
        X2 = check_pose2d(X)
        if X2.shape[-2] != self.n_joints_:
            raise JointCountError(f"lifter expects V={self.n_joints_}, got V={X2.shape[-2]}")
        single = X2.ndim == 2
        X2 = X2[None] if single else X2
        return (X2.reshape(len(X2), -1) - self.x_mean_) / self.x_scale_, single

    def predict(self, X, chunk_size: int = 20000) -> np.ndarray:
        Xs, single = self._inputs(X)
        out = np.empty((len(Xs), 3 * self.n_joints_))
        for s in range(0, len(Xs), chunk_size):
            out[s:s + chunk_size] = nn.forward(self.network_, Xs[s:s + chunk_size])
        Y = root_center((out * self.y_scale_ + self.y_mean_).reshape(len(Xs), -1, 3))
        return Y[0] if single else Y

    def encode(self, X) -> np.ndarray:
        """First-hidden-layer activations, the encoder shared with a shared-paradigm AVG."""
        Xs, single = self._inputs(X)
        h = nn.hidden_features(self.network_, Xs)
        return h[0] if single else h

    def digest(self) -> str:
        check_is_fitted(self, "network_")
        return self.network_.digest()


def train_lifter(train_set, hidden_dim=256, n_blocks=2, epochs=40, batch_size=256, lr=1e-3,
                 lr_decay_epoch=30, lr_decay=0.1, seed=0) -> LifterRegressor:
    """Fit a lifter on a :class:`~prpose.synthgen.Dataset` (detected 2D -> ground-truth 3D)."""
    if len(train_set) == 0:
        raise ValueError("empty training set")
    model = LifterRegressor(hidden_dim, n_blocks, epochs, batch_size, lr, lr_decay_epoch,
                            lr_decay, random_state=seed)
    return model.fit(train_set.det2d, train_set.gt3d, dataset_hash=train_set.digest)


def lift(model: LifterRegressor, pose2d) -> np.ndarray:
    return model.predict(pose2d)


def write_training_log(curve, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(curve):
            w.writerow([i, repr(float(v))])
    return path
