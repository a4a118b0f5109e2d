"""Small float64 residual MLP with analytic gradients, Adam and checkpoints.

Layer order (also the checkpoint parameter order)::

    input   dense  input_dim  -> hidden_dim, activation
    block k dense  hidden_dim -> hidden_dim, activation   (branch a)
            dense  hidden_dim -> hidden_dim, activation   (branch b)
            h <- h + branch
    output  dense  hidden_dim -> output_dim, linear

``hidden_dim == 0`` denotes a single linear map ``input_dim -> output_dim``
(used for mapping heads). Each dense layer stores ``W`` of shape
``(fan_in, fan_out)`` followed by ``b`` of shape ``(fan_out,)``; the forward
map is ``x @ W + b``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_FORMAT = "prpose-checkpoint"
CHECKPOINT_VERSION = 1

_ACTIVATIONS = ("relu", "identity")


class FrozenNetworkError(RuntimeError):
    """Raised when an update is attempted on a frozen network."""


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class NetSpec:
    input_dim: int
    output_dim: int
    hidden_dim: int
    block_count: int = 0
    activation: str = "relu"

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be >= 1")
        if self.hidden_dim < 0 or self.block_count < 0:
            raise ValueError("hidden_dim and block_count must be >= 0")
        if self.hidden_dim == 0 and self.block_count:
            raise ValueError("a single linear layer (hidden_dim=0) cannot have blocks")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    def layer_shapes(self) -> list[tuple[int, int]]:
        if self.hidden_dim == 0:
            return [(self.input_dim, self.output_dim)]
        h = self.hidden_dim
        return [(self.input_dim, h)] + [(h, h)] * (2 * self.block_count) + [(h, self.output_dim)]

    def param_shapes(self) -> list[tuple[int, ...]]:
        out: list[tuple[int, ...]] = []
        for fan_in, fan_out in self.layer_shapes():
            out += [(fan_in, fan_out), (fan_out,)]
        return out

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.param_shapes())


class Network:
    """Parameters of a :class:`NetSpec` plus a frozen flag.

    ``meta`` carries JSON-serializable extras (e.g. input scaling of the
    estimator that owns the network); it is persisted with the checkpoint.
    """

    def __init__(self, spec: NetSpec, params: list[np.ndarray], frozen: bool = False,
                 meta: dict | None = None):
        shapes = spec.param_shapes()
        if len(params) != len(shapes):
            raise ValueError(f"expected {len(shapes)} parameter arrays, got {len(params)}")
        self.spec = spec
        self.params = []
        for p, s in zip(params, shapes):
            p = np.array(p, dtype=np.float64)
            if p.shape != s:
                raise ValueError(f"parameter shape {p.shape} does not match spec {s}")
            self.params.append(p)
        self.meta = dict(meta or {})
        self._frozen = False
        if frozen:
            self.freeze()

    @classmethod
    def init(cls, spec: NetSpec, rng: np.random.Generator) -> "Network":
        """He-style uniform init scaled by fan-in; zero biases."""
        params = []
        for fan_in, fan_out in spec.layer_shapes():
            limit = np.sqrt(6.0 / fan_in)
            params.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            params.append(np.zeros(fan_out))
        return cls(spec, params)

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self) -> "Network":
        for p in self.params:
            p.flags.writeable = False
        self._frozen = True
        return self

    def copy(self) -> "Network":
        return Network(self.spec, [p.copy() for p in self.params], frozen=self._frozen,
                       meta=json.loads(json.dumps(self.meta)))

    def to_bytes(self) -> bytes:
        header = {
            "format": CHECKPOINT_FORMAT,
            "format_version": CHECKPOINT_VERSION,
            "spec": asdict(self.spec),
            "frozen": self._frozen,
            "shapes": [list(p.shape) for p in self.params],
            "param_count": self.spec.n_params,
            "meta": self.meta,
        }
        head = json.dumps(header, sort_keys=True).encode() + b"\n"
        body = b"".join(p.astype("<f8").tobytes() for p in self.params)
        return head + body

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Network":
        nl = data.find(b"\n")
        if nl < 0:
            raise CheckpointError("corrupt checkpoint: missing header")
        try:
            header = json.loads(data[:nl])
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
        if header.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError("not a checkpoint file")
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {header.get('format_version')}")
        try:
            spec = NetSpec(**header["spec"])
        except (TypeError, ValueError) as exc:
            raise CheckpointError(f"invalid spec in checkpoint: {exc}") from None
        shapes = [tuple(s) for s in header["shapes"]]
        if shapes != spec.param_shapes():
            raise CheckpointError(f"shape mismatch: header {shapes} vs spec {spec.param_shapes()}")
        if header["param_count"] != spec.n_params:
            raise CheckpointError("parameter count mismatch")
        body = data[nl + 1:]
        if len(body) != 8 * spec.n_params:
            raise CheckpointError(f"expected {8 * spec.n_params} payload bytes, got {len(body)}")
        flat = np.frombuffer(body, dtype="<f8").astype(np.float64)
        params, offset = [], 0
        for s in shapes:
            size = int(np.prod(s))
            params.append(flat[offset:offset + size].reshape(s).copy())
            offset += size
        return cls(spec, params, frozen=header["frozen"], meta=header.get("meta"))


def save_checkpoint(net: Network, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(net.to_bytes())
    tmp.replace(path)


def load_checkpoint(path) -> Network:
    return Network.from_bytes(Path(path).read_bytes())


# -- forward / backward -----------------------------------------------------

def _act(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else z


def _act_grad(z, kind):
    return (z > 0).astype(np.float64) if kind == "relu" else np.ones_like(z)


def _dense(x, W, b):
    # stacked parameters (K, ...) broadcast against x of shape (B, d) or (K, B, d);
    if W.ndim == 2 and x.ndim == 3:
        K, B, d = x.shape
        z = (x.reshape(K * B, d) @ W).reshape(K, B, -1)
    else:
        z = x @ W
    return z + (b if b.ndim == 1 else b[:, None, :])


def _forward(spec: NetSpec, params, X, keep: bool = False):
    if spec.hidden_dim == 0:
        out = _dense(X, params[0], params[1])
        return out, ([X] if keep else None)
    act = spec.activation
    z0 = _dense(X, params[0], params[1])
    h = _act(z0, act)
    cache = [X, z0, h] if keep else None
    i = 2
    for _ in range(spec.block_count):
        za = _dense(h, params[i], params[i + 1])
        a = _act(za, act)
        zb = _dense(a, params[i + 2], params[i + 3])
        h = h + _act(zb, act)
        if keep:
            cache += [za, a, zb, h]
        i += 4
    out = _dense(h, params[i], params[i + 1])
    return out, cache


def _as_batch(net: Network, X) -> tuple[np.ndarray, bool]:
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None]
    if X.ndim != 2 or X.shape[1] != net.spec.input_dim:
        raise ValueError(f"expected input of width {net.spec.input_dim}, got shape {X.shape}")
    return X, single


def forward(net: Network, X) -> np.ndarray:
    """Evaluate the network on a vector ``(input_dim,)`` or batch ``(n, input_dim)``."""
    X, single = _as_batch(net, X)
    out, _ = _forward(net.spec, net.params, X)
    return out[0] if single else out


def hidden_features(net: Network, X) -> np.ndarray:
    """Activations of the first hidden layer (the shared encoder of a lifter)."""
    X, single = _as_batch(net, X)
    if net.spec.hidden_dim == 0:
        raise ValueError("network has no hidden layer")
    h = _act(_dense(X, net.params[0], net.params[1]), net.spec.activation)
    return h[0] if single else h


def backward(net: Network, X, upstream) -> list[np.ndarray]:
    """Gradients of ``sum(forward(X) * upstream)`` with respect to every parameter."""
    X, single = _as_batch(net, X)
    G = np.asarray(upstream, dtype=np.float64)
    if single:
        G = G[None]
    if G.shape != (X.shape[0], net.spec.output_dim):
        raise ValueError(f"upstream gradient shape {G.shape} does not match output "
                         f"({X.shape[0]}, {net.spec.output_dim})")
    spec = net.spec
    P = net.params
    _, cache = _forward(spec, P, X, keep=True)
    grads: list[np.ndarray] = [None] * len(P)  # type: ignore[list-item]
    if spec.hidden_dim == 0:
        grads[0], grads[1] = X.T @ G, G.sum(0)
        return grads
    act = spec.activation
    n_blocks = spec.block_count
    h = cache[-1]
    i = len(P) - 2
    grads[i], grads[i + 1] = h.T @ G, G.sum(0)
    dh = G @ P[i].T
    for k in reversed(range(n_blocks)):
        i = 2 + 4 * k
        h_in = cache[2 + 4 * k]
        za, a, zb = cache[3 + 4 * k], cache[4 + 4 * k], cache[5 + 4 * k]
        dzb = dh * _act_grad(zb, act)
        grads[i + 2], grads[i + 3] = a.T @ dzb, dzb.sum(0)
        dza = (dzb @ P[i + 2].T) * _act_grad(za, act)
        grads[i], grads[i + 1] = h_in.T @ dza, dza.sum(0)
        dh = dh + dza @ P[i].T
    dz0 = dh * _act_grad(cache[1], act)
    grads[0], grads[1] = X.T @ dz0, dz0.sum(0)
    return grads


# -- losses -----------------------------------------------------------------

class L1Loss:
    """Mean absolute error over batch and coordinates.

    Calling the loss returns ``(value, d value / d pred)``; ``value`` reduces
    the last two axes so stacked predictions ``(K, n, d)`` give ``K`` values.
    """

    def __init__(self, target):
        self.target = np.asarray(target, dtype=np.float64)

    def __call__(self, pred):
        r = pred - self.target
        n = r.shape[-1] * r.shape[-2]
        return np.abs(r).mean(axis=(-2, -1)), np.sign(r) / n


class MSELoss:
    """Mean squared error over batch and coordinates."""

    def __init__(self, target):
        self.target = np.asarray(target, dtype=np.float64)

    def __call__(self, pred):
        r = pred - self.target
        n = r.shape[-1] * r.shape[-2]
        return (r * r).mean(axis=(-2, -1)), 2.0 * r / n


class LinearLoss:
    """``sum(pred * weights)``; its output gradient is ``weights`` everywhere."""

    def __init__(self, weights):
        self.weights = np.asarray(weights, dtype=np.float64)

    def __call__(self, pred):
        return (pred * self.weights).sum(axis=(-2, -1)), np.broadcast_to(self.weights, pred.shape)


def loss_gradients(net: Network, X, loss) -> tuple[float, list[np.ndarray]]:
    X, _ = _as_batch(net, X)
    out, _ = _forward(net.spec, net.params, X)
    value, g = loss(out)
    return float(value), backward(net, X, g)


def numeric_gradients(net: Network, X, loss, step: float = 1e-5,
                      dtype=np.float64) -> list[np.ndarray]:
    """Central finite differences for every parameter entry.

    All perturbations of one parameter tensor are evaluated in a single
    stacked forward pass, so this stays cheap for small networks. With
    ``dtype=np.longdouble`` the perturbed passes run in extended precision,
    which pushes the roundoff floor (about eps * |loss| / step) below the
    size of small but nonzero gradient entries.
    """
    X, _ = _as_batch(net, X)
    X = X.astype(dtype)
    base = [p.astype(dtype) for p in net.params]
    out: list[np.ndarray] = []
    h = dtype(step)
    for t, p in enumerate(base):
        m = p.size
        stacked = np.repeat(p.reshape(1, m), 2 * m, axis=0)
        idx = np.arange(m)
        stacked[idx, idx] += h
        stacked[m + idx, idx] -= h
        params = list(base)
        params[t] = stacked.reshape((2 * m,) + p.shape)
        values, _ = loss(_forward(net.spec, params, X)[0])
        diff = (values[:m] - values[m:]) / (2 * h)
        out.append(np.asarray(diff, dtype=np.float64).reshape(p.shape))
    return out


def grad_check(net: Network, X, loss, step: float = 1e-5, analytic=None,
               dtype=np.float64) -> float:
    """Max relative error between analytic and central-difference gradients.

    The error per entry is ``|a - n| / max(|a|, |n|, 1e-12)``. ``analytic``
    may override the analytic gradients (fault-injection tests); ``dtype``
    selects the precision of the finite-difference side only.
    """
    if analytic is None:
        _, analytic = loss_gradients(net, X, loss)
    numeric = numeric_gradients(net, X, loss, step, dtype)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-12)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def relu_margin(net: Network, X) -> float:
    """Smallest |pre-activation| over all ReLU units for the batch ``X``."""
    X, _ = _as_batch(net, X)
    if net.spec.hidden_dim == 0 or net.spec.activation != "relu":
        return np.inf
    _, cache = _forward(net.spec, net.params, X, keep=True)
    pre = [cache[1]]
    for k in range(net.spec.block_count):
        pre += [cache[3 + 4 * k], cache[5 + 4 * k]]
    return float(min(np.abs(z).min() for z in pre))


# -- optimizer --------------------------------------------------------------

@dataclass
class Adam:
    """Adam state: step count and first/second moments per parameter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list, repr=False)
    v: list = field(default_factory=list, repr=False)

    @classmethod
    def for_network(cls, net: Network, **kwargs) -> "Adam":
        return cls(m=[np.zeros_like(p) for p in net.params],
                   v=[np.zeros_like(p) for p in net.params], **kwargs)


def adam_step(state: Adam, net: Network, grads) -> tuple[Network, Adam]:
    """Apply one bias-corrected Adam update in place and return ``(net, state)``."""
    if net.frozen:
        raise FrozenNetworkError("network is frozen; parameter updates are rejected")
    if len(grads) != len(net.params) or len(state.m) != len(net.params):
        raise ValueError("gradient / optimizer state does not match network parameters")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(net.params, grads, state.m, state.v):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return net, state
