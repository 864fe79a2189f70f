"""Small reverse-mode network engine on numpy.

Layers are declarative specs (:class:`Dense`, :class:`Conv1d`, :class:`Lstm`,
:class:`Pool`); parameters live in a :class:`ParamStore` keyed by
``"<prefix><layer index>.<name>"``. :func:`forward` returns the output and a
:class:`Tape`; :func:`backward` consumes the tape.

Shapes: fixed vectors are ``(batch, features)``; sequences are
``(batch, time, features)``. Conv1d uses stride 1 and "same" zero padding
(extra pad on the right for even filter sizes). LSTM gates are ordered
input, forget, cell, output with the forget bias initialized to 1.
"""

from __future__ import annotations

import math
import os
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import asdict, dataclass, field

import numpy as np

from . import container
from .errors import ConfigError, DimensionError, FormatError, NumericError, StaleTapeError

ACTIVATIONS = ("relu", "tanh", "sigmoid", "linear")


# --------------------------------------------------------------------------- specs


def _check_common(activation: str | None, dropout: float) -> None:
    if activation is not None and activation not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {activation!r}")
    if not 0.0 <= dropout < 1.0:
        raise ConfigError(f"dropout must lie in [0, 1), got {dropout}")


@dataclass(frozen=True)
class Dense:
    units: int
    activation: str = "linear"
    dropout: float = 0.0

    def __post_init__(self):
        if self.units < 1:
            raise ConfigError("Dense needs at least one unit")
        _check_common(self.activation, self.dropout)


@dataclass(frozen=True)
class Conv1d:
    num_filters: int
    filter_size: int
    activation: str = "relu"
    dropout: float = 0.0

    def __post_init__(self):
        if self.num_filters < 1 or self.filter_size < 1:
            raise ConfigError("Conv1d needs positive num_filters and filter_size")
        _check_common(self.activation, self.dropout)


@dataclass(frozen=True)
class Lstm:
    hidden: int
    bidirectional: bool = False
    dropout: float = 0.0

    def __post_init__(self):
        if self.hidden < 1:
            raise ConfigError("Lstm needs at least one hidden unit")
        _check_common(None, self.dropout)

    @property
    def output_dim(self) -> int:
        return self.hidden * (2 if self.bidirectional else 1)


@dataclass(frozen=True)
class Pool:
    mode: str = "mean"

    def __post_init__(self):
        if self.mode not in ("mean", "last"):
            raise ConfigError(f"pool mode must be 'mean' or 'last', got {self.mode!r}")


LayerSpec = Dense | Conv1d | Lstm | Pool
_SPEC_TYPES = {"dense": Dense, "conv1d": Conv1d, "lstm": Lstm, "pool": Pool}
_SPEC_NAMES = {v: k for k, v in _SPEC_TYPES.items()}


def spec_to_dict(spec: LayerSpec) -> dict:
    return {"type": _SPEC_NAMES[type(spec)], **asdict(spec)}


def spec_from_dict(obj: Mapping) -> LayerSpec:
    obj = dict(obj)
    kind = obj.pop("type", None)
    if kind not in _SPEC_TYPES:
        raise ConfigError(f"unknown layer type {kind!r}")
    try:
        return _SPEC_TYPES[kind](**obj)
    except TypeError as exc:
        raise ConfigError(f"bad {kind} layer fields: {exc}") from exc


# --------------------------------------------------------------------------- parameters


class ParamStore:
    """Named parameter tensors plus a version counter bumped on every update."""

    def __init__(self, tensors: Mapping[str, np.ndarray] | None = None, seed: int = 0):
        self._tensors: dict[str, np.ndarray] = dict(tensors or {})
        self.seed = seed
        self.version = 0

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self._tensors[name] = value
        self.version += 1

    def __contains__(self, name) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def keys(self):
        return self._tensors.keys()

    def items(self):
        return self._tensors.items()

    def update(self, tensors: Mapping[str, np.ndarray]) -> None:
        self._tensors.update(tensors)
        self.version += 1

    def touch(self) -> None:
        self.version += 1

    def copy(self) -> "ParamStore":
        out = ParamStore({k: v.copy() for k, v in self._tensors.items()}, self.seed)
        return out

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self._tensors.items()}

    def equals(self, other: "ParamStore") -> bool:
        return self.keys() == other.keys() and all(np.array_equal(self[k], other[k]) for k in self)


def _uniform(rng, limit, shape, dtype):
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_params(stack: Sequence[LayerSpec], in_dim: int, rng: np.random.Generator | int,
                prefix: str = "", dtype=np.float32) -> tuple[dict[str, np.ndarray], int]:
    """Fresh parameters for ``stack`` fed with ``in_dim`` features; returns (tensors, out_dim).

    Dense/Conv1d weights ~ U(+-sqrt(3 / fan_in)) (unit-variance fan-in scaling),
    LSTM weights ~ U(+-1 / sqrt(hidden)); biases zero except the LSTM forget gate.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    out: dict[str, np.ndarray] = {}
    dim = in_dim
    for i, spec in enumerate(stack):
        name = f"{prefix}{i}."
        if isinstance(spec, Dense):
            out[name + "W"] = _uniform(rng, math.sqrt(3.0 / dim), (dim, spec.units), dtype)
            out[name + "b"] = np.zeros(spec.units, dtype=dtype)
            dim = spec.units
        elif isinstance(spec, Conv1d):
            fan_in = dim * spec.filter_size
            out[name + "W"] = _uniform(rng, math.sqrt(3.0 / fan_in), (spec.filter_size, dim, spec.num_filters), dtype)
            out[name + "b"] = np.zeros(spec.num_filters, dtype=dtype)
            dim = spec.num_filters
        elif isinstance(spec, Lstm):
            h = spec.hidden
            for suffix in ("", "_rev") if spec.bidirectional else ("",):
                out[name + "W" + suffix] = _uniform(rng, 1.0 / math.sqrt(h), (dim + h, 4 * h), dtype)
                b = np.zeros(4 * h, dtype=dtype)
                b[h:2 * h] = 1.0
                out[name + "b" + suffix] = b
            dim = spec.output_dim
        elif isinstance(spec, Pool):
            pass
        else:
            raise ConfigError(f"unknown layer spec {spec!r}")
    return out, dim


# --------------------------------------------------------------------------- activations


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "sigmoid":
        return _sigmoid(z)
    return z


def _activation_grad(z: np.ndarray, y: np.ndarray, kind: str) -> np.ndarray | float:
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    if kind == "tanh":
        return 1 - y * y
    if kind == "sigmoid":
        return y * (1 - y)
    return 1.0


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # Split by sign so exp never overflows.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _dropout_mask(shape, p: float, train: bool, rng: np.random.Generator, dtype):
    if not train or p <= 0:
        return None
    keep = rng.random(shape) >= p
    return keep.astype(dtype) / dtype.type(1.0 - p)


# --------------------------------------------------------------------------- layer kernels


def _dense_forward(spec: Dense, P, name, x, train, rng):
    W, b = P[name + "W"], P[name + "b"]
    if x.shape[-1] != W.shape[0]:
        raise DimensionError(f"expected {W.shape[0]} input features, got {x.shape[-1]}")
    z = x @ W + b
    y = _activate(z, spec.activation)
    mask = _dropout_mask(y.shape, spec.dropout, train, rng, y.dtype)
    out = y * mask if mask is not None else y
    return out, (x, z, y, mask)


def _dense_backward(spec: Dense, P, name, cache, dout):
    x, z, y, mask = cache
    if mask is not None:
        dout = dout * mask
    dz = dout * _activation_grad(z, y, spec.activation)
    W = P[name + "W"]
    x2 = x.reshape(-1, x.shape[-1])
    dz2 = dz.reshape(-1, dz.shape[-1])
    grads = {name + "W": x2.T @ dz2, name + "b": dz2.sum(axis=0)}
    return dz @ W.T, grads


def _conv_pads(k: int) -> tuple[int, int]:
    left = (k - 1) // 2
    return left, k - 1 - left


def _conv_forward(spec: Conv1d, P, name, x, train, rng):
    W, b = P[name + "W"], P[name + "b"]
    if x.ndim != 3 or x.shape[2] != W.shape[1]:
        raise DimensionError(f"expected (batch, time, {W.shape[1]}) input, got {x.shape}")
    k = spec.filter_size
    left, right = _conv_pads(k)
    xp = np.pad(x, ((0, 0), (left, right), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)  # (B, T, C, k)
    z = np.einsum("btck,kcf->btf", windows, W, optimize=True) + b
    y = _activate(z, spec.activation)
    mask = _dropout_mask(y.shape, spec.dropout, train, rng, y.dtype)
    out = y * mask if mask is not None else y
    return out, (x.shape, windows, z, y, mask)


def _conv_backward(spec: Conv1d, P, name, cache, dout):
    x_shape, windows, z, y, mask = cache
    if mask is not None:
        dout = dout * mask
    dz = dout * _activation_grad(z, y, spec.activation)
    W = P[name + "W"]
    k = spec.filter_size
    left, _ = _conv_pads(k)
    bsz, t, c = x_shape
    grads = {
        name + "W": np.einsum("btck,btf->kcf", windows, dz, optimize=True),
        name + "b": dz.sum(axis=(0, 1)),
    }
    dxp = np.zeros((bsz, t + k - 1, c), dtype=dz.dtype)
    for j in range(k):
        dxp[:, j:j + t, :] += dz @ W[j].T
    return dxp[:, left:left + t, :], grads


def _lstm_run(W, b, x):
    bsz, steps, _ = x.shape
    h_dim = W.shape[1] // 4
    h = np.zeros((bsz, h_dim), dtype=x.dtype)
    c = np.zeros_like(h)
    hs = np.empty((bsz, steps, h_dim), dtype=x.dtype)
    cache = []
    for t in range(steps):
        xh = np.concatenate([x[:, t], h], axis=1)
        a = xh @ W + b
        i = _sigmoid(a[:, :h_dim])
        f = _sigmoid(a[:, h_dim:2 * h_dim])
        g = np.tanh(a[:, 2 * h_dim:3 * h_dim])
        o = _sigmoid(a[:, 3 * h_dim:])
        c_prev = c
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[:, t] = h
        cache.append((xh, i, f, g, o, c_prev, tc))
    return hs, cache


def _lstm_unroll_backward(W, cache, dhs, in_dim):
    bsz, steps, h_dim = dhs.shape
    dW = np.zeros_like(W)
    db = np.zeros(W.shape[1], dtype=W.dtype)
    dx = np.empty((bsz, steps, in_dim), dtype=dhs.dtype)
    dh_next = np.zeros((bsz, h_dim), dtype=dhs.dtype)
    dc_next = np.zeros_like(dh_next)
    for t in reversed(range(steps)):
        xh, i, f, g, o, c_prev, tc = cache[t]
        dh = dhs[:, t] + dh_next
        do = dh * tc
        dc = dh * o * (1 - tc * tc) + dc_next
        da = np.concatenate(
            [dc * g * i * (1 - i), dc * c_prev * f * (1 - f), dc * i * (1 - g * g), do * o * (1 - o)], axis=1
        )
        dW += xh.T @ da
        db += da.sum(axis=0)
        dxh = da @ W.T
        dx[:, t] = dxh[:, :in_dim]
        dh_next = dxh[:, in_dim:]
        dc_next = dc * f
    return dx, dW, db


def _lstm_forward(spec: Lstm, P, name, x, train, rng):
    W = P[name + "W"]
    if x.ndim != 3 or x.shape[2] + spec.hidden != W.shape[0]:
        raise DimensionError(f"expected (batch, time, {W.shape[0] - spec.hidden}) input, got {x.shape}")
    hs, fwd_cache = _lstm_run(W, P[name + "b"], x)
    rev_cache = None
    if spec.bidirectional:
        hs_rev, rev_cache = _lstm_run(P[name + "W_rev"], P[name + "b_rev"], x[:, ::-1])
        hs = np.concatenate([hs, hs_rev[:, ::-1]], axis=2)
    mask = _dropout_mask(hs.shape, spec.dropout, train, rng, hs.dtype)
    out = hs * mask if mask is not None else hs
    return out, (x.shape, fwd_cache, rev_cache, mask)


def _lstm_backward(spec: Lstm, P, name, cache, dout):
    x_shape, fwd_cache, rev_cache, mask = cache
    if mask is not None:
        dout = dout * mask
    h = spec.hidden
    in_dim = x_shape[2]
    dx, dW, db = _lstm_unroll_backward(P[name + "W"], fwd_cache, dout[:, :, :h], in_dim)
    grads = {name + "W": dW, name + "b": db}
    if spec.bidirectional:
        dx_rev, dW_r, db_r = _lstm_unroll_backward(
            P[name + "W_rev"], rev_cache, np.ascontiguousarray(dout[:, ::-1, h:]), in_dim)
        dx = dx + dx_rev[:, ::-1]
        grads[name + "W_rev"] = dW_r
        grads[name + "b_rev"] = db_r
    return dx, grads


def _pool_forward(spec: Pool, P, name, x, train, rng):
    if x.ndim != 3:
        raise DimensionError(f"pooling expects (batch, time, features), got {x.shape}")
    y = x.mean(axis=1) if spec.mode == "mean" else x[:, -1]
    return y, x.shape


def _pool_backward(spec: Pool, P, name, cache, dout):
    bsz, steps, dim = cache
    if spec.mode == "mean":
        dx = np.broadcast_to(dout[:, None, :] / steps, cache).copy()
    else:
        dx = np.zeros(cache, dtype=dout.dtype)
        dx[:, -1] = dout
    return dx, {}


_KERNELS = {
    Dense: (_dense_forward, _dense_backward),
    Conv1d: (_conv_forward, _conv_backward),
    Lstm: (_lstm_forward, _lstm_backward),
    Pool: (_pool_forward, _pool_backward),
}


# --------------------------------------------------------------------------- forward / backward


@dataclass
class Tape:
    stack: tuple
    prefix: str
    params: ParamStore
    version: int
    caches: list = field(default_factory=list)
    input_dtype: np.dtype | None = None


def _param_dtype(stack, params, prefix):
    for i in range(len(stack)):
        key = f"{prefix}{i}.W"
        if key in params:
            return params[key].dtype
    return np.dtype(np.float64)


def forward(stack: Sequence[LayerSpec], params: ParamStore, x, train_mode: bool = False,
            seed: int | np.random.Generator = 0, prefix: str = "") -> tuple[np.ndarray, Tape]:
    """Run ``stack`` on ``x``; dropout masks are drawn from ``seed`` only in train mode."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    stack = tuple(stack)
    x = np.asarray(x, dtype=_param_dtype(stack, params, prefix))
    tape = Tape(stack, prefix, params, params.version, input_dtype=x.dtype)
    for i, spec in enumerate(stack):
        fwd, _ = _KERNELS[type(spec)]
        try:
            x, cache = fwd(spec, params, f"{prefix}{i}.", x, train_mode, rng)
        except DimensionError as exc:
            raise DimensionError(f"layer {i} ({type(spec).__name__}): {exc}") from exc
        tape.caches.append(cache)
    return x, tape


def backward(tape: Tape, upstream_grad) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Gradients of ``sum(upstream_grad * output)`` w.r.t. every parameter and the input."""
    if tape.params.version != tape.version:
        raise StaleTapeError("parameters changed since this tape was recorded")
    grads: dict[str, np.ndarray] = {}
    d = np.asarray(upstream_grad, dtype=tape.input_dtype)
    for i in reversed(range(len(tape.stack))):
        spec = tape.stack[i]
        _, bwd = _KERNELS[type(spec)]
        d, g = bwd(spec, tape.params, f"{tape.prefix}{i}.", tape.caches[i], d)
        grads.update(g)
    return grads, d


def relu_patterns(tape: Tape) -> list[np.ndarray]:
    """Boolean on/off pattern of every relu unit recorded in ``tape``."""
    out = []
    for spec, cache in zip(tape.stack, tape.caches):
        if isinstance(spec, Dense) and spec.activation == "relu":
            out.append(cache[1] > 0)
        elif isinstance(spec, Conv1d) and spec.activation == "relu":
            out.append(cache[2] > 0)
    return out


# --------------------------------------------------------------------------- loss


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits, label):
    """Cross-entropy of softmax(logits) against integer labels.

    For a 1-D ``logits`` and scalar ``label`` returns ``(loss, grad)`` with
    ``grad = softmax - onehot``. For a ``(B, C)`` batch the loss is the batch
    mean and the gradient is divided by ``B`` accordingly.
    """
    logits = np.asarray(logits)
    single = logits.ndim == 1
    z = logits[None, :] if single else logits
    labels = np.atleast_1d(np.asarray(label))
    n_classes = z.shape[1]
    if n_classes < 2:
        raise DimensionError("need at least two classes")
    if labels.shape != (z.shape[0],):
        raise DimensionError(f"{labels.shape[0]} labels for {z.shape[0]} logit rows")
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise DimensionError(f"label out of range [0, {n_classes})")
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z.shape[0])
    losses = log_norm - shifted[rows, labels]
    grad = np.exp(shifted - log_norm[:, None])
    grad[rows, labels] -= 1.0
    if single:
        return float(losses[0]), grad[0]
    return float(losses.mean()), grad / z.shape[0]


# --------------------------------------------------------------------------- optimizers


@dataclass
class Sgd:
    lr: float = 0.01
    momentum: float = 0.0
    decay: float = 0.0
    velocity: dict = field(default_factory=dict, repr=False)

    def effective_lr(self, t: int) -> float:
        return self.lr / (1.0 + self.decay * t)


@dataclass
class Adam:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay: float = 0.0
    m: dict = field(default_factory=dict, repr=False)
    v: dict = field(default_factory=dict, repr=False)

    def effective_lr(self, t: int) -> float:
        return self.lr / (1.0 + self.decay * t)


def make_optimizer(spec: Mapping | Sgd | Adam) -> Sgd | Adam:
    """Build an optimizer from ``{"name": "sgd"|"adam", ...hyperparameters}``."""
    if isinstance(spec, (Sgd, Adam)):
        return spec
    spec = dict(spec)
    name = spec.pop("name", "adam")
    cls = {"sgd": Sgd, "adam": Adam}.get(name)
    if cls is None:
        raise ConfigError(f"unknown optimizer {name!r}")
    try:
        opt = cls(**spec)
    except TypeError as exc:
        raise ConfigError(f"bad {name} optimizer fields: {exc}") from exc
    if opt.lr <= 0 or opt.decay < 0:
        raise ConfigError("optimizer needs lr > 0 and decay >= 0")
    return opt


def optimizer_to_dict(opt: Sgd | Adam) -> dict:
    if isinstance(opt, Sgd):
        return {"name": "sgd", "lr": opt.lr, "momentum": opt.momentum, "decay": opt.decay}
    return {"name": "adam", "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps,
            "decay": opt.decay}


def optimizer_step(params: ParamStore, grads: Mapping[str, np.ndarray], opt: Sgd | Adam, t: int) -> None:
    """Apply one update in place. ``t`` counts updates already applied (0 for the first).

    The learning rate at step ``t`` is ``lr / (1 + decay * t)``; Adam's bias
    correction uses ``t + 1``. Non-finite gradients abort before any tensor changes.
    """
    for name, g in grads.items():
        if name not in params:
            raise DimensionError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise DimensionError(f"gradient shape {g.shape} does not match {name} {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name!r}; update refused")
    lr = opt.effective_lr(t)
    updated = {}
    for name, g in grads.items():
        w = params[name]
        if isinstance(opt, Sgd):
            if opt.momentum:
                vel = opt.velocity.get(name)
                vel = opt.momentum * vel - lr * g if vel is not None else -lr * g
                opt.velocity[name] = vel
                updated[name] = (w + vel).astype(w.dtype)
            else:
                updated[name] = (w - lr * g).astype(w.dtype)
        else:
            m = opt.beta1 * opt.m.get(name, 0.0) + (1 - opt.beta1) * g
            v = opt.beta2 * opt.v.get(name, 0.0) + (1 - opt.beta2) * g * g
            opt.m[name], opt.v[name] = m, v
            step = t + 1
            m_hat = m / (1 - opt.beta1 ** step)
            v_hat = v / (1 - opt.beta2 ** step)
            updated[name] = (w - lr * m_hat / (np.sqrt(v_hat) + opt.eps)).astype(w.dtype)
    if any(not np.all(np.isfinite(u)) for u in updated.values()):
        raise NumericError("update produced non-finite parameters; update refused")
    params.update(updated)


# --------------------------------------------------------------------------- gradient check


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    skipped_kinks: int
    worst: str = ""


def _rel_error(a: float, n: float) -> float:
    return abs(a - n) / max(1e-8, abs(a) + abs(n))


def grad_check(stack: Sequence[LayerSpec], input_shape: Sequence[int], eps: float = 1e-3, seed: int = 0,
               max_coords: int | None = None, train_mode: bool = True, details: bool = False):
    """Compare analytic gradients with central differences in float64.

    Each numeric derivative combines central differences at ``eps`` and
    ``eps / 2`` by Richardson extrapolation, so its truncation error is
    O(eps^4) rather than O(eps^2).

    The scalar objective is ``sum(R * forward(x))`` for a fixed random ``R``;
    dropout masks are reused across evaluations by reseeding. Every parameter
    tensor and the input are checked (at most ``max_coords`` random
    coordinates per tensor when given). Where a relu unit changes state
    inside the +-eps interval the difference is retaken with eps shrunk
    tenfold, down to 1e-7; coordinates still straddling a kink are skipped
    and counted.

    Returns the maximum relative error ``|ga - gn| / max(1e-8, |ga| + |gn|)``,
    or a :class:`GradCheckResult` when ``details`` is true.
    """
    rng = np.random.default_rng(seed)
    input_shape = tuple(input_shape)
    tensors, _ = init_params(stack, input_shape[-1], rng, dtype=np.float64)
    # Non-zero biases so bias gradients are exercised away from the init point.
    for name, arr in tensors.items():
        if name.endswith("b") or name.endswith("b_rev"):
            tensors[name] = arr + rng.normal(0.0, 0.1, size=arr.shape)
    params = ParamStore(tensors)
    x = rng.standard_normal(input_shape)
    drop_seed = int(rng.integers(2 ** 31))
    out, tape = forward(stack, params, x, train_mode, drop_seed)
    weights = rng.standard_normal(out.shape)
    grads, dx = backward(tape, weights)
    base_pattern = relu_patterns(tape)

    def evaluate(inp):
        y, tp = forward(stack, params, inp, train_mode, drop_seed)
        return float(np.sum(weights * y)), relu_patterns(tp)

    def same_pattern(p):
        return all(np.array_equal(a, b) for a, b in zip(p, base_pattern))

    targets = [(name, tensors[name], grads[name]) for name in tensors] + [("input", x, dx)]
    worst, worst_name, checked, skipped = 0.0, "", 0, 0
    for name, arr, analytic in targets:
        flat = arr.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for idx in coords:
            orig = flat[idx]
            h = eps
            numeric = None
            while h >= 1e-7 * (1 - 1e-9):
                diffs, smooth = [], True
                for step in (h, h / 2):
                    flat[idx] = orig + step
                    f_plus, p_plus = evaluate(x)
                    flat[idx] = orig - step
                    f_minus, p_minus = evaluate(x)
                    flat[idx] = orig
                    smooth = smooth and same_pattern(p_plus) and same_pattern(p_minus)
                    diffs.append((f_plus - f_minus) / (2 * step))
                if smooth:
                    # Richardson extrapolation cancels the O(h^2) truncation term.
                    numeric = (4 * diffs[1] - diffs[0]) / 3
                    break
                h /= 10.0
            if numeric is None:
                skipped += 1
                continue
            err = _rel_error(float(analytic.reshape(-1)[idx]), numeric)
            checked += 1
            if err > worst:
                worst, worst_name = err, f"{name}[{idx}]"
    params.touch()
    if details:
        return GradCheckResult(worst, checked, skipped, worst_name)
    return worst


# --------------------------------------------------------------------------- checkpoints


def save_checkpoint(path: str | os.PathLike, params: ParamStore) -> None:
    """Write every tensor as a 2-D float32 entry (leading axes flattened)."""
    entries = {}
    for name, arr in params.items():
        two_d = arr.reshape(1, -1) if arr.ndim <= 1 else arr.reshape(-1, arr.shape[-1])
        entries[name] = (container.KIND_PARAM, two_d)
    container.write(path, entries)


def load_checkpoint(path: str | os.PathLike, shapes: Mapping[str, tuple[int, ...]]) -> ParamStore:
    """Read tensors back, restoring their shapes from ``shapes`` (usually a fresh model's)."""
    raw = container.read(path)
    if set(raw) != set(shapes):
        missing = sorted(set(shapes) - set(raw))
        extra = sorted(set(raw) - set(shapes))
        raise FormatError(f"checkpoint tensors do not match the model (missing {missing}, unexpected {extra})")
    tensors = {}
    for name, shape in shapes.items():
        code, values = raw[name]
        if code != container.KIND_PARAM:
            raise FormatError(f"entry {name!r} has kind code {code}, expected a parameter tensor")
        if values.size != int(np.prod(shape)):
            raise FormatError(f"tensor {name!r} has {values.size} values, expected shape {tuple(shape)}")
        tensors[name] = values.reshape(shape)
    return ParamStore(tensors)
