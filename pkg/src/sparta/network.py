"""Shared-trunk, multi-head classifier: input feature -> trunk -> one head per task.

Fixed-length vectors (i, d, x and their concatenations) feed a fully connected
trunk; MEL/MFCC sequences feed a CNN or LSTM trunk that ends in a time pooling
layer. Each active task owns a private stack of dense layers ending in logits;
heads never share parameters.
"""

from __future__ import annotations

import json
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from .corpus import TASK_LABELS, TASKS
from .errors import ConfigError, DimensionError
from .features import (
    DEFAULT_VECTOR_DIMS,
    SEQUENCE_KINDS,
    VECTOR_KINDS,
    FeatureMatrix,
    FixedVector,
    feature_dim,
)
from .nn import (
    Conv1d,
    Dense,
    LayerSpec,
    Lstm,
    ParamStore,
    Pool,
    backward,
    forward,
    init_params,
    softmax,
    softmax_cross_entropy,
    spec_from_dict,
    spec_to_dict,
)

TRUNKS = ("FC", "CNN", "LSTM")
N_CLASSES = {task: len(labels) for task, labels in TASK_LABELS.items()}

# Search ranges per block.
LAYER_COUNTS = (1, 2, 4)
FC_UNITS = (16, 32, 64, 128, 256)
FC_ACTIVATIONS = ("relu", "tanh", "sigmoid")
CNN_FILTERS = (32, 64)
CNN_SIZES = (3, 4, 5)
CNN_ACTIVATIONS = ("relu", "tanh")
LSTM_HIDDEN = (16, 32, 64, 128)
TRUNK_DROPOUTS = (0.0, 0.1, 0.2, 0.3)
HEAD_HIDDEN = (16, 32, 64, 128)
HEAD_LAYERS = (1, 2)
HEAD_ACTIVATIONS = ("relu", "tanh", "sigmoid")
HEAD_DROPOUTS = (0.0, 0.1, 0.2, 0.3, 0.5)


def enumerate_variants() -> list[tuple[str, str]]:
    """All legal (feature, trunk) pairings: 7 vector kinds x FC plus {MEL, MFCC} x {CNN, LSTM}."""
    return [(kind, "FC") for kind in VECTOR_KINDS] + [
        (feat, trunk) for feat in SEQUENCE_KINDS for trunk in ("CNN", "LSTM")
    ]


@dataclass(frozen=True)
class HeadConfig:
    hidden: int = 64
    layers: int = 1
    activation: str = "relu"
    dropout: float = 0.0


def _require(value, allowed, path):
    if value not in allowed:
        raise ConfigError(f"{path}: {value!r} not in {list(allowed)}")


@dataclass(frozen=True)
class NetworkConfig:
    feature: str
    trunk: str
    trunk_layers: tuple[LayerSpec, ...]
    pool: str | None = "mean"
    heads: Mapping[str, HeadConfig] = field(default_factory=dict)
    active_tasks: tuple[str, ...] = TASKS
    vector_dims: Mapping[str, int] = field(default_factory=lambda: dict(DEFAULT_VECTOR_DIMS))

    def __post_init__(self):
        object.__setattr__(self, "trunk_layers", tuple(self.trunk_layers))
        object.__setattr__(self, "active_tasks", tuple(self.active_tasks))
        heads = {t: self.heads.get(t, HeadConfig()) for t in TASKS}
        object.__setattr__(self, "heads", heads)
        object.__setattr__(self, "vector_dims", {**DEFAULT_VECTOR_DIMS, **dict(self.vector_dims)})
        if self.trunk == "FC":
            object.__setattr__(self, "pool", None)

    @property
    def is_sequence(self) -> bool:
        return self.feature in SEQUENCE_KINDS

    @property
    def input_dim(self) -> int:
        return feature_dim(self.feature, self.vector_dims)

    def validate(self) -> "NetworkConfig":
        """Raise :class:`ConfigError` (message starts with the field path) on any violation."""
        if self.feature not in VECTOR_KINDS + SEQUENCE_KINDS:
            raise ConfigError(f"feature: unknown feature {self.feature!r}")
        _require(self.trunk, TRUNKS, "trunk")
        if (self.feature, self.trunk) not in enumerate_variants():
            raise ConfigError(
                f"feature/trunk: {self.feature} features cannot feed a {self.trunk} trunk "
                "(fixed vectors pair with FC, MEL/MFCC with CNN or LSTM)"
            )
        if not self.active_tasks:
            raise ConfigError("active_tasks: at least one task must be active")
        for i, task in enumerate(self.active_tasks):
            _require(task, TASKS, f"active_tasks[{i}]")
        if len(set(self.active_tasks)) != len(self.active_tasks):
            raise ConfigError("active_tasks: duplicate task")
        for part, dim in self.vector_dims.items():
            if part not in DEFAULT_VECTOR_DIMS or int(dim) < 1:
                raise ConfigError(f"vector_dims.{part}: invalid dimension {dim!r}")
        _require(len(self.trunk_layers), LAYER_COUNTS, "trunk_layers (count)")
        expected = {"FC": Dense, "CNN": Conv1d, "LSTM": Lstm}[self.trunk]
        for i, spec in enumerate(self.trunk_layers):
            path = f"trunk_layers[{i}]"
            if not isinstance(spec, expected):
                raise ConfigError(f"{path}: {self.trunk} trunk needs {expected.__name__} layers, got {spec!r}")
            _require(spec.dropout, TRUNK_DROPOUTS, f"{path}.dropout")
            if isinstance(spec, Dense):
                _require(spec.units, FC_UNITS, f"{path}.units")
                _require(spec.activation, FC_ACTIVATIONS, f"{path}.activation")
            elif isinstance(spec, Conv1d):
                _require(spec.num_filters, CNN_FILTERS, f"{path}.num_filters")
                _require(spec.filter_size, CNN_SIZES, f"{path}.filter_size")
                _require(spec.activation, CNN_ACTIVATIONS, f"{path}.activation")
            else:
                _require(spec.hidden, LSTM_HIDDEN, f"{path}.hidden")
        if self.is_sequence:
            _require(self.pool, ("mean", "last"), "pool")
        for task in self.active_tasks:
            head = self.heads[task]
            path = f"heads.{task}"
            _require(head.hidden, HEAD_HIDDEN, f"{path}.hidden")
            _require(head.layers, HEAD_LAYERS, f"{path}.layers")
            _require(head.activation, HEAD_ACTIVATIONS, f"{path}.activation")
            _require(head.dropout, HEAD_DROPOUTS, f"{path}.dropout")
        return self

    def trunk_stack(self) -> tuple[LayerSpec, ...]:
        if self.is_sequence:
            return self.trunk_layers + (Pool(self.pool),)
        return self.trunk_layers

    def head_stack(self, task: str) -> tuple[LayerSpec, ...]:
        h = self.heads[task]
        hidden = tuple(Dense(h.hidden, h.activation, h.dropout) for _ in range(h.layers))
        return hidden + (Dense(N_CLASSES[task], "linear"),)

    def to_dict(self) -> dict:
        out = {
            "feature": self.feature,
            "trunk": self.trunk,
            "trunk_layers": [spec_to_dict(s) for s in self.trunk_layers],
            "pool": self.pool,
            "heads": {t: vars(self.heads[t]).copy() for t in TASKS},
            "active_tasks": list(self.active_tasks),
        }
        # Only written when an embedding store uses a non-default width.
        if dict(self.vector_dims) != DEFAULT_VECTOR_DIMS:
            out["vector_dims"] = dict(self.vector_dims)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, obj: Mapping) -> "NetworkConfig":
        allowed = {"feature", "trunk", "trunk_layers", "pool", "heads", "active_tasks", "vector_dims"}
        unknown = set(obj) - allowed
        if unknown:
            raise ConfigError(f"network: unknown keys {sorted(unknown)}")
        for key in ("feature", "trunk", "trunk_layers"):
            if key not in obj:
                raise ConfigError(f"network.{key}: missing")
        heads = {}
        for task, h in dict(obj.get("heads", {})).items():
            try:
                heads[task] = HeadConfig(**h)
            except TypeError as exc:
                raise ConfigError(f"heads.{task}: {exc}") from exc
        return cls(
            feature=obj["feature"],
            trunk=obj["trunk"],
            trunk_layers=tuple(spec_from_dict(s) for s in obj["trunk_layers"]),
            pool=obj.get("pool", "mean"),
            heads=heads,
            active_tasks=tuple(obj.get("active_tasks", TASKS)),
            vector_dims=obj.get("vector_dims", DEFAULT_VECTOR_DIMS),
        )

    @classmethod
    def from_json(cls, text: str) -> "NetworkConfig":
        return cls.from_dict(json.loads(text))


def make_config(feature: str, trunk: str | None = None, *, layers: int = 1, hidden: int = 64,
                activation: str | None = None, dropout: float = 0.0, filters: int = 32,
                filter_size: int = 3, bidirectional: bool = False, pool: str = "mean",
                head_hidden: int = 64, head_layers: int = 1, head_activation: str = "relu",
                head_dropout: float = 0.0, tasks: Sequence[str] = TASKS,
                vector_dims: Mapping[str, int] | None = None) -> NetworkConfig:
    """Homogeneous-trunk config from flat hyperparameters (the grid-search vocabulary).

    ``hidden`` is the FC width or LSTM hidden size; ``filters``/``filter_size``
    apply to CNN trunks. ``trunk`` defaults to FC for vectors and CNN for sequences.
    """
    if trunk is None:
        trunk = "CNN" if feature in SEQUENCE_KINDS else "FC"
    act = activation or ("tanh" if trunk == "LSTM" else "relu")
    if trunk == "FC":
        spec = Dense(hidden, act, dropout)
    elif trunk == "CNN":
        spec = Conv1d(filters, filter_size, act, dropout)
    elif trunk == "LSTM":
        spec = Lstm(hidden, bidirectional, dropout)
    else:
        raise ConfigError(f"trunk: {trunk!r} not in {list(TRUNKS)}")
    head = HeadConfig(head_hidden, head_layers, head_activation, head_dropout)
    return NetworkConfig(
        feature=feature,
        trunk=trunk,
        trunk_layers=(spec,) * layers,
        pool=pool,
        heads={t: head for t in TASKS},
        active_tasks=tuple(tasks),
        vector_dims=vector_dims or DEFAULT_VECTOR_DIMS,
    ).validate()


@dataclass
class Model:
    config: NetworkConfig
    params: ParamStore

    def copy(self) -> "Model":
        return Model(self.config, self.params.copy())

    def head_prefix(self, task: str) -> str:
        return f"head.{task}."

    def parameter_groups(self) -> dict[str, list[str]]:
        """Parameter names by owner: ``"trunk"`` and each active task."""
        groups = {"trunk": [k for k in self.params if k.startswith("trunk.")]}
        for task in self.config.active_tasks:
            groups[task] = [k for k in self.params if k.startswith(self.head_prefix(task))]
        return groups


def expected_shapes(config: NetworkConfig) -> dict[str, tuple[int, ...]]:
    """Parameter shapes implied by ``config`` alone."""
    return {k: v.shape for k, v in _init_tensors(config, 0, np.float32).items()}


def _init_tensors(config: NetworkConfig, seed: int, dtype) -> dict[str, np.ndarray]:
    ss = np.random.SeedSequence(seed)
    trunk_seed, *head_seeds = ss.spawn(1 + len(TASKS))
    tensors, width = init_params(config.trunk_stack(), config.input_dim,
                                 np.random.default_rng(trunk_seed), "trunk.", dtype)
    for task, hs in zip(TASKS, head_seeds):
        if task in config.active_tasks:
            head, _ = init_params(config.head_stack(task), width, np.random.default_rng(hs),
                                  f"head.{task}.", dtype)
            tensors.update(head)
    return tensors


def build_network(config: NetworkConfig, seed: int = 0, dtype=np.float32) -> Model:
    """Materialize trunk parameters plus one head per active task."""
    config.validate()
    return Model(config, ParamStore(_init_tensors(config, seed, dtype), seed))


# --------------------------------------------------------------------------- running


def _unwrap(model: Model, item) -> np.ndarray:
    cfg = model.config
    if isinstance(item, (FeatureMatrix, FixedVector)):
        if item.kind != cfg.feature:
            raise DimensionError(f"model expects {cfg.feature} features, got {item.kind}")
        item = item.values
    arr = np.asarray(item)
    if cfg.is_sequence:
        if arr.ndim != 2 or arr.shape[1] != cfg.input_dim:
            raise DimensionError(f"expected (frames, {cfg.input_dim}) {cfg.feature} input, got {arr.shape}")
    elif arr.shape != (cfg.input_dim,):
        raise DimensionError(f"expected a {cfg.input_dim}-dim {cfg.feature} vector, got shape {arr.shape}")
    return arr


def _groups(model: Model, inputs) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a batch into (indices, stacked array) groups; sequences group by length."""
    if isinstance(inputs, np.ndarray) and not model.config.is_sequence and inputs.ndim == 2:
        if inputs.shape[1] != model.config.input_dim:
            raise DimensionError(f"expected {model.config.input_dim} input features, got {inputs.shape[1]}")
        return [(np.arange(inputs.shape[0]), inputs)]
    arrays = [_unwrap(model, x) for x in inputs]
    if not model.config.is_sequence:
        return [(np.arange(len(arrays)), np.stack(arrays))]
    by_len: dict[int, list[int]] = {}
    for i, a in enumerate(arrays):
        by_len.setdefault(a.shape[0], []).append(i)
    return [(np.array(idx), np.stack([arrays[i] for i in idx])) for _, idx in sorted(by_len.items())]


def task_loss_and_grads(model: Model, inputs, labels, task: str, seed: int = 0,
                        train_mode: bool = True) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy of one task's head on a batch, and gradients for every parameter.

    Only the trunk and ``task``'s head receive non-zero gradients; the other
    heads get explicit zero arrays.
    """
    if task not in model.config.active_tasks:
        raise ConfigError(f"task {task!r} is not active in this model")
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    cfg = model.config
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    total = len(labels)
    loss_sum = 0.0
    for idx, x in _groups(model, inputs):
        feats, trunk_tape = forward(cfg.trunk_stack(), model.params, x, train_mode, rng, "trunk.")
        logits, head_tape = forward(cfg.head_stack(task), model.params, feats, train_mode, rng,
                                    model.head_prefix(task))
        loss, dlogits = softmax_cross_entropy(logits.astype(np.float64), labels[idx])
        loss_sum += loss * len(idx)
        head_grads, dfeats = backward(head_tape, dlogits * (len(idx) / total))
        trunk_grads, _ = backward(trunk_tape, dfeats)
        for name, g in {**head_grads, **trunk_grads}.items():
            grads[name] += g
    return loss_sum / total, grads


def logits(model: Model, inputs, tasks: Sequence[str] | None = None) -> dict[str, np.ndarray]:
    """Inference-mode logits per active task, shape (N, classes)."""
    cfg = model.config
    tasks = cfg.active_tasks if tasks is None else tasks
    groups = _groups(model, inputs)
    n = sum(len(idx) for idx, _ in groups)
    out = {t: np.zeros((n, N_CLASSES[t])) for t in tasks}
    for idx, x in groups:
        feats, _ = forward(cfg.trunk_stack(), model.params, x, False, 0, "trunk.")
        for t in tasks:
            z, _ = forward(cfg.head_stack(t), model.params, feats, False, 0, model.head_prefix(t))
            out[t][idx] = z
    return out


def predict_proba(model: Model, inputs) -> dict[str, np.ndarray]:
    return {t: softmax(z, axis=1) for t, z in logits(model, inputs).items()}


def predict(model: Model, features) -> dict[str, np.ndarray]:
    """Class distribution for one utterance, keyed by active task."""
    return {t: p[0] for t, p in predict_proba(model, [features]).items()}


def with_tasks(config: NetworkConfig, tasks: Sequence[str]) -> NetworkConfig:
    return replace(config, active_tasks=tuple(tasks))
