"""Multi-task and single-task training with per-task batching, integer
balancing factors, sequential or shuffled scheduling, best-epoch selection on
dev macro-F1, and grid search over the network/training hyperparameters.
"""

from __future__ import annotations

import itertools
import json
import os
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .corpus import SPLITS, TASK_LABELS, TASKS, Corpus, SplitManifest
from .errors import ConfigError, DimensionError, DivergenceError, NumericError, TaskDataError
from .evaluation import macro_f1, score_task
from .network import Model, build_network, make_config, task_loss_and_grads
from .nn import make_optimizer, optimizer_step, optimizer_to_dict

MODES = ("sequential", "shuffled")


@dataclass
class TaskData:
    """Inputs, integer labels and split membership for a set of utterances.

    ``labels[task][utt_id]`` is a class index into ``TASK_LABELS[task]``;
    utterances without a label for a task are simply absent from that map.
    """

    features: Mapping[str, object]
    labels: Mapping[str, Mapping[str, int]]
    split: Mapping[str, str]
    datasets: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.labels = {t: dict(self.labels.get(t, {})) for t in TASKS}
        if isinstance(self.split, SplitManifest):
            self.split = self.split.assignment
        self._cache: dict = {}

    def labeled_ids(self, task: str, set_name: str) -> list[str]:
        """Sorted ids in ``set_name`` carrying a ``task`` label and a feature entry."""
        key = (task, set_name)
        if key not in self._cache:
            self._cache[key] = sorted(
                u for u in self.labels[task] if self.split.get(u) == set_name and u in self.features
            )
        return self._cache[key]

    @classmethod
    def from_corpus(cls, corpus: Corpus, split: SplitManifest | Mapping[str, str],
                    features: Mapping[str, object]) -> "TaskData":
        labels = {t: {} for t in TASKS}
        for rec in corpus:
            for t in TASKS:
                lab = rec.label(t)
                if lab is not None:
                    labels[t][rec.id] = TASK_LABELS[t].index(lab)
        return cls(features, labels, split, {rec.id: rec.dataset for rec in corpus})


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "sequential"
    batch_size: int = 32
    epochs: int = 20
    optimizer: Mapping = field(default_factory=lambda: {"name": "adam", "lr": 0.001})
    task_factors: Mapping[str, int] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "optimizer", dict(self.optimizer))
        object.__setattr__(self, "task_factors", dict(self.task_factors))

    def validate(self) -> "TrainConfig":
        if self.mode not in MODES:
            raise ConfigError(f"train.mode: {self.mode!r} not in {list(MODES)}")
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            raise ConfigError(f"train.batch_size: must be a positive integer, got {self.batch_size!r}")
        if not isinstance(self.epochs, int) or self.epochs < 1:
            raise ConfigError(f"train.epochs: must be >= 1, got {self.epochs!r}")
        for task, f in self.task_factors.items():
            if task not in TASKS:
                raise ConfigError(f"train.task_factors.{task}: unknown task")
            if not isinstance(f, int) or isinstance(f, bool) or f < 1:
                raise ConfigError(f"train.task_factors.{task}: factor must be an integer >= 1, got {f!r}")
        try:
            make_optimizer(self.optimizer)
        except ConfigError as exc:
            raise ConfigError(f"train.optimizer: {exc}") from exc
        return self

    def factor(self, task: str) -> int:
        return self.task_factors.get(task, 1)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "optimizer": optimizer_to_dict(make_optimizer(self.optimizer)),
            "task_factors": dict(sorted(self.task_factors.items())),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "TrainConfig":
        unknown = set(obj) - {"mode", "batch_size", "epochs", "optimizer", "task_factors", "seed"}
        if unknown:
            raise ConfigError(f"train: unknown keys {sorted(unknown)}")
        return cls(**obj).validate()


def _task_rng(seed: int, epoch: int, task: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, TASKS.index(task)]))


def make_task_batches(data: TaskData, task: str, batch_size: int, factor: int = 1, seed: int = 0,
                      epoch: int = 0, set_name: str = "train") -> list[list[str]]:
    """Labeled pool replicated ``factor`` times, shuffled, cut into batches (last one may be short)."""
    if factor < 1 or batch_size < 1:
        raise ConfigError("factor and batch_size must be >= 1")
    pool = data.labeled_ids(task, set_name)
    if not pool:
        raise TaskDataError(f"no labeled {task} utterances in the {set_name} set")
    samples = np.array(pool * factor, dtype=object)
    samples = samples[_task_rng(seed, epoch, task).permutation(len(samples))]
    return [list(samples[i:i + batch_size]) for i in range(0, len(samples), batch_size)]


def epoch_schedule(data: TaskData, tasks: Sequence[str], cfg: TrainConfig, epoch: int) -> list[tuple[str, list[str]]]:
    """(task, batch) pairs for one epoch.

    Both modes draw the same batches; sequential runs them task by task,
    shuffled interleaves the whole multiset in a seeded random order.
    """
    per_task = [(t, b) for t in tasks
                for b in make_task_batches(data, t, cfg.batch_size, cfg.factor(t), cfg.seed, epoch)]
    if cfg.mode == "shuffled":
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch, len(TASKS)]))
        per_task = [per_task[i] for i in rng.permutation(len(per_task))]
    return per_task


@dataclass
class EpochRecord:
    epoch: int
    train_loss: dict[str, float]
    dev_macro_f1: dict[str, float]
    score: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    # head_updates[head][task]: updates that touched ``head`` while training on ``task``.
    head_updates: dict[str, dict[str, int]] = field(default_factory=dict)

    @property
    def best_score(self) -> float:
        return self.epochs[self.best_epoch].score if self.epochs else float("nan")

    def to_dict(self) -> dict:
        return {
            "epochs": [asdict(e) for e in self.epochs],
            "best_epoch": self.best_epoch,
            "best_score": self.best_score,
            "head_updates": self.head_updates,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, obj: Mapping) -> "TrainHistory":
        return cls([EpochRecord(**e) for e in obj["epochs"]], obj["best_epoch"], obj.get("head_updates", {}))


def dev_scores(model: Model, data: TaskData, set_name: str = "dev") -> dict[str, float]:
    out = {}
    for task in model.config.active_tasks:
        if not data.labeled_ids(task, set_name):
            raise TaskDataError(f"no labeled {task} utterances in the {set_name} set")
        out[task] = macro_f1(score_task(model, data, task, set_name))
    return out


def _check_inputs(model: Model, data: TaskData) -> None:
    from .network import _unwrap

    for task in model.config.active_tasks:
        ids = data.labeled_ids(task, "train")
        if ids:
            try:
                _unwrap(model, data.features[ids[0]])
            except DimensionError as exc:
                raise DimensionError(f"training data does not match the model: {exc}") from exc


def train(model: Model, data: TaskData, cfg: TrainConfig) -> tuple[Model, TrainHistory]:
    """Train ``model`` (not modified) and return a copy holding the best epoch's parameters."""
    cfg.validate()
    tasks = model.config.active_tasks
    _check_inputs(model, data)
    work = model.copy()
    opt = make_optimizer(cfg.optimizer)
    history = TrainHistory(head_updates={h: {t: 0 for t in tasks} for h in tasks})
    heads = {h: [k for k in work.params if k.startswith(work.head_prefix(h))] for h in tasks}
    best_params, best_score = None, -np.inf
    step = 0
    for epoch in range(cfg.epochs):
        loss_sum = {t: 0.0 for t in tasks}
        count = {t: 0 for t in tasks}
        for b, (task, batch) in enumerate(epoch_schedule(data, tasks, cfg, epoch)):
            inputs = [data.features[u] for u in batch]
            labels = [data.labels[task][u] for u in batch]
            batch_seed = np.random.SeedSequence([cfg.seed, epoch, b, 1 + len(TASKS)])
            loss, grads = task_loss_and_grads(work, inputs, labels, task, seed=batch_seed.generate_state(1)[0])
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite {task} loss", epoch, b)
            # Only the shared trunk and this task's head receive the update.
            applied = {k: g for k, g in grads.items() if k.startswith("trunk.") or k in heads[task]}
            for h in tasks:
                if any(k in applied and np.any(applied[k]) for k in heads[h]):
                    history.head_updates[h][task] += 1
            try:
                optimizer_step(work.params, applied, opt, step)
            except NumericError as exc:
                raise DivergenceError(str(exc), epoch, b) from exc
            step += 1
            loss_sum[task] += loss * len(batch)
            count[task] += len(batch)
        dev = dev_scores(work, data)
        score = float(np.mean([dev[t] for t in tasks]))
        history.epochs.append(EpochRecord(epoch, {t: loss_sum[t] / count[t] for t in tasks}, dev, score))
        if score > best_score:
            best_score, best_params = score, work.params.copy()
            history.best_epoch = epoch
    return Model(model.config, best_params), history


# --------------------------------------------------------------------------- grid search

NETWORK_KEYS = ("feature", "trunk", "layers", "hidden", "activation", "dropout", "filters", "filter_size",
                "bidirectional", "pool", "head_hidden", "head_layers", "head_activation", "head_dropout")
TRAIN_KEYS = ("mode", "batch_size", "epochs", "optimizer", "lr", "decay", "momentum")


@dataclass(frozen=True)
class GridPoint:
    index: int
    values: dict
    network: object
    train: TrainConfig


@dataclass
class GridResult:
    point: GridPoint
    dev_macro_f1: dict[str, float]
    score: float
    best_epoch: int
    rank: int = 0


def grid_points(space: Mapping[str, Sequence], base_network: Mapping | None = None,
                base_train: TrainConfig = TrainConfig(), tasks: Sequence[str] = TASKS,
                vector_dims: Mapping[str, int] | None = None) -> list[GridPoint]:
    """Cartesian product of ``space`` in lexicographic order of the declared lists.

    Every point is built and validated up front, so an out-of-range value
    fails before any training starts.
    """
    for key, values in space.items():
        if key not in NETWORK_KEYS + TRAIN_KEYS:
            raise ConfigError(f"space.{key}: unknown hyperparameter")
        if isinstance(values, (str, bytes)) or not isinstance(values, Sequence) or not values:
            raise ConfigError(f"space.{key}: expected a non-empty list")
    keys = list(space)
    points = []
    for index, combo in enumerate(itertools.product(*(space[k] for k in keys))):
        values = dict(zip(keys, combo))
        net_kw = {**(base_network or {}), **{k: v for k, v in values.items() if k in NETWORK_KEYS}}
        net_kw.setdefault("feature", "idx")
        try:
            net = make_config(tasks=tasks, vector_dims=vector_dims, **net_kw)
        except ConfigError as exc:
            raise ConfigError(f"grid point {index} {values}: {exc}") from exc
        opt = dict(base_train.optimizer)
        for k in ("lr", "decay", "momentum"):
            if k in values:
                opt[k] = values[k]
        if "optimizer" in values:
            opt["name"] = values["optimizer"]
            if opt["name"] == "adam":
                opt.pop("momentum", None)
        tr = replace(base_train, optimizer=opt,
                     **{k: values[k] for k in ("mode", "batch_size", "epochs") if k in values})
        try:
            tr.validate()
        except ConfigError as exc:
            raise ConfigError(f"grid point {index} {values}: {exc}") from exc
        points.append(GridPoint(index, values, net, tr))
    return points


def grid_search(space: Mapping[str, Sequence], data: TaskData, budget: int | None = None,
                base_network: Mapping | None = None, base_train: TrainConfig = TrainConfig(),
                tasks: Sequence[str] = TASKS, seed: int = 0,
                vector_dims: Mapping[str, int] | None = None) -> list[GridResult]:
    """Train and score the first ``budget`` grid points; rank by dev score, ties by enumeration order."""
    points = grid_points(space, base_network, base_train, tasks, vector_dims)
    if budget is None:
        budget = len(points)
    if not 1 <= budget <= len(points):
        raise ConfigError(f"budget: must lie in [1, {len(points)}], got {budget}")
    results = []
    for point in points[:budget]:
        model = build_network(point.network, seed)
        _, hist = train(model, data, point.train)
        best = hist.epochs[hist.best_epoch]
        results.append(GridResult(point, best.dev_macro_f1, best.score, hist.best_epoch))
    results.sort(key=lambda r: (-r.score, r.point.index))
    for rank, r in enumerate(results, start=1):
        r.rank = rank
    return results


def format_grid_table(results: Sequence[GridResult], tasks: Sequence[str] = TASKS) -> str:
    keys = list(results[0].point.values) if results else []
    header = ["rank", "index"] + keys + [f"f1_{t}" for t in tasks] + ["score", "best_epoch"]
    lines = ["\t".join(header)]
    for r in results:
        cells = [str(r.rank), str(r.point.index)] + [str(r.point.values[k]) for k in keys]
        cells += [f"{r.dev_macro_f1[t]:.6f}" if t in r.dev_macro_f1 else "" for t in tasks]
        cells += [f"{r.score:.6f}", str(r.best_epoch)]
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def write_grid_table(path: str | os.PathLike, results: Sequence[GridResult], tasks: Sequence[str] = TASKS) -> None:
    Path(path).write_text(format_grid_table(results, tasks), encoding="utf-8")


__all__ = [
    "MODES", "SPLITS", "TaskData", "TrainConfig", "TrainHistory", "EpochRecord", "make_task_batches",
    "epoch_schedule", "train", "dev_scores", "grid_points", "grid_search", "GridResult", "format_grid_table",
    "write_grid_table",
]
