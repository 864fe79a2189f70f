"""Confusion matrices, accuracy, macro-F1 and per-dataset report tables."""

from __future__ import annotations

import json
import os
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .corpus import DATASETS, TASK_LABELS
from .errors import DimensionError, EmptyInputError, UnknownLabelError
from .network import Model, logits

if TYPE_CHECKING:
    from .train import TaskData


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    counts: np.ndarray  # (C, C), rows gold, columns predicted
    classes: tuple

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if tuple(self.classes) != tuple(other.classes):
            raise DimensionError("cannot add confusion matrices over different classes")
        return ConfusionMatrix(self.counts + other.counts, self.classes)


def confusion_matrix(golds: Sequence, preds: Sequence, classes: Sequence) -> ConfusionMatrix:
    classes = tuple(classes)
    if len(golds) != len(preds):
        raise DimensionError(f"{len(golds)} gold labels but {len(preds)} predictions")
    index = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for g, p in zip(golds, preds):
        g = g.item() if isinstance(g, np.generic) else g
        p = p.item() if isinstance(p, np.generic) else p
        if g not in index or p not in index:
            raise UnknownLabelError(f"label {g if g not in index else p!r} not in {list(classes)}")
        counts[index[g], index[p]] += 1
    return ConfusionMatrix(counts, classes)


def block_diagonal(matrices: Sequence[ConfusionMatrix], prefixes: Sequence[str]) -> ConfusionMatrix:
    """Pool matrices over disjoint label sets into one block-diagonal matrix."""
    size = sum(len(m.classes) for m in matrices)
    counts = np.zeros((size, size), dtype=np.int64)
    classes = []
    at = 0
    for m, p in zip(matrices, prefixes):
        c = len(m.classes)
        counts[at:at + c, at:at + c] = m.counts
        classes += [f"{p}:{k}" for k in m.classes]
        at += c
    return ConfusionMatrix(counts, tuple(classes))


def per_class_f1(cm: ConfusionMatrix) -> np.ndarray:
    """F1 per class; any zero denominator yields 0 for that class."""
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    pred = c.sum(axis=0)
    gold = c.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(pred > 0, tp / pred, 0.0)
        recall = np.where(gold > 0, tp / gold, 0.0)
        denom = precision + recall
        return np.where(denom > 0, 2 * precision * recall / denom, 0.0)


def macro_f1(cm: ConfusionMatrix, weighted: bool = False) -> float:
    """Unweighted mean of per-class F1, or support-weighted when ``weighted``."""
    f1 = per_class_f1(cm)
    if not weighted:
        return float(f1.mean())
    support = cm.counts.sum(axis=1)
    if support.sum() == 0:
        return 0.0
    return float(np.dot(f1, support) / support.sum())


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise EmptyInputError("accuracy of an empty confusion matrix")
    return float(np.trace(cm.counts) / cm.total)


# --------------------------------------------------------------------------- model scoring


def predict_indices(model: Model, data: "TaskData", task: str, ids: Sequence[str]) -> np.ndarray:
    if not ids:
        return np.zeros(0, dtype=np.int64)
    z = logits(model, [data.features[u] for u in ids], tasks=[task])[task]
    return np.argmax(z, axis=1)


def score_task(model: Model, data: "TaskData", task: str, set_name: str) -> ConfusionMatrix:
    """Confusion matrix of ``task`` over the labeled utterances of one split set."""
    ids = data.labeled_ids(task, set_name)
    preds = predict_indices(model, data, task, ids)
    golds = [data.labels[task][u] for u in ids]
    return confusion_matrix(golds, list(preds), range(len(TASK_LABELS[task])))


@dataclass(frozen=True)
class ReportRow:
    dataset: str
    task: str
    mode: str
    accuracy: float
    macro_f1: float
    support: int


@dataclass
class EvalReport:
    rows: list[ReportRow]
    aggregate: dict[str, ReportRow]
    overall: dict[str, float]
    notes: list[str] = field(default_factory=list)

    COLUMNS = ("dataset", "task", "mode", "accuracy", "macro_f1", "support")

    def to_tsv(self) -> str:
        lines = ["\t".join(self.COLUMNS)]
        for r in self.rows + list(self.aggregate.values()):
            lines.append(f"{r.dataset}\t{r.task}\t{r.mode}\t{r.accuracy:.6f}\t{r.macro_f1:.6f}\t{r.support}")
        for key, value in self.overall.items():
            lines.append(f"# {key}\t{value:.6f}")
        for note in self.notes:
            lines.append(f"# note: {note}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "rows": [asdict(r) for r in self.rows],
            "aggregate": {t: asdict(r) for t, r in self.aggregate.items()},
            "overall": dict(self.overall),
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def write(self, out_dir: str | os.PathLike, stem: str = "report") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.tsv").write_text(self.to_tsv(), encoding="utf-8")
        (out / f"{stem}.json").write_text(self.to_json(), encoding="utf-8")


def _row(dataset, task, mode, cm: ConfusionMatrix) -> ReportRow:
    return ReportRow(dataset, task, mode, accuracy(cm), macro_f1(cm), cm.total)


def per_dataset_report(model: Model, data: "TaskData", set_name: str = "test") -> EvalReport:
    """One row per (dataset, task) cell with labeled utterances in ``set_name``.

    Each task also gets an ``ALL`` row computed from the pooled confusion
    matrix across datasets. ``overall`` carries both the unweighted mean of
    the per-task macro-F1 values and the macro-F1 of the block-diagonal
    pooling of all task matrices.
    """
    tasks = model.config.active_tasks
    mode = "STL" if len(tasks) == 1 else "MTL"
    classes = {t: range(len(TASK_LABELS[t])) for t in tasks}
    rows, notes = [], []
    pooled: dict[str, ConfusionMatrix] = {}
    for task in tasks:
        ids = data.labeled_ids(task, set_name)
        preds = dict(zip(ids, predict_indices(model, data, task, ids)))
        labeled_anywhere = {data.datasets.get(u) for u in data.labels[task]}
        pooled[task] = confusion_matrix([], [], classes[task])
        for dataset in DATASETS:
            cell = [u for u in ids if data.datasets.get(u) == dataset]
            if not cell:
                if dataset in labeled_anywhere:
                    notes.append(f"{dataset}/{task}: no labeled utterances in the {set_name} set")
                continue
            cm = confusion_matrix([data.labels[task][u] for u in cell], [preds[u] for u in cell], classes[task])
            rows.append(_row(dataset, task, mode, cm))
            pooled[task] = pooled[task] + cm
        other = [u for u in ids if data.datasets.get(u) not in DATASETS]
        if other:
            cm = confusion_matrix([data.labels[task][u] for u in other], [preds[u] for u in other], classes[task])
            rows.append(_row("unknown", task, mode, cm))
            pooled[task] = pooled[task] + cm
    aggregate = {}
    for task in tasks:
        if pooled[task].total == 0:
            notes.append(f"{task}: no labeled utterances in the {set_name} set")
            continue
        aggregate[task] = _row("ALL", task, mode, pooled[task])
    overall = {}
    if aggregate:
        overall["macro_f1_mean_of_tasks"] = float(np.mean([r.macro_f1 for r in aggregate.values()]))
        block = block_diagonal([pooled[t] for t in aggregate], list(aggregate))
        overall["macro_f1_pooled"] = macro_f1(block)
        overall["accuracy_pooled"] = accuracy(block)
    return EvalReport(rows, aggregate, overall, notes)
