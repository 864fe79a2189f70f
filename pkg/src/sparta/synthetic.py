"""Seeded synthetic data: multi-task fixed vectors over a shared latent space,
toy corpora with per-dataset label coverage, and tone WAV files.

Used by the tests, the demos and the CLI walkthrough in the README.
"""

from __future__ import annotations

import os
from collections.abc import Mapping
from pathlib import Path

import numpy as np

from .corpus import DATASETS, TASK_LABELS, TASKS, Corpus, UtteranceRecord, write_manifest, write_wav
from .features import DEFAULT_VECTOR_DIMS, FixedVector, canonical_vector_kind
from .ivector import save_vectors
from .train import TaskData

# Which labels each corpus carries.
COVERAGE = {
    "KSUEmotion": ("gender", "emotion"),
    "ANAD": ("emotion",),
    "QCRI": ("dialect",),
    "SARA": ("gender", "dialect"),
    "MDAS": ("dialect",),
    "KSU": ("gender",),
}


def synthetic_corpus(n_speakers: int = 30, utts_per_speaker: int = 8, seed: int = 0,
                     datasets=DATASETS, audio_dir: str = "audio") -> Corpus:
    """Speakers spread round-robin over ``datasets``; labels follow :data:`COVERAGE`.

    Gender and dialect are fixed per speaker, emotion varies per utterance.
    """
    rng = np.random.default_rng(seed)
    records = []
    for s in range(n_speakers):
        dataset = datasets[s % len(datasets)]
        spk = f"{dataset}_spk{s:03d}"
        gender = TASK_LABELS["gender"][rng.integers(2)]
        dialect = TASK_LABELS["dialect"][rng.integers(5)]
        for u in range(utts_per_speaker):
            labels = {
                "gender": gender,
                "dialect": dialect,
                "emotion": TASK_LABELS["emotion"][rng.integers(6)],
            }
            keep = {t: labels[t] for t in COVERAGE[dataset]}
            uid = f"{spk}_u{u:02d}"
            records.append(UtteranceRecord(uid, dataset, spk, f"{audio_dir}/{uid}.wav", **keep))
    return Corpus(records)


def tone(freq: float, seconds: float = 0.5, amplitude: float = 0.5, sample_rate: int = 16000,
         noise: float = 0.0, rng: np.random.Generator | None = None) -> np.ndarray:
    t = np.arange(int(round(seconds * sample_rate))) / sample_rate
    x = amplitude * np.sin(2 * np.pi * freq * t)
    if noise:
        x = x + noise * (rng or np.random.default_rng(0)).standard_normal(x.shape)
    return np.clip(x, -1.0, 1.0)


def write_corpus_audio(corpus: Corpus, root: str | os.PathLike, manifest_name: str = "manifest.jsonl",
                       seed: int = 0, seconds: float = 0.4) -> Path:
    """Write one tone WAV per utterance (pitch depends on gender) plus the manifest; return its path."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    for rec in corpus:
        path = root / rec.audio_path
        path.parent.mkdir(parents=True, exist_ok=True)
        base = 120.0 if rec.gender == "M" else 220.0
        write_wav(path, tone(base * (1 + 0.1 * rng.random()), seconds, noise=0.01, rng=rng))
    manifest = root / manifest_name
    write_manifest(manifest, corpus)
    return manifest


class LatentTaskModel:
    """Class-dependent Gaussians in a shared latent space, projected into i/d/x embeddings.

    ``z = sum_t M_t[label_t] + noise``; embedding ``k`` is ``P_k z + eps``. All
    three labels shape every latent, so any projection carries every task.
    """

    def __init__(self, latent_dim: int = 16, dims: Mapping[str, int] | None = None, seed: int = 0,
                 class_scale: float = 1.0, latent_noise: float = 0.6, vector_noise: float = 0.05):
        rng = np.random.default_rng(seed)
        self.latent_dim = latent_dim
        self.dims = {**DEFAULT_VECTOR_DIMS, **(dims or {})}
        self.means = {t: class_scale * rng.standard_normal((len(TASK_LABELS[t]), latent_dim)) for t in TASKS}
        self.proj = {p: rng.standard_normal((self.dims[p], latent_dim)) / np.sqrt(latent_dim) for p in "idx"}
        self.latent_noise = latent_noise
        self.vector_noise = vector_noise

    def sample(self, labels: Mapping[str, int], rng: np.random.Generator) -> dict[str, np.ndarray]:
        z = sum(self.means[t][labels[t]] for t in TASKS)
        z = z + self.latent_noise * rng.standard_normal(self.latent_dim)
        return {p: self.proj[p] @ z + self.vector_noise * rng.standard_normal(self.dims[p]) for p in "idx"}


def multitask_vectors(n_per_split=(600, 150, 150), kind: str = "idx", seed: int = 0,
                      dims: Mapping[str, int] | None = None, label_fraction: float = 0.7,
                      model: LatentTaskModel | None = None) -> tuple[TaskData, dict[str, dict[str, FixedVector]]]:
    """Synthetic 3-task fixed-vector dataset.

    Each utterance draws all three class labels, and each label is kept with
    probability ``label_fraction`` (at least one is always kept), mimicking
    corpora that annotate only some tasks. Returns the :class:`TaskData` for
    ``kind`` plus the per-part stores ``{"i": {...}, "d": {...}, "x": {...}}``.
    """
    kind = canonical_vector_kind(kind)
    rng = np.random.default_rng(seed)
    gen = model or LatentTaskModel(dims=dims, seed=seed + 1)
    stores = {p: {} for p in "idx"}
    labels = {t: {} for t in TASKS}
    split, features, datasets = {}, {}, {}
    for set_name, n in zip(("train", "dev", "test"), n_per_split):
        for j in range(n):
            uid = f"{set_name}{j:05d}"
            true = {t: int(rng.integers(len(TASK_LABELS[t]))) for t in TASKS}
            keep = rng.random(len(TASKS)) < label_fraction
            if not keep.any():
                keep[rng.integers(len(TASKS))] = True
            for t, k in zip(TASKS, keep):
                if k:
                    labels[t][uid] = true[t]
            parts = gen.sample(true, rng)
            for p in "idx":
                stores[p][uid] = FixedVector(p, parts[p])
            features[uid] = np.concatenate([parts[p] for p in kind])
            split[uid] = set_name
            datasets[uid] = DATASETS[j % len(DATASETS)]
    return TaskData(features, labels, split, datasets), stores


def write_vector_stores(corpus: Corpus, root: str | os.PathLike, dims: Mapping[str, int] | None = None,
                        seed: int = 0, model: LatentTaskModel | None = None) -> dict[str, Path]:
    """Sample i/d/x embeddings for every utterance of ``corpus`` from its labels.

    Labels a corpus does not carry are drawn at random, so the embeddings
    still vary along every task. Returns ``{"i": path, "d": path, "x": path}``.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    gen = model or LatentTaskModel(dims=dims, seed=seed + 1)
    stores = {p: {} for p in "idx"}
    for rec in corpus:
        labels = {}
        for t in TASKS:
            lab = rec.label(t)
            labels[t] = TASK_LABELS[t].index(lab) if lab is not None else int(rng.integers(len(TASK_LABELS[t])))
        for p, v in gen.sample(labels, rng).items():
            stores[p][rec.id] = FixedVector(p, v)
    paths = {}
    for p in "idx":
        paths[p] = root / f"{p}vectors.sprt"
        save_vectors(paths[p], stores[p])
    return paths
