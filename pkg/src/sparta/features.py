"""Feature value types: variable-length frame matrices and fixed utterance vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError

MEL = "MEL"
MFCC = "MFCC"
SEQUENCE_KINDS = (MEL, MFCC)
SEQUENCE_DIMS = {MEL: 24, MFCC: 14}

# Canonical concatenation order is i, d, x.
VECTOR_PARTS = ("i", "d", "x")
VECTOR_KINDS = ("i", "d", "x", "id", "ix", "dx", "idx")
IVECTOR_DIM = 400
DVECTOR_DIM = 256
XVECTOR_DIM = 512
DEFAULT_VECTOR_DIMS = {"i": IVECTOR_DIM, "d": DVECTOR_DIM, "x": XVECTOR_DIM}


def canonical_vector_kind(parts) -> str:
    """``{"d", "i"}`` -> ``"id"``; rejects unknown or empty part sets."""
    parts = set(parts)
    if not parts or not parts <= set(VECTOR_PARTS):
        raise ConfigError(f"invalid vector parts {sorted(parts)!r}")
    return "".join(p for p in VECTOR_PARTS if p in parts)


def vector_dim(kind: str, dims=None) -> int:
    dims = {**DEFAULT_VECTOR_DIMS, **(dims or {})}
    if kind not in VECTOR_KINDS:
        raise ConfigError(f"unknown vector kind {kind!r}")
    return sum(int(dims[p]) for p in kind)


def feature_dim(kind: str, dims=None) -> int:
    """Per-frame (sequence kinds) or total (vector kinds) input width."""
    if kind in SEQUENCE_DIMS:
        return SEQUENCE_DIMS[kind]
    return vector_dim(kind, dims)


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Frame-by-dimension features of one utterance."""

    kind: str
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in SEQUENCE_DIMS:
            raise ConfigError(f"unknown feature kind {self.kind!r}")
        values = np.asarray(self.values)
        if values.ndim != 2 or values.shape[1] != SEQUENCE_DIMS[self.kind]:
            raise DimensionError(
                f"{self.kind} matrix must have {SEQUENCE_DIMS[self.kind]} columns, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise DimensionError(f"{self.kind} matrix contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other):
        if not isinstance(other, FeatureMatrix):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self.values, other.values)


@dataclass(frozen=True, eq=False)
class FixedVector:
    """Fixed-length utterance embedding (i/d/x-vector or a concatenation)."""

    kind: str
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in VECTOR_KINDS:
            raise ConfigError(f"unknown vector kind {self.kind!r}")
        values = np.asarray(self.values).reshape(-1)
        if values.size == 0:
            raise DimensionError("empty vector")
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other):
        if not isinstance(other, FixedVector):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self.values, other.values)
