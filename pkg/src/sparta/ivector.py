"""Total-variability i-vectors on UBM Baum-Welch statistics, plus external
d-/x-vector stores and their concatenation.
"""

from __future__ import annotations

import os
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import container
from .errors import DimensionError, EmptyInputError, FormatError, MissingEntryError, NumericError
from .features import (
    DEFAULT_VECTOR_DIMS,
    DVECTOR_DIM,
    IVECTOR_DIM,
    XVECTOR_DIM,
    FixedVector,
    canonical_vector_kind,
)
from .gmm import Gmm, posteriors

__all__ = [
    "BwStats", "TMatrix", "FixedVector", "baum_welch_stats", "train_total_variability",
    "extract_ivector", "tv_log_likelihood", "load_external_vectors", "save_vectors",
    "concat_vectors", "IVECTOR_DIM", "DVECTOR_DIM", "XVECTOR_DIM",
]


@dataclass(frozen=True, eq=False)
class BwStats:
    """Zeroth-order ``N`` (K,) and UBM-mean-centered first-order ``F`` (K, D) statistics."""

    N: np.ndarray
    F: np.ndarray

    @property
    def supervector(self) -> np.ndarray:
        return self.F.reshape(-1)


@dataclass(eq=False)
class TMatrix:
    T: np.ndarray  # (K * D, R)
    log_likelihoods: tuple[float, ...] = ()

    @property
    def rank(self) -> int:
        return self.T.shape[1]


def baum_welch_stats(gmm: Gmm, frames: np.ndarray) -> BwStats:
    gamma = posteriors(gmm, np.atleast_2d(frames))
    x = np.asarray(frames, dtype=np.float64).reshape(gamma.shape[0], -1)
    n = gamma.sum(axis=0)
    f = gamma.T @ x - n[:, None] * gmm.means
    return BwStats(n, f)


class _TvSystem:
    """Per-component ``T_k^T Sigma_k^-1 T_k`` blocks, reused across utterances."""

    def __init__(self, T: np.ndarray, gmm: Gmm):
        k, d = gmm.means.shape
        if T.ndim != 2 or T.shape[0] != k * d:
            raise DimensionError(f"T has shape {T.shape}, expected ({k * d}, R) for a {k}x{d} UBM")
        self.k, self.d, self.r = k, d, T.shape[1]
        self.T = T
        self.inv_sigma = 1.0 / gmm.variances.reshape(-1)
        tk = T.reshape(k, d, self.r)
        self.blocks = np.einsum("kdr,kd,kds->krs", tk, 1.0 / gmm.variances, tk)
        self.tt_isigma = (T * self.inv_sigma[:, None]).T  # (R, K*D)

    def posterior(self, stats: BwStats):
        if stats.N.shape != (self.k,) or stats.F.shape != (self.k, self.d):
            raise DimensionError(
                f"stats shapes N{stats.N.shape} F{stats.F.shape} do not match a {self.k}x{self.d} UBM")
        precision = np.eye(self.r) + np.tensordot(stats.N, self.blocks, axes=1)
        linear = self.tt_isigma @ stats.F.reshape(-1)
        try:
            factor = scipy.linalg.cho_factor(precision, lower=True)
        except np.linalg.LinAlgError as exc:
            raise NumericError("i-vector precision matrix is not positive definite") from exc
        mean = scipy.linalg.cho_solve(factor, linear)
        return mean, factor, linear


def extract_ivector(T: TMatrix | np.ndarray, gmm: Gmm, stats: BwStats, length_norm: bool = False) -> FixedVector:
    """Posterior mean ``(I + T' S^-1 N T)^-1 T' S^-1 F`` of the utterance factor."""
    mat = T.T if isinstance(T, TMatrix) else np.asarray(T, dtype=np.float64)
    w, _, _ = _TvSystem(mat, gmm).posterior(stats)
    if length_norm:
        norm = np.linalg.norm(w)
        if norm > 0:
            w = w / norm
    return FixedVector("i", w)


def tv_log_likelihood(stats: Sequence[BwStats], gmm: Gmm, T: TMatrix | np.ndarray) -> float:
    """T-dependent part of the marginal log-likelihood of the first-order stats.

    Sum over utterances of ``-0.5 log|L| + 0.5 b' L^-1 b`` where ``L`` is the
    posterior precision and ``b = T' S^-1 F``; EM training never decreases it.
    """
    mat = T.T if isinstance(T, TMatrix) else np.asarray(T, dtype=np.float64)
    system = _TvSystem(mat, gmm)
    total = 0.0
    for st in stats:
        mean, factor, linear = system.posterior(st)
        logdet = 2.0 * np.sum(np.log(np.diag(factor[0])))
        total += -0.5 * logdet + 0.5 * float(linear @ mean)
    return total


def train_total_variability(stats: Sequence[BwStats], gmm: Gmm, rank: int = IVECTOR_DIM,
                            iters: int = 10, seed: int = 0) -> TMatrix:
    """Fit the total-variability matrix by EM.

    Initialization draws ``T`` from a standard normal scaled by ``0.1`` times
    the UBM standard deviation of each supervector row. The M-step solves one
    R x R system per mixture component.
    """
    if len(stats) < 2:
        raise EmptyInputError("need at least two utterances to train T")
    k, d = gmm.means.shape
    if not 1 <= rank <= k * d:
        raise DimensionError(f"rank must lie in [1, {k * d}], got {rank}")
    rng = np.random.default_rng(seed)
    sigma = gmm.variances.reshape(-1)
    T = rng.standard_normal((k * d, rank)) * (0.1 * np.sqrt(sigma))[:, None]

    history = []
    for it in range(iters):
        system = _TvSystem(T, gmm)
        acc_a = np.zeros((k, rank, rank))
        acc_c = np.zeros((k * d, rank))
        ll = 0.0
        for st in stats:
            mean, factor, linear = system.posterior(st)
            cov = scipy.linalg.cho_solve(factor, np.eye(rank))
            second = cov + np.outer(mean, mean)
            acc_a += st.N[:, None, None] * second[None, :, :]
            acc_c += np.outer(st.F.reshape(-1), mean)
            ll += -0.5 * 2.0 * np.sum(np.log(np.diag(factor[0]))) + 0.5 * float(linear @ mean)
        history.append(ll)
        new_t = np.empty_like(T)
        for c in range(k):
            rows = slice(c * d, (c + 1) * d)
            try:
                new_t[rows] = scipy.linalg.solve(acc_a[c], acc_c[rows].T, assume_a="pos").T
            except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
                raise NumericError(f"singular accumulator for component {c} at iteration {it}") from exc
        if not np.all(np.isfinite(new_t)):
            raise NumericError(f"non-finite T at iteration {it}")
        T = new_t
    history.append(tv_log_likelihood(stats, gmm, T))
    return TMatrix(T, tuple(history))


# --------------------------------------------------------------------------- external vectors


def load_external_vectors(path: str | os.PathLike, kind: str, dims: Mapping[str, int] | None = None) -> dict:
    """Read a vector store (container kind 2) holding one embedding type.

    ``kind`` declares what the store holds (``"i"``, ``"d"``, ``"x"``, or a
    concatenation); every entry must match its width (d-vectors are 256).
    """
    dims = {**DEFAULT_VECTOR_DIMS, **(dims or {})}
    canonical = canonical_vector_kind(kind)
    if canonical != kind:
        raise DimensionError(f"vector kind must be given in canonical order, got {kind!r}")
    expected = sum(int(dims[p]) for p in kind)
    out = {}
    for key, (code, values) in container.read(path).items():
        if code != container.KIND_VECTOR:
            raise FormatError(f"entry {key!r} has kind code {code}, expected a fixed vector")
        if values.shape[0] != 1:
            raise FormatError(f"vector entry {key!r} has {values.shape[0]} rows, expected 1")
        if values.shape[1] != expected:
            raise DimensionError(f"{kind}-vector {key!r} has dim {values.shape[1]}, expected {expected}")
        out[key] = FixedVector(kind, values[0])
    return out


def save_vectors(path: str | os.PathLike, store: Mapping[str, FixedVector]) -> None:
    container.write(path, {k: (container.KIND_VECTOR, v.values.reshape(1, -1)) for k, v in store.items()})


def concat_vectors(kinds, stores: Mapping[str, Mapping[str, FixedVector]], utt_id: str) -> FixedVector:
    """Concatenate one utterance's vectors in canonical i, d, x order."""
    kind = canonical_vector_kind(kinds)
    parts = []
    for p in kind:
        if p not in stores:
            raise MissingEntryError(f"no {p}-vector store supplied")
        store = stores[p]
        if utt_id not in store:
            raise MissingEntryError(f"utterance {utt_id!r} missing from the {p}-vector store")
        parts.append(store[utt_id])
    if len(parts) == 1:
        return parts[0]
    return FixedVector(kind, np.concatenate([v.values for v in parts]))

