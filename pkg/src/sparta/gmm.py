"""Diagonal-covariance Gaussian mixture trained by EM (the UBM behind i-vectors)."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import container
from .errors import DataError, DimensionError, EmptyInputError, FormatError, InfeasibleError

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(eq=False)
class Gmm:
    weights: np.ndarray    # (K,)
    means: np.ndarray      # (K, D)
    variances: np.ndarray  # (K, D)
    log_likelihoods: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.variances = np.atleast_2d(np.asarray(self.variances, dtype=np.float64))
        k, d = self.means.shape
        if self.weights.shape != (k,) or self.variances.shape != (k, d):
            raise DimensionError(
                f"inconsistent GMM shapes: weights {self.weights.shape}, means {self.means.shape}, "
                f"variances {self.variances.shape}"
            )
        if np.any(self.variances <= 0):
            raise DataError("GMM variances must be positive")

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def component_log_densities(self, frames: np.ndarray) -> np.ndarray:
        """``log w_k + log N(x_t; mu_k, diag(var_k))`` for every frame, shape (N, K)."""
        x = _check_frames(frames, self.dim)
        prec = 1.0 / self.variances
        # Expanded quadratic form avoids an N x K x D temporary.
        quad = (x ** 2) @ prec.T - 2.0 * x @ (self.means * prec).T + np.sum(self.means ** 2 * prec, axis=1)
        const = -0.5 * (self.dim * LOG_2PI + np.sum(np.log(self.variances), axis=1))
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return logw + const - 0.5 * quad

    def save(self, path: str | os.PathLike) -> None:
        blob = np.hstack([self.weights[:, None], self.means, self.variances])
        container.write(path, {"gmm": (container.KIND_GMM, blob)})

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Gmm":
        entries = container.read(path)
        if "gmm" not in entries or entries["gmm"][0] != container.KIND_GMM:
            raise FormatError(f"{path}: no GMM entry")
        blob = entries["gmm"][1].astype(np.float64)
        d = (blob.shape[1] - 1) // 2
        if blob.shape[1] != 2 * d + 1:
            raise FormatError(f"{path}: GMM blob width {blob.shape[1]} is not 1 + 2*D")
        weights = blob[:, 0] / blob[:, 0].sum()
        return cls(weights, blob[:, 1:1 + d], blob[:, 1 + d:])


def _check_frames(frames, dim: int | None = None) -> np.ndarray:
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise DimensionError(f"frames must be 2-D, got shape {x.shape}")
    if x.shape[0] == 0:
        raise EmptyInputError("empty frame set")
    if dim is not None and x.shape[1] != dim:
        raise DimensionError(f"frame dimension {x.shape[1]} does not match model dimension {dim}")
    if not np.all(np.isfinite(x)):
        raise DataError("frames contain NaN or infinite values")
    return x


def posteriors(gmm: Gmm, frames: np.ndarray) -> np.ndarray:
    """Component responsibilities, computed in log space.

    A single D-vector gives a (K,) simplex; an (N, D) matrix gives (N, K).
    """
    single = np.ndim(frames) == 1
    logp = gmm.component_log_densities(frames)
    gamma = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
    return gamma[0] if single else gamma


def log_likelihood(gmm: Gmm, frames: np.ndarray) -> float:
    """Mean per-frame log density."""
    return float(np.mean(logsumexp(gmm.component_log_densities(frames), axis=1)))


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers)


def fit_gmm(frames: np.ndarray, n_components: int = 64, iters: int = 20, seed: int = 0,
            variance_floor: float = 1e-4) -> Gmm:
    """Train a diagonal GMM with k-means++ seeding followed by ``iters`` EM steps.

    Variances are floored at ``variance_floor`` times the global per-dimension
    variance. ``Gmm.log_likelihoods`` holds the mean log-likelihood before each
    EM step and after the last one (``iters + 1`` values).
    """
    x = _check_frames(frames)
    n, d = x.shape
    if n < n_components:
        raise InfeasibleError(f"{n} frames cannot support {n_components} components")
    if n_components < 1 or iters < 0:
        raise InfeasibleError("need n_components >= 1 and iters >= 0")
    rng = np.random.default_rng(seed)
    # Work on centered data so E[x^2] - mu^2 keeps its precision.
    offset = x.mean(axis=0)
    x = x - offset
    global_var = x.var(axis=0)
    floor = variance_floor * np.where(global_var > 0, global_var, 1.0)

    model = Gmm(
        weights=np.full(n_components, 1.0 / n_components),
        means=_kmeans_pp(x, n_components, rng),
        variances=np.tile(np.maximum(global_var, floor), (n_components, 1)),
    )
    history = []
    for _ in range(iters):
        logp = model.component_log_densities(x)
        norm = logsumexp(logp, axis=1, keepdims=True)
        history.append(float(norm.mean()))
        gamma = np.exp(logp - norm)
        nk = gamma.sum(axis=0)
        alive = nk > 1e-10
        fk = gamma.T @ x
        sk = gamma.T @ (x ** 2)
        means = model.means.copy()
        variances = model.variances.copy()
        means[alive] = fk[alive] / nk[alive, None]
        variances[alive] = sk[alive] / nk[alive, None] - means[alive] ** 2
        variances = np.maximum(variances, floor)
        model = Gmm(nk / n, means, variances)
    history.append(log_likelihood(model, x))
    return Gmm(model.weights, model.means + offset, model.variances, history)
