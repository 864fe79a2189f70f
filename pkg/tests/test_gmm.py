import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparta.errors import DataError, DimensionError, EmptyInputError, InfeasibleError
from sparta.gmm import Gmm, fit_gmm, log_likelihood, posteriors


def naive_log_likelihood(gmm, frames):
    """Mean log density by direct summation of Gaussian pdfs."""
    total = 0.0
    for x in frames:
        p = 0.0
        for w, mu, var in zip(gmm.weights, gmm.means, gmm.variances):
            dens = 1.0
            for xd, md, vd in zip(x, mu, var):
                dens *= math.exp(-0.5 * (xd - md) ** 2 / vd) / math.sqrt(2 * math.pi * vd)
            p += w * dens
        total += math.log(p)
    return total / len(frames)


def two_clusters(rng, n=400):
    a = rng.standard_normal((n, 2)) + [-5, -5]
    b = rng.standard_normal((n, 2)) + [5, 5]
    return np.vstack([a, b])


def test_single_component_is_closed_form(rng):
    x = rng.standard_normal((500, 3)) * [1, 2, 3] + [1, -1, 0]
    g = fit_gmm(x, n_components=1, iters=1)
    np.testing.assert_allclose(g.means[0], x.mean(axis=0), atol=1e-10)
    np.testing.assert_allclose(g.variances[0], x.var(axis=0), rtol=1e-9)
    assert g.weights[0] == pytest.approx(1.0)


def test_two_cluster_recovery(rng):
    g = fit_gmm(two_clusters(rng), n_components=2, iters=20, seed=0)
    means = g.means[np.argsort(g.means[:, 0])]
    assert np.linalg.norm(means[0] - [-5, -5]) < 0.1
    assert np.linalg.norm(means[1] - [5, 5]) < 0.1


def test_em_monotone_over_20_iters(rng):
    x = np.vstack([rng.standard_normal((200, 4)) + c for c in (0, 3, -3)])
    g = fit_gmm(x, n_components=6, iters=20, seed=2)
    assert len(g.log_likelihoods) == 21
    assert np.all(np.diff(g.log_likelihoods) >= -1e-8)


def test_weights_simplex_and_variance_floor(rng):
    x = rng.standard_normal((300, 2))
    x[:50] = 0.0  # a degenerate clump
    g = fit_gmm(x, n_components=8, iters=15, seed=1)
    assert g.weights.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.all(g.variances >= 1e-4 * x.var(axis=0) * (1 - 1e-12))


def test_errors(rng):
    with pytest.raises(InfeasibleError):
        fit_gmm(rng.standard_normal((3, 2)), n_components=4)
    bad = rng.standard_normal((10, 2))
    bad[0, 0] = np.nan
    with pytest.raises(DataError):
        fit_gmm(bad, n_components=2)
    g = Gmm([1.0], [[0.0, 0.0]], [[1.0, 1.0]])
    with pytest.raises(DimensionError):
        posteriors(g, np.zeros(3))
    with pytest.raises(EmptyInputError):
        log_likelihood(g, np.zeros((0, 2)))


def test_posteriors_examples():
    one = Gmm([1.0], [[0.0]], [[1.0]])
    assert posteriors(one, np.array([3.0])).tolist() == [1.0]
    far = Gmm([0.5, 0.5], [[-10.0], [10.0]], [[1.0], [1.0]])
    assert posteriors(far, np.array([10.0]))[1] > 0.99
    np.testing.assert_allclose(posteriors(far, np.array([0.0])), [0.5, 0.5])


def test_standard_normal_at_mode():
    g = Gmm([1.0], [[0.0]], [[1.0]])
    assert log_likelihood(g, np.zeros((1, 1))) == pytest.approx(-0.5 * math.log(2 * math.pi))
    assert log_likelihood(g, np.zeros((1, 1))) == pytest.approx(-0.9189, abs=1e-4)


def test_duplicated_frames_same_mean(rng):
    g = fit_gmm(rng.standard_normal((50, 2)), 3, 5)
    x = rng.standard_normal((7, 2))
    assert log_likelihood(g, x) == pytest.approx(log_likelihood(g, np.vstack([x, x])), abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_matches_naive_density(seed):
    rng = np.random.default_rng(seed)
    k, d = 3, 2
    w = rng.dirichlet(np.ones(k))
    g = Gmm(w, rng.standard_normal((k, d)), rng.uniform(0.3, 2.0, (k, d)))
    x = rng.standard_normal((6, d))
    assert log_likelihood(g, x) == pytest.approx(naive_log_likelihood(g, x), abs=1e-9)


def test_save_load_round_trip(tmp_path, rng):
    g = fit_gmm(rng.standard_normal((100, 3)), 4, 5)
    g.save(tmp_path / "ubm.sprt")
    back = Gmm.load(tmp_path / "ubm.sprt")
    np.testing.assert_allclose(back.means, g.means, rtol=1e-6)
    np.testing.assert_allclose(back.variances, g.variances, rtol=1e-6)
    assert back.weights.sum() == pytest.approx(1.0)


def test_deterministic(rng):
    x = rng.standard_normal((200, 2))
    a, b = fit_gmm(x, 4, 5, seed=9), fit_gmm(x, 4, 5, seed=9)
    assert np.array_equal(a.means, b.means) and a.log_likelihoods == b.log_likelihoods


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.integers(1, 3))
def test_posteriors_on_simplex(seed, k, d):
    rng = np.random.default_rng(seed)
    g = Gmm(rng.dirichlet(np.ones(k)), 5 * rng.standard_normal((k, d)), rng.uniform(1e-4, 3, (k, d)))
    gamma = posteriors(g, 50 * rng.standard_normal((20, d)))
    assert np.all(np.isfinite(gamma)) and np.all(gamma >= 0)
    np.testing.assert_allclose(gamma.sum(axis=1), 1.0, atol=1e-12)
