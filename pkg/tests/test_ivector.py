import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparta.errors import DimensionError, MissingEntryError
from sparta.features import FixedVector
from sparta.gmm import Gmm, fit_gmm, posteriors
from sparta.ivector import (
    IVECTOR_DIM,
    BwStats,
    TMatrix,
    baum_welch_stats,
    concat_vectors,
    extract_ivector,
    load_external_vectors,
    save_vectors,
    train_total_variability,
    tv_log_likelihood,
)


def small_ubm(rng, k=4, d=3):
    return Gmm(rng.dirichlet(np.ones(k)), 2 * rng.standard_normal((k, d)), rng.uniform(0.5, 1.5, (k, d)))


def loop_stats(gmm, frames):
    n = np.zeros(gmm.n_components)
    f = np.zeros_like(gmm.means)
    for x in frames:
        g = posteriors(gmm, x)
        for k in range(gmm.n_components):
            n[k] += g[k]
            f[k] += g[k] * (x - gmm.means[k])
    return n, f


def dense_ivector(T, gmm, stats):
    """Assemble the full (KD x KD) precision-weighted system and solve it directly."""
    k, d = gmm.means.shape
    n_big = np.diag(np.repeat(stats.N, d))
    s_inv = np.diag(1.0 / gmm.variances.reshape(-1))
    precision = np.eye(T.shape[1]) + T.T @ s_inv @ n_big @ T
    return np.linalg.solve(precision, T.T @ s_inv @ stats.F.reshape(-1))


def test_stats_match_loop_oracle(rng):
    g = small_ubm(rng)
    x = rng.standard_normal((40, 3))
    st_ = baum_welch_stats(g, x)
    n, f = loop_stats(g, x)
    np.testing.assert_allclose(st_.N, n, atol=1e-9)
    np.testing.assert_allclose(st_.F, f, atol=1e-9)
    assert st_.N.sum() == pytest.approx(40, abs=1e-6)


def test_frame_at_mean_has_zero_first_order():
    g = Gmm([0.5, 0.5], [[-20.0, 0.0], [20.0, 0.0]], np.ones((2, 2)))
    st_ = baum_welch_stats(g, np.array([[20.0, 0.0]]))
    assert st_.N[1] == pytest.approx(1.0)
    np.testing.assert_allclose(st_.F[1], 0.0, atol=1e-12)


def test_zero_stats_zero_ivector(rng):
    g = small_ubm(rng)
    T = rng.standard_normal((12, 5))
    w = extract_ivector(T, g, BwStats(rng.uniform(0, 5, 4), np.zeros((4, 3))))
    assert np.max(np.abs(w.values)) < 1e-12
    assert w.kind == "i" and w.dim == 5


def test_matches_dense_solve(rng):
    g = small_ubm(rng)
    T = rng.standard_normal((12, 6))
    stats = baum_welch_stats(g, rng.standard_normal((30, 3)))
    np.testing.assert_allclose(extract_ivector(T, g, stats).values, dense_ivector(T, g, stats), atol=1e-6)


def test_default_rank_is_400(rng):
    assert IVECTOR_DIM == 400
    g = Gmm(np.full(20, 0.05), rng.standard_normal((20, 24)), np.ones((20, 24)))
    stats = [baum_welch_stats(g, rng.standard_normal((30, 24))) for _ in range(3)]
    T = train_total_variability(stats, g, iters=1)
    assert T.rank == 400
    assert extract_ivector(T, g, stats[0]).dim == 400


def test_identical_utterances_identical_ivectors(rng):
    g = small_ubm(rng)
    x = rng.standard_normal((25, 3))
    stats = [baum_welch_stats(g, x), baum_welch_stats(g, x), baum_welch_stats(g, rng.standard_normal((25, 3)))]
    T = train_total_variability(stats, g, rank=2, iters=3)
    assert extract_ivector(T, g, stats[0]) == extract_ivector(T, g, stats[1])


def test_shape_mismatch(rng):
    g = small_ubm(rng)
    with pytest.raises(DimensionError):
        extract_ivector(rng.standard_normal((10, 2)), g, BwStats(np.ones(4), np.zeros((4, 3))))
    with pytest.raises(DimensionError):
        extract_ivector(rng.standard_normal((12, 2)), g, BwStats(np.ones(3), np.zeros((3, 3))))


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_linear_in_first_order_stats(seed, a, b):
    rng = np.random.default_rng(seed)
    g = small_ubm(rng)
    T = rng.standard_normal((12, 4))
    n = rng.uniform(0, 10, 4)
    f1, f2 = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    w = lambda f: extract_ivector(T, g, BwStats(n, f)).values
    np.testing.assert_allclose(w(a * f1 + b * f2), a * w(f1) + b * w(f2), atol=1e-8)


def synthetic_tv(rng, k=8, d=4, rank=4, n_utts=150, frames=60):
    ubm = Gmm(np.full(k, 1 / k), 4 * rng.standard_normal((k, d)), np.full((k, d), 0.3))
    T_true = rng.standard_normal((k * d, rank))
    ws, stats = [], []
    for _ in range(n_utts):
        w = rng.standard_normal(rank)
        shifted = ubm.means + (T_true @ w).reshape(k, d)
        comp = rng.integers(k, size=frames)
        x = shifted[comp] + np.sqrt(0.3) * rng.standard_normal((frames, d))
        ws.append(w)
        stats.append(baum_welch_stats(ubm, x))
    return ubm, T_true, np.array(ws), stats


def test_tv_objective_monotone(rng):
    ubm, _, _, stats = synthetic_tv(rng, n_utts=40)
    T = train_total_variability(stats, ubm, rank=4, iters=8, seed=1)
    assert len(T.log_likelihoods) == 9
    assert np.all(np.diff(T.log_likelihoods) >= -1e-6)
    assert T.log_likelihoods[-1] == pytest.approx(tv_log_likelihood(stats, ubm, T))


def test_tv_subspace_recovery(rng):
    ubm, T_true, ws, stats = synthetic_tv(rng)
    T = train_total_variability(stats, ubm, rank=4, iters=10, seed=0)
    est = np.array([extract_ivector(T, ubm, s).values for s in stats])
    # The latent is identifiable only up to an invertible transform; align with least squares.
    A, *_ = np.linalg.lstsq(est, ws, rcond=None)
    aligned = est @ A
    cos = np.sum(aligned * ws, axis=1) / (np.linalg.norm(aligned, axis=1) * np.linalg.norm(ws, axis=1))
    assert np.mean(np.abs(cos)) > 0.9


def test_tv_needs_two_utterances(rng):
    from sparta.errors import EmptyInputError

    g = small_ubm(rng)
    with pytest.raises(EmptyInputError):
        train_total_variability([baum_welch_stats(g, rng.standard_normal((5, 3)))], g, rank=2)


# --------------------------------------------------------------------------- external vectors


def test_external_store_round_trip(tmp_path, rng):
    store = {f"u{i}": FixedVector("d", rng.standard_normal(256).astype(np.float32)) for i in range(3)}
    save_vectors(tmp_path / "d.sprt", store)
    back = load_external_vectors(tmp_path / "d.sprt", "d")
    assert back == store
    assert all(v.dim == 256 for v in back.values())


def test_empty_store(tmp_path):
    save_vectors(tmp_path / "e.sprt", {})
    assert load_external_vectors(tmp_path / "e.sprt", "x") == {}


def test_wrong_dim_rejected(tmp_path, rng):
    save_vectors(tmp_path / "d.sprt", {"u": FixedVector("d", rng.standard_normal(200))})
    with pytest.raises(DimensionError):
        load_external_vectors(tmp_path / "d.sprt", "d")


def test_configured_x_dim(tmp_path, rng):
    save_vectors(tmp_path / "x.sprt", {"u": FixedVector("x", rng.standard_normal(128))})
    assert load_external_vectors(tmp_path / "x.sprt", "x", {"x": 128})["u"].dim == 128


def test_concat(rng):
    stores = {
        "i": {"u": FixedVector("i", rng.standard_normal(400))},
        "d": {"u": FixedVector("d", rng.standard_normal(256))},
    }
    idv = concat_vectors(["i", "d"], stores, "u")
    assert idv.kind == "id" and idv.dim == 656
    assert concat_vectors(["d", "i"], stores, "u") == idv
    np.testing.assert_array_equal(idv.values[:400], stores["i"]["u"].values)
    assert concat_vectors(["i"], stores, "u") is stores["i"]["u"]
    with pytest.raises(MissingEntryError):
        concat_vectors(["i", "d"], stores, "v")
    with pytest.raises(MissingEntryError):
        concat_vectors(["x"], stores, "u")


@given(st.sets(st.sampled_from("idx"), min_size=1), st.integers(1, 50), st.integers(1, 50), st.integers(1, 50))
def test_concat_dim_is_sum(parts, di, dd, dx):
    dims = {"i": di, "d": dd, "x": dx}
    stores = {p: {"u": FixedVector(p, np.ones(dims[p]))} for p in "idx"}
    assert concat_vectors(parts, stores, "u").dim == sum(dims[p] for p in parts)
