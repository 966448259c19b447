from dataclasses import replace

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from hyperribbon import (
    SGD,
    ConfigError,
    DatasetSpec,
    KernelSpec,
    NumericalError,
    TrainConfig,
    WeightDecay,
    analytic_pca,
    analytic_pca_gram,
    build_gram,
    continuous_transform,
    empirical_pca,
    empirical_pca_streamed,
    gd_ensemble,
    hyper_ribbon_dim,
    multi_kernel_pca,
    sgd_analytic_pca,
    sgd_ensemble,
    solve_dlyap,
    synthesize_dataset,
)
from hyperribbon.dynamics import TrajectoryEnsemble
from hyperribbon.manifold import (
    explained_variance,
    kt_diagonal,
    sgd_noise_gramian,
    sigma_w_eigenvalues,
    target_gramian,
)

from oracles import brute_force_pca_matrix, rel_fro, sgd_pca_matrix, truncated_lyapunov_sum


# ---------------------------------------------------------------- analytic PCA

def test_horizon_one_is_initial_covariance(sloppy):
    pca = analytic_pca(sloppy, TrainConfig(alpha=1.0, T=1))
    np.testing.assert_allclose(pca.lambda_P, sloppy.sigma_w_sq * sloppy.eigvals, rtol=1e-12)
    np.testing.assert_allclose(pca.lambda_sigma_w, sloppy.sigma_w_sq * sloppy.eigvals, rtol=1e-12)


def test_matches_direct_summation():
    ds = synthesize_dataset(DatasetSpec(n=20, d=35, c=0.3, sigma_star_sq=1.5, sigma_w_sq=0.4, seed=21))
    cfg = TrainConfig(alpha=0.8, T=50)
    ref = brute_force_pca_matrix(ds.K, ds.y, ds.sigma_w_sq, cfg.alpha, cfg.T)
    assert rel_fro(analytic_pca(ds, cfg).matrix, ref) <= 1e-10


def test_weight_decay_matches_direct_summation(small):
    lam = 0.1
    cfg = TrainConfig(alpha=0.8, T=40, method=WeightDecay(lam))
    Kl = small.K + lam * np.eye(small.n)
    # dynamics under the shifted operator, initial covariance from K itself
    ref = brute_force_pca_matrix(Kl, small.y, 0.0, cfg.alpha, cfg.T, init_cov=small.sigma_w_sq * small.K)
    assert rel_fro(analytic_pca(small, cfg).matrix, ref) <= 1e-10


def test_sigma_w_closed_form_matches_sum(sloppy):
    T, alpha = 37, 0.9
    q = 1 - alpha * sloppy.eigvals
    direct = sloppy.sigma_w_sq * sloppy.eigvals * np.array([np.sum(qi ** (2 * np.arange(T))) for qi in q])
    np.testing.assert_allclose(sigma_w_eigenvalues(sloppy.eigvals, alpha, T, sloppy.sigma_w_sq), direct, rtol=1e-12)


def test_kt_operator_range(sloppy):
    for T in (1, 5, 500):
        kt = kt_diagonal(sloppy.eigvals, 1.0, T)
        assert np.all(kt > 0) and np.all(kt <= 1.0 + 1e-15)
    np.testing.assert_allclose(kt_diagonal(sloppy.eigvals, 1.0, 1), 1.0)


def test_rejects_large_step(sloppy):
    with pytest.raises(ConfigError):
        analytic_pca(sloppy, TrainConfig(alpha=1.5, T=3))
    with pytest.raises(ConfigError):
        analytic_pca(sloppy, TrainConfig(alpha=0.5, T=3, method=SGD()))


def test_explained_variance_shape(sloppy):
    ev = analytic_pca(sloppy, TrainConfig(alpha=1.0, T=50)).explained_variance
    assert np.all(np.diff(ev) >= 0) and ev[-1] == 1.0


@given(seed=st.integers(0, 2**32), n=st.integers(5, 40), frac=st.floats(0.02, 1.0),
       c_frac=st.floats(0.0, 1.0), logT=st.floats(0.0, 4.0), ratio=st.floats(-2.0, 2.0))
def test_weyl_sandwich_and_rank_one_bound(seed, n, frac, c_frac, logT, ratio):
    c = 1.0 / n + (1.0 - 1.0 / n) * (0.01 + 0.98 * c_frac)
    ds = synthesize_dataset(DatasetSpec(n=n, d=2 * n, c=c, sigma_star_sq=1.0,
                                        sigma_w_sq=10.0 ** ratio, seed=seed))
    cfg = TrainConfig(alpha=frac, T=int(round(10 ** logT)))
    pca = analytic_pca(ds, cfg, keep_matrix=False)
    tol = 1e-9 * pca.lambda_P1[0]
    upper = pca.lambda_P1
    lower = np.maximum(np.append(upper[1:], 0.0), upper - pca.lambda_P2)
    assert np.all(pca.lambda_P <= upper + tol)
    assert np.all(pca.lambda_P >= lower - tol)
    y2 = ds.y @ ds.y
    assert pca.lambda_P2 <= y2 / (frac * cfg.T * ds.eigvals[-1]) ** 2 * (1 + 1e-9)
    for arr in (pca.lambda_P, pca.lambda_P1, pca.lambda_y, pca.lambda_sigma_w):
        assert np.all(arr >= 0)


def test_rank_one_term_decays_like_inverse_square(sloppy):
    y2 = sloppy.y @ sloppy.y
    prev = np.inf
    for T in (10, 100, 1000, 10_000):
        p2 = analytic_pca(sloppy, TrainConfig(alpha=1.0, T=T), keep_matrix=False).lambda_P2
        assert p2 * T ** 2 <= y2 / sloppy.eigvals[-1] ** 2
        assert p2 < prev
        prev = p2


# ---------------------------------------------------------------- empirical PCA

def _ensemble(R, T=None):
    R = np.asarray(R, dtype=np.float64)
    return TrajectoryEnsemble(R, TrainConfig(alpha=0.5, T=R.shape[1], N=R.shape[0]))


def test_identical_points_have_zero_spread():
    R = np.broadcast_to(np.array([1.0, -2.0, 3.0]), (4, 5, 3))
    pca = empirical_pca(_ensemble(R))
    assert np.all(pca.lambda_P == 0)


def test_single_point_is_degenerate():
    pca = empirical_pca(_ensemble(np.ones((1, 1, 3))))
    assert pca.degenerate and np.all(pca.matrix == 0)


def test_two_pass_centering_is_exact():
    rng = np.random.default_rng(1)
    R = 1e6 + rng.standard_normal((30, 20, 4))
    pca = empirical_pca(_ensemble(R))
    pts = R.reshape(-1, 4)
    ref = np.cov(pts.T, bias=True)
    np.testing.assert_allclose(pca.matrix, ref, rtol=1e-9)


def test_streamed_equals_materialized(small):
    cfg = TrainConfig(alpha=0.9, T=17, N=75)
    a = empirical_pca(gd_ensemble(small, cfg)).matrix
    b = empirical_pca_streamed(small, cfg, chunk_size=16).matrix
    assert rel_fro(b, a) <= 1e-10
    sgd = replace(cfg, method=SGD(batch_size=3))
    a = empirical_pca(sgd_ensemble(small, sgd)).matrix
    b = empirical_pca_streamed(small, sgd, chunk_size=7).matrix
    assert rel_fro(b, a) <= 1e-10


def test_monte_carlo_converges(sloppy):
    cfg = TrainConfig(alpha=1.0, T=50, N=20_000)
    exact = analytic_pca(sloppy, cfg).matrix
    assert rel_fro(empirical_pca_streamed(sloppy, cfg).matrix, exact) < 0.05


# ---------------------------------------------------------------- Lyapunov machinery

def test_dlyap_trivial_cases():
    Q = np.array([[2.0, 0.5], [0.5, 1.0]])
    np.testing.assert_array_equal(solve_dlyap(np.zeros(2), Q), Q)
    np.testing.assert_array_equal(solve_dlyap(np.array([0.3, 0.5]), np.zeros((2, 2))), np.zeros((2, 2)))
    with pytest.raises(NumericalError, match="non-contractive"):
        solve_dlyap(np.array([0.5, 1.0]), Q)


@given(seed=st.integers(0, 2**32), n=st.integers(2, 12))
def test_dlyap_against_oracles(seed, n):
    rng = np.random.default_rng(seed)
    q = rng.uniform(-0.9, 0.9, n)
    A = rng.standard_normal((n, n))
    Q = A @ A.T
    P = solve_dlyap(q, Q)
    Kd = np.diag(q)
    assert np.linalg.norm(Kd @ P @ Kd - P + Q) <= 1e-8 * np.linalg.norm(Q)
    assert rel_fro(P, truncated_lyapunov_sum(Kd, Q, 1000)) <= 1e-8
    assert rel_fro(P, scipy.linalg.solve_discrete_lyapunov(Kd, Q)) <= 1e-8


@given(seed=st.integers(0, 2**32), n=st.integers(2, 12))
def test_continuous_transform_residual(seed, n):
    rng = np.random.default_rng(seed)
    q = rng.uniform(0.0, 0.95, n)
    A = rng.standard_normal((n, n))
    Q = A @ A.T
    P = solve_dlyap(q, Q)
    kt, BB = continuous_transform(q, Q)
    Kt = np.diag(kt)
    assert np.linalg.norm(Kt @ P + P @ Kt.T + BB) <= 1e-8 * np.linalg.norm(BB)


def test_continuous_transform_edge():
    kt, _ = continuous_transform(np.array([0.0]), np.ones((1, 1)))
    assert kt[0] == -1.0


def test_cayley_spectrum_ratio_inequality():
    rng = np.random.default_rng(5)
    for _ in range(100):
        lam = np.sort(np.exp(-rng.uniform(0, 10, rng.integers(2, 30))))[::-1]
        lam /= lam[0]
        alpha = rng.uniform(1e-3, 1.0)
        q = 1 - alpha * lam
        kt, _ = continuous_transform(q, np.eye(lam.size))
        a, b = np.min(np.abs(kt)), np.max(np.abs(kt))
        # |kt| = alpha lambda / (2 - alpha lambda)
        assert b / a == pytest.approx(lam[0] / lam[-1] * (2 - alpha * lam[-1]) / (2 - alpha * lam[0]), rel=1e-9)
        assert b / a <= 2 * lam[0] / lam[-1] - 1 + 1e-9


def test_target_gramian_matches_geometric_form(sloppy):
    cfg = TrainConfig(alpha=0.9, T=60)
    ytil = sloppy.eigvecs.T @ sloppy.y
    G = target_gramian(sloppy.eigvals, ytil, cfg.alpha, cfg.T)
    pca = analytic_pca(sloppy, cfg, keep_matrix=False)
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(G))[::-1][:10], pca.lambda_y[:10],
                               rtol=1e-8, atol=1e-12 * pca.lambda_y[0])


# ---------------------------------------------------------------- SGD

def test_sgd_without_noise_equals_gd(sloppy):
    cfg = TrainConfig(alpha=0.9, T=40)
    a = analytic_pca(sloppy, cfg).matrix
    b = sgd_analytic_pca(sloppy, replace(cfg, method=SGD(noise=False))).matrix
    assert np.max(np.abs(a - b)) <= 1e-12 * np.max(np.abs(a))
    c = sgd_analytic_pca(sloppy, replace(cfg, method=SGD(batch_size=10 ** 16))).matrix
    assert np.max(np.abs(a - c)) <= 1e-12 * np.max(np.abs(a))


def test_noise_gramian_top_eigenvalue(sloppy):
    for alpha, B in ((0.5, 1), (0.9, 8)):
        p = sgd_noise_gramian(sloppy.eigvals, alpha, B)
        assert p[0] == pytest.approx(alpha / B / (2 - alpha), rel=1e-14)
        assert p[0] <= alpha / B


def test_sgd_analytic_matches_moment_recursion(small):
    cfg = TrainConfig(alpha=0.8, T=25, method=SGD(batch_size=3))
    ref = sgd_pca_matrix(small.K, small.y, small.sigma_w_sq, cfg.alpha, 3, cfg.T)
    assert rel_fro(sgd_analytic_pca(small, cfg).matrix, ref) <= 1e-10


def test_sgd_analytic_matches_monte_carlo():
    ds = synthesize_dataset(DatasetSpec(n=20, d=40, c=0.25, sigma_star_sq=1.0, sigma_w_sq=0.5, seed=8))
    cfg = TrainConfig(alpha=0.8, T=20, N=10_000, method=SGD(batch_size=2))
    exact = sgd_analytic_pca(ds, cfg)
    # batch means over disjoint shards give the Monte Carlo standard error
    shards = 20
    shard_cfg = replace(cfg, N=cfg.N // shards)
    mats = [empirical_pca_streamed(ds, shard_cfg, first=k * shard_cfg.N).matrix for k in range(shards)]
    full = empirical_pca_streamed(ds, cfg).matrix
    dirs = [exact.basis[:, k] for k in range(3)]
    stats = [np.trace] + [lambda M, v=v: v @ M @ v for v in dirs]
    for f in stats:
        vals = np.array([f(M) for M in mats])
        se = vals.std(ddof=1) / np.sqrt(shards)
        assert abs(f(full) - f(exact.matrix)) <= 3.0 * se


# ---------------------------------------------------------------- kernels

def test_single_kernel_matches_linear_model(sloppy):
    cfg = TrainConfig(alpha=1.0, T=50)
    g = build_gram(sloppy.X, KernelSpec("linear"))
    a = analytic_pca(sloppy, cfg).matrix
    assert rel_fro(analytic_pca_gram(g, sloppy.y, cfg, sloppy.sigma_w_sq).matrix, a) <= 1e-10
    assert rel_fro(multi_kernel_pca([g], sloppy.y, cfg, sloppy.sigma_w_sq).matrix, a) <= 1e-10


def _rbf_grams(Z, widths):
    scale = np.mean(np.sum(Z * Z, axis=1))
    return [build_gram(Z, KernelSpec("rbf", bandwidth=w * scale, normalize=True)) for w in widths]


def test_multi_kernel_matches_direct_summation(sloppy):
    grams = _rbf_grams(sloppy.X, (0.2, 0.5, 5.0))
    cfg = TrainConfig(alpha=0.9, T=30)
    sw = 0.3
    pca = multi_kernel_pca(grams, sloppy.y, cfg, sw)
    n = sloppy.n
    P1 = np.zeros((n, n))
    KT = np.zeros((n, n))
    for g in grams:
        Kd = np.eye(n) - cfg.alpha * g.K
        M = np.eye(n)
        C0 = sw * g.K + np.outer(sloppy.y, sloppy.y)
        for _ in range(cfg.T):
            P1 += M @ C0 @ M.T
            KT += M
            M = Kd @ M
    P1 /= len(grams) * cfg.T
    KT /= len(grams) * cfg.T
    v = KT @ sloppy.y
    assert rel_fro(pca.matrix, P1 - np.outer(v, v)) <= 1e-10
    assert pca.lambda_P2 == pytest.approx(v @ v, rel=1e-10)
    # the subtracted term is an outer product: one nonzero eigenvalue
    ev = np.linalg.eigvalsh(np.outer(v, v))
    assert np.sum(ev > 1e-12 * ev.max()) == 1


def test_multi_kernel_validation(sloppy):
    g = build_gram(sloppy.X, KernelSpec("linear"))
    small_g = build_gram(sloppy.X[:10], KernelSpec("linear"))
    with pytest.raises(ConfigError):
        multi_kernel_pca([g, small_g], sloppy.y, TrainConfig(alpha=1.0, T=3), 0.1)
    with pytest.raises(ConfigError):
        multi_kernel_pca([], sloppy.y, TrainConfig(alpha=1.0, T=3), 0.1)
    raw = build_gram(sloppy.X, KernelSpec("linear"))
    raw2 = build_gram(sloppy.X * 0.5, KernelSpec("linear"))
    with pytest.warns(UserWarning, match="normalized"):
        multi_kernel_pca([raw2], sloppy.y, TrainConfig(alpha=1.0, T=3), 0.1)
    assert raw.eigvals[0] == pytest.approx(1.0)


# ---------------------------------------------------------------- dimension

def test_dimension_examples():
    assert hyper_ribbon_dim([1.0, 0.0, 0.0]) == 1
    assert hyper_ribbon_dim(np.ones(20)) == 19
    assert hyper_ribbon_dim(0.1 ** np.arange(10)) == 2
    d = hyper_ribbon_dim(np.zeros(4))
    assert d == 0 and d.degenerate
    with pytest.raises(ConfigError):
        hyper_ribbon_dim([1.0], threshold=0.0)


# zeros or values well above the cumulative-sum rounding floor
_eig = st.one_of(st.just(0.0), st.floats(1e-3, 1e3))


@given(st.lists(_eig, min_size=1, max_size=30), st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_dimension_properties(vals, t1, t2):
    lam = np.sort(np.array(vals))[::-1]
    lo, hi = sorted((t1, t2))
    if lam.sum() == 0:
        return
    assert hyper_ribbon_dim(lam, lo) <= hyper_ribbon_dim(lam, hi)
    assert hyper_ribbon_dim(lam, 1.0) == np.count_nonzero(lam)


def test_explained_variance_all_zero():
    assert np.all(explained_variance(np.zeros(3)) == 0)


def test_time_summed_tail_grows_with_training_time():
    # the unnormalized sum T * P(T) gains spread in the tail as training proceeds
    ds = synthesize_dataset(DatasetSpec(n=50, d=100, c=0.1, sigma_star_sq=1.0, sigma_w_sq=1.0, seed=0))
    tails = [T * analytic_pca(ds, TrainConfig(alpha=1.0, T=T), keep_matrix=False).lambda_P[25:]
             for T in (5, 50, 500, 5000)]
    for a, b in zip(tails, tails[1:]):
        assert np.all(b >= a * (1 - 1e-9))
