"""Acceptance suite: one test per criterion, each at its stated tolerance."""

import time

import numpy as np
import pytest

from dswtrack.evaluation import EvalConfig, FixedWeights, OracleWeights, circular_rmse, run_suite, timing_benchmark
from dswtrack.dswlearn import LogisticPredictor, cross_entropy_loss, loss_gradient, predict_weights
from dswtrack.filtering import GaussianBelief, ObservationFrame, compute_gains, run_filter
from dswtrack.model import ObservationStream, SystemModel, TransitionModel
from dswtrack.odsw import dirichlet_objective, odsw_dirichlet, stationarity_residual

from oracles import dense_gains, gain_system, random_spd, simplex_grid, textbook_kf


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def test_ekf_equivalence_single_stream():
    rng = np.random.default_rng(42)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(20):
        dx = (2, 4, 6)[i % 3]
        dy = int(rng.integers(1, dx + 1))
        F = rng.standard_normal((dx, dx))
        F *= 0.95 / max(1.0, np.abs(np.linalg.eigvals(F)).max())
        Q = random_spd(rng, dx, 0.1)
        H = rng.standard_normal((dy, dx))
        R = random_spd(rng, dy, 0.5)
        tm = TransitionModel(lambda x, F=F: F @ x, lambda x, F=F: F, Q, dx)
        model = SystemModel(tm, (ObservationStream(lambda x, H=H: H @ x, lambda x, H=H: H, R, "s", dy),))
        x = rng.standard_normal(dx)
        ys = []
        for _ in range(100):
            x = F @ x + rng.multivariate_normal(np.zeros(dx), Q)
            ys.append(H @ x + rng.multivariate_normal(np.zeros(dy), R))
        x0, P0 = rng.standard_normal(dx), np.eye(dx)
        beliefs = run_filter(GaussianBelief(x0, P0), [ObservationFrame((y,)) for y in ys], np.ones(1), model)
        means, covs = textbook_kf(x0, P0, F, Q, H, R, ys)
        for b, m, c in zip(beliefs, means, covs):
            worst = max(worst, _rel(b.mean, m), _rel(b.cov, c))
    elapsed = time.perf_counter() - t0
    assert worst <= 1e-10, worst
    assert elapsed < 10.0


def test_gain_system_oracle():
    rng = np.random.default_rng(42)
    t0 = time.perf_counter()
    worst_res = worst_diff = 0.0
    for _ in range(200):
        M = int(rng.integers(1, 5))
        dx = int(rng.integers(1, 11))
        dims = rng.integers(1, 5, size=M)
        sigma = random_spd(rng, dx)
        H = [rng.standard_normal((d, dx)) for d in dims]
        R = [random_spd(rng, d, 0.3) for d in dims]
        lam = rng.dirichlet(np.ones(M))
        A, rhs = gain_system(sigma, H, R, lam)
        Kd = np.vstack([k.T for k in dense_gains(sigma, H, R, lam)])
        for method in ("woodbury", "kron"):
            Kt = np.vstack([k.T for k in compute_gains(sigma, H, R, lam, method=method).gains])
            worst_res = max(worst_res, np.linalg.norm(A @ Kt - rhs) / (1 + np.linalg.norm(rhs)))
            worst_diff = max(worst_diff, np.linalg.norm(Kt - Kd) / (1 + np.linalg.norm(Kd)))
    elapsed = time.perf_counter() - t0
    assert worst_res <= 1e-8, worst_res
    assert worst_diff <= 1e-8, worst_diff
    assert elapsed < 30.0


def test_odsw_optimality():
    rng = np.random.default_rng(42)
    t0 = time.perf_counter()
    grids = {2: simplex_grid(2), 3: simplex_grid(3)}
    log_grids = {M: np.log(g).sum(axis=1) for M, g in grids.items()}
    for i in range(200):
        M = (2, 3)[i % 2]
        alpha = (1.1, 2.0, 5.0)[i % 3]
        l = rng.normal(0, 5, size=M)
        lam = odsw_dirichlet(l, alpha)
        best_grid = np.max(grids[M] @ l + (alpha - 1) * log_grids[M])
        assert dirichlet_objective(lam, l, alpha) >= best_grid - 1e-9
        assert stationarity_residual(lam, l, alpha) <= 1e-8
    lam = odsw_dirichlet([3.0, 0.0], 2.0)
    assert lam[0] == pytest.approx(0.7676, abs=1e-4)
    # 3 + 1/lam = 1/(1 - lam)  =>  3 lam^2 - lam - 1 = 0
    assert lam[0] == pytest.approx((1 + np.sqrt(13)) / 6, abs=1e-10)
    assert time.perf_counter() - t0 < 60.0


def test_concavity_and_weight_matrix_rank():
    rng = np.random.default_rng(42)
    h = 1e-3
    for _ in range(1000):
        M = int(rng.integers(2, 6))
        alpha = 1.0 + rng.uniform(0.01, 5.0)
        lam = rng.dirichlet(np.ones(M) * 2)
        lam = 0.9 * lam + 0.1 / M
        l = rng.normal(0, 5, size=M)
        d = rng.standard_normal(M)
        d -= d.mean()
        d /= np.abs(d).max()
        second = (dirichlet_objective(lam + h * d, l, alpha) - 2 * dirichlet_objective(lam, l, alpha)
                  + dirichlet_objective(lam - h * d, l, alpha))
        assert second < 0
    for _ in range(100):
        M = int(rng.integers(2, 5))
        dx = int(rng.integers(1, 9))
        lam = rng.dirichlet(np.ones(M))
        sigma = random_spd(rng, dx)
        W = np.kron(np.outer(np.ones(M), lam), sigma)
        assert np.linalg.matrix_rank(W) == dx


def test_logistic_gradient_matches_finite_differences():
    rng = np.random.default_rng(42)
    step = 1e-6
    for _ in range(100):
        n = int(rng.integers(1, 40))
        d = int(rng.integers(1, 6))
        Z = rng.standard_normal((n, d))
        t = rng.uniform(size=n)
        T = np.column_stack([t, 1 - t])
        p = LogisticPredictor(rng.normal(0, 0.5, d), rng.normal())
        gw, gb = loss_gradient(Z, p, T)

        def loss(w, b):
            return cross_entropy_loss(predict_weights(Z, LogisticPredictor(w, b)), T)

        fd_w = np.array([(loss(p.w + step * e, p.b) - loss(p.w - step * e, p.b)) / (2 * step) for e in np.eye(d)])
        fd_b = (loss(p.w, p.b + step) - loss(p.w, p.b - step)) / (2 * step)
        g, fd = np.append(gw, gb), np.append(fd_w, fd_b)
        assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)


@pytest.fixture(scope="module")
def fusion_suite():
    t0 = time.perf_counter()
    methods = {
        "ekf-av": FixedWeights((0.5, 0.5)),
        "odsw-gauss": OracleWeights("gaussian"),
        "odsw-dir": OracleWeights("dirichlet"),
    }
    _, summaries = run_suite(["clean", "snr0"], methods, n_sequences=20, K=300, seed=0)
    return summaries, time.perf_counter() - t0


def test_fusion_benefit_trend(fusion_suite):
    s, elapsed = fusion_suite
    fixed_clean, fixed_bad = s[("ekf-av", "clean")].mean, s[("ekf-av", "snr0")].mean
    odsw_clean, odsw_bad = s[("odsw-dir", "clean")].mean, s[("odsw-dir", "snr0")].mean
    assert odsw_bad <= fixed_bad
    assert fixed_bad - fixed_clean > odsw_bad - odsw_clean
    assert elapsed < 120.0


def test_gaussian_dirichlet_parity(fusion_suite):
    s, _ = fusion_suite
    for cond in ("clean", "snr0"):
        g, d = s[("odsw-gauss", cond)].mean, s[("odsw-dir", cond)].mean
        assert abs(g - d) <= 0.10 * d


def test_timing_trend():
    t0 = time.perf_counter()
    small, large = timing_benchmark([(5, 1, 2), (100, 1, 2)], runs=25, steps=100)
    assert small.ratio_mean > large.ratio_mean, (small.ratio_mean, large.ratio_mean)
    assert time.perf_counter() - t0 < 300.0


def test_metric_unit_cases():
    tol = 1e-9
    assert abs(circular_rmse([np.deg2rad(359.0)], [np.deg2rad(1.0)]) - 2.0) <= tol
    rng = np.random.default_rng(42)
    truth = rng.uniform(-np.pi, np.pi, 100)
    est = truth + rng.normal(0, 0.2, 100)
    base = circular_rmse(est, truth)
    for shift in (2 * np.pi, -4 * np.pi, 10 * np.pi):
        assert abs(circular_rmse(est + shift, truth) - base) <= tol
    assert circular_rmse(truth + 2 * np.pi, truth) <= tol
    # grace period: steps 1..10 of 100 are ignored
    est = truth.copy()
    est[:10] += 1.0
    assert circular_rmse(est, truth, EvalConfig(0.1)) == 0.0
    est[10] += 1.0
    assert circular_rmse(est, truth, EvalConfig(0.1)) > 0.0
