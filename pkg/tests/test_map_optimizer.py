import math

import numpy as np
import pytest

from oracles import grid_argmax_gamma

from bnmf.core import ConfigError, Factorization, ModelConfig, mse, random_init
from bnmf.map_optimizer import (
    MapConfig,
    grad_U,
    grad_V,
    ig_mode,
    map_objective,
    projected_gradient_block,
    run_map,
    update_gamma_mode,
)
from bnmf.priors import (
    Exponential,
    GammaShape,
    HeavyTail,
    InverseGamma,
    PriorSpec,
    TruncatedGaussian,
    log_prior,
    scale_on_squared,
)

THREE_PRIORS = [Exponential(), TruncatedGaussian(a=0.5), HeavyTail(zeta=4.0)]


def _random_problem(rng, m1=7, m2=6, K=3, sigma2=0.04):
    U = rng.uniform(0, 2, (m1, 2))
    V = rng.uniform(0, 2, (m2, 2))
    Y = U @ V.T + rng.normal(0, math.sqrt(sigma2), (m1, m2))
    config = ModelConfig(m1=m1, m2=m2, sigma2=sigma2, K=K)
    return Y, config


class TestMapObjective:
    def test_lambda_zero_reduces_to_neg_log_prior(self):
        rng = np.random.default_rng(0)
        Y, _ = _random_problem(rng)
        config = ModelConfig(m1=7, m2=6, sigma2=0.04, K=3, lam=0.0)
        fac = random_init(Y, 3, rng)
        priors = PriorSpec(Exponential(), InverseGamma(1.0, 1.0))
        expected = -log_prior(fac, priors.element, priors.hyper)
        assert abs(map_objective(Y, fac, config, priors) - expected) < 1e-12

    def test_perfect_factorization_leaves_prior_only(self):
        rng = np.random.default_rng(1)
        fac = random_init(np.ones((5, 4)), 2, rng)
        Y = fac.U.values @ fac.V.values.T
        config = ModelConfig(m1=5, m2=4, sigma2=0.04, K=2)
        priors = PriorSpec(Exponential(), GammaShape(1.0))
        expected = -log_prior(fac, priors.element, priors.hyper)
        assert abs(map_objective(Y, fac, config, priors) - expected) < 1e-12

    @pytest.mark.parametrize("p", THREE_PRIORS)
    def test_matches_two_term_recomputation(self, p):
        rng = np.random.default_rng(2)
        Y, config = _random_problem(rng)
        fac = random_init(Y, 3, rng)
        priors = PriorSpec(p, InverseGamma(1.5, 2.0))
        fit = float(np.sum((Y - fac.U.values @ fac.V.values.T) ** 2))
        expected = config.lam * fit - log_prior(fac, p, priors.hyper)
        got = map_objective(Y, fac, config, priors)
        assert abs(got - expected) < 1e-12 * (1 + abs(expected))


class TestGradients:
    @pytest.mark.parametrize("p", THREE_PRIORS)
    def test_central_finite_differences(self, p):
        rng = np.random.default_rng(3)
        h_prior = InverseGamma(1.2, 1.5)
        for _ in range(20):
            m1, m2, K = 5, 4, 3
            Y = rng.normal(1.5, 1.0, (m1, m2))
            U = rng.uniform(0.1, 2.0, (m1, K))
            V = rng.uniform(0.1, 2.0, (m2, K))
            gamma = rng.uniform(0.3, 2.0, K)
            lam = float(rng.uniform(0.5, 10.0))
            config = ModelConfig(m1=m1, m2=m2, sigma2=0.05, K=K, lam=lam)
            priors = PriorSpec(p, h_prior)

            def obj_of_U(u):
                return map_objective(Y, Factorization(u, V, gamma), config, priors)

            g = grad_U(Y, U, V, gamma, lam, p)
            fd = np.zeros_like(g)
            hstep = 1e-6
            for i in range(m1):
                for l in range(K):
                    up = U.copy(); up[i, l] += hstep
                    dn = U.copy(); dn[i, l] -= hstep
                    fd[i, l] = (obj_of_U(up) - obj_of_U(dn)) / (2 * hstep)
            rel = np.max(np.abs(g - fd)) / max(1.0, float(np.max(np.abs(g))))
            assert rel < 1e-5, (p.name(), rel)

    def test_grad_v_mirrors_grad_u(self):
        rng = np.random.default_rng(4)
        Y = rng.normal(2, 1, (6, 5))
        U = rng.uniform(0.1, 2, (6, 2))
        V = rng.uniform(0.1, 2, (5, 2))
        gamma = rng.uniform(0.5, 2, 2)
        gv = grad_V(Y, U, V, gamma, 3.0, Exponential())
        expected = grad_U(Y.T, V, U, gamma, 3.0, Exponential())
        np.testing.assert_array_equal(gv, expected)

    def test_scalar_stationary_point(self):
        # exponential prior, lam=1, v=1, gamma=1: grad zero at u=1 when y=1.5
        g = grad_U(np.array([[1.5]]), np.array([[1.0]]), np.array([[1.0]]),
                   np.array([1.0]), 1.0, Exponential())
        assert abs(g[0, 0]) < 1e-14

    def test_zero_residual_flat_prior_limit(self):
        rng = np.random.default_rng(5)
        U = rng.uniform(0.5, 2, (4, 2))
        V = rng.uniform(0.5, 2, (5, 2))
        Y = U @ V.T
        g = grad_U(Y, U, V, np.array([1e12, 1e12]), 4.0, Exponential())
        assert np.max(np.abs(g)) < 1e-10


class TestProjectedGradientBlock:
    CFG = MapConfig(max_inner=500, tol_obj=1e-14, tol_grad=1e-14)

    def test_interior_quadratic(self):
        x = projected_gradient_block(
            lambda x: float((x[0, 0] - 3.0) ** 2),
            lambda x: np.array([[2.0 * (x[0, 0] - 3.0)]]),
            np.array([[0.0]]), self.CFG)
        assert abs(x[0, 0] - 3.0) < 1e-6

    def test_active_constraint(self):
        x = projected_gradient_block(
            lambda x: float((x[0, 0] + 3.0) ** 2),
            lambda x: np.array([[2.0 * (x[0, 0] + 3.0)]]),
            np.array([[1.0]]), self.CFG)
        assert x[0, 0] == 0.0

    def test_nnls_matches_active_set_enumeration(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(6, 3))
        y = rng.normal(size=6)

        def objective(w):
            r = y - X @ w.ravel()
            return float(r @ r)

        def gradient(w):
            return (-2.0 * X.T @ (y - X @ w.ravel())).reshape(w.shape)

        w_pg = projected_gradient_block(objective, gradient,
                                        np.zeros((3, 1)), self.CFG).ravel()
        # oracle: brute force over the 2^3 candidate active sets
        best, best_val = None, np.inf
        for mask in range(8):
            free = [i for i in range(3) if mask >> i & 1]
            w = np.zeros(3)
            if free:
                sol, *_ = np.linalg.lstsq(X[:, free], y, rcond=None)
                w[free] = sol
            if np.all(w >= 0):
                val = objective(w.reshape(3, 1))
                if val < best_val:
                    best, best_val = w, val
        np.testing.assert_allclose(w_pg, best, atol=1e-6)

    def test_worst_case_returns_start(self):
        # gradient points outward everywhere from the optimum at the corner
        x0 = np.zeros((2, 1))
        x = projected_gradient_block(
            lambda x: float(np.sum(x)), lambda x: np.ones_like(x), x0, self.CFG)
        np.testing.assert_array_equal(x, x0)

    def test_rejects_negative_start(self):
        with pytest.raises(ValueError):
            projected_gradient_block(lambda x: 0.0, lambda x: x,
                                     np.array([[-1.0]]), self.CFG)


class TestGammaMode:
    def test_invgamma_degenerate_case(self):
        # b + S over a + m1 + m2 + 1 with S = 0, a = b = 1, m1 = m2 = 1
        gamma = update_gamma_mode(InverseGamma(1.0, 1.0), Exponential(),
                                  np.zeros((1, 1)), np.zeros((1, 1)))
        assert abs(gamma[0] - 0.25) < 1e-15

    def test_ig_mode_limit_is_mean(self):
        assert abs(ig_mode(1.0, 1e12) - 1.0) < 1e-9

    @pytest.mark.parametrize("p,h", [
        (Exponential(), InverseGamma(1.3, 2.1)),
        (Exponential(), GammaShape(1.7)),
        (TruncatedGaussian(0.0), InverseGamma(1.3, 2.1)),
        (TruncatedGaussian(0.0), GammaShape(1.7)),
    ])
    def test_mode_matches_grid_argmax(self, p, h):
        rng = np.random.default_rng(7)
        U = rng.uniform(0.1, 2.5, (6, 3))
        V = rng.uniform(0.1, 2.5, (5, 3))
        modes = update_gamma_mode(h, p, U, V)
        for l in range(3):
            star = grid_argmax_gamma(p, h, U[:, l], V[:, l], modes[l],
                                     scale_on_squared(p))
            assert abs(modes[l] - star) / star <= 1e-3

    def test_floor_applies(self):
        gamma = update_gamma_mode(GammaShape(1e12), Exponential(),
                                  np.zeros((2, 1)), np.zeros((2, 1)),
                                  gamma_floor=1e-8)
        assert gamma[0] == 1e-8

    def test_nonconjugate_rejected(self):
        with pytest.raises(ConfigError):
            update_gamma_mode(InverseGamma(1, 1), HeavyTail(4.0),
                              np.ones((2, 1)), np.ones((2, 1)))
        with pytest.raises(ConfigError):
            update_gamma_mode(InverseGamma(1, 1), TruncatedGaussian(0.3),
                              np.ones((2, 1)), np.ones((2, 1)))


class TestRunMap:
    def test_noiseless_rank_one_recovery(self):
        rng = np.random.default_rng(8)
        U = rng.uniform(0.5, 3, (20, 1))
        V = rng.uniform(0.5, 3, (20, 1))
        M = U @ V.T
        config = ModelConfig(m1=20, m2=20, sigma2=0.01, K=2, lam=1e4)
        priors = PriorSpec(Exponential(), GammaShape(1e-3))
        fac, _ = run_map(M, config, MapConfig(max_outer=300, seed=9), priors)
        assert mse(M, fac.U.values @ fac.V.values.T) <= 1e-3

    def test_stationary_init_terminates_immediately(self):
        # U = V = 0 is an exact KKT point (the descent direction points into
        # the constraint), and gamma at its conditional mode is fixed too.
        rng = np.random.default_rng(9)
        Y, config = _random_problem(rng)
        a, b = 1.5, 2.0
        priors = PriorSpec(Exponential(), InverseGamma(a, b))
        gamma0 = b / (a + config.m1 + config.m2 + 1.0)
        init = Factorization(np.zeros((config.m1, config.K)),
                             np.zeros((config.m2, config.K)),
                             np.full(config.K, gamma0))
        obj0 = map_objective(Y, init, config, priors)
        fac, trace = run_map(Y, config, MapConfig(seed=10), priors, init=init)
        assert len(trace.records) == 1
        rec = trace.records[0]
        assert rec.drop_u == 0.0 and rec.drop_v == 0.0 and rec.drop_gamma == 0.0
        assert abs(rec.objective - obj0) <= 1e-12 * (1 + abs(obj0))
        assert np.array_equal(fac.U.values, init.U.values)
        assert np.array_equal(fac.gamma, init.gamma)

    @pytest.mark.parametrize("p", THREE_PRIORS)
    @pytest.mark.parametrize("h", [InverseGamma(1.5, 2.0), GammaShape(1.2)])
    def test_monotone_across_all_block_updates(self, p, h):
        rng = np.random.default_rng(11)
        Y, config = _random_problem(rng, m1=9, m2=8, K=3)
        priors = PriorSpec(p, h)
        _, trace = run_map(Y, config, MapConfig(max_outer=15, seed=12), priors)
        prev = None
        for rec in trace.records:
            slack = 1e-10 * (1 + abs(rec.objective))
            assert rec.drop_u >= -slack
            assert rec.drop_v >= -slack
            assert rec.drop_gamma >= -slack
            if prev is not None:
                assert rec.objective <= prev + slack
            prev = rec.objective

    def test_feasibility_of_iterates(self):
        rng = np.random.default_rng(13)
        Y, config = _random_problem(rng)
        mc = MapConfig(max_outer=20, seed=14, gamma_floor=1e-8)
        fac, trace = run_map(Y, config, mc, PriorSpec(Exponential(), GammaShape(1e5)))
        assert np.all(fac.U.values >= 0) and np.all(fac.V.values >= 0)
        for rec in trace.records:
            assert np.all(rec.gamma >= mc.gamma_floor)

    def test_determinism(self):
        rng = np.random.default_rng(15)
        Y, config = _random_problem(rng)
        priors = PriorSpec(HeavyTail(4.0), InverseGamma(1.0, 1.0))
        mc = MapConfig(max_outer=25, seed=16)
        fac1, _ = run_map(Y, config, mc, priors)
        fac2, _ = run_map(Y, config, mc, priors)
        assert np.array_equal(fac1.U.values, fac2.U.values)
        assert np.array_equal(fac1.V.values, fac2.V.values)
        assert np.array_equal(fac1.gamma, fac2.gamma)

    def test_trace_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(17)
        Y, config = _random_problem(rng)
        _, trace = run_map(Y, config, MapConfig(max_outer=5, seed=18),
                           PriorSpec(Exponential(), GammaShape(1.0)))
        path = tmp_path / "trace.csv"
        trace.write_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("outer_iter,objective,gamma_1")
        assert len(lines) == len(trace.records) + 1

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            MapConfig(backtrack=1.0)
        with pytest.raises(ConfigError):
            MapConfig(step0=0.0)
        with pytest.raises(ConfigError):
            MapConfig(gamma_floor=0.0)
