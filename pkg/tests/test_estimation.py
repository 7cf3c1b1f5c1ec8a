import dataclasses
import math

import numpy as np
import pytest
from scipy import linalg

from areal_epi import FitOptions, FitResult, ModelSpec, Params, fit, penalized_loglik, simulate
from areal_epi.errors import SingularInformation, ZeroVariance
from areal_epi.estimation import (Objective, estimate_table, inner_maximize, newton_maximize,
                                  update_variances)
from areal_epi.graph import build_weights, neighbor_order, build_adjacency
from areal_epi.model import PanelModel, mean, panel_loglik

from conftest import generic_maximize, make_lattice, make_panel, poisson_fe_instance

ENDEMIC_POISSON = dict(within=False, between=False, lambda_random=False, phi_random=False,
                       nu_random=False, overdispersion="none")


class TestPenalizedLoglik:
    def test_zero_deviations(self, small_instance):
        spec, params, panel, cov, _ = small_instance
        p = params.copy()
        p.b_lambda[:] = p.b_phi[:] = p.b_nu[:] = 0.0
        p.sigma2 = np.array([0.4, 0.7, 1.3])
        expected = panel_loglik(p, spec, panel, cov) - 0.5 * sum(
            9 * math.log(2 * math.pi * s) for s in p.sigma2)
        assert penalized_loglik(p, spec, panel, cov) == pytest.approx(expected, rel=1e-14)

    def test_no_random_effects_is_plain_loglik(self):
        spec, truth, panel, cov, _ = poisson_fe_instance(0)
        assert penalized_loglik(truth, spec, panel, cov) == panel_loglik(truth, spec, panel, cov)

    def test_scalar_formula(self, small_instance):
        spec, params, panel, cov, _ = small_instance
        p = params.copy()
        p.sigma2 = np.array([0.5, 2.0, 0.25])
        pen = 0.0
        for b, s in zip((p.b_lambda, p.b_phi, p.b_nu), p.sigma2):
            pen += sum(x * x for x in b) / s + 9 * math.log(2 * math.pi * s)
        expected = panel_loglik(p, spec, panel, cov) - pen / 2
        assert penalized_loglik(p, spec, panel, cov) == pytest.approx(expected, rel=1e-13)

    def test_zero_variance_with_free_deviations(self, small_instance):
        spec, params, panel, cov, _ = small_instance
        p = params.copy()
        p.sigma2 = np.array([0.0, 1.0, 1.0])
        with pytest.raises(ZeroVariance):
            penalized_loglik(p, spec, panel, cov)


class TestInnerMaximize:
    @pytest.mark.parametrize("seed", [0, 3, 6])
    def test_generic_optimizer_oracle(self, seed):
        spec, truth, panel, cov, _ = poisson_fe_instance(seed)
        start = Params(3, alpha_lambda=math.log(0.3), alpha_phi=math.log(0.3),
                       alpha_nu=math.log(30.0))
        got = inner_maximize(start, spec, panel, cov)
        L = PanelModel(spec, panel, cov).layout
        ref = generic_maximize(lambda th: panel_loglik(L.unpack(th, truth), spec, panel, cov),
                               L.pack(truth), seed)
        np.testing.assert_allclose(L.pack(got), ref, atol=1e-4)

    def test_start_at_optimum_returns_immediately(self):
        spec, truth, panel, cov, _ = poisson_fe_instance(1)
        opt = inner_maximize(truth, spec, panel, cov)
        obj = Objective(spec, panel, cov, opt)
        _, stats_ = newton_maximize(obj, obj.layout.pack(opt), FitOptions())
        assert stats_.n_iter <= 1 and stats_.converged

    def test_identical_covariates_are_singular(self):
        regions, weights, cov = make_lattice(1, 3, seed=2)
        cov = dataclasses.replace(cov, over65=np.full(3, 0.2))
        spec = ModelSpec(**ENDEMIC_POISSON)
        panel = make_panel(np.random.default_rng(0).integers(5, 30, (3, 8)), regions)
        with pytest.raises(SingularInformation):
            inner_maximize(Params(3, alpha_nu=3.0), spec, panel, cov)

    def test_monotone_steps(self, small_instance):
        spec, params, panel, cov, _ = small_instance
        start = Params(9, alpha_lambda=-1.0, alpha_phi=-4.0, alpha_nu=3.0, sigma2=[0.3] * 3,
                       psi=1.0)
        obj = Objective(spec, panel, cov, start)
        _, stats_ = newton_maximize(obj, obj.layout.pack(start), FitOptions())
        assert len(stats_.values) > 2
        assert all(b >= a for a, b in zip(stats_.values, stats_.values[1:]))

    def test_converged_gradient_is_small(self, small_fit):
        res = small_fit
        assert res.converged
        assert res.grad_max < FitOptions().tol_params


class TestGlmOracle:
    def test_single_region_poisson_matches_irls(self):
        sm = pytest.importorskip("statsmodels.api")
        regions, _, _ = make_lattice(1, 1)
        from areal_epi import RegionCovariates
        cov = RegionCovariates(regions, np.array([1.0]), np.array([0.22]))
        rng = np.random.default_rng(5)
        T = 30
        t = np.arange(1, T + 1)
        y = rng.poisson(np.exp(2.0 + 0.08 * t - 0.002 * t ** 2))
        panel = make_panel(y[None, :], regions)
        spec = ModelSpec(**ENDEMIC_POISSON, nu_log_over65=False)
        res = fit(spec, panel, cov)
        tt = t[1:].astype(float)
        X = np.column_stack([np.ones(T - 1), tt, tt ** 2])
        glm = sm.GLM(y[1:], X, family=sm.families.Poisson()).fit(tol=1e-14)
        got = [res.params.alpha_nu, res.params.beta_nu_t, res.params.beta_nu_t2]
        np.testing.assert_allclose(got, glm.params, rtol=1e-6, atol=1e-9)
        assert res.aic_like == pytest.approx(glm.aic, rel=1e-8)


class TestVarianceUpdate:
    def _endemic_re(self, seed=0):
        regions, _, cov = make_lattice(2, 3, seed=seed)
        rng = np.random.default_rng(seed)
        spec = ModelSpec(within=False, between=False, lambda_random=False, phi_random=False,
                         overdispersion="none")
        p = Params(6, alpha_nu=math.log(60.0), beta_nu_t=0.02, beta_nu_age=1.0,
                   b_nu=rng.normal(0, 0.5, 6), sigma2=[1.0, 1.0, 0.4])
        panel = simulate(p, spec, None, cov, 6, np.full(6, 5), seed=seed)
        return spec, p, panel, cov

    def test_matches_trace_fixed_point(self):
        spec, p, panel, cov = self._endemic_re()
        p = inner_maximize(p, spec, panel, cov)
        s2, flags = update_variances(p, spec, panel, cov)
        model = PanelModel(spec, panel, cov)
        _, _, H = model.derivatives(p, "observed")
        sl = model.layout.slices["b_nu"]
        H[sl, sl] += np.eye(6) / s2[2]
        P = linalg.inv(H)
        analytic = (p.b_nu @ p.b_nu + np.trace(P[sl, sl])) / 6
        assert s2[2] == pytest.approx(analytic, rel=1e-8)
        assert not flags["nu"]
        # components that are not random keep their values
        assert s2[0] == 1.0 and s2[1] == 1.0

    def test_zero_deviations_hit_the_floor(self):
        spec, p, panel, cov = self._endemic_re(1)
        p.b_nu[:] = 0.0
        s2, flags = update_variances(p, spec, panel, cov, sigma2_floor=1e-8)
        assert s2[2] == pytest.approx(1e-8)
        assert flags["nu"]

    def test_homogeneous_regions_freeze_component(self):
        spec, p, _, cov = self._endemic_re(2)
        p.b_nu[:] = 0.0
        panel = simulate(p, spec, None, cov, 6, np.full(6, 5), seed=12)
        res = fit(spec, panel, cov)
        assert res.converged and res.boundary["nu"]
        assert res.params.sigma2[2] == FitOptions().sigma2_floor
        assert not res.params.b_nu.any()
        assert "(boundary)" in estimate_table(res)

    @pytest.mark.parametrize("seed", [9, 10, 11])
    def test_small_variances_converge(self, seed):
        spec, p, _, cov = self._endemic_re(2)
        p.b_nu[:] = 0.0
        panel = simulate(p, spec, None, cov, 6, np.full(6, 5), seed=seed)
        res = fit(spec, panel, cov)
        assert res.converged and res.n_outer_iters < 100


class TestFit:
    def test_recovers_moderate_truth(self, small_instance, small_fit):
        _, truth, _, _, _ = small_instance
        res = small_fit
        for name in ("alpha_lambda", "alpha_phi", "alpha_nu", "beta_nu_t"):
            assert abs(getattr(res.params, name) - getattr(truth, name)) < 3 * res.se[name] + 1e-9, name

    def test_single_outer_iteration(self, small_instance):
        spec, _, panel, cov, weights = small_instance
        res = fit(spec, panel, cov, weights, FitOptions(max_outer_iters=1))
        assert not res.converged
        assert res.n_outer_iters == 1
        assert np.isfinite(res.penalized_loglik)
        assert all(np.isfinite(v) for v in res.se.values())

    def test_short_panel_rejected(self):
        spec, _, panel, cov, w = poisson_fe_instance(0)
        with pytest.raises(ValueError):
            fit(spec, panel.head(2), cov, w)

    def test_deterministic(self, small_instance, small_fit):
        spec, _, panel, cov, weights = small_instance
        again = fit(spec, panel, cov, weights)
        assert again.to_json() == small_fit.to_json()

    def test_json_round_trip(self, small_instance, small_fit):
        weights = small_instance[4]
        back = FitResult.from_json(small_fit.to_json(), weights)
        assert back.to_json() == small_fit.to_json()
        assert back.spec.weights is weights

    def test_table_layout(self, small_fit):
        text = estimate_table(small_fit)
        assert "exp(alpha_lambda)" in text and "sigma2_nu" in text
        assert "SE (log scale)" in text

    @pytest.mark.parametrize("bad", [dict(tol_params=0.0), dict(max_inner_iters=0),
                                     dict(init="random")])
    def test_invalid_options(self, bad):
        with pytest.raises(ValueError):
            FitOptions(**bad)


class TestWeightScale:
    @pytest.mark.parametrize("c", [0.1, 7.0])
    def test_scaling_absorbed_by_intercept(self, c):
        regions, _, cov = make_lattice(2, 3, seed=4)
        from conftest import grid_borders
        adj = build_adjacency(regions, grid_borders(regions.ids, 2, 3))
        raw = build_weights(neighbor_order(adj), 2, False, regions)
        spec = ModelSpec(weights=raw)
        truth = Params(6, alpha_lambda=math.log(0.3), alpha_phi=math.log(0.05),
                       alpha_nu=math.log(200.0), beta_phi_pop=0.5, beta_nu_t=0.03,
                       beta_nu_age=1.0, b_nu=np.random.default_rng(1).normal(0, 0.3, 6),
                       sigma2=[0.3] * 3, psi=0.1)
        panel = simulate(truth, spec, raw, cov, 25, np.full(6, 10), seed=2)
        a = fit(spec, panel, cov, raw)
        b = fit(spec, panel, cov, raw.scaled(c))
        assert b.params.alpha_phi == pytest.approx(a.params.alpha_phi - math.log(c), abs=1e-8)
        assert b.penalized_loglik == pytest.approx(a.penalized_loglik, rel=1e-8)
        mu_a = mean(a.params, a.spec, panel, cov).total
        mu_b = mean(b.params, b.spec, panel, cov).total
        np.testing.assert_allclose(mu_b, mu_a, rtol=1e-8)
