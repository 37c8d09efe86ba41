"""Consumption-rate application: closed forms, specialization, dual reserve."""

import numpy as np
import pytest

import bsde_stackelberg as bs
from bsde_stackelberg.finance import (
    MarketParams,
    build_finance_spec,
    consumption_equilibrium,
    consumption_paths_csv,
    gamma_propagator,
    initial_reserve,
    p1_closed_form,
    scalar_p1,
    scalar_p2,
    specialized_stacked_matrices,
)


def benchmark_market(steps=100):
    """r = 0, mu = sigma (theta = 1): P1(0) = e - 1 exactly."""
    return MarketParams.constant(
        1.0, steps, r=0.0, mu=0.25, sigma=0.25, R1=1.0, R2=1.5,
        G1=1.0, G2=0.8, a=1.0, b=0.0,
    )


class TestMarketParams:
    def test_theta(self, market):
        assert market.theta().values[0, 0, 0] == pytest.approx((0.08 - 0.03) / 0.25)

    def test_rejects_nonpositive_sigma(self):
        with pytest.raises(ValueError):
            MarketParams.constant(
                1.0, 10, r=0.0, mu=0.1, sigma=0.0, R1=1.0, R2=1.0,
                G1=1.0, G2=1.0, a=1.0,
            )

    def test_rejects_mu_below_r(self):
        with pytest.raises(ValueError):
            MarketParams.constant(
                1.0, 10, r=0.05, mu=0.01, sigma=0.2, R1=1.0, R2=1.0,
                G1=1.0, G2=1.0, a=1.0,
            )

    def test_rejects_nonpositive_weights(self):
        with pytest.raises(ValueError):
            MarketParams.constant(
                1.0, 10, r=0.0, mu=0.1, sigma=0.2, R1=0.0, R2=1.0,
                G1=1.0, G2=1.0, a=1.0,
            )


class TestSpecMapping:
    def test_coefficients(self, market):
        spec = build_finance_spec(market)
        t = 0.5
        assert spec.A(t)[0, 0] == -0.03
        assert spec.B1(t)[0, 0] == 1.0 and spec.B2(t)[0, 0] == 1.0
        assert spec.C(t)[0, 0] == pytest.approx(-(0.08 - 0.03) / 0.25)
        assert np.max(np.abs(spec.Q1.values)) == 0.0
        assert np.max(np.abs(spec.Q2.values)) == 0.0
        assert spec.G1[0, 0] == 1.0 and spec.G2[0, 0] == 0.8

    def test_passes_permissive_validation(self, market):
        build_finance_spec(market)  # does not raise


class TestScalarRiccati:
    def test_p1_initial_value_benchmark(self):
        p1 = p1_closed_form(benchmark_market())
        assert abs(p1[0] - (np.e - 1.0)) < 1e-14

    def test_scalar_p1_matches_closed_form(self):
        m = benchmark_market(400)
        p1 = scalar_p1(m)  # raises if the solve drifts from the closed form
        np.testing.assert_allclose(
            p1.values[:, 0, 0], p1_closed_form(m), atol=1e-9
        )

    def test_degenerate_rate_limit(self):
        # theta^2 = 2r: P1 = (T - t)/R1
        m = MarketParams.constant(
            1.0, 50, r=0.02, mu=0.05, sigma=0.15, R1=2.0, R2=1.0,
            G1=1.0, G2=1.0, a=1.0,
        )
        assert m.theta().values[0, 0, 0] ** 2 == pytest.approx(0.04)
        np.testing.assert_allclose(
            p1_closed_form(m), (1.0 - m.grid.nodes) / 2.0, atol=1e-12
        )

    def test_p2_positive_and_bounded_by_g1(self, market):
        p1 = scalar_p1(market)
        p2 = scalar_p2(market, p1)
        assert np.all(p2.values[:, 0, 0] > 0.0)
        assert p2.values[0, 0, 0] == market.G1


class TestSpecializedMatrices:
    def test_matches_generic_assembly(self, market):
        p1 = scalar_p1(market)
        p2 = scalar_p2(market, p1)
        spec = build_finance_spec(market)
        sys = bs.build_stacked_system(spec, p1, p2, hat_c1_source="display")
        mats = specialized_stacked_matrices(market, p1, p2)
        for name, vals in mats.items():
            gap = np.max(np.abs(getattr(sys, name).values - vals))
            assert gap < 1e-12, name


class TestEquilibrium:
    def test_wealth_terminal_identity(self, consumption):
        m = consumption.market
        xi = m.xi.a[0] + m.xi.b[0, 0] * consumption.solution.ensemble.bundle.W[:, -1]
        assert np.max(np.abs(consumption.wealth[:, -1, 0] - xi)) < 1e-10

    def test_portfolio_is_scaled_martingale_loading(self, consumption):
        ens = consumption.solution.ensemble
        sigma = consumption.market.sigma.values[None, :, 0, 0]
        np.testing.assert_allclose(
            consumption.portfolio, ens.zbar[:, :, 0] / sigma, atol=0
        )

    def test_views_alias_generic_solution(self, consumption):
        ens = consumption.solution.ensemble
        assert np.array_equal(consumption.c1, ens.u1)
        assert np.array_equal(consumption.c2, ens.u2)
        assert np.array_equal(consumption.wealth, ens.ybar)
        assert consumption.initial_reserve == pytest.approx(consumption.Y0[1])

    def test_csv_header_and_cap(self, consumption):
        text = consumption_paths_csv(consumption, max_paths=2)
        lines = text.strip().split("\n")
        assert lines[0] == "path,t,y,pi,c1,c2"
        assert len(lines) == 1 + 2 * (consumption.market.grid.steps + 1)


class TestDualRepresentation:
    def test_propagator_identity_at_start(self, consumption):
        g = gamma_propagator(consumption.solution, 0.0, 0.0, path=0)
        np.testing.assert_allclose(g, np.eye(2), atol=0)

    def test_propagator_composes(self, consumption):
        sol = consumption.solution
        dt = sol.system.grid.dt
        full = gamma_propagator(sol, 0.0, 4 * dt, path=1)
        left = gamma_propagator(sol, 0.0, 2 * dt, path=1)
        right = gamma_propagator(sol, 2 * dt, 4 * dt, path=1)
        np.testing.assert_allclose(right @ left, full, atol=1e-12)

    def test_rejects_off_grid_times(self, consumption):
        with pytest.raises(ValueError):
            gamma_propagator(consumption.solution, 0.0, 0.1234567, path=0)
        with pytest.raises(ValueError):
            gamma_propagator(consumption.solution, 0.5, 0.25, path=0)

    def test_deterministic_market_reserve_exact(self):
        # mu = r kills the noise loading: the dual integral is deterministic
        m = MarketParams.constant(
            1.0, 100, r=0.03, mu=0.03, sigma=0.2, R1=1.0, R2=1.5,
            G1=1.0, G2=0.8, a=1.0, b=0.0,
        )
        cs = consumption_equilibrium(m, mc=bs.MonteCarloConfig(4, 0))
        rep = initial_reserve(cs.solution)
        assert np.max(rep["stderr"]) < 1e-12
        assert np.max(np.abs(rep["gap"])) < 1e-5
        assert rep["initial_reserve"] == pytest.approx(cs.initial_reserve, abs=1e-5)

    def test_stochastic_market_reserve_within_three_sigma(self, consumption):
        rep = initial_reserve(consumption.solution)
        ratios = np.abs(rep["gap"]) / np.maximum(rep["stderr"], 1e-300)
        assert np.all(ratios < 3.0)
