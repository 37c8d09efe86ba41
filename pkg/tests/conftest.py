"""Shared fixtures: benchmark scenarios and solved pipelines.

Session-scoped where the underlying computation is deterministic and
reused across modules, so the suite stays fast.
"""

import numpy as np
import pytest

import bsde_stackelberg as bs


@pytest.fixture(scope="session")
def hand_spec():
    """Scalar benchmark with a fully hand-integrable solution."""
    return bs.hand_solvable_scenario(steps=1000)


@pytest.fixture(scope="session")
def hand_spec_coarse():
    return bs.hand_solvable_scenario(steps=256)


@pytest.fixture(scope="session")
def stochastic_spec():
    return bs.stochastic_scenario(steps=512)


@pytest.fixture(scope="session")
def hand_riccati(hand_spec):
    p1 = bs.solve_p1(hand_spec)
    p2 = bs.solve_p2(hand_spec, p1)
    return p1, p2


@pytest.fixture(scope="session")
def hand_follower(hand_spec, hand_riccati):
    p1, p2 = hand_riccati
    u2 = bs.AffineControl.zero(hand_spec.grid, hand_spec.dims.k)
    mc = bs.MonteCarloConfig(paths=4, seed=0)
    return bs.follower_pipeline(hand_spec, p1, p2, u2, mc=mc)


@pytest.fixture(scope="session")
def hand_solution(hand_spec):
    return bs.solve_equilibrium(hand_spec, mc=bs.MonteCarloConfig(paths=4, seed=0))


@pytest.fixture(scope="session")
def stochastic_solution(stochastic_spec):
    return bs.solve_equilibrium(stochastic_spec, mc=bs.MonteCarloConfig(paths=256, seed=3))


@pytest.fixture(scope="session")
def market():
    return bs.MarketParams.constant(
        1.0, 100, r=0.03, mu=0.08, sigma=0.25, R1=1.0, R2=1.5, G1=1.0, G2=0.8, a=1.0, b=0.3
    )


@pytest.fixture(scope="session")
def consumption(market):
    from bsde_stackelberg.finance import consumption_equilibrium

    return consumption_equilibrium(market, mc=bs.MonteCarloConfig(paths=2000, seed=5))


def scenario_document(spec, mode="strict", u2=None, market=None):
    """JSON-ready dict for an LQGameSpec (constant coefficients assumed)."""
    doc = {
        "dims": {"n": spec.dims.n, "d": spec.dims.d, "k": spec.dims.k},
        "horizon": spec.grid.horizon,
        "steps": spec.grid.steps,
        "coefficients": {
            name: {"constant": getattr(spec, name).values[0].ravel().tolist()}
            for name in ("A", "B1", "B2", "C", "Q1", "R1", "S1", "Q2", "R2", "S2")
        },
        "weights": {"G1": spec.G1.tolist(), "G2": spec.G2.tolist()},
        "terminal": {"a": spec.xi.a.tolist(), "b": spec.xi.b.tolist()},
        "mode": mode,
    }
    if u2 is not None:
        doc["u2"] = u2
    if market is not None:
        doc["market"] = market
    return doc
