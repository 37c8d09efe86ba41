"""Optimal consumption-rate application in a one-asset market.

Two agents consume out of a shared terminal-wealth constraint; the
problem maps onto the generic leader-follower machinery through
A = -r, B1 = B2 = 1, C = -(mu - r)/sigma, Q1 = Q2 = S1 = S2 = 0.
Besides the generic pipelines, the module carries the hand-specialized
2x2 stacked matrices (a direct cross-check of the generic assembly),
scalar closed forms for the first Riccati equation, and the dual
propagator representation of the initial wealth reserve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .leader import StackelbergSolution, solve_equilibrium
from .model import (
    CoefficientPath,
    Dimensions,
    LQGameSpec,
    TerminalCondition,
    TimeGrid,
    validate_spec,
)
from .riccati import RiccatiPath, solve_p1, solve_p2
from .sampling import MonteCarloConfig


@dataclass(frozen=True)
class MarketParams:
    """Market and preference data: rates, volatility, control weights."""

    grid: TimeGrid
    r: CoefficientPath  # interest rate, 1x1
    mu: CoefficientPath  # risky rate of return, 1x1
    sigma: CoefficientPath  # volatility, 1x1, > 0
    R1: CoefficientPath  # follower consumption weight, > 0
    R2: CoefficientPath  # leader consumption weight, > 0
    G1: float
    G2: float
    xi: TerminalCondition

    def __post_init__(self):
        for name in ("r", "mu", "sigma", "R1", "R2"):
            p = getattr(self, name)
            if p.grid != self.grid or p.shape != (1, 1):
                raise ValueError(f"market parameter {name} must be 1x1 on the market grid")
        if np.any(self.sigma.values <= 0.0):
            raise ValueError("sigma must be strictly positive node-wise")
        if np.any(self.mu.values < self.r.values - 1e-12):
            raise ValueError("mu must dominate r node-wise")
        if np.any(self.R1.values <= 0.0) or np.any(self.R2.values <= 0.0):
            raise ValueError("R1 and R2 must be strictly positive node-wise")

    @classmethod
    def constant(
        cls, horizon, steps, r, mu, sigma, R1, R2, G1, G2, a, b=0.0
    ) -> "MarketParams":
        grid = TimeGrid(horizon, steps)
        c = CoefficientPath.constant
        return cls(
            grid, c(grid, r), c(grid, mu), c(grid, sigma), c(grid, R1), c(grid, R2),
            float(G1), float(G2), TerminalCondition([a], [[b]]),
        )

    def theta(self) -> CoefficientPath:
        """Market price of risk (mu - r) / sigma, node-wise."""
        vals = (self.mu.values - self.r.values) / self.sigma.values
        return CoefficientPath(self.grid, vals)


def build_finance_spec(m: MarketParams) -> LQGameSpec:
    """Map market data onto the generic game specification.

    State weights vanish; the initial-wealth weights G1, G2 pass
    straight through as Riccati boundary data.  The induced spec fails
    strict positive-semidefiniteness only where the consumption
    interpretation wants it to, so validation is run permissively.
    """
    grid = m.grid
    zero = CoefficientPath.constant(grid, 0.0)
    one = CoefficientPath.constant(grid, 1.0)
    spec = LQGameSpec(
        dims=Dimensions(1, 1, 1),
        grid=grid,
        A=CoefficientPath(grid, -m.r.values),
        B1=one,
        B2=one,
        C=CoefficientPath(grid, -m.theta().values),
        Q1=zero,
        R1=m.R1,
        S1=zero,
        G1=np.array([[m.G1]]),
        Q2=zero,
        R2=m.R2,
        S2=zero,
        G2=np.array([[m.G2]]),
        xi=m.xi,
    )
    report = validate_spec(spec, strict=False)
    if not report.passed:
        raise ValueError("; ".join(str(v) for v in report.errors))
    return spec


def _constant_market(m: MarketParams) -> bool:
    return all(
        np.ptp(getattr(m, name).values) == 0.0 for name in ("r", "mu", "sigma", "R1")
    )


def p1_closed_form(m: MarketParams) -> np.ndarray:
    """Scalar linear-ODE solution for constant parameters.

    P1(t) = (e^(lam (T - t)) - 1) / (R1 lam) with lam = theta^2 - 2r,
    degenerating to (T - t)/R1 when lam = 0.
    """
    if not _constant_market(m):
        raise ValueError("closed form requires constant r, mu, sigma, R1")
    r = float(m.r.values[0, 0, 0])
    theta = float(m.theta().values[0, 0, 0])
    R1 = float(m.R1.values[0, 0, 0])
    lam = theta**2 - 2.0 * r
    tau = m.grid.horizon - m.grid.nodes
    if abs(lam) < 1e-14:
        return tau / R1
    return np.expm1(lam * tau) / (R1 * lam)


def scalar_p1(m: MarketParams) -> RiccatiPath:
    """First Riccati solution; cross-checked against the closed form
    whenever the market parameters are constant."""
    p1 = solve_p1(build_finance_spec(m))
    if _constant_market(m):
        gap = float(np.max(np.abs(p1.values[:, 0, 0] - p1_closed_form(m))))
        if gap > 1e-8:
            raise AssertionError(f"P1 disagrees with its closed form by {gap:.3e}")
    return p1


def scalar_p2(m: MarketParams, p1: RiccatiPath) -> RiccatiPath:
    return solve_p2(build_finance_spec(m), p1)


def specialized_stacked_matrices(
    m: MarketParams, p1: RiccatiPath, p2: RiccatiPath
) -> dict[str, np.ndarray]:
    """The hand-specialized 2x2 stacked matrices of the consumption game.

    Written exactly as the scalar formulas, independently of the generic
    block assembly; the two must coincide node-wise.
    """
    nn = m.grid.steps + 1
    theta = m.theta().values[:, 0, 0]
    r = m.r.values[:, 0, 0]
    R1 = m.R1.values[:, 0, 0]
    P1 = p1.values[:, 0, 0]
    P2 = p2.values[:, 0, 0]

    A1h = np.zeros((nn, 2, 2))
    A1h[:, 0, 0] = A1h[:, 1, 1] = -r - P2 / R1
    B1h = np.zeros((nn, 2, 1))
    B1h[:, 0, 0] = P2
    B2h = np.zeros((nn, 2, 1))
    B2h[:, 1, 0] = 1.0
    C1h = np.zeros((nn, 2, 2))
    C1h[:, 0, 0] = (-1.0 - P2**2 * P1**2 - P2 * P1) / (P1 * P2 + 1.0) * theta
    C1h[:, 1, 1] = -theta
    D1h = np.zeros((nn, 2, 2))
    D1h[:, 0, 1] = -P2 * theta
    D1h[:, 1, 0] = -P2 * theta
    F1h = np.zeros((nn, 2, 2))
    F1h[:, 0, 1] = theta**2 * P2**2 * P1
    F1h[:, 1, 0] = theta**2 * P2**2 * P1
    F2h = np.zeros((nn, 2, 2))
    F2h[:, 0, 1] = -1.0 / R1
    F2h[:, 1, 0] = -1.0 / R1
    S1h = np.zeros((nn, 2, 2))
    S1h[:, 0, 1] = -P2
    S1h[:, 1, 0] = -P2
    return {
        "A1h": A1h, "B1h": B1h, "B2h": B2h, "C1h": C1h,
        "D1h": D1h, "F1h": F1h, "F2h": F2h, "S1h": S1h,
    }


@dataclass
class ConsumptionSolution:
    """Equilibrium consumption plan with market-named views.

    c1, c2 are the two consumption-rate controls, wealth the backward
    state, portfolio the risky position z / sigma.  Y0 is the
    2-dimensional initial backward value; the initial reserve is its
    second (wealth) component.
    """

    solution: StackelbergSolution
    market: MarketParams
    c1: np.ndarray
    c2: np.ndarray
    wealth: np.ndarray
    portfolio: np.ndarray
    Y0: np.ndarray
    initial_reserve: float


def consumption_equilibrium(
    m: MarketParams, mc: MonteCarloConfig | None = None
) -> ConsumptionSolution:
    """Run the generic leader pipeline on the market specification.

    The stacked system is built with the printed specialization of the
    upper diffusion block so every finance-side formula (including the
    dual propagator) refers to one consistent coefficient set.  The
    forward offset uses the "consistent" diffusion assembly so the
    reconstructed backward pair satisfies the closed-loop equation
    exactly, which the dual reserve representation relies on.
    """
    spec = build_finance_spec(m)
    sol = solve_equilibrium(spec, mc=mc, hat_c1_source="display", diffusion="consistent")
    ens = sol.ensemble
    sigma = m.sigma.values[None, :, 0, 0]
    portfolio = ens.zbar[:, :, 0] / sigma
    Y0 = ens.Y[:, 0].mean(axis=0)
    return ConsumptionSolution(
        sol, m, ens.u1, ens.u2, ens.ybar, portfolio, Y0, float(Y0[1])
    )


def _dual_coefficients(sol: StackelbergSolution):
    """Node-wise (drift, diffusion, forcing) matrices of the propagator.

    The propagator solves d(Gamma) = M^T Gamma dt + C1h Gamma dW with M
    the closed-loop drift of the backward pair, so that
    Y(t) = E[Gamma_t(T)^T xi-hat + int_t^T Gamma_t(s)^T f(s) ds] with
    f = (F2h - B2h R2^-1 B2h^T) varphi-tilde.
    """
    sys = sol.system
    grid = sys.grid
    a = np.empty((grid.steps + 1, 2 * sys.n, 2 * sys.n))
    c = np.empty_like(a)
    forcing = np.empty_like(a)
    for i, t in enumerate(grid.nodes):
        A1, B1, B2, F2 = sys.A1h(t), sys.B1h(t), sys.B2h(t), sys.F2h(t)
        R2inv = np.linalg.inv(sol.spec.R2(t))
        Pi2 = sol.pi2.values[i]
        M = A1 + F2 @ Pi2 - B2 @ R2inv @ (B1 + Pi2 @ B2).T
        a[i] = M.T
        c[i] = sys.C1h(t)
        forcing[i] = F2 - B2 @ R2inv @ B2.T
    return a, c, forcing


def _gamma_step(gamma, a_i, a_ip1, c_i, dt, dW):
    """One propagator step: trapezoidal drift, Milstein diffusion.

    Exact to O(dt^2) when the diffusion vanishes, so the deterministic
    self-consistency checks are not limited by drift bias.
    """
    drift0 = np.einsum("ij,pjk->pik", a_i, gamma)
    diff = np.einsum("ij,pjk->pik", c_i, gamma)
    pred = gamma + dt * drift0 + dW[:, None, None] * diff
    drift1 = np.einsum("ij,pjk->pik", a_ip1, pred)
    milstein = np.einsum("ij,pjk->pik", c_i, diff)
    return (
        gamma
        + 0.5 * dt * (drift0 + drift1)
        + dW[:, None, None] * diff
        + 0.5 * (dW**2 - dt)[:, None, None] * milstein
    )


def gamma_propagator(sol: StackelbergSolution, t: float, s: float, path: int) -> np.ndarray:
    """Pathwise propagator Gamma_t(s) (2n x 2n), identity at s = t.

    t and s must be grid nodes with t <= s; the path index selects the
    Brownian trajectory of the solved ensemble.
    """
    grid = sol.system.grid
    i0 = int(round(t / grid.dt))
    i1 = int(round(s / grid.dt))
    if not (0 <= i0 <= i1 <= grid.steps):
        raise ValueError(f"need grid nodes 0 <= t <= s <= T, got t={t}, s={s}")
    for i, u in ((i0, t), (i1, s)):
        if abs(grid.nodes[i] - u) > 1e-12 * max(1.0, grid.horizon):
            raise ValueError(f"time {u} is not a grid node")
    a, c, _ = _dual_coefficients(sol)
    m = 2 * sol.system.n
    gamma = np.eye(m)[None]
    dW = sol.ensemble.bundle.dW
    for i in range(i0, i1):
        gamma = _gamma_step(gamma, a[i], a[i + 1], c[i], grid.dt, dW[path : path + 1, i])
    return gamma[0]


def initial_reserve(sol: StackelbergSolution) -> dict:
    """Monte Carlo evaluation of the dual representation of Y(0).

    Streams the propagator over the solved ensemble's own paths and
    accumulates Gamma_0(T)^T xi-hat + trapezoid(Gamma_0(t)^T f(t));
    reports the estimate with standard errors next to the pipeline's
    deterministic Y(0).
    """
    sys = sol.system
    grid = sys.grid
    ens = sol.ensemble
    a, c, forcing = _dual_coefficients(sol)
    m = 2 * sys.n
    P = ens.bundle.n_paths
    dt = grid.dt
    dW = ens.bundle.dW

    gamma = np.broadcast_to(np.eye(m), (P, m, m)).copy()
    integral = np.zeros((P, m))
    w_end = 0.5 * dt

    def integrand(i, g):
        f = np.einsum("ij,pj->pi", forcing[i], ens.tilde_varphi[:, i])
        return np.einsum("pji,pj->pi", g, f)

    integral += w_end * integrand(0, gamma)
    for i in range(grid.steps):
        gamma = _gamma_step(gamma, a[i], a[i + 1], c[i], dt, dW[:, i])
        w = w_end if i == grid.steps - 1 else dt
        integral += w * integrand(i + 1, gamma)

    xi_hat = sys.xih.a[None] + ens.bundle.W[:, -1, None] * sys.xih.b[:, 0][None]
    per_path = np.einsum("pji,pj->pi", gamma, xi_hat) + integral
    estimate = per_path.mean(axis=0)
    stderr = per_path.std(axis=0, ddof=1) / np.sqrt(P) if P > 1 else np.zeros(m)
    pipeline_Y0 = ens.Y[:, 0].mean(axis=0)
    return {
        "mc_estimate": estimate,
        "stderr": stderr,
        "pipeline_Y0": pipeline_Y0,
        "gap": estimate - pipeline_Y0,
        "initial_reserve": float(estimate[-1]),
    }


def consumption_paths_csv(cs: ConsumptionSolution, max_paths: int | None = None) -> str:
    """Per-path CSV of (t, wealth, portfolio, c1, c2), 17 significant digits."""
    lines = ["path,t,y,pi,c1,c2"]
    n_paths = cs.wealth.shape[0] if max_paths is None else min(max_paths, cs.wealth.shape[0])
    for p in range(n_paths):
        for i, t in enumerate(cs.market.grid.nodes):
            lines.append(
                f"{p},{t:.17g},{cs.wealth[p, i, 0]:.17g},{cs.portfolio[p, i]:.17g},"
                f"{cs.c1[p, i, 0]:.17g},{cs.c2[p, i, 0]:.17g}"
            )
    return "\n".join(lines) + "\n"
