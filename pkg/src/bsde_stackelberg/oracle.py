"""Brute-force optimality oracles, independent of the Riccati machinery.

With a deterministic terminal datum and deterministic controls, the
backward equation degenerates to a terminal-value ODE with z = 0, so
both players' problems collapse to finite-dimensional convex quadratic
programs over piecewise-constant controls.  Those are solved exactly by
normal equations; nothing from the feedback pipeline is trusted.  The
leader oracle nests the follower's exact argmin, which is affine in the
leader's control, so the outer problem is again an exact QP.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LQGameSpec

PSD_TOL = 1e-9


class NonConvexError(RuntimeError):
    """The discrete quadratic cost is not convex (assumption violation)."""

    def __init__(self, min_eig: float):
        self.min_eig = min_eig
        super().__init__(f"discrete cost Hessian not PSD (min eigenvalue {min_eig:.3e})")


@dataclass(frozen=True)
class DiscreteLQProblem:
    """Exact discrete affine state map for deterministic-terminal games.

    Over piecewise-constant controls, the backward state satisfies
    y_i = E_i y_{i+1} + F1_i u1_i + F2_i u2_i with per-step matrices
    from one RK4 step of the degenerate (z = 0) terminal-value ODE.
    """

    spec: LQGameSpec
    E: np.ndarray  # (N, n, n)
    F1: np.ndarray  # (N, n, k)
    F2: np.ndarray  # (N, n, k)
    node_weights: np.ndarray  # (N+1,), trapezoid * dt
    R1_bar: np.ndarray  # (N, k, k), per-step control weight * dt
    R2_bar: np.ndarray  # (N, k, k)


def build_discrete_problem(spec: LQGameSpec) -> DiscreteLQProblem:
    if not spec.xi.deterministic:
        raise ValueError("discrete oracle requires a deterministic terminal datum (b = 0)")
    n, k = spec.dims.n, spec.dims.k
    grid = spec.grid
    N, dt = grid.steps, grid.dt

    E = np.empty((N, n, n))
    F1 = np.empty((N, n, k))
    F2 = np.empty((N, n, k))
    for i in range(N):
        t1 = grid.nodes[i + 1]

        def f(t, M):
            # columns: [state basis | unit u1 | unit u2]; y' = -(A y + B1 u1 + B2 u2)
            G = np.hstack([np.zeros((n, n)), spec.B1(t), spec.B2(t)])
            return -(spec.A(t) @ M + G)

        M = np.hstack([np.eye(n), np.zeros((n, 2 * k))])
        h = -dt  # one RK4 step from t_{i+1} back to t_i
        k1 = f(t1, M)
        k2 = f(t1 + 0.5 * h, M + 0.5 * h * k1)
        k3 = f(t1 + 0.5 * h, M + 0.5 * h * k2)
        k4 = f(t1 + h, M + h * k3)
        M = M + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        E[i], F1[i], F2[i] = M[:, :n], M[:, n : n + k], M[:, n + k :]

    w = np.full(N + 1, dt)
    w[0] = w[-1] = 0.5 * dt
    R1_bar = np.empty((N, k, k))
    R2_bar = np.empty((N, k, k))
    for i in range(N):
        R1_bar[i] = 0.5 * dt * (spec.R1(grid.nodes[i]) + spec.R1(grid.nodes[i + 1]))
        R2_bar[i] = 0.5 * dt * (spec.R2(grid.nodes[i]) + spec.R2(grid.nodes[i + 1]))
    return DiscreteLQProblem(spec, E, F1, F2, w, R1_bar, R2_bar)


def _state_maps(prob: DiscreteLQProblem):
    """Affine map (u1, u2) -> node states: y_i = c_i + S_i u1 + T_i u2.

    Controls are flattened step-major; returns c (N+1, n),
    S and T (N+1, n, N*k).
    """
    spec = prob.spec
    n, k = spec.dims.n, spec.dims.k
    N = spec.grid.steps
    c = np.zeros((N + 1, n))
    S = np.zeros((N + 1, n, N * k))
    T = np.zeros((N + 1, n, N * k))
    c[N] = spec.xi.a
    for i in range(N - 1, -1, -1):
        c[i] = prob.E[i] @ c[i + 1]
        S[i] = prob.E[i] @ S[i + 1]
        T[i] = prob.E[i] @ T[i + 1]
        S[i, :, i * k : (i + 1) * k] += prob.F1[i]
        T[i, :, i * k : (i + 1) * k] += prob.F2[i]
    return c, S, T


def _quadratic_pieces(prob: DiscreteLQProblem, Qs: np.ndarray, G: np.ndarray):
    """Trapezoid state weights + initial weight as one (N+1) stack of matrices."""
    W = prob.node_weights[:, None, None] * Qs
    W = W.copy()
    W[0] += G
    return W


def _solve_qp(H: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, float]:
    H = 0.5 * (H + H.T)
    min_eig = float(np.linalg.eigvalsh(H).min())
    if min_eig < -PSD_TOL * max(1.0, float(np.abs(H).max())):
        raise NonConvexError(min_eig)
    u = np.linalg.solve(H, -g)
    grad = float(np.linalg.norm(H @ u + g))
    return u, grad


@dataclass(frozen=True)
class OracleResult:
    """Exact discrete optimum: step-major control array and certified cost."""

    control: np.ndarray  # (N, k)
    cost: float
    gradient_norm: float
    iterations: int
    inner_control: np.ndarray | None = None  # leader oracle: induced follower control


def _cost_terms(prob: DiscreteLQProblem, Qs, G, c, S, R_bar):
    """H, g, const of 0.5 u'Hu + g'u + const for one player's cost."""
    W = _quadratic_pieces(prob, Qs, G)
    H = np.einsum("inm,inp,ipq->mq", S, W, S, optimize=True)
    g = np.einsum("inm,inp,ip->m", S, W, c, optimize=True)
    const = 0.5 * float(np.einsum("in,inp,ip->", c, W, c, optimize=True))
    k = R_bar.shape[1]
    N = R_bar.shape[0]
    for i in range(N):
        H[i * k : (i + 1) * k, i * k : (i + 1) * k] += R_bar[i]
    return H, g, const


def deterministic_follower_oracle(prob: DiscreteLQProblem, u2: np.ndarray) -> OracleResult:
    """Exact discrete follower optimum for a fixed piecewise-constant u2.

    u2 has shape (N, k); returns the minimizing u1 and its cost.
    """
    spec = prob.spec
    grid = spec.grid
    Q1s = np.stack([spec.Q1(t) for t in grid.nodes])
    c0, S, T = _state_maps(prob)
    u2 = np.asarray(u2, dtype=float).reshape(grid.steps * spec.dims.k)
    c = c0 + np.einsum("inm,m->in", T, u2)
    H, g, const = _cost_terms(prob, Q1s, spec.G1, c, S, prob.R1_bar)
    u, grad = _solve_qp(H, g)
    cost = 0.5 * float(u @ H @ u) + float(g @ u) + const
    return OracleResult(u.reshape(grid.steps, spec.dims.k), cost, grad, 1)


def deterministic_leader_oracle(spec: LQGameSpec) -> OracleResult:
    """Exact discrete leader optimum with the follower responding optimally.

    The inner argmin u1*(u2) = -H1^-1 (g1 + B12 u2) is affine, so the
    bilevel cost is an exact quadratic in u2; both solves are direct.
    """
    prob = build_discrete_problem(spec)
    grid = spec.grid
    N, k = grid.steps, spec.dims.k
    Q1s = np.stack([spec.Q1(t) for t in grid.nodes])
    Q2s = np.stack([spec.Q2(t) for t in grid.nodes])
    c0, S, T = _state_maps(prob)

    # follower optimum as an affine function of u2
    W1 = _quadratic_pieces(prob, Q1s, spec.G1)
    H1 = np.einsum("inm,inp,ipq->mq", S, W1, S, optimize=True)
    for i in range(N):
        H1[i * k : (i + 1) * k, i * k : (i + 1) * k] += prob.R1_bar[i]
    H1 = 0.5 * (H1 + H1.T)
    min_eig = float(np.linalg.eigvalsh(H1).min())
    if min_eig < -PSD_TOL * max(1.0, float(np.abs(H1).max())):
        raise NonConvexError(min_eig)
    g1_const = np.einsum("inm,inp,ip->m", S, W1, c0, optimize=True)
    g1_lin = np.einsum("inm,inp,ipq->mq", S, W1, T, optimize=True)
    u1_const = np.linalg.solve(H1, -g1_const)
    u1_lin = np.linalg.solve(H1, -g1_lin)

    # reduced state map: y = (c0 + S u1_const) + (T + S u1_lin) u2
    c_red = c0 + np.einsum("inm,m->in", S, u1_const)
    T_red = T + np.einsum("inm,mq->inq", S, u1_lin)
    H2, g2, const2 = _cost_terms(prob, Q2s, spec.G2, c_red, T_red, prob.R2_bar)
    u2, grad = _solve_qp(H2, g2)
    cost = 0.5 * float(u2 @ H2 @ u2) + float(g2 @ u2) + const2
    u1 = u1_const + u1_lin @ u2
    return OracleResult(
        u2.reshape(N, k), cost, grad, 1, inner_control=u1.reshape(N, k)
    )


def control_rms_gap(oracle_control: np.ndarray, pipeline_control: np.ndarray) -> float:
    """RMS distance between a step-major oracle control (N, k) and the
    pipeline's node control (N+1, k), compared at step midpoints."""
    mid = 0.5 * (pipeline_control[:-1] + pipeline_control[1:])
    return float(np.sqrt(np.mean((oracle_control - mid) ** 2)))


def perturbation_suite(
    perturbed_cost,
    base_cost: float,
    directions: list,
    eps_list: tuple[float, ...] = (1e-2, 1e-3),
) -> list[dict]:
    """Directional-derivative table for a solved pipeline.

    perturbed_cost(direction, eps) must evaluate the cost at the
    perturbed control under common random numbers.  Each row carries
    the per-eps slopes and the Richardson-extrapolated limit.
    """
    rows = []
    eps_sorted = sorted(eps_list, reverse=True)
    for idx, v in enumerate(directions):
        slopes = {eps: (perturbed_cost(v, eps) - base_cost) / eps for eps in eps_list}
        if len(eps_sorted) >= 2:
            e1, e2 = eps_sorted[0], eps_sorted[1]
            extrapolated = (e1 * slopes[e2] - e2 * slopes[e1]) / (e1 - e2)
        else:
            extrapolated = slopes[eps_sorted[0]]
        rows.append(
            {
                "direction": idx,
                "slopes": {str(eps): s for eps, s in slopes.items()},
                "extrapolated_slope": extrapolated,
            }
        )
    return rows


def oracle_report(
    oracle_cost: float, pipeline_cost: float, rms_gap: float, steps: int
) -> dict:
    denom = max(abs(oracle_cost), 1e-12)
    return {
        "oracle_cost": oracle_cost,
        "pipeline_cost": pipeline_cost,
        "rel_gap": abs(pipeline_cost - oracle_cost) / denom,
        "control_rms_gap": rms_gap,
        "N": steps,
    }
