"""The follower's problem for a given terminal datum and leader control.

The linear BSDE for (phi, eta) is closed exactly by the affine ansatz
phi = alpha(t) + beta(t) W(t), eta = beta(t), valid because coefficients
are deterministic, the terminal datum is affine in W(T) and the leader
control is affine in W(t).  That reduces every BSDE here to a pair of
terminal-value ODEs; the only sampling error left is the Euler scheme
for the auxiliary SDE and the decoupled state reconstruction is exact
pathwise at the terminal and initial nodes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import AffineControl, CoefficientPath, LQGameSpec, TerminalCondition, TimeGrid
from .odeint import OdeDirection, guarded_inv, integrate_matrix_ode
from .riccati import RiccatiPath
from .sampling import MonteCarloConfig, PathBundle, sample_brownian


@dataclass(frozen=True)
class AffineBSDESolution:
    """Solution phi(t) = alpha(t) + beta(t) W(t), eta(t) = beta(t)."""

    alpha: CoefficientPath  # m x 1
    beta: CoefficientPath  # m x d

    def phi_pathwise(self, W: np.ndarray) -> np.ndarray:
        """(paths, N+1, m) values of phi along Brownian paths (d = 1)."""
        a = self.alpha.values[:, :, 0]  # (N+1, m)
        b = self.beta.values[:, :, 0]
        return a[None] + W[:, :, None] * b[None]

    @property
    def eta_values(self) -> np.ndarray:
        """(N+1, m) deterministic eta trajectory (d = 1)."""
        return self.beta.values[:, :, 0]


def solve_affine_bsde(
    drift_lin: Callable[[float], np.ndarray],
    drift_eta: Callable[[float], np.ndarray],
    forcing_const: Callable[[float], np.ndarray],
    forcing_lin: Callable[[float], np.ndarray],
    terminal_const: np.ndarray,
    terminal_lin: np.ndarray,
    grid: TimeGrid,
) -> AffineBSDESolution:
    """Reduce -d(phi) = [M phi + N eta + g(t, W)] dt - eta dW to ODEs.

    With g = g_c(t) + g_l(t) W(t) and phi = alpha + beta W, matching the
    dW and dt parts gives beta' = -M beta - g_l and
    alpha' = -M alpha - N beta - g_c, integrated backward from the
    terminal values by RK4.
    """
    term_c = np.asarray(terminal_const, dtype=float).reshape(-1, 1)
    term_l = np.atleast_2d(np.asarray(terminal_lin, dtype=float))
    m, d = term_l.shape

    def field(t, Y):
        alpha, beta = Y[:, :1], Y[:, 1:]
        M, N = drift_lin(t), drift_eta(t)
        dalpha = -M @ alpha - N @ beta - np.asarray(forcing_const(t)).reshape(m, 1)
        dbeta = -M @ beta - np.atleast_2d(forcing_lin(t))
        return np.hstack([dalpha, dbeta])

    terminal = np.hstack([term_c, term_l])
    combined = integrate_matrix_ode(field, terminal, grid, OdeDirection.BACKWARD)
    return AffineBSDESolution(
        CoefficientPath(grid, combined.values[:, :, :1]),
        CoefficientPath(grid, combined.values[:, :, 1:]),
    )


def solve_phi_eta(spec: LQGameSpec, p1: RiccatiPath, u2: AffineControl) -> AffineBSDESolution:
    """Auxiliary BSDE of the follower, terminal phi(T) = -xi."""
    n = spec.dims.n
    eye = np.eye(n)

    def M(t):
        return spec.A(t) - p1(t) @ spec.Q1(t)

    def N(t):
        return spec.C(t) @ guarded_inv(p1(t) @ spec.S1(t) + eye, t, "(P1 S1 + I)")

    def g_c(t):
        return -spec.B2(t) @ u2.u_const(t)

    def g_l(t):
        return -spec.B2(t) @ u2.u_lin(t)

    return solve_affine_bsde(M, N, g_c, g_l, -spec.xi.a, -spec.xi.b, spec.grid)


def _u2_pathwise(u2: AffineControl, W: np.ndarray) -> np.ndarray:
    """(paths, N+1, k) leader control values along paths (d = 1)."""
    uc = u2.u_const.values[:, :, 0]
    ul = u2.u_lin.values[:, :, 0]
    return uc[None] + W[:, :, None] * ul[None]


def simulate_varphi(
    spec: LQGameSpec,
    p1: RiccatiPath,
    p2: RiccatiPath,
    phieta: AffineBSDESolution,
    u2: AffineControl,
    bundle: PathBundle,
) -> np.ndarray:
    """Euler-Maruyama for the adjoint-offset SDE, varphi(0) = 0.

    Returns (paths, N+1, n).  Drift and diffusion matrices are assembled
    at the left node of each step; phi and eta enter through the affine
    representation evaluated on the same Brownian paths.
    """
    if spec.dims.d != 1:
        raise NotImplementedError("path simulation supports d = 1 only")
    n = spec.dims.n
    grid = spec.grid
    eye = np.eye(n)
    N = grid.steps

    phi = phieta.phi_pathwise(bundle.W)
    eta = phieta.eta_values
    u2p = _u2_pathwise(u2, bundle.W)

    P = bundle.n_paths
    varphi = np.zeros((P, N + 1, n))
    dt = grid.dt
    for i in range(N):
        t = grid.nodes[i]
        A, B1, B2, C = spec.A(t), spec.B1(t), spec.B2(t), spec.C(t)
        S1 = spec.S1(t)
        P1, P2 = p1.values[i], p2.values[i]
        R1inv = guarded_inv(spec.R1(t), t, "R1")
        inv1 = guarded_inv(P1 @ S1 + eye, t, "(P1 S1 + I)")
        inv2 = guarded_inv(eye + P2 @ P1, t, "(I + P2 P1)")

        drift_mat = -P2 @ B1 @ R1inv @ B1.T - P2 @ C @ inv1 @ P1 @ C.T + A.T
        drift = (
            varphi[:, i] @ drift_mat.T
            + u2p[:, i] @ (P2 @ B2).T
            - (P2 @ C @ inv1 @ eta[i])[None]
        )
        diff_mat = (P1 @ P2 + eye) @ inv1 @ C.T @ inv2
        diffusion = (
            varphi[:, i] @ diff_mat.T
            - phi[:, i] @ (diff_mat @ P2).T
            + ((P2 - S1) @ inv1 @ eta[i])[None]
        )
        varphi[:, i + 1] = varphi[:, i] + drift * dt + diffusion * bundle.dW[:, i, None]
    return varphi


@dataclass
class FollowerEnsemble:
    """Pathwise follower solution on a Brownian ensemble (d = 1).

    Arrays are (paths, N+1, dim): x is the adjoint state, (y, z) the
    backward state pair, u1 the feedback control and u1_adjoint its
    algebraically equal adjoint representation.
    """

    grid: TimeGrid
    bundle: PathBundle
    varphi: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    u1: np.ndarray = None
    u1_adjoint: np.ndarray = None
    u2: np.ndarray = None
    J1: tuple[float, float] = None

    @property
    def seed(self) -> int:
        return self.bundle.seed


def reconstruct_follower_state(
    spec: LQGameSpec,
    p1: RiccatiPath,
    p2: RiccatiPath,
    phieta: AffineBSDESolution,
    varphi: np.ndarray,
    bundle: PathBundle,
) -> FollowerEnsemble:
    """Recover (x, y, z) pathwise from the decoupling relations.

    x = (I + P2 P1)^-1 (varphi - P2 phi); y = -P1 x - phi;
    z = -(P1 S1 + I)^-1 (P1 C^T x + eta).  The terminal identity
    y(T) = xi and the initial coupling x(0) = G1 y(0) hold exactly.
    """
    n = spec.dims.n
    grid = spec.grid
    eye = np.eye(n)
    phi = phieta.phi_pathwise(bundle.W)
    eta = phieta.eta_values

    x = np.empty_like(phi)
    y = np.empty_like(phi)
    z = np.empty_like(phi)
    for i, t in enumerate(grid.nodes):
        P1, P2 = p1.values[i], p2.values[i]
        S1, C = spec.S1(t), spec.C(t)
        inv2 = guarded_inv(eye + P2 @ P1, t, "(I + P2 P1)")
        inv1 = guarded_inv(P1 @ S1 + eye, t, "(P1 S1 + I)")
        x[:, i] = varphi[:, i] @ inv2.T - phi[:, i] @ (inv2 @ P2).T
        y[:, i] = -x[:, i] @ P1.T - phi[:, i]
        z[:, i] = -x[:, i] @ (inv1 @ P1 @ C.T).T - (inv1 @ eta[i])[None]
    return FollowerEnsemble(grid, bundle, varphi, x, y, z)


def follower_feedback(spec: LQGameSpec, p2: RiccatiPath, ens: FollowerEnsemble) -> np.ndarray:
    """Feedback control u1 = -R1^-1 B1^T (P2 y + varphi), stored on the ensemble.

    The adjoint representation -R1^-1 B1^T x is computed alongside; the
    two agree to roundoff through the identity x = P2 y + varphi.
    """
    grid = spec.grid
    P = ens.y.shape[0]
    u1 = np.empty((P, grid.steps + 1, spec.dims.k))
    u1_adj = np.empty_like(u1)
    for i, t in enumerate(grid.nodes):
        gain = guarded_inv(spec.R1(t), t, "R1") @ spec.B1(t).T
        u1[:, i] = -(ens.y[:, i] @ p2.values[i].T + ens.varphi[:, i]) @ gain.T
        u1_adj[:, i] = -ens.x[:, i] @ gain.T
    gap = float(np.max(np.abs(u1 - u1_adj), initial=0.0))
    if gap > 1e-10 * max(1.0, float(np.max(np.abs(u1), initial=0.0))):
        raise AssertionError(f"feedback/adjoint control forms disagree by {gap:.3e}")
    ens.u1, ens.u1_adjoint = u1, u1_adj
    return u1


def quadratic_cost(
    grid: TimeGrid,
    y: np.ndarray,
    u: np.ndarray,
    z: np.ndarray,
    Q: CoefficientPath,
    R: CoefficientPath,
    S: CoefficientPath,
    G: np.ndarray,
) -> tuple[float, float]:
    """0.5 E{ int (y'Qy + u'Ru + z'Sz) dt + y(0)'G y(0) }, trapezoidal in time.

    Returns (mean, standard error) over the path ensemble.
    """
    integrand = (
        np.einsum("pij,ijk,pik->pi", y, Q.values, y, optimize=True)
        + np.einsum("pij,ijk,pik->pi", u, R.values, u, optimize=True)
        + np.einsum("pij,ijk,pik->pi", z, S.values, z, optimize=True)
    )
    time_integral = np.trapezoid(integrand, dx=grid.dt, axis=1)
    initial = np.einsum("pj,jk,pk->p", y[:, 0], G, y[:, 0])
    per_path = 0.5 * (time_integral + initial)
    mean = float(per_path.mean())
    n_paths = per_path.shape[0]
    stderr = float(per_path.std(ddof=1) / np.sqrt(n_paths)) if n_paths > 1 else 0.0
    return mean, stderr


def follower_cost(spec: LQGameSpec, ens: FollowerEnsemble) -> tuple[float, float]:
    ens.J1 = quadratic_cost(spec.grid, ens.y, ens.u1, ens.z, spec.Q1, spec.R1, spec.S1, spec.G1)
    return ens.J1


def follower_pipeline(
    spec: LQGameSpec,
    p1: RiccatiPath,
    p2: RiccatiPath,
    u2: AffineControl,
    mc: MonteCarloConfig | None = None,
    bundle: PathBundle | None = None,
) -> FollowerEnsemble:
    """Full follower solve for an exogenous affine leader control."""
    if bundle is None:
        mc = mc or MonteCarloConfig()
        bundle = sample_brownian(spec.grid, mc.paths, mc.seed)
    phieta = solve_phi_eta(spec, p1, u2)
    varphi = simulate_varphi(spec, p1, p2, phieta, u2, bundle)
    ens = reconstruct_follower_state(spec, p1, p2, phieta, varphi, bundle)
    ens.u2 = _u2_pathwise(u2, bundle.W)
    follower_feedback(spec, p2, ens)
    follower_cost(spec, ens)
    return ens


def closed_loop_residual(
    spec: LQGameSpec, p2: RiccatiPath, ens: FollowerEnsemble
) -> tuple[float, float]:
    """Discrete residual of the closed-loop BSDE for (y, z).

    r_i = y_{i+1} - y_i + drift_i dt - z_i dW_i per path and step; the
    reported RMS is the root-mean over paths of the accumulated
    squared residual sum_i ||r_i||^2, which scales like O(dt) for a
    consistent first-order scheme.  Also returns the max single-step
    residual.
    """
    grid = spec.grid
    resid = []
    for i in range(grid.steps):
        t = grid.nodes[i]
        A, B1, B2, C = spec.A(t), spec.B1(t), spec.B2(t), spec.C(t)
        R1inv = guarded_inv(spec.R1(t), t, "R1")
        gain = B1 @ R1inv @ B1.T
        drift = (
            ens.y[:, i] @ (A - gain @ p2.values[i]).T
            - ens.varphi[:, i] @ gain.T
            + ens.u2[:, i] @ B2.T
            + ens.z[:, i] @ C.T
        )
        r = ens.y[:, i + 1] - ens.y[:, i] + drift * grid.dt - ens.z[:, i] * ens.bundle.dW[:, i, None]
        resid.append(r)
    resid = np.stack(resid, axis=1)
    accumulated = np.sum(resid**2, axis=(1, 2))
    rms = float(np.sqrt(np.mean(accumulated)))
    return rms, float(np.max(np.abs(resid)))


def perturbed_follower_cost(
    spec: LQGameSpec,
    ens: FollowerEnsemble,
    v: AffineControl,
    eps: float,
) -> float:
    """J1 at control u1 + eps*v, same paths (common random numbers).

    The state perturbation solves the homogeneous BSDE with forcing
    B1 v and zero terminal value, closed by the affine ansatz, so the
    perturbed trajectories are exact in the direction of v.
    """
    delta = solve_affine_bsde(
        spec.A,
        spec.C,
        lambda t: spec.B1(t) @ v.u_const(t),
        lambda t: spec.B1(t) @ v.u_lin(t),
        np.zeros(spec.dims.n),
        np.zeros((spec.dims.n, spec.dims.d)),
        spec.grid,
    )
    # -d(dy) = [A dy + C dz + B1 v] dt - dz dW has solution dy = alpha + beta W
    dy = delta.phi_pathwise(ens.bundle.W)
    dz = np.broadcast_to(delta.eta_values[None], dy.shape)
    dv = _u2_pathwise(v, ens.bundle.W)
    mean, _ = quadratic_cost(
        spec.grid,
        ens.y + eps * dy,
        ens.u1 + eps * dv,
        ens.z + eps * dz,
        spec.Q1,
        spec.R1,
        spec.S1,
        spec.G1,
    )
    return mean


def check_follower_stationarity(
    spec: LQGameSpec,
    ens: FollowerEnsemble,
    v: AffineControl,
    eps_list: tuple[float, ...] = (1e-2, 1e-3),
) -> dict:
    """First-order optimality of the computed feedback control.

    Algebraic part: max ||B1^T x + R1 u1|| over nodes and paths (zero by
    construction).  Variational part: directional derivatives
    [J1(u1 + eps v) - J1(u1)] / eps under common random numbers, plus
    the Richardson-extrapolated limit (exact for a quadratic cost).
    """
    grid = spec.grid
    worst = 0.0
    for i, t in enumerate(grid.nodes):
        r = ens.x[:, i] @ spec.B1(t) + ens.u1[:, i] @ spec.R1(t).T
        worst = max(worst, float(np.max(np.abs(r), initial=0.0)))
    base = ens.J1[0]
    slopes = {}
    for eps in eps_list:
        slopes[eps] = (perturbed_follower_cost(spec, ens, v, eps) - base) / eps
    eps_sorted = sorted(eps_list, reverse=True)
    if len(eps_sorted) >= 2:
        e1, e2 = eps_sorted[0], eps_sorted[1]
        extrapolated = (e1 * slopes[e2] - e2 * slopes[e1]) / (e1 - e2)
    else:
        extrapolated = slopes[eps_sorted[0]]
    return {
        "algebraic_residual": worst,
        "slopes": slopes,
        "extrapolated_slope": extrapolated,
    }


def follower_paths_csv(ens: FollowerEnsemble, max_paths: int | None = None) -> str:
    """Per-path CSV: path,t,y_*,z_*,u1_*,x_* with 17 significant digits."""
    n = ens.y.shape[2]
    k = ens.u1.shape[2]
    header = (
        "path,t,"
        + ",".join(f"y_{j + 1}" for j in range(n))
        + ","
        + ",".join(f"z_{j + 1}1" for j in range(n))
        + ","
        + ",".join(f"u1_{j + 1}" for j in range(k))
        + ","
        + ",".join(f"x_{j + 1}" for j in range(n))
    )
    lines = [header]
    n_paths = ens.y.shape[0] if max_paths is None else min(max_paths, ens.y.shape[0])
    for p in range(n_paths):
        for i, t in enumerate(ens.grid.nodes):
            vals = np.concatenate([ens.y[p, i], ens.z[p, i], ens.u1[p, i], ens.x[p, i]])
            lines.append(f"{p},{t:.17g}," + ",".join(f"{x:.17g}" for x in vals))
    return "\n".join(lines) + "\n"
