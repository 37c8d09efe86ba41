"""The leader's problem on the stacked 2n-dimensional system.

The leader anticipates the follower's feedback response, which turns the
outer problem into optimal control of a forward-backward pair
(X, (Y, Z)) of doubled dimension.  Two Riccati solutions Pi1, Pi2
decouple it; the optimal trajectories are then reconstructed pathwise
from one auxiliary BSDE (solved by an affine ansatz) and one auxiliary
SDE (Euler-Maruyama), so the terminal condition Y(T) = xi-hat and the
initial coupling X(0) = G2-hat Y(0) hold exactly by construction.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .follower import (
    AffineBSDESolution,
    FollowerEnsemble,
    _u2_pathwise,
    follower_pipeline,
    quadratic_cost,
    solve_affine_bsde,
)
from .model import (
    AffineControl,
    CoefficientPath,
    LQGameSpec,
    TerminalCondition,
    TimeGrid,
)
from .odeint import guarded_inv
from .riccati import (
    RiccatiPath,
    StackedSystem,
    build_stacked_system,
    solve_p1,
    solve_p2,
    solve_pi1,
    solve_pi2,
)
from .sampling import MonteCarloConfig, PathBundle, sample_brownian


def solve_tilde_phi(
    sys: StackedSystem, R2: CoefficientPath, pi1: RiccatiPath
) -> AffineBSDESolution:
    """Auxiliary BSDE of the leader, terminal value -xi-hat.

    The driver is K phi-tilde - L eta-tilde with
    K = A1h - Pi1 F1h + (Pi1 B1h - B2h) R2^-1 B1h^T
        + (Pi1 D1h - C1h^T)(I + Pi1 S1h)^-1 Pi1 D1h^T
    and L = (Pi1 D1h - C1h^T)(I + Pi1 S1h)^-1.
    """
    m = 2 * sys.n
    eye = np.eye(m)

    def K(t):
        A1, B1, B2 = sys.A1h(t), sys.B1h(t), sys.B2h(t)
        C1, D1, F1, S1 = sys.C1h(t), sys.D1h(t), sys.F1h(t), sys.S1h(t)
        Pi1 = pi1(t)
        R2inv = guarded_inv(R2(t), t, "R2")
        inv_s = guarded_inv(eye + Pi1 @ S1, t, "(I + Pi1 S1-hat)")
        return (
            A1 - Pi1 @ F1 + (Pi1 @ B1 - B2) @ R2inv @ B1.T
            + (Pi1 @ D1 - C1.T) @ inv_s @ Pi1 @ D1.T
        )

    def minus_L(t):
        C1, D1, S1 = sys.C1h(t), sys.D1h(t), sys.S1h(t)
        Pi1 = pi1(t)
        inv_s = guarded_inv(eye + Pi1 @ S1, t, "(I + Pi1 S1-hat)")
        return -(Pi1 @ D1 - C1.T) @ inv_s

    zero = np.zeros((m, 1))
    return solve_affine_bsde(
        K,
        minus_L,
        lambda t: zero,
        lambda t: np.zeros((m, sys.xih.b.shape[1])),
        -sys.xih.a,
        -sys.xih.b,
        sys.grid,
    )


def _diffusion_matrices(sys, pi1, pi2, t, i, mode):
    """Node-wise diffusion coefficients of the forward offset.

    Returns (diff_varphi, diff_phi, diff_eta) multiplying the current
    offset, the backward offset, and its martingale loading.  Two
    assemblies are provided:

    - "display": the closed-form coefficient display, term by term;
    - "consistent": assembled from the pathwise relations
      gamma = C1h X + D1h^T Y + (Pi2 - S1h)(I + Pi1 S1h)^-1
      (Pi1 C1h X + Pi1 D1h^T Y + eta), with X, Y expressed through the
      two offsets.  This choice makes the reconstructed (Y, Z) satisfy
      the closed-loop backward equation without a systematic defect;
      the two assemblies differ when Pi1 and Pi2 do not commute (see
      diffusion_consistency_gap).
    """
    m = 2 * sys.n
    eye = np.eye(m)
    C1, D1, S1 = sys.C1h(t), sys.D1h(t), sys.S1h(t)
    Pi1, Pi2 = pi1.values[i], pi2.values[i]
    inv_s = guarded_inv(eye + Pi1 @ S1, t, "(I + Pi1 S1-hat)")
    inv_12 = guarded_inv(eye + Pi1 @ Pi2, t, "(I + Pi1 Pi2)")
    inv_21 = guarded_inv(eye + Pi2 @ Pi1, t, "(I + Pi2 Pi1)")
    mix = (Pi2 - S1) @ inv_s
    if mode == "display":
        mixer = mix @ Pi1
        diff_varphi = -(
            D1.T @ inv_12 @ Pi1
            + mixer @ D1.T @ inv_21 @ Pi1
            - C1 @ inv_21
            - mixer @ C1 @ inv_21
        )
        diff_phi = -(
            D1.T @ inv_12
            + mixer @ D1.T @ inv_21
            + C1 @ inv_21 @ Pi2
            + mixer @ C1 @ inv_21 @ Pi2
        )
    elif mode == "consistent":
        cfac = C1 + mix @ Pi1 @ C1
        dfac = D1.T + mix @ Pi1 @ D1.T
        diff_varphi = cfac @ inv_21 - dfac @ inv_12 @ Pi1
        diff_phi = -cfac @ inv_21 @ Pi2 - dfac @ inv_12
    else:
        raise ValueError(f"unknown diffusion mode {mode!r}")
    return diff_varphi, diff_phi, mix


def diffusion_consistency_gap(sys: StackedSystem, pi1: RiccatiPath, pi2: RiccatiPath) -> float:
    """Max node-wise gap between the two diffusion assemblies.

    Zero whenever Pi1 and Pi2 commute (e.g. scalar stacked blocks or
    vanishing C); a nonzero value means the displayed coefficients do
    not satisfy the exact pathwise relation linking the forward
    diffusion to Z, and the "consistent" assembly should be preferred
    for estimators that rely on that relation.
    """
    gap = 0.0
    for i, t in enumerate(sys.grid.nodes):
        disp = _diffusion_matrices(sys, pi1, pi2, t, i, "display")
        cons = _diffusion_matrices(sys, pi1, pi2, t, i, "consistent")
        for a, b in zip(disp, cons):
            gap = max(gap, float(np.max(np.abs(a - b))))
    return gap


def simulate_tilde_varphi(
    sys: StackedSystem,
    R2: CoefficientPath,
    pi1: RiccatiPath,
    pi2: RiccatiPath,
    tilde_phi: AffineBSDESolution,
    bundle: PathBundle,
    diffusion: str = "display",
) -> np.ndarray:
    """Euler-Maruyama for the leader's forward offset, tilde-varphi(0) = 0.

    Coefficient matrices follow the drift/diffusion displays of the
    decoupled system term by term (diffusion="display") or the exact
    pathwise Z-relation (diffusion="consistent"); returns
    (paths, N+1, 2n).
    """
    m = 2 * sys.n
    grid = sys.grid
    eye = np.eye(m)
    N = grid.steps

    phi = tilde_phi.phi_pathwise(bundle.W)
    eta = tilde_phi.eta_values

    P = bundle.n_paths
    tv = np.zeros((P, N + 1, m))
    dt = grid.dt
    for i in range(N):
        t = grid.nodes[i]
        A1, B1, B2 = sys.A1h(t), sys.B1h(t), sys.B2h(t)
        C1, F2 = sys.C1h(t), sys.F2h(t)
        Pi1, Pi2 = pi1.values[i], pi2.values[i]
        D1, S1 = sys.D1h(t), sys.S1h(t)
        R2inv = guarded_inv(R2(t), t, "R2")
        inv_s = guarded_inv(eye + Pi1 @ S1, t, "(I + Pi1 S1-hat)")
        coupler = (D1 + Pi2 @ C1.T) @ inv_s

        drift_mat = A1.T + Pi2 @ F2 - (B1 + Pi2 @ B2) @ R2inv @ B2.T - coupler @ Pi1 @ C1
        drift_eta = -coupler

        diff_varphi, diff_phi, diff_eta = _diffusion_matrices(sys, pi1, pi2, t, i, diffusion)

        drift = tv[:, i] @ drift_mat.T + (drift_eta @ eta[i])[None]
        noise_load = (
            tv[:, i] @ diff_varphi.T
            + phi[:, i] @ diff_phi.T
            + (diff_eta @ eta[i])[None]
        )
        tv[:, i + 1] = tv[:, i] + drift * dt + noise_load * bundle.dW[:, i, None]
    return tv


@dataclass
class LeaderEnsemble:
    """Pathwise stacked solution with named block views (d = 1).

    X stacks (adjoint-forward offset, forward state), Y stacks
    (adjoint-backward state, follower backward state); the block
    properties expose the n-dimensional components by name.
    """

    grid: TimeGrid
    bundle: PathBundle
    n: int
    X: np.ndarray  # (paths, N+1, 2n)
    Y: np.ndarray
    Z: np.ndarray
    tilde_varphi: np.ndarray
    u2: np.ndarray = None  # (paths, N+1, k)
    u1: np.ndarray = None
    u1_stacked: np.ndarray = None
    J2: tuple[float, float] = None

    @property
    def phibar(self) -> np.ndarray:
        return self.X[:, :, : self.n]

    @property
    def q(self) -> np.ndarray:
        return self.X[:, :, self.n :]

    @property
    def p(self) -> np.ndarray:
        return self.Y[:, :, : self.n]

    @property
    def ybar(self) -> np.ndarray:
        return self.Y[:, :, self.n :]

    @property
    def kbar(self) -> np.ndarray:
        return self.Z[:, :, : self.n]

    @property
    def zbar(self) -> np.ndarray:
        return self.Z[:, :, self.n :]

    @property
    def seed(self) -> int:
        return self.bundle.seed


def reconstruct_XYZ(
    sys: StackedSystem,
    pi1: RiccatiPath,
    pi2: RiccatiPath,
    tilde_phi: AffineBSDESolution,
    tilde_varphi: np.ndarray,
    bundle: PathBundle,
) -> LeaderEnsemble:
    """Recover (X, Y, Z) from the two decoupling relations, per path and node.

    X = (I + Pi2 Pi1)^-1 (-Pi2 phi-tilde + varphi-tilde);
    Y = -(I + Pi1 Pi2)^-1 (Pi1 varphi-tilde + phi-tilde);
    Z = -(I + Pi1 S1h)^-1 (Pi1 C1h X + Pi1 D1h^T Y + eta-tilde).
    """
    m = 2 * sys.n
    grid = sys.grid
    eye = np.eye(m)
    phi = tilde_phi.phi_pathwise(bundle.W)
    eta = tilde_phi.eta_values

    X = np.empty_like(phi)
    Y = np.empty_like(phi)
    Z = np.empty_like(phi)
    for i, t in enumerate(grid.nodes):
        Pi1, Pi2 = pi1.values[i], pi2.values[i]
        C1, D1, S1 = sys.C1h(t), sys.D1h(t), sys.S1h(t)
        inv_21 = guarded_inv(eye + Pi2 @ Pi1, t, "(I + Pi2 Pi1)")
        inv_12 = guarded_inv(eye + Pi1 @ Pi2, t, "(I + Pi1 Pi2)")
        inv_s = guarded_inv(eye + Pi1 @ S1, t, "(I + Pi1 S1-hat)")
        X[:, i] = tilde_varphi[:, i] @ inv_21.T - phi[:, i] @ (inv_21 @ Pi2).T
        Y[:, i] = -(tilde_varphi[:, i] @ (inv_12 @ Pi1).T + phi[:, i] @ inv_12.T)
        Z[:, i] = -(
            X[:, i] @ (inv_s @ Pi1 @ C1).T
            + Y[:, i] @ (inv_s @ Pi1 @ D1.T).T
            + (inv_s @ eta[i])[None]
        )
    return LeaderEnsemble(grid, bundle, sys.n, X, Y, Z, tilde_varphi)


def decoupling_consistency(ens: LeaderEnsemble, pi2: RiccatiPath) -> float:
    """Max norm of X - Pi2 Y - varphi-tilde over paths and nodes.

    The reconstruction uses both decoupling relations; their mutual
    consistency is the sanity check of the whole leader solve.
    """
    gap = ens.X - np.einsum("tij,ptj->pti", pi2.values, ens.Y) - ens.tilde_varphi
    return float(np.max(np.abs(gap), initial=0.0))


def leader_feedback(
    sys: StackedSystem, R2: CoefficientPath, pi2: RiccatiPath, ens: LeaderEnsemble
) -> np.ndarray:
    """Feedback control u2 = -R2^-1 (B1h + Pi2 B2h)^T Y - R2^-1 B2h^T varphi-tilde."""
    grid = sys.grid
    k = sys.B2h.shape[1]
    u2 = np.empty((ens.Y.shape[0], grid.steps + 1, k))
    for i, t in enumerate(grid.nodes):
        B1, B2 = sys.B1h(t), sys.B2h(t)
        R2inv = guarded_inv(R2(t), t, "R2")
        gain_y = R2inv @ (B1 + pi2.values[i] @ B2).T
        gain_v = R2inv @ B2.T
        u2[:, i] = -(ens.Y[:, i] @ gain_y.T + ens.tilde_varphi[:, i] @ gain_v.T)
    ens.u2 = u2
    return u2


def equilibrium_follower_control(
    spec: LQGameSpec, p2: RiccatiPath, pi2: RiccatiPath, ens: LeaderEnsemble
) -> np.ndarray:
    """The follower's control along the leader-optimal trajectory.

    Stacked form: u1 = -R1^-1 B1^T [(0, P2) + (I, 0) Pi2] Y
                       - R1^-1 B1^T (I, 0) varphi-tilde;
    block form: -R1^-1 B1^T (P2 ybar + phibar).  The two are equal
    through X = Pi2 Y + varphi-tilde; both are computed and compared.
    """
    n, k = spec.dims.n, spec.dims.k
    grid = spec.grid
    u1 = np.empty((ens.Y.shape[0], grid.steps + 1, k))
    u1_blk = np.empty_like(u1)
    sel_first = np.zeros((n, 2 * n))
    sel_first[:, :n] = np.eye(n)
    for i, t in enumerate(grid.nodes):
        gain = guarded_inv(spec.R1(t), t, "R1") @ spec.B1(t).T
        stack = np.zeros((n, 2 * n))
        stack[:, n:] = p2.values[i]
        mat_y = gain @ (stack + sel_first @ pi2.values[i])
        u1[:, i] = -(ens.Y[:, i] @ mat_y.T + ens.tilde_varphi[:, i, :n] @ gain.T)
        u1_blk[:, i] = -(ens.ybar[:, i] @ (gain @ p2.values[i]).T + ens.phibar[:, i] @ gain.T)
    gap = float(np.max(np.abs(u1 - u1_blk), initial=0.0))
    if gap > 1e-10 * max(1.0, float(np.max(np.abs(u1), initial=0.0))):
        raise AssertionError(f"stacked/block follower control forms disagree by {gap:.3e}")
    ens.u1, ens.u1_stacked = u1_blk, u1
    return u1


def leader_cost(spec: LQGameSpec, ens: LeaderEnsemble) -> tuple[float, float]:
    ens.J2 = quadratic_cost(
        spec.grid, ens.ybar, ens.u2, ens.zbar, spec.Q2, spec.R2, spec.S2, spec.G2
    )
    return ens.J2


def leader_bsde_residual(
    sys: StackedSystem, R2: CoefficientPath, pi2: RiccatiPath, ens: LeaderEnsemble
) -> tuple[float, float]:
    """Discrete residual of the closed-loop BSDE for (Y, Z).

    Same convention as the follower residual: RMS of the per-path
    accumulated squared step residuals (O(dt)) plus the max single-step
    residual.
    """
    grid = sys.grid
    resid = []
    for i in range(grid.steps):
        t = grid.nodes[i]
        A1, B1, B2 = sys.A1h(t), sys.B1h(t), sys.B2h(t)
        C1, F2 = sys.C1h(t), sys.F2h(t)
        Pi2 = pi2.values[i]
        R2inv = guarded_inv(R2(t), t, "R2")
        drift_y = A1 + F2 @ Pi2 - B2 @ R2inv @ (B1 + Pi2 @ B2).T
        forcing = F2 - B2 @ R2inv @ B2.T
        drift = (
            ens.Y[:, i] @ drift_y.T
            + ens.Z[:, i] @ C1
            + ens.tilde_varphi[:, i] @ forcing.T
        )
        r = (
            ens.Y[:, i + 1] - ens.Y[:, i] + drift * grid.dt
            - ens.Z[:, i] * ens.bundle.dW[:, i, None]
        )
        resid.append(r)
    resid = np.stack(resid, axis=1)
    accumulated = np.sum(resid**2, axis=(1, 2))
    return float(np.sqrt(np.mean(accumulated))), float(np.max(np.abs(resid)))


@dataclass
class StackelbergSolution:
    """Everything produced by one end-to-end equilibrium solve."""

    spec: LQGameSpec
    p1: RiccatiPath
    p2: RiccatiPath
    system: StackedSystem
    pi1: RiccatiPath
    pi2: RiccatiPath
    tilde_phi: AffineBSDESolution
    ensemble: LeaderEnsemble

    @property
    def J2(self) -> tuple[float, float]:
        return self.ensemble.J2


def solve_equilibrium(
    spec: LQGameSpec,
    mc: MonteCarloConfig | None = None,
    bundle: PathBundle | None = None,
    hat_c1_source: str = "dynamics",
    diffusion: str = "display",
) -> StackelbergSolution:
    """Full leader pipeline: Riccati solves, auxiliary problems, reconstruction."""
    if bundle is None:
        mc = mc or MonteCarloConfig()
        bundle = sample_brownian(spec.grid, mc.paths, mc.seed)
    p1 = solve_p1(spec)
    p2 = solve_p2(spec, p1)
    sys = build_stacked_system(spec, p1, p2, hat_c1_source=hat_c1_source)
    pi1 = solve_pi1(sys, spec.R2)
    pi2 = solve_pi2(sys, spec.R2, pi1)
    tilde_phi = solve_tilde_phi(sys, spec.R2, pi1)
    tilde_varphi = simulate_tilde_varphi(
        sys, spec.R2, pi1, pi2, tilde_phi, bundle, diffusion=diffusion
    )
    ens = reconstruct_XYZ(sys, pi1, pi2, tilde_phi, tilde_varphi, bundle)
    leader_feedback(sys, spec.R2, pi2, ens)
    equilibrium_follower_control(spec, p2, pi2, ens)
    leader_cost(spec, ens)
    return StackelbergSolution(spec, p1, p2, sys, pi1, pi2, tilde_phi, ens)


def _zero_terminal(spec: LQGameSpec) -> LQGameSpec:
    xi0 = TerminalCondition(np.zeros(spec.dims.n), np.zeros((spec.dims.n, spec.dims.d)))
    return dataclasses.replace(spec, xi=xi0)


def follower_response_delta(
    spec: LQGameSpec, p1: RiccatiPath, p2: RiccatiPath, v: AffineControl, bundle: PathBundle
) -> FollowerEnsemble:
    """The follower's optimal-response derivative in direction v.

    The response map (u2, xi) -> (y, z, u1) is jointly affine, so the
    derivative is the full response to control v with zero terminal
    datum, on the same Brownian paths.
    """
    return follower_pipeline(_zero_terminal(spec), p1, p2, v, bundle=bundle)


def perturbed_leader_cost(
    sol: StackelbergSolution, v: AffineControl, eps: float, delta: FollowerEnsemble | None = None
) -> float:
    """J2 at u2 + eps*v with the follower re-responding, common random numbers."""
    if delta is None:
        delta = follower_response_delta(sol.spec, sol.p1, sol.p2, v, sol.ensemble.bundle)
    dv = _u2_pathwise(v, sol.ensemble.bundle.W)
    spec, ens = sol.spec, sol.ensemble
    mean, _ = quadratic_cost(
        spec.grid,
        ens.ybar + eps * delta.y,
        ens.u2 + eps * dv,
        ens.zbar + eps * delta.z,
        spec.Q2,
        spec.R2,
        spec.S2,
        spec.G2,
    )
    return mean


def check_leader_stationarity(
    sol: StackelbergSolution,
    v: AffineControl,
    eps_list: tuple[float, ...] = (1e-2, 1e-3),
) -> dict:
    """First-order optimality of the leader's feedback control.

    Algebraic part: max ||B1h^T Y + B2h^T X + R2 u2|| over nodes and
    paths (zero when Pi2 is symmetric).  Variational part: directional
    derivatives of the true bilevel cost — the follower's optimal
    response to u2 + eps*v is recomputed exactly through the affine
    response map, under common random numbers — with Richardson
    extrapolation over the eps list.
    """
    sys, ens = sol.system, sol.ensemble
    worst = 0.0
    for i, t in enumerate(sys.grid.nodes):
        r = (
            ens.Y[:, i] @ sys.B1h(t)
            + ens.X[:, i] @ sys.B2h(t)
            + ens.u2[:, i] @ sol.spec.R2(t).T
        )
        worst = max(worst, float(np.max(np.abs(r), initial=0.0)))
    delta = follower_response_delta(sol.spec, sol.p1, sol.p2, v, ens.bundle)
    base = ens.J2[0]
    slopes = {}
    for eps in eps_list:
        slopes[eps] = (perturbed_leader_cost(sol, v, eps, delta) - base) / eps
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


def terminal_defect(sys: StackedSystem, ens: LeaderEnsemble) -> float:
    """Max over paths of ||Y(T) - xi-hat||, exact up to roundoff."""
    xi_hat = ens.bundle.W[:, -1, None] * sys.xih.b[:, 0][None] + sys.xih.a[None]
    return float(np.max(np.abs(ens.Y[:, -1] - xi_hat), initial=0.0))


def initial_coupling_defect(sys: StackedSystem, ens: LeaderEnsemble) -> float:
    """Max over paths of ||X(0) - G2-hat Y(0)||, exact up to roundoff."""
    return float(np.max(np.abs(ens.X[:, 0] - ens.Y[:, 0] @ sys.G2h.T), initial=0.0))


def leader_paths_csv(ens: LeaderEnsemble, max_paths: int | None = None) -> str:
    """Per-path CSV with block-named columns, 17 significant digits."""
    n = ens.n
    k = ens.u2.shape[2]

    def cols(prefix, count):
        return ",".join(f"{prefix}_{j + 1}" for j in range(count))

    header = "path,t," + ",".join(
        [cols("phibar", n), cols("q", n), cols("p", n), cols("ybar", n),
         cols("k", n), cols("zbar", n), cols("u1", k), cols("u2", k)]
    )
    lines = [header]
    n_paths = ens.Y.shape[0] if max_paths is None else min(max_paths, ens.Y.shape[0])
    for p in range(n_paths):
        for i, t in enumerate(ens.grid.nodes):
            vals = np.concatenate(
                [ens.phibar[p, i], ens.q[p, i], ens.p[p, i], ens.ybar[p, i],
                 ens.kbar[p, i], ens.zbar[p, i], ens.u1[p, i], ens.u2[p, i]]
            )
            lines.append(f"{p},{t:.17g}," + ",".join(f"{x:.17g}" for x in vals))
    return "\n".join(lines) + "\n"
