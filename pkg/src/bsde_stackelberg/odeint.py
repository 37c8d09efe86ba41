"""Matrix ODE integration and matrix-exponential machinery.

Classical RK4 on the game's uniform time grid, in both directions.
Backward problems are integrated as forward problems in reversed time
(s = T - t) so both directions share one code path.  A separate
4th-order Magnus propagator provides linear-system transition matrices;
the Riccati closed forms are built on it.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from .model import CoefficientPath, TimeGrid

COND_LIMIT = 1e12


class DivergenceError(RuntimeError):
    """Integration produced a non-finite or exploding iterate."""

    def __init__(self, t: float, message: str = ""):
        self.t = t
        super().__init__(message or f"solution diverged at t={t:.6g}")


class SingularityError(RuntimeError):
    """A required matrix inverse is numerically singular."""

    def __init__(self, t: float, label: str):
        self.t = t
        self.label = label
        super().__init__(f"{label} numerically singular at t={t:.6g}")


def guarded_inv(m: np.ndarray, t: float, label: str) -> np.ndarray:
    """Inverse with a condition-number gate (threshold 1e12)."""
    m = np.atleast_2d(m)
    if not np.all(np.isfinite(m)):
        raise SingularityError(t, label)
    cond = np.linalg.cond(m)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularityError(t, label)
    return np.linalg.inv(m)


class OdeDirection(enum.Enum):
    FORWARD = "forward"  # value given at t = 0
    BACKWARD = "backward"  # value given at t = T


def integrate_matrix_ode(
    field: Callable[[float, np.ndarray], np.ndarray],
    boundary_value: np.ndarray,
    grid: TimeGrid,
    direction: OdeDirection,
    postprocess: Callable[[np.ndarray], np.ndarray] | None = None,
    max_norm: float = 1e12,
) -> CoefficientPath:
    """Classical RK4 for dM/dt = field(t, M) with one boundary value.

    postprocess (e.g. symmetrization) is applied to the iterate after
    every step.  Non-finite or exploding iterates raise DivergenceError
    with the first bad time.
    """
    m0 = np.atleast_2d(np.asarray(boundary_value, dtype=float))
    N, dt, T = grid.steps, grid.dt, grid.horizon
    backward = direction is OdeDirection.BACKWARD

    if backward:
        # integrate N(s) = M(T - s), N' = -field(T - s, N), forward in s
        def f(s, m):
            return -np.asarray(field(T - s, m), dtype=float)
    else:
        def f(s, m):
            return np.asarray(field(s, m), dtype=float)

    out = np.empty((N + 1, *m0.shape))
    out[0] = m0
    m = m0
    for i in range(N):
        s = i * dt
        k1 = f(s, m)
        k2 = f(s + 0.5 * dt, m + 0.5 * dt * k1)
        k3 = f(s + 0.5 * dt, m + 0.5 * dt * k2)
        k4 = f(s + dt, m + dt * k3)
        m = m + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if postprocess is not None:
            m = postprocess(m)
        if not np.all(np.isfinite(m)) or np.max(np.abs(m)) > max_norm:
            t_bad = T - (s + dt) if backward else s + dt
            raise DivergenceError(t_bad)
        out[i + 1] = m
    if backward:
        out = out[::-1]
    return CoefficientPath(grid, out)


def matrix_exponential(m: np.ndarray) -> np.ndarray:
    """e^M by scaling-and-squaring with Pade approximation."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"matrix must be square, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix entries must be finite")
    return scipy.linalg.expm(m)


def transition_steps(matfun: Callable[[float], np.ndarray], grid: TimeGrid) -> np.ndarray:
    """Per-interval transition matrices of dU/dt = matfun(t) U.

    Fourth-order Magnus integrator with two-point Gauss-Legendre
    sampling; exact (up to expm accuracy) when matfun is constant.
    Returns E of shape (N, m, m) with U(t_{i+1}) = E[i] U(t_i).
    """
    dt = grid.dt
    c = np.sqrt(3.0) / 6.0
    out = []
    for i in range(grid.steps):
        t = grid.nodes[i]
        a1 = np.atleast_2d(matfun(t + (0.5 - c) * dt))
        a2 = np.atleast_2d(matfun(t + (0.5 + c) * dt))
        omega = 0.5 * dt * (a1 + a2) + (np.sqrt(3.0) / 12.0) * dt * dt * (a2 @ a1 - a1 @ a2)
        out.append(matrix_exponential(omega))
    return np.stack(out)


@dataclass(frozen=True)
class SolvabilityReport:
    """Determinant scan behind the closed-form Riccati representations."""

    grid: TimeGrid
    determinants: np.ndarray
    min_determinant: float
    satisfied: bool


def solvability_scan(blockmatrix: np.ndarray, grid: TimeGrid) -> SolvabilityReport:
    """Scan det of the lower-right block of e^(M t) over the grid nodes.

    The scanned quantity is det{(0, I) e^(M t) (0; I)} for each node t;
    the representation of the associated Riccati solution exists iff all
    determinants are strictly positive.
    """
    m = np.atleast_2d(np.asarray(blockmatrix, dtype=float))
    if m.shape[0] != m.shape[1] or m.shape[0] % 2 != 0:
        raise ValueError(f"block matrix must be square with even size, got {m.shape}")
    half = m.shape[0] // 2
    dets = np.empty(grid.steps + 1)
    step = matrix_exponential(m * grid.dt)
    acc = np.eye(m.shape[0])
    for i in range(grid.steps + 1):
        dets[i] = np.linalg.det(acc[half:, half:])
        acc = step @ acc
    min_det = float(dets.min())
    return SolvabilityReport(grid, dets, min_det, bool(min_det > 0.0))
