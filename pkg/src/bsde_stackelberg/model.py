"""Game specification: dimensions, time grid, coefficients, terminal data, validation.

Everything here is immutable after construction and safe to share across
threads.  Coefficients are stored as node samples on a uniform grid with
linear interpolation in between, which is exactly what the RK4 integrator
and the path simulators need.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

SYMMETRY_TOL = 1e-12


class SpecError(ValueError):
    """Structural problem with a game specification (bad shapes, bad grid)."""


@dataclass(frozen=True)
class Dimensions:
    """State (n), Brownian (d) and control (k) dimensions."""

    n: int
    d: int = 1
    k: int = 1

    def __post_init__(self):
        for name in ("n", "d", "k"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise SpecError(f"dimension {name} must be a positive integer, got {v!r}")


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_0 = 0 < ... < t_N = T with dt = T / N computed once."""

    horizon: float
    steps: int
    nodes: np.ndarray = field(init=False, repr=False, compare=False)
    dt: float = field(init=False, compare=False)

    def __post_init__(self):
        if not (self.horizon > 0 and np.isfinite(self.horizon)):
            raise SpecError(f"horizon must be a positive real, got {self.horizon!r}")
        if not isinstance(self.steps, (int, np.integer)) or self.steps < 1:
            raise SpecError(f"steps must be a positive integer, got {self.steps!r}")
        dt = self.horizon / self.steps
        nodes = np.arange(self.steps + 1) * dt
        nodes[-1] = self.horizon
        nodes.setflags(write=False)
        object.__setattr__(self, "dt", dt)
        object.__setattr__(self, "nodes", nodes)

    def __eq__(self, other):
        if not isinstance(other, TimeGrid):
            return NotImplemented
        return self.horizon == other.horizon and self.steps == other.steps

    def __hash__(self):
        return hash((self.horizon, self.steps))


@dataclass(frozen=True)
class CoefficientPath:
    """A matrix-valued function of time, sampled at the grid nodes.

    values has shape (N + 1, rows, cols).  Evaluation between nodes is
    linear interpolation; node evaluation returns the stored matrix
    bit-exactly.
    """

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3:
            raise SpecError(f"coefficient values must be (N+1, rows, cols), got shape {v.shape}")
        if v.shape[0] != self.grid.steps + 1:
            raise SpecError(
                f"coefficient has {v.shape[0]} node values, grid has {self.grid.steps + 1} nodes"
            )
        if not np.all(np.isfinite(v)):
            raise SpecError("coefficient values must be finite")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[1], self.values.shape[2]

    @classmethod
    def constant(cls, grid: TimeGrid, value) -> "CoefficientPath":
        m = np.atleast_2d(np.asarray(value, dtype=float))
        return cls(grid, np.broadcast_to(m, (grid.steps + 1, *m.shape)))

    @classmethod
    def from_callable(cls, grid: TimeGrid, f: Callable[[float], np.ndarray]) -> "CoefficientPath":
        vals = np.stack([np.atleast_2d(np.asarray(f(t), dtype=float)) for t in grid.nodes])
        return cls(grid, vals)

    def __call__(self, t: float) -> np.ndarray:
        return eval_coefficient(self, t)


def eval_coefficient(path: CoefficientPath, t: float) -> np.ndarray:
    """Value at time t: stored matrix at nodes, linear interpolation in between."""
    grid = path.grid
    tol = 1e-12 * max(1.0, grid.horizon)
    if not (-tol <= t <= grid.horizon + tol):
        raise ValueError(f"t={t} outside [0, {grid.horizon}]")
    t = min(max(t, 0.0), grid.horizon)
    pos = t / grid.dt
    i = int(np.floor(pos))
    if i >= grid.steps:
        return path.values[grid.steps]
    if t == grid.nodes[i]:
        return path.values[i]
    w = (t - grid.nodes[i]) / grid.dt
    return (1.0 - w) * path.values[i] + w * path.values[i + 1]


@dataclass(frozen=True)
class TerminalCondition:
    """Terminal datum xi = a + b W(T); deterministic iff b = 0."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).reshape(-1)
        b = np.atleast_2d(np.asarray(self.b, dtype=float))
        if b.shape[0] != a.shape[0]:
            raise SpecError(f"terminal loading b has {b.shape[0]} rows, a has length {a.shape[0]}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise SpecError("terminal condition entries must be finite")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def deterministic(self) -> bool:
        return not np.any(self.b)


@dataclass(frozen=True)
class AffineControl:
    """Control of the form u(t) = u_const(t) + u_lin(t) W(t)."""

    u_const: CoefficientPath  # k x 1
    u_lin: CoefficientPath  # k x d

    @classmethod
    def zero(cls, grid: TimeGrid, k: int, d: int = 1) -> "AffineControl":
        z = np.zeros((k, 1))
        return cls(CoefficientPath.constant(grid, z), CoefficientPath.constant(grid, np.zeros((k, d))))

    @classmethod
    def constant(cls, grid: TimeGrid, value, d: int = 1) -> "AffineControl":
        c = np.asarray(value, dtype=float).reshape(-1, 1)
        return cls(
            CoefficientPath.constant(grid, c),
            CoefficientPath.constant(grid, np.zeros((c.shape[0], d))),
        )


_COEFF_SHAPES = {
    "A": ("n", "n"),
    "B1": ("n", "k"),
    "B2": ("n", "k"),
    "C": ("n", "n"),
    "Q1": ("n", "n"),
    "R1": ("k", "k"),
    "S1": ("n", "n"),
    "Q2": ("n", "n"),
    "R2": ("k", "k"),
    "S2": ("n", "n"),
}


@dataclass(frozen=True)
class LQGameSpec:
    """All data of one leader-follower game instance."""

    dims: Dimensions
    grid: TimeGrid
    A: CoefficientPath
    B1: CoefficientPath
    B2: CoefficientPath
    C: CoefficientPath
    Q1: CoefficientPath
    R1: CoefficientPath
    S1: CoefficientPath
    G1: np.ndarray
    Q2: CoefficientPath
    R2: CoefficientPath
    S2: CoefficientPath
    G2: np.ndarray
    xi: TerminalCondition

    def __post_init__(self):
        n, k = self.dims.n, self.dims.k
        sizes = {"n": n, "k": k}
        for name, (r, c) in _COEFF_SHAPES.items():
            path = getattr(self, name)
            if path.grid != self.grid:
                raise SpecError(f"coefficient {name} is sampled on a different grid")
            want = (sizes[r], sizes[c])
            if path.shape != want:
                raise SpecError(f"coefficient {name} has shape {path.shape}, expected {want}")
        for name in ("G1", "G2"):
            g = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if g.shape != (n, n):
                raise SpecError(f"weight {name} has shape {g.shape}, expected {(n, n)}")
            g = g.copy()
            g.setflags(write=False)
            object.__setattr__(self, name, g)
        if self.xi.a.shape[0] != n or self.xi.b.shape != (n, self.dims.d):
            raise SpecError(
                f"terminal condition has shape ({self.xi.a.shape[0]}, {self.xi.b.shape}), "
                f"expected ({n}, {(n, self.dims.d)})"
            )


@dataclass(frozen=True)
class Violation:
    assumption: str  # "(L1)", "(L2)" or "(L3)"
    location: str  # field name, possibly with node time
    message: str
    severity: str  # "error" or "warning"

    def __str__(self):
        return f"{self.assumption}: {self.message} [{self.location}, {self.severity}]"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def errors(self) -> tuple[Violation, ...]:
        return tuple(v for v in self.violations if v.severity == "error")

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def passed(self) -> bool:
        return not self.errors


def _asymmetry(m: np.ndarray) -> float:
    return float(np.max(np.abs(m - m.T), initial=0.0))


def _min_eig(m: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (m + m.T)).min())


def validate_spec(spec: LQGameSpec, strict: bool = True) -> ValidationReport:
    """Check assumptions (L1)-(L3) on a structurally well-formed spec.

    Symmetry violations and non-PD R weights are always errors.  PSD
    violations of Q1, S1, Q2, S2, G1, G2 are errors in strict mode and
    warnings in permissive mode (the finance application needs the
    permissive reading).
    """
    out: list[Violation] = []

    def check_block(name: str, values: np.ndarray, assumption: str, kind: str):
        # kind: "sym", "psd" or "pd"; values shaped (nodes, m, m) or (m, m)
        vals = values if values.ndim == 3 else values[None]
        worst_asym = max(_asymmetry(v) for v in vals)
        if worst_asym > SYMMETRY_TOL:
            out.append(
                Violation(assumption, name, f"{name} not symmetric (asymmetry {worst_asym:.3e})", "error")
            )
            return
        if kind == "sym":
            return
        min_eig = min(_min_eig(v) for v in vals)
        if kind == "pd" and min_eig <= 0.0:
            out.append(
                Violation(assumption, name, f"{name} not positive definite (min eig {min_eig:.3e})", "error")
            )
        elif kind == "psd" and min_eig < -SYMMETRY_TOL:
            severity = "error" if strict else "warning"
            out.append(
                Violation(assumption, name, f"{name} not PSD (min eig {min_eig:.3e})", severity)
            )

    # (L1): boundedness of A, B1, B2, C == finiteness of node values, enforced
    # by CoefficientPath construction; nothing left to flag here.
    check_block("Q1", spec.Q1.values, "(L2)", "psd")
    check_block("S1", spec.S1.values, "(L2)", "psd")
    check_block("R1", spec.R1.values, "(L2)", "pd")
    check_block("G1", spec.G1, "(L2)", "psd")
    check_block("Q2", spec.Q2.values, "(L3)", "psd")
    check_block("S2", spec.S2.values, "(L3)", "psd")
    check_block("R2", spec.R2.values, "(L3)", "pd")
    check_block("G2", spec.G2, "(L3)", "psd")
    return ValidationReport(tuple(out))
