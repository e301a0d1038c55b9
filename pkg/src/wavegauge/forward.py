"""
Forward solvers for  u_tt - Lap u + a(t, x, u) = F  on the unit box.

The time stepping is explicit leapfrog with the potential and nonlinear
terms taken at the current level.  Dirichlet data are injected on the
boundary at every level and the first step uses the Taylor expansion

    u^1 = g + ht h + ht^2/2 (Lap g - a(0, x, g) + F(0)).

The semilinear solve is a Picard iteration around a base solution u0 with
the fixed linear potential  d_z a(t, x, u0); its fixed point is the
nonlinear leapfrog solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from math import factorial

import numba
import numpy as np

from .errors import ConfigurationError, ContractError, SolverError
from .mesh import Grid, TimeWindow, integrate_sigma, l2_q, l2_sigma, ramp

EPS = np.finfo(float).eps
MAX_TRANSCENDENTAL_ORDER = 8
PICARD_TOL = 1e-10
PICARD_MAXITER = 50
BLOWUP_FACTOR = 1e6

KINDS = (
    "polynomial",
    "exp_potential",
    "sin_potential",
    "z_sin",
    "sin_plus_exp",
    "sin_plus_cos",
    "zexp_plus_poly",
)
_USES_P = {"sin_plus_exp", "sin_plus_cos", "zexp_plus_poly"}


# -- nonlinearities -----------------------------------------------------------


@dataclass(frozen=True)
class Nonlinearity:
    """Catalogued nonlinearity a(t, x, z) with space-time coefficient fields.

    ``q`` holds the coefficient tuple: (q_1, ..., q_n) for the polynomial
    parts and a single entry for the one-coefficient kinds.  ``p`` is the
    companion coefficient of the two-term kinds.  Coefficients are arrays
    of the grid's shape or scalars.
    """

    kind: str
    q: tuple = ()
    p: object = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown nonlinearity kind {self.kind!r}")
        object.__setattr__(self, "q", tuple(self.q))
        if self.kind in _USES_P and self.p is None:
            raise ConfigurationError(f"{self.kind} needs a coefficient p")
        if self.kind in ("polynomial", "zexp_plus_poly"):
            if self.kind == "polynomial" and len(self.q) == 0:
                raise ConfigurationError("polynomial needs at least one coefficient")
        elif len(self.q) != 1:
            raise ConfigurationError(f"{self.kind} takes exactly one q coefficient")

    @property
    def degree(self):
        """Polynomial degree, or None for kinds with infinitely many derivatives."""
        return len(self.q) if self.kind == "polynomial" else None

    @property
    def max_order(self) -> int:
        return self.degree if self.kind == "polynomial" else MAX_TRANSCENDENTAL_ORDER

    def replace(self, **changes) -> "Nonlinearity":
        data = {"kind": self.kind, "q": self.q, "p": self.p}
        data.update(changes)
        return Nonlinearity(**data)

    @classmethod
    def zero(cls) -> "Nonlinearity":
        return cls("polynomial", (0.0,))


def _poly_derivative(coeffs, z, k):
    out = np.zeros(np.shape(z), dtype=np.result_type(z, float))
    for i, qi in enumerate(coeffs, start=1):
        if i < k:
            continue
        out = out + qi * (factorial(i) // factorial(i - k)) * z ** (i - k)
    return out


def _sin_derivative(z, k):
    r = k % 4
    if r == 0:
        return np.sin(z)
    if r == 1:
        return np.cos(z)
    if r == 2:
        return -np.sin(z)
    return -np.cos(z)


def _cos_derivative(z, k):
    return _sin_derivative(z, k + 1)


def eval_nonlinearity(nl: Nonlinearity, z, k: int = 0) -> np.ndarray:
    """k-th z-derivative of a(t, x, z) evaluated pointwise at ``z``."""
    if k < 0:
        raise ContractError("derivative order must be non-negative")
    if k > nl.max_order:
        raise ContractError(
            f"derivative order {k} unsupported for {nl.kind} (max {nl.max_order})"
        )
    z = np.asarray(z)
    kind = nl.kind
    if kind == "polynomial":
        return _poly_derivative(nl.q, z, k)
    q = nl.q[0] if nl.q else 0.0
    if kind == "exp_potential":
        return q * np.exp(z)
    if kind == "sin_potential":
        return q * _sin_derivative(z, k)
    if kind == "z_sin":
        # (z sin z)^(k) = z sin^(k)(z) + k sin^(k-1)(z)
        out = z * _sin_derivative(z, k)
        if k:
            out = out + k * _sin_derivative(z, k - 1)
        return q * out
    if kind == "sin_plus_exp":
        return nl.p * _sin_derivative(z, k) + q * np.exp(z)
    if kind == "sin_plus_cos":
        return nl.p * _sin_derivative(z, k) + q * _cos_derivative(z, k)
    if kind == "zexp_plus_poly":
        # (z e^z)^(k) = (z + k) e^z
        return nl.p * (z + k) * np.exp(z) + _poly_derivative(nl.q, z, k)
    raise ContractError(f"unsupported nonlinearity {kind}")


# -- problem data -------------------------------------------------------------


@dataclass(frozen=True)
class ProblemSpec:
    """One instance of the initial-boundary value problem."""

    grid: Grid
    window: TimeWindow
    nonlinearity: Nonlinearity
    F: np.ndarray = None
    g: np.ndarray = None
    h: np.ndarray = None
    F_after_t1: bool = False

    def __post_init__(self):
        grid = self.grid
        for name, shape in (("F", grid.shape), ("g", grid.spatial_shape),
                            ("h", grid.spatial_shape)):
            value = getattr(self, name)
            if value is None:
                continue
            value = np.asarray(value, dtype=float)
            if value.shape != shape:
                raise ConfigurationError(f"{name} has shape {value.shape}, expected {shape}")
            if not np.all(np.isfinite(value)):
                raise ConfigurationError(f"{name} has non-finite entries")
            object.__setattr__(self, name, value)
        for name in ("g", "h"):
            value = getattr(self, name)
            if value is not None:
                edge = np.abs(grid.boundary_values(value)).max()
                if edge > 1e-12 * (1.0 + np.abs(value).max()):
                    raise ConfigurationError(f"initial data {name} must vanish on the boundary")
        if self.F_after_t1 and self.F is not None:
            early = self.F[grid.t < self.window.t1]
            if early.size and np.abs(early).max() > 1e-12 * (1.0 + np.abs(self.F).max()):
                raise ConfigurationError("F is flagged as supported after t1 but is not")

    def source(self) -> np.ndarray:
        return np.zeros(self.grid.shape) if self.F is None else self.F

    def initial(self):
        zero = np.zeros(self.grid.spatial_shape)
        g = zero if self.g is None else self.g
        h = zero if self.h is None else self.h
        return g, h

    def with_changes(self, **changes) -> "ProblemSpec":
        data = dict(grid=self.grid, window=self.window, nonlinearity=self.nonlinearity,
                    F=self.F, g=self.g, h=self.h, F_after_t1=self.F_after_t1)
        data.update(changes)
        return ProblemSpec(**data)


@dataclass(frozen=True)
class BoundaryRecord:
    """Dirichlet input and Neumann trace on the lateral boundary."""

    dirichlet: np.ndarray
    neumann: np.ndarray
    grid: Grid

    def norm(self, t1=None, t2=None) -> float:
        return l2_sigma(self.grid, self.neumann, t1, t2)


def zero_boundary(grid: Grid, dtype=float) -> np.ndarray:
    return np.zeros(grid.boundary_shape, dtype=dtype)


def compatible(grid: Grid, f: np.ndarray, t_ramp: float | None = None) -> np.ndarray:
    """Multiply raw boundary data by a flat ramp so it vanishes to high order at t=0."""
    t_ramp = 0.1 * grid.T if t_ramp is None else t_ramp
    eta = ramp(grid.t, t_ramp)
    return np.asarray(f) * eta.reshape((-1,) + (1,) * (np.ndim(f) - 1))


def check_compatible(grid: Grid, f: np.ndarray, g=None, tol: float = 1e-12):
    """Raise unless f and its first two time differences vanish at t = 0."""
    f = np.asarray(f)
    if f.shape != grid.boundary_shape:
        raise ConfigurationError(f"boundary data shape {f.shape}, expected {grid.boundary_shape}")
    if not np.all(np.isfinite(f)):
        raise ConfigurationError("boundary data has non-finite entries")
    scale = 1.0 + np.abs(f).max()
    d0 = np.abs(f[0]).max()
    d1 = np.abs(f[1] - f[0]).max()
    d2 = np.abs(f[2] - 2 * f[1] + f[0]).max()
    if max(d0, d1, d2) > tol * scale:
        raise ConfigurationError(
            f"boundary data not compatible at t=0 (|f|={d0:.2e}, |df|={d1:.2e}, "
            f"|d2f|={d2:.2e}); apply the compatibility ramp"
        )


# -- leapfrog kernels ---------------------------------------------------------


@numba.njit(cache=True, nogil=True)
def _leapfrog_1d(u, q, S, f, ht, hx, use_q, use_S, limit):
    nt = u.shape[0] - 1
    nx = u.shape[1]
    r2 = (ht / hx) ** 2
    ht2 = ht * ht
    for n in range(1, nt):
        peak = 0.0
        for i in range(1, nx - 1):
            un = u[n, i]
            val = 2.0 * un - u[n - 1, i] + r2 * (u[n, i - 1] - 2.0 * un + u[n, i + 1])
            if use_q:
                val -= ht2 * q[n, i] * un
            if use_S:
                val += ht2 * S[n, i]
            u[n + 1, i] = val
            a = abs(val)
            if a > peak:
                peak = a
        u[n + 1, 0] = f[n + 1, 0, 0]
        u[n + 1, nx - 1] = f[n + 1, 1, 0]
        if not peak <= limit:
            return n + 1
    return -1


@numba.njit(cache=True, nogil=True)
def _leapfrog_2d(u, q, S, f, ht, hx, use_q, use_S, limit):
    nt = u.shape[0] - 1
    nx = u.shape[1]
    r2 = (ht / hx) ** 2
    ht2 = ht * ht
    for n in range(1, nt):
        peak = 0.0
        for i in range(1, nx - 1):
            for j in range(1, nx - 1):
                un = u[n, i, j]
                lap = (u[n, i - 1, j] + u[n, i + 1, j] + u[n, i, j - 1]
                       + u[n, i, j + 1] - 4.0 * un)
                val = 2.0 * un - u[n - 1, i, j] + r2 * lap
                if use_q:
                    val -= ht2 * q[n, i, j] * un
                if use_S:
                    val += ht2 * S[n, i, j]
                u[n + 1, i, j] = val
                a = abs(val)
                if a > peak:
                    peak = a
        for j in range(nx):
            u[n + 1, 0, j] = f[n + 1, 0, j]
            u[n + 1, nx - 1, j] = f[n + 1, 1, j]
        for i in range(nx):
            u[n + 1, i, 0] = f[n + 1, 2, i]
            u[n + 1, i, nx - 1] = f[n + 1, 3, i]
        if not peak <= limit:
            return n + 1
    return -1


def laplacian(grid: Grid, v: np.ndarray) -> np.ndarray:
    """Second-order discrete Laplacian over the trailing spatial axes (zero on the boundary)."""
    out = np.zeros_like(v)
    h2 = grid.hx**2
    if grid.dim == 1:
        out[..., 1:-1] = (v[..., :-2] - 2 * v[..., 1:-1] + v[..., 2:]) / h2
    else:
        c = v[..., 1:-1, 1:-1]
        out[..., 1:-1, 1:-1] = (
            v[..., :-2, 1:-1] + v[..., 2:, 1:-1] + v[..., 1:-1, :-2] + v[..., 1:-1, 2:] - 4 * c
        ) / h2
    return out


def inject_boundary(grid: Grid, u: np.ndarray, f: np.ndarray) -> None:
    """Overwrite boundary nodes of one level (or a stack of levels) with f."""
    if grid.dim == 1:
        u[..., 0] = f[..., 0, 0]
        u[..., -1] = f[..., 1, 0]
    else:
        u[..., 0, :] = f[..., 0, :]
        u[..., -1, :] = f[..., 1, :]
        u[..., :, 0] = f[..., 2, :]
        u[..., :, -1] = f[..., 3, :]


def _as_field(grid, value, name):
    if value is None:
        return None
    arr = np.asarray(value)
    if arr.ndim == 0:
        return np.full(grid.shape, float(arr)) if arr != 0 else None
    return np.broadcast_to(arr, grid.shape)


def _solve_real(grid, q, S, g, h, f, check):
    if grid.nt < 2:
        raise ConfigurationError("need at least two time steps")
    if grid.cfl > 0.9 + 1e-12:
        raise ConfigurationError(f"CFL number {grid.cfl:.3f} exceeds 0.9")
    f = np.zeros(grid.boundary_shape) if f is None else np.ascontiguousarray(f, dtype=float)
    g = np.zeros(grid.spatial_shape) if g is None else np.asarray(g, dtype=float)
    h = np.zeros(grid.spatial_shape) if h is None else np.asarray(h, dtype=float)
    if check:
        check_compatible(grid, f)
    u = np.empty(grid.shape)
    u[0] = g
    inject_boundary(grid, u[0], f[0])
    acc = laplacian(grid, u[0])
    if q is not None:
        acc = acc - q[0] * u[0]
    if S is not None:
        acc = acc + S[0]
    u[1] = u[0] + grid.ht * h + 0.5 * grid.ht**2 * acc
    inject_boundary(grid, u[1], f[1])

    scale = 1.0 + np.abs(f).max() + np.abs(g).max() + grid.T * np.abs(h).max()
    if S is not None:
        scale += grid.T**2 * np.abs(S).max()
    limit = BLOWUP_FACTOR * scale
    use_q, use_S = q is not None, S is not None
    dummy = np.zeros((1,) * (grid.dim + 1))
    qa = np.ascontiguousarray(q, dtype=float) if use_q else dummy
    Sa = np.ascontiguousarray(S, dtype=float) if use_S else dummy
    kernel = _leapfrog_1d if grid.dim == 1 else _leapfrog_2d
    bad = kernel(u, qa, Sa, f, grid.ht, grid.hx, use_q, use_S, limit)
    if bad >= 0:
        raise SolverError(
            f"solution exceeded {limit:.3g} at time level {bad}: the scheme is unstable "
            f"(CFL {grid.cfl:.3f}) or the potential is too stiff for ht={grid.ht:.3g}"
        )
    return u


def solve_linear(grid: Grid, potential=None, F=None, g=None, h=None, f=None,
                 check: bool = True) -> np.ndarray:
    """Leapfrog solution of u_tt - Lap u + potential * u = F with u = f on the boundary.

    Any of the data may be None (zero).  Complex data are solved
    componentwise; the potential must be real.
    """
    q = _as_field(grid, potential, "potential")
    if q is not None and np.iscomplexobj(q):
        raise ContractError("the potential must be real")
    S = _as_field(grid, F, "F")
    parts = [S, g, h, f]
    if any(p is not None and np.iscomplexobj(p) for p in parts):
        def real(p):
            return None if p is None else np.real(p)

        def imag(p):
            return None if p is None else np.imag(p)

        re = _solve_real(grid, q, real(S), real(g), real(h), real(f), check)
        im = _solve_real(grid, q, imag(S), imag(g), imag(h), imag(f), check)
        return re + 1j * im
    return _solve_real(grid, q, S, g, h, f, check)


def solve_linear_backward(grid: Grid, potential=None, F=None, f=None,
                          uT=None, vT=None, check: bool = True) -> np.ndarray:
    """Solve with final data u(T) = uT, u_t(T) = vT by reversing time."""
    rev = lambda a: None if a is None or np.ndim(a) == 0 else np.asarray(a)[::-1]
    q = potential if np.ndim(potential) == 0 else rev(potential)
    F_ = F if np.ndim(F) == 0 else rev(F)
    h = None if vT is None else -np.asarray(vT)
    u = solve_linear(grid, q, F_, uT, h, rev(f), check=check)
    return u[::-1].copy()


# -- semilinear solve ---------------------------------------------------------


@dataclass
class PicardResult:
    u: np.ndarray
    iterations: int
    updates: list = field(default_factory=list)
    base: np.ndarray = None

    @property
    def first_update(self) -> float:
        return self.updates[0] if self.updates else 0.0


def picard(spec: ProblemSpec, f=None, base=None, tol: float = PICARD_TOL,
           maxiter: int = PICARD_MAXITER) -> PicardResult:
    """Picard iteration around a base solution with the frozen potential d_z a(u0).

    Each step solves the linear problem with potential q0 = d_z a(t, x, u0)
    and source F - a(u^k) + q0 u^k, which is the remainder form
    F - a(u0) + q0 u0 + G(u^k - u0, u0).  Iterations count the linear
    updates; convergence is declared when the relative L2(Q) update falls
    below ``tol``.
    """
    grid = spec.grid
    nl = spec.nonlinearity
    F = spec.source()
    g, h = spec.initial()
    if f is None:
        f = zero_boundary(grid)
    elif isinstance(f, BoundaryRecord):
        f = f.dirichlet
    check_compatible(grid, f)

    if base is None:
        zero = np.zeros(grid.shape)
        q_lin = eval_nonlinearity(nl, zero, 1)
        src = F - eval_nonlinearity(nl, zero, 0)
        base = solve_linear(grid, q_lin, src, g, h, f, check=False)
    u0 = base
    q0 = np.broadcast_to(eval_nonlinearity(nl, u0, 1), grid.shape)

    u = u0
    updates = []
    growth = 0
    for it in range(1, maxiter + 1):
        src = F - eval_nonlinearity(nl, u, 0) + q0 * u
        if not np.all(np.isfinite(src)):
            raise SolverError("data too large for local well-posedness: non-finite nonlinearity")
        new = solve_linear(grid, q0, src, g, h, f, check=False)
        delta = l2_q(grid, new - u)
        updates.append(delta)
        u = new
        size = l2_q(grid, u)
        if delta <= tol * size:
            return PicardResult(u, it, updates, u0)
        if len(updates) >= 2 and updates[-1] > updates[-2]:
            growth += 1
            if growth >= 3:
                raise SolverError(
                    "data too large for local well-posedness: Picard updates grew "
                    f"for 3 consecutive iterations ({updates[-4:]})"
                )
        else:
            growth = 0
    raise SolverError(
        f"Picard iteration did not reach tol {tol} in {maxiter} iterations "
        f"(last relative update {updates[-1] / max(l2_q(grid, u), 1e-300):.2e})"
    )


def solve_semilinear(spec: ProblemSpec, f=None, base=None, tol: float = PICARD_TOL) -> np.ndarray:
    return picard(spec, f, base, tol).u


# -- traces and the DtN map ---------------------------------------------------


def neumann_trace(grid: Grid, u: np.ndarray) -> BoundaryRecord:
    """Outward normal derivative by the one-sided 3-point stencil."""
    L0, L1, L2 = (grid.face_layer(u, j) for j in range(3))
    dn = (3 * L0 - 4 * L1 + L2) / (2 * grid.hx)
    return BoundaryRecord(dirichlet=L0, neumann=dn, grid=grid)


def neumann_trace_hi(grid: Grid, u: np.ndarray) -> np.ndarray:
    """Fourth-order one-sided normal derivative (5 points)."""
    L = [grid.face_layer(u, j) for j in range(5)]
    return (25 * L[0] - 48 * L[1] + 36 * L[2] - 16 * L[3] + 3 * L[4]) / (12 * grid.hx)


def dtn(spec: ProblemSpec, f, tol: float = PICARD_TOL) -> BoundaryRecord:
    """Simulated DtN map: Neumann trace of the semilinear solution with Dirichlet data f."""
    return neumann_trace(spec.grid, solve_semilinear(spec, f, tol=tol))


# -- residuals and error estimates -------------------------------------------

_ONE_SIDED_NEAR = np.array([10.0, -15.0, -4.0, 14.0, -6.0, 1.0]) / 12.0
_ONE_SIDED_END = np.array([45.0, -154.0, 214.0, -156.0, 61.0, -10.0]) / 12.0
_CENTERED_4 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0


def second_derivative(v: np.ndarray, h: float, axis: int, order: int = 2,
                      ends: bool = False) -> np.ndarray:
    """Second derivative along ``axis`` on interior nodes (zero at the ends).

    ``order=4`` uses the 5-point centered stencil with 6-point one-sided
    formulas next to the ends; ``ends=True`` also fills the end nodes by
    one-sided formulas.
    """
    v = np.moveaxis(v, axis, 0)
    n = v.shape[0]
    out = np.zeros_like(v)
    if order == 2:
        out[1:-1] = v[:-2] - 2 * v[1:-1] + v[2:]
        if ends:
            out[0] = 2 * v[0] - 5 * v[1] + 4 * v[2] - v[3]
            out[-1] = 2 * v[-1] - 5 * v[-2] + 4 * v[-3] - v[-4]
    elif order == 4:
        if n < 7:
            raise ConfigurationError("fourth-order stencil needs at least 7 nodes")
        c = _CENTERED_4
        out[2:-2] = c[0] * v[:-4] + c[1] * v[1:-3] + c[2] * v[2:-2] + c[3] * v[3:-1] + c[4] * v[4:]
        out[1] = np.tensordot(_ONE_SIDED_NEAR, v[:6], axes=1)
        out[-2] = np.tensordot(_ONE_SIDED_NEAR, v[-1:-7:-1], axes=1)
        if ends:
            out[0] = np.tensordot(_ONE_SIDED_END, v[:6], axes=1)
            out[-1] = np.tensordot(_ONE_SIDED_END, v[-1:-7:-1], axes=1)
    else:
        raise ConfigurationError(f"unsupported stencil order {order}")
    return np.moveaxis(out / h**2, 0, axis)


def wave_operator(grid: Grid, u: np.ndarray, order: int = 2) -> np.ndarray:
    """(d_tt - Lap) u on interior nodes.

    With ``order=2`` the time levels 1..nt-1 are filled; with ``order=4``
    the fourth-order stencils fill levels 0..nt-1 (level 0 one-sided).
    """
    utt = second_derivative(u, grid.ht, 0, order, ends=(order == 4))
    lap = sum(second_derivative(u, grid.hx, ax + 1, order) for ax in range(grid.dim))
    out = utt - lap
    out[-1] = 0
    if order == 2:
        out[0] = 0
    inner = np.zeros(grid.shape, dtype=bool)
    inner[(slice(None),) + (slice(1, -1),) * grid.dim] = True
    return np.where(inner, out, 0)


def _nonlinear_term(problem, u, grid):
    if isinstance(problem, ProblemSpec):
        return eval_nonlinearity(problem.nonlinearity, u, 0), problem.source()
    if problem is None:
        return 0.0, 0.0
    return np.asarray(problem) * u, 0.0


def defect(problem, u: np.ndarray, grid: Grid | None = None, F=None,
           order: int = 2) -> np.ndarray:
    """Pointwise discrete defect  d_tt u - Lap u + a(u) - F  on interior nodes."""
    grid = problem.grid if isinstance(problem, ProblemSpec) else grid
    if grid is None:
        raise ConfigurationError("a grid is required when no spec is given")
    a_u, F_spec = _nonlinear_term(problem, u, grid)
    src = F_spec if F is None else F
    d = wave_operator(grid, u, order) + a_u - src
    mask = np.zeros(grid.shape, dtype=bool)
    mask[(slice(0 if order == 4 else 1, -1),) + (slice(1, -1),) * grid.dim] = True
    return np.where(mask, d, 0)


def residual(problem, u: np.ndarray, grid: Grid | None = None, F=None,
             order: int = 2) -> float:
    """L2(Q) norm of the discrete defect on interior nodes.

    ``problem`` is a ProblemSpec or a potential field (then ``grid`` and an
    optional source ``F`` are required).  ``order=4`` measures the defect
    with fourth-order stencils, which for a leapfrog solution is its
    truncation error.
    """
    grid = problem.grid if isinstance(problem, ProblemSpec) else grid
    return l2_q(grid, defect(problem, u, grid, F, order))


def solution_scale(grid: Grid, *fields) -> float:
    return max([1e-300] + [float(np.abs(v).max()) for v in fields if v is not None])


@dataclass
class TraceError:
    """Estimated discretization error of a Neumann trace.

    ``correction`` approximates (exact trace - computed trace); ``noise``
    bounds the round-off and iteration noise of the computed trace.
    """

    correction: np.ndarray
    noise: float
    field_error: np.ndarray = None

    def norm(self, grid, t1=None, t2=None) -> float:
        return l2_sigma(grid, self.correction, t1, t2)


def estimate_trace_error(grid: Grid, potential, defect4: np.ndarray, u: np.ndarray,
                         keep_field: bool = False) -> TraceError:
    """Defect-correction estimate of the trace error of a leapfrog solution.

    The error field E solves the linearized problem with source -defect4
    and zero data, where defect4 is the fourth-order defect of u.  The
    trace correction adds the fourth-order one-sided derivative.
    """
    # The Taylor start is not a leapfrog step: seed E at level 1 with its
    # local error ht^2/2 (Lap - Lap_h) g + ht^3/6 u_ttt(0) instead of a defect.
    src = -defect4.copy()
    src[0] = 0
    lap4 = sum(second_derivative(u[0], grid.hx, ax, 4) for ax in range(grid.dim))
    lap2 = laplacian(grid, u[0])
    e1 = 0.5 * grid.ht**2 * (lap4 - lap2) + (-u[0] + 3 * u[1] - 3 * u[2] + u[3]) / 6
    inject_boundary(grid, e1, np.zeros(grid.boundary_shape[1:]))
    E = solve_linear(grid, potential, src, None, e1 / grid.ht, None, check=False)
    corr = neumann_trace(grid, E).neumann + neumann_trace_hi(grid, u) - neumann_trace(grid, u).neumann
    peak = float(np.abs(u).max()) if u.size else 0.0
    noise = EPS * grid.nt * peak / grid.hx * math.sqrt(grid.T * grid.nfaces)
    return TraceError(corr, noise, E if keep_field else None)


def spec_trace_error(spec: ProblemSpec, u: np.ndarray, keep_field: bool = False) -> TraceError:
    pot = eval_nonlinearity(spec.nonlinearity, u, 1)
    return estimate_trace_error(spec.grid, pot, defect(spec, u, order=4), u, keep_field)


def linear_trace_error(grid: Grid, potential, u: np.ndarray, F=None,
                       keep_field: bool = False, backward: bool = False) -> TraceError:
    """Trace error of a linear solve; ``backward`` for final-value problems."""
    pot = None if potential is None else np.broadcast_to(potential, grid.shape)
    if backward:
        rev = lambda a: None if a is None or np.ndim(a) == 0 else a[::-1]
        err = linear_trace_error(grid, rev(pot), u[::-1], rev(F), keep_field)
        err.correction = err.correction[::-1]
        if err.field_error is not None:
            err.field_error = err.field_error[::-1]
        return err
    D = defect(pot, u, grid, 0.0 if F is None else F, order=4)
    return estimate_trace_error(grid, pot, D, u, keep_field)


def comparison_floor(grid: Grid, err_a: TraceError, err_b: TraceError,
                     t1=None, t2=None) -> float:
    """Noise floor for the L2(Sigma) discrepancy of two computed traces."""
    diff = l2_sigma(grid, err_a.correction - err_b.correction, t1, t2)
    return diff + err_a.noise + err_b.noise


def sigma_pairing(grid: Grid, a: np.ndarray, b: np.ndarray, t1=None, t2=None):
    """Integral of a * b over (t1, t2) x dOmega."""
    return integrate_sigma(grid, a * b, t1, t2)
