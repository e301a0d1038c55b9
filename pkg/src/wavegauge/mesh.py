"""
Uniform space-time grids on the unit box, sampling, quadrature and norms.

Fields are plain numpy arrays with the time level as the leading axis:
``(nt + 1, nx)`` in 1D and ``(nt + 1, nx, nx)`` in 2D.  Boundary data on
the lateral boundary live in arrays of shape ``(nt + 1, nfaces, npts)``;
faces are ordered ``x0=0, x0=1[, x1=0, x1=1]`` and in 1D each face holds a
single point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

MIN_NX = 16
MAX_CFL = 0.9


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid over (0, T) x (0, length)^dim."""

    dim: int
    nx: int
    nt: int
    hx: float
    ht: float
    length: float = 1.0

    @property
    def T(self) -> float:
        return self.nt * self.ht

    @property
    def cfl(self) -> float:
        return self.ht * math.sqrt(self.dim) / self.hx

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.nt + 1) * self.ht

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.length, self.nx)

    @property
    def spatial_shape(self) -> tuple:
        return (self.nx,) * self.dim

    @property
    def shape(self) -> tuple:
        return (self.nt + 1,) + self.spatial_shape

    @property
    def nfaces(self) -> int:
        return 2 * self.dim

    @property
    def face_points(self) -> int:
        return 1 if self.dim == 1 else self.nx

    @property
    def boundary_shape(self) -> tuple:
        return (self.nt + 1, self.nfaces, self.face_points)

    @property
    def diameter(self) -> float:
        return self.length * math.sqrt(self.dim)

    def coords(self) -> list:
        """Broadcastable spatial coordinate arrays (without time axis)."""
        x = self.x
        if self.dim == 1:
            return [x]
        return [x[:, None], x[None, :]]

    def time_index(self, t: float) -> int:
        """Nearest time level to ``t``."""
        return int(np.clip(round(t / self.ht), 0, self.nt))

    def boundary_coords(self) -> list:
        """Coordinates of the boundary nodes, each of shape (nfaces, npts)."""
        x = self.x
        L = self.length
        if self.dim == 1:
            return [np.array([[0.0], [L]])]
        zeros = np.zeros_like(x)
        ones = np.full_like(x, L)
        X = np.stack([zeros, ones, x, x])
        Y = np.stack([x, x, zeros, ones])
        return [X, Y]

    def face_layer(self, u: np.ndarray, depth: int) -> np.ndarray:
        """Values ``depth`` nodes inward from each face, shape (..., nfaces, npts)."""
        j = depth
        if self.dim == 1:
            return np.stack([u[..., j], u[..., -1 - j]], axis=-1)[..., None]
        return np.stack(
            [u[..., j, :], u[..., -1 - j, :], u[..., :, j], u[..., :, -1 - j]],
            axis=-2,
        )

    def boundary_values(self, u: np.ndarray) -> np.ndarray:
        return self.face_layer(u, 0)

    def interior(self, u: np.ndarray) -> np.ndarray:
        if self.dim == 1:
            return u[..., 1:-1]
        return u[..., 1:-1, 1:-1]

    def spatial_weights(self) -> np.ndarray:
        w = np.full(self.nx, self.hx)
        w[0] = w[-1] = 0.5 * self.hx
        if self.dim == 1:
            return w
        return np.outer(w, w)

    def face_weights(self) -> np.ndarray:
        """Quadrature weights on the boundary faces, shape (nfaces, npts)."""
        if self.dim == 1:
            return np.ones((2, 1))
        w = np.full(self.nx, self.hx)
        w[0] = w[-1] = 0.5 * self.hx
        return np.tile(w, (4, 1))

    def time_weights(self, t1: float | None = None, t2: float | None = None) -> np.ndarray:
        """Integrals of the piecewise-linear hat functions over [t1, t2].

        With the full interval this is the trapezoidal rule; partial windows
        need not align with time levels.
        """
        a = 0.0 if t1 is None else float(t1)
        b = self.T if t2 is None else float(t2)
        eps = 1e-12 * max(1.0, self.T)
        if a < -eps or b > self.T + eps or b < a:
            raise ConfigurationError(
                f"time window ({a}, {b}) is not inside (0, {self.T})"
            )
        a, b = max(a, 0.0), min(b, self.T)
        t = self.t
        w = np.zeros(self.nt + 1)
        lo = np.clip(a, t[:-1], t[1:])
        hi = np.clip(b, t[:-1], t[1:])
        # integrals of (t_{n+1}-s)/ht and (s-t_n)/ht over [lo, hi]
        left = ((t[1:] - lo) ** 2 - (t[1:] - hi) ** 2) / (2 * self.ht)
        right = ((hi - t[:-1]) ** 2 - (lo - t[:-1]) ** 2) / (2 * self.ht)
        w[:-1] += left
        w[1:] += right
        return w


@dataclass(frozen=True)
class TimeWindow:
    """Observation horizon T* and coefficient window (t1, t2)."""

    Tstar: float
    t1: float
    t2: float

    def validate(self, T: float, diameter: float = 1.0) -> "TimeWindow":
        if not self.Tstar > 2 * diameter:
            raise ConfigurationError(
                f"Tstar={self.Tstar} must exceed 2*diam(Omega)={2 * diameter}"
            )
        if not (self.Tstar < self.t1 < self.t2 < T - self.Tstar):
            raise ConfigurationError(
                f"window requires Tstar < t1 < t2 < T - Tstar, got "
                f"Tstar={self.Tstar}, t1={self.t1}, t2={self.t2}, T={T}"
            )
        return self


def build_grid(dim: int, nx: int, cfl_target: float = None, T_request: float = 1.0,
               length: float = 1.0) -> Grid:
    """Build a uniform grid with ``ht = cfl * hx / sqrt(dim)``.

    The number of steps is the smallest ``nt`` with ``nt * ht >= T_request``
    and the grid's final time is ``nt * ht``.
    """
    if dim not in (1, 2):
        raise ConfigurationError(f"dim must be 1 or 2, got {dim}")
    if nx < MIN_NX:
        raise ConfigurationError(f"nx={nx} is too coarse; need nx >= {MIN_NX}")
    if cfl_target is None:
        cfl_target = 0.9 if dim == 1 else 0.5
    if not 0 < cfl_target <= MAX_CFL:
        raise ConfigurationError(f"cfl_target must be in (0, {MAX_CFL}], got {cfl_target}")
    if not T_request > 0:
        raise ConfigurationError(f"T_request must be positive, got {T_request}")
    hx = length / (nx - 1)
    ht = cfl_target * hx / math.sqrt(dim)
    nt = int(math.ceil(T_request / ht - 1e-9))
    return Grid(dim=dim, nx=nx, nt=nt, hx=hx, ht=ht, length=length)


def _check_finite(values: np.ndarray, what: str) -> np.ndarray:
    bad = ~np.isfinite(values)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ConfigurationError(f"non-finite {what} at grid index {idx}")
    return values


def sample(grid: Grid, func, dtype=float) -> np.ndarray:
    """Sample ``func(t, x[, y])`` on every space-time node."""
    t = grid.t.reshape((-1,) + (1,) * grid.dim)
    with np.errstate(all="ignore"):
        values = func(t, *grid.coords())
    values = np.broadcast_to(np.asarray(values, dtype=dtype), grid.shape).copy()
    return _check_finite(values, "sample")


def sample_space(grid: Grid, func, dtype=float) -> np.ndarray:
    """Sample ``func(x[, y])`` on the spatial grid."""
    with np.errstate(all="ignore"):
        values = func(*grid.coords())
    values = np.broadcast_to(np.asarray(values, dtype=dtype), grid.spatial_shape).copy()
    return _check_finite(values, "spatial sample")


def sample_boundary(grid: Grid, func, dtype=float) -> np.ndarray:
    """Sample ``func(t, x[, y])`` on the lateral boundary nodes."""
    t = grid.t[:, None, None]
    with np.errstate(all="ignore"):
        values = func(t, *[c[None] for c in grid.boundary_coords()])
    values = np.broadcast_to(np.asarray(values, dtype=dtype), grid.boundary_shape).copy()
    return _check_finite(values, "boundary sample")


# -- smooth building blocks ---------------------------------------------------


def smoothstep(s):
    """C-infinity step: 0 for s <= 0, 1 for s >= 1, all derivatives flat at both ends."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = (s > 0) & (s < 1)
    si = s[inside]
    a = np.exp(-1.0 / si)
    b = np.exp(-1.0 / (1.0 - si))
    out[inside] = a / (a + b)
    out[s >= 1] = 1.0
    return out


def bump(s, deriv: int = 0):
    """Squared unit bump ``exp(2 - 2/(1 - s^2))`` on (-1, 1) and its derivatives.

    Peak value 1 at s = 0.  ``deriv`` may be 0, 1 or 2.
    """
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    si = s[inside]
    d = 1.0 - si * si
    val = np.exp(2.0 - 2.0 / d)
    if deriv == 0:
        out[inside] = val
        return out
    g1 = -2.0 * si / d**2  # derivative of 1 - 1/(1-s^2)
    if deriv == 1:
        out[inside] = 2.0 * g1 * val
        return out
    if deriv == 2:
        g2 = -2.0 / d**2 - 8.0 * si * si / d**3
        out[inside] = (2.0 * g2 + 4.0 * g1 * g1) * val
        return out
    raise ValueError("bump derivatives available up to order 2")


@dataclass(frozen=True)
class Profile:
    """Compactly supported bump ``amplitude * bump((s - center)/halfwidth)``."""

    center: float
    halfwidth: float
    amplitude: float = 1.0

    def __call__(self, s, deriv: int = 0):
        scale = self.halfwidth ** (-deriv)
        return self.amplitude * scale * bump((np.asarray(s) - self.center) / self.halfwidth, deriv)

    @property
    def support(self) -> tuple:
        return (self.center - self.halfwidth, self.center + self.halfwidth)


def ramp(t, t_ramp: float, flat: float = 0.2):
    """Compatibility ramp: 0 on [0, flat * t_ramp], 1 after ``t_ramp``, smooth between.

    The flat start makes the first time levels vanish exactly, so the
    discrete compatibility conditions hold on any grid.
    """
    s = (np.asarray(t, dtype=float) / t_ramp - flat) / (1.0 - flat)
    return smoothstep(s)


def window_cutoff(t, t1: float, t2: float, delta_frac: float = 0.05):
    """Smooth cutoff equal to 1 on [t1 + d, t2 - d] and 0 outside [t1, t2]."""
    d = delta_frac * (t2 - t1)
    t = np.asarray(t, dtype=float)
    return smoothstep((t - t1) / d) * smoothstep((t2 - t) / d)


# -- quadrature and norms -----------------------------------------------------


def integrate_q(grid: Grid, field: np.ndarray, t1: float | None = None,
                t2: float | None = None):
    """Trapezoidal integral of a space-time field over (t1, t2) x Omega."""
    wt = grid.time_weights(t1, t2)
    ws = grid.spatial_weights()
    spatial = np.tensordot(field, ws, axes=grid.dim)
    return np.dot(wt, spatial)


def integrate_sigma(grid: Grid, bvals: np.ndarray, t1: float | None = None,
                    t2: float | None = None):
    """Integral of boundary data over (t1, t2) x dOmega."""
    wt = grid.time_weights(t1, t2)
    wf = grid.face_weights()
    return np.dot(wt, np.tensordot(bvals, wf, axes=2))


def l2_q(grid: Grid, field: np.ndarray, t1: float | None = None,
         t2: float | None = None) -> float:
    return float(np.sqrt(max(integrate_q(grid, np.abs(field) ** 2, t1, t2), 0.0)))


def l2_sigma(grid: Grid, bvals: np.ndarray, t1: float | None = None,
             t2: float | None = None) -> float:
    return float(np.sqrt(max(integrate_sigma(grid, np.abs(bvals) ** 2, t1, t2), 0.0)))


def _gradient_sq(grid: Grid, v: np.ndarray) -> np.ndarray:
    total = np.zeros(v.shape)
    for axis in range(grid.dim):
        g = np.gradient(v, grid.hx, axis=axis, edge_order=2)
        total += np.abs(g) ** 2
    return total


def energy(grid: Grid, u: np.ndarray, t: float) -> float:
    """Discrete energy 0.5 * int (u_t^2 + |grad u|^2) dx at the level nearest ``t``."""
    n = grid.time_index(t)
    ht = grid.ht
    if grid.nt < 2:
        raise ConfigurationError("energy needs at least three time levels")
    if n == 0:
        ut = (-3 * u[0] + 4 * u[1] - u[2]) / (2 * ht)
    elif n == grid.nt:
        ut = (3 * u[n] - 4 * u[n - 1] + u[n - 2]) / (2 * ht)
    else:
        ut = (u[n + 1] - u[n - 1]) / (2 * ht)
    density = np.abs(ut) ** 2 + _gradient_sq(grid, u[n])
    return float(0.5 * np.sum(density * grid.spatial_weights()))


def norm(grid: Grid, field: np.ndarray, which: str = "Q", window=None,
         t: float | None = None) -> float:
    """Dispatch to the named norm.

    ``which`` is one of ``"Q"`` (L2 over Q), ``"window"`` (L2 over
    (t1, t2) x Omega, window given as a pair or TimeWindow), ``"sigma"``
    (L2 over the lateral boundary, field given as boundary data) or
    ``"energy"`` (discrete energy at time ``t``).
    """
    if which == "Q":
        return l2_q(grid, field)
    if which == "window":
        t1, t2 = (window.t1, window.t2) if isinstance(window, TimeWindow) else window
        return l2_q(grid, field, t1, t2)
    if which == "sigma":
        if window is None:
            return l2_sigma(grid, field)
        t1, t2 = (window.t1, window.t2) if isinstance(window, TimeWindow) else window
        return l2_sigma(grid, field, t1, t2)
    if which == "energy":
        if t is None or not 0 <= t <= grid.T + 1e-12:
            raise ConfigurationError(f"energy time {t} outside [0, {grid.T}]")
        return energy(grid, field, t)
    raise ConfigurationError(f"unknown norm {which!r}")
