"""
Standard problem instances: grids, windows, coefficient shapes and input batteries.

Everything here is deterministic given the grid and an optional seed so
suites and tests can rebuild identical problems.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError
from .forward import Nonlinearity, ProblemSpec, compatible
from .mesh import Grid, Profile, TimeWindow, build_grid, window_cutoff

DEFAULT_WINDOW = TimeWindow(Tstar=2.2, t1=2.5, t2=3.0)
DEFAULT_T = 5.5


def default_grid(nx: int = 101, dim: int = 1, T: float = DEFAULT_T, cfl: float | None = None) -> Grid:
    return build_grid(dim, nx, cfl, T)


def window_field(grid: Grid, window: TimeWindow, amplitude: float = 1.0,
                 tilt: float = 0.3, phase: float = 0.0) -> np.ndarray:
    """amplitude * cutoff(t) * (1 + tilt * sin(pi x + phase)), supported in the window."""
    cut = window_cutoff(grid.t, window.t1, window.t2).reshape((-1,) + (1,) * grid.dim)
    space = 1.0
    for c in grid.coords():
        space = space * (1.0 + tilt * np.sin(np.pi * c + phase))
    return np.broadcast_to(amplitude * cut * space, grid.shape).copy()


def bump_field(grid: Grid, window: TimeWindow, amplitude: float = 1.0,
               x_center: float = 0.5, x_halfwidth: float = 0.4,
               t_shrink: float = 1.0) -> np.ndarray:
    """Separable smooth bump supported in the window (time) and inside the box."""
    tc = 0.5 * (window.t1 + window.t2)
    tw = 0.5 * (window.t2 - window.t1) * t_shrink
    t = grid.t.reshape((-1,) + (1,) * grid.dim)
    val = amplitude * Profile(tc, tw)(t)
    for c in grid.coords():
        val = val * Profile(x_center, x_halfwidth)(c[None])
    return np.broadcast_to(val, grid.shape).copy()


def boundary_bump(grid: Grid, face: int, t_center: float, t_halfwidth: float,
                  amplitude: float = 1.0, x_center: float = 0.5,
                  x_halfwidth: float = 0.45) -> np.ndarray:
    """Dirichlet data: a time bump on one face (and a spatial bump along it in 2D)."""
    f = np.zeros(grid.boundary_shape)
    prof = Profile(t_center, t_halfwidth, amplitude)(grid.t)
    if grid.dim == 1:
        f[:, face, 0] = prof
    else:
        f[:, face, :] = prof[:, None] * Profile(x_center, x_halfwidth)(grid.x)[None, :]
    return compatible(grid, f)


def input_battery(grid: Grid, size: int = 5, amplitude: float = 0.8, seed: int = 0) -> list:
    """Boundary inputs whose waves cross the box during the coefficient window."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(size):
        face = k % grid.nfaces
        tc = 1.9 + 0.5 * k / max(size - 1, 1) + 0.05 * rng.uniform(-1, 1)
        amp = amplitude * (1.0 - 0.15 * (k % 3))
        out.append(boundary_bump(grid, face, tc, 0.5, amp))
    return out


def direction_battery(grid: Grid, k: int) -> list:
    """Disjoint-in-time directions for linearization studies."""
    centers = [2.2, 2.0, 1.8, 2.4, 1.6, 2.6]
    return [boundary_bump(grid, l % grid.nfaces, centers[l], 0.45, 1.0 - 0.1 * l) for l in range(k)]


def polynomial_spec(grid: Grid, window: TimeWindow = DEFAULT_WINDOW, n: int = 2,
                    scale: float = 1.0, F=None) -> ProblemSpec:
    """Polynomial nonlinearity with window-supported, spatially varying coefficients."""
    q = tuple(window_field(grid, window, scale * (0.4 + 0.3 * i), 0.3, 0.7 * i) for i in range(n))
    return ProblemSpec(grid, window, Nonlinearity("polynomial", q), F=F, F_after_t1=F is not None)


CASE_KINDS = {
    1: "exp_potential",
    2: "sin_potential",
    3: "z_sin",
    4: "sin_plus_exp",
    5: "sin_plus_cos",
    6: "zexp_plus_poly",
}


def catalogue_spec(case: int, grid: Grid, window: TimeWindow = DEFAULT_WINDOW,
                   n_poly: int = 2) -> ProblemSpec:
    """One instance of each catalogued transcendental nonlinearity."""
    if case not in CASE_KINDS:
        raise ConfigurationError(f"unknown catalogue case {case}")
    kind = CASE_KINDS[case]
    q = window_field(grid, window, 0.8, 0.3)
    p = window_field(grid, window, 0.6, 0.2, 1.1)
    if kind == "zexp_plus_poly":
        polys = tuple(window_field(grid, window, 0.3 + 0.2 * i, 0.2, 0.5 * i) for i in range(n_poly))
        nl = Nonlinearity(kind, polys, p)
    elif kind in ("sin_plus_exp", "sin_plus_cos"):
        nl = Nonlinearity(kind, (q,), p)
    else:
        nl = Nonlinearity(kind, (q,))
    return ProblemSpec(grid, window, nl)


def stated_coefficients(case: int) -> list:
    """Names of the coefficients each catalogue case determines uniquely."""
    return {
        1: ["q"],
        2: ["q"],
        3: ["q"],
        4: ["p", "q"],
        5: ["p", "q"],
        6: ["p", "q1", "q2"],
    }[case]


def perturb(spec: ProblemSpec, name: str, size: float) -> ProblemSpec:
    """Relative perturbation of one coefficient inside the window."""
    nl = spec.nonlinearity
    if name == "p":
        return spec.with_changes(nonlinearity=nl.replace(p=nl.p * (1.0 + size)))
    if name == "q":
        idx = 0
    elif name.startswith("q") and name[1:].isdigit():
        idx = int(name[1:]) - 1
    else:
        raise ConfigurationError(f"unknown coefficient {name!r}")
    q = list(nl.q)
    q[idx] = q[idx] * (1.0 + size)
    return spec.with_changes(nonlinearity=nl.replace(q=tuple(q)))
