"""
Geometric-optics probes  v = exp(i s tau (|x - x0| + t)) a + R.

The amplitude a = r^{-(d-1)/2} phi(t + r) with r = |x - x0| solves the
transport equation exactly, so the only error left for the remainder R is
the box of the amplitude plus the potential term.  R is computed on the
grid with zero Dirichlet data and zero Cauchy data at t1 (forward probes)
or t2 (backward probes).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import forward as fw
from .errors import ConfigurationError
from .mesh import Grid, Profile, TimeWindow, l2_q

MAX_TAU_HX = 0.5


def _radius(grid: Grid, x0) -> np.ndarray:
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.size != grid.dim:
        raise ConfigurationError(f"x0 needs {grid.dim} coordinates")
    coords = grid.coords()
    r2 = sum((c - x0[i]) ** 2 for i, c in enumerate(coords))
    return np.sqrt(np.broadcast_to(r2, grid.spatial_shape))


def _box_distance(grid: Grid, x0) -> float:
    """Distance from x0 to the closed box (0 when inside)."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    gaps = np.maximum(0.0, np.maximum(-x0, x0 - grid.length))
    return float(np.sqrt(np.sum(gaps**2)))


def default_centers(grid: Grid) -> list:
    """Probe centers a quarter diameter outside the box."""
    m = 0.25 * grid.diameter
    if grid.dim == 1:
        return [(-m,), (grid.length + m,)]
    mid = 0.5 * grid.length
    return [(-m, mid), (grid.length + m, mid), (mid, -m), (mid, grid.length + m)]


def distance_phase(grid: Grid, x0) -> np.ndarray:
    """|x - x0| on the spatial grid (the phase is constant in time)."""
    if _box_distance(grid, x0) < 2 * grid.hx:
        raise ConfigurationError(
            f"probe center {tuple(np.atleast_1d(x0))} must lie outside the closed box "
            f"with margin >= 2 hx = {2 * grid.hx:.3g}"
        )
    return _radius(grid, x0)


def eikonal_residual(grid: Grid, phase: np.ndarray) -> float:
    """max | |grad phase| - 1 | on interior nodes, centered differences."""
    grads = np.gradient(phase, grid.hx)
    if grid.dim == 1:
        grads = [grads]
    mag = np.sqrt(sum(g**2 for g in grads))
    inner = (slice(1, -1),) * grid.dim
    return float(np.abs(mag[inner] - 1.0).max())


def transport_amplitude(grid: Grid, x0, profile) -> np.ndarray:
    """a(t, x) = r^{-(d-1)/2} phi(t + r)."""
    r = distance_phase(grid, x0)
    t = grid.t.reshape((-1,) + (1,) * grid.dim)
    return r ** (-(grid.dim - 1) / 2) * profile(t + r)


def _amplitude_terms(grid: Grid, x0, profile):
    """Closed forms of a, a_t, grad(phase).grad(a), Lap(phase) and box a."""
    r = distance_phase(grid, x0)[None]
    t = grid.t.reshape((-1,) + (1,) * grid.dim)
    m = (grid.dim - 1) / 2
    s = t + r
    phi, dphi = profile(s), profile(s, 1)
    a = r**-m * phi
    a_t = r**-m * dphi
    grad_dot = -m * r ** (-m - 1) * phi + r**-m * dphi
    lap_phase = (grid.dim - 1) / r
    # box a = a_tt - Lap a; the second derivatives of phi cancel
    box_a = -m * m * r ** (-m - 2) * phi if grid.dim > 1 else 0.0 * phi
    return a, a_t, grad_dot, lap_phase, box_a


def transport_residual(grid: Grid, x0, profile, window: TimeWindow | None = None,
                       stencil: bool = False) -> float:
    """L2 norm over the window of 2 a_t - 2 grad(phase).grad(a) - Lap(phase) a.

    With ``stencil=True`` the derivatives are taken by centered differences
    of the sampled amplitude instead of in closed form.
    """
    if stencil:
        a = transport_amplitude(grid, x0, profile)
        phase = distance_phase(grid, x0)
        a_t = np.gradient(a, grid.ht, axis=0, edge_order=2)
        gp = np.gradient(phase, grid.hx, edge_order=2)
        gp = [gp] if grid.dim == 1 else gp
        ga = [np.gradient(a, grid.hx, axis=i + 1, edge_order=2) for i in range(grid.dim)]
        grad_dot = sum(p[None] * q for p, q in zip(gp, ga))
        lap_phase = sum(np.gradient(gp[i], grid.hx, axis=i, edge_order=2) for i in range(grid.dim))
        res = 2 * a_t - 2 * grad_dot - lap_phase[None] * a
        # nested differences are one-sided on the outer two layers
        inner = (slice(2, -2),) * (grid.dim + 1)
        mask = np.zeros(grid.shape, dtype=bool)
        mask[inner] = True
        res = np.where(mask, res, 0.0)
    else:
        a, a_t, grad_dot, lap_phase, _ = _amplitude_terms(grid, x0, profile)
        res = 2 * a_t - 2 * grad_dot - lap_phase * a
    t1, t2 = (None, None) if window is None else (window.t1, window.t2)
    return l2_q(grid, res, t1, t2)


@dataclass
class GOProbe:
    """An assembled probe and its parts."""

    x0: tuple
    tau: float
    sign: int
    profile: Profile
    phase: np.ndarray
    amplitude: np.ndarray
    remainder: np.ndarray
    v: np.ndarray
    side: str
    window: TimeWindow
    grid: Grid

    @property
    def go_part(self) -> np.ndarray:
        return self.v - self.remainder

    @property
    def boundary_data(self) -> np.ndarray:
        """Dirichlet data of v on the lateral boundary (the remainder has none)."""
        return self.grid.boundary_values(self.v)

    def remainder_norm(self) -> float:
        return l2_q(self.grid, self.remainder, self.window.t1, self.window.t2)

    def residual(self, potential=None) -> float:
        """L2 norm over the window of the discrete (box + q) v."""
        return _window_defect(self.grid, potential, self.v, self.window)

    def floor(self) -> float:
        """Stencil error of the GO part: || (box_h - box) e^{i phase} a ||."""
        grid = self.grid
        _, _, _, _, box_a = _amplitude_terms(grid, self.x0, self.profile)
        go = self.go_part
        exact = np.exp(1j * self.sign * self.tau * (self.phase[None] + grid.t.reshape((-1,) + (1,) * grid.dim))) * box_a
        d = fw.wave_operator(grid, go, order=2) - exact
        return _masked_window_norm(grid, d, self.window)


def _masked_window_norm(grid, d, window):
    mask = np.zeros(grid.shape, dtype=bool)
    mask[(slice(1, -1),) + (slice(1, -1),) * grid.dim] = True
    return l2_q(grid, np.where(mask, d, 0.0), window.t1, window.t2)


def _window_defect(grid, potential, v, window):
    d = fw.wave_operator(grid, v, order=2)
    if potential is not None:
        d = d + np.broadcast_to(potential, grid.shape) * v
    return _masked_window_norm(grid, d, window)


def check_resolved(grid: Grid, tau: float):
    if tau * grid.hx > MAX_TAU_HX:
        raise ConfigurationError(
            f"tau={tau} is not resolved on hx={grid.hx:.4g}; the maximum admissible tau is "
            f"{MAX_TAU_HX / grid.hx:.4g}"
        )


def build_probe(grid: Grid, potential, x0, tau: float, sign: int = 1,
                profile: Profile | None = None, window: TimeWindow | None = None,
                side: str = "forward") -> GOProbe:
    """Assemble a GO probe solving (box + q) v = 0 on the window.

    The remainder solves (box + q) R = -e^{i s tau theta}(box a + q a) with
    zero Dirichlet data and zero Cauchy data at t1 (forward) or t2
    (backward).
    """
    if window is None:
        raise ConfigurationError("a time window is required")
    if sign not in (1, -1):
        raise ConfigurationError("sign must be +1 or -1")
    if side not in ("forward", "backward"):
        raise ConfigurationError("side must be 'forward' or 'backward'")
    check_resolved(grid, tau)
    x0 = tuple(np.atleast_1d(np.asarray(x0, dtype=float)))
    if profile is None:
        profile = default_profile(grid, window, x0)
    phase = distance_phase(grid, x0)
    _, _, _, _, box_a = _amplitude_terms(grid, x0, profile)
    a = transport_amplitude(grid, x0, profile)
    t = grid.t.reshape((-1,) + (1,) * grid.dim)
    osc = np.exp(1j * sign * tau * (phase[None] + t))
    go = osc * a
    q = None if potential is None else np.broadcast_to(potential, grid.shape)
    src = -osc * (box_a + (0.0 if q is None else q * a))
    tt = grid.t
    if side == "forward":
        active = tt >= window.t1 - 1e-12
        src = np.where(active.reshape((-1,) + (1,) * grid.dim), src, 0.0)
        R = fw.solve_linear(grid, q, src, None, None, None, check=False)
    else:
        active = tt <= window.t2 + 1e-12
        src = np.where(active.reshape((-1,) + (1,) * grid.dim), src, 0.0)
        R = fw.solve_linear_backward(grid, q, src, None, None, None, check=False)
    v = go + R
    return GOProbe(x0, tau, sign, profile, phase, a, R, v, side, window, grid)


def default_profile(grid: Grid, window: TimeWindow, x0) -> Profile:
    """Profile whose wave crosses the box during the window."""
    r = _radius(grid, x0)
    mid_r = 0.5 * (r.min() + r.max())
    center = 0.5 * (window.t1 + window.t2) + mid_r
    return Profile(center, 0.5 * (window.t2 - window.t1) + 0.5 * (r.max() - r.min()))


def backward_solution(grid: Grid, potential, f3) -> np.ndarray:
    """Solution with u(T) = u_t(T) = 0 and Dirichlet data f3."""
    return fw.solve_linear_backward(grid, potential, None, f3, None, None, check=False)


def low_frequency_fraction(grid: Grid, field: np.ndarray, cutoff: float,
                           window: TimeWindow | None = None) -> float:
    """Fraction of time-Fourier energy at angular frequencies below ``cutoff``."""
    data = field
    if window is not None:
        sel = (grid.t >= window.t1) & (grid.t <= window.t2)
        data = field[sel]
    spec = np.fft.fft(data, axis=0)
    omega = 2 * np.pi * np.fft.fftfreq(data.shape[0], d=grid.ht)
    energy = np.abs(spec) ** 2
    energy = energy.reshape(energy.shape[0], -1).sum(axis=1)
    total = energy.sum()
    if total == 0:
        return 1.0
    return float(energy[np.abs(omega) < cutoff].sum() / total)
