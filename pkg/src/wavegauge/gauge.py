"""
Gauge transformations that leave the DtN map unchanged, and their checks.

Role convention: the input coefficients belong to the reference problem
("spec 2") and the transforms return the gauge-transformed problem
("spec 1").  For the polynomial and exponential families the transformed
solution is u - psi; for the trigonometric family it is u + psi.  In every
case psi vanishes before t1 and has zero trace and normal derivative on
the lateral boundary, so both problems share boundary data and traces.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np

from . import forward as fw
from .errors import ConfigurationError, GaugeError
from .mesh import Grid, Profile, TimeWindow, l2_sigma

ROLE_NOTE = (
    "spec 2 is the reference input; spec 1 is the gauge-transformed output "
    "(solutions related by u2 = u1 + psi)"
)


@dataclass(frozen=True)
class BumpParams:
    """Separable bump: time profile and one spatial profile per axis."""

    t_center: float
    t_halfwidth: float
    x_centers: tuple
    x_halfwidths: tuple


@dataclass
class GaugeFunction:
    """Admissible gauge psi on a grid.

    ``box`` holds the analytic (d_tt - Lap) psi when psi has a closed form;
    otherwise the centered stencil is used.
    """

    grid: Grid
    psi: np.ndarray
    window: TimeWindow = None
    vanish_after: float = None
    box: np.ndarray = None
    params: BumpParams = None

    def wave(self) -> np.ndarray:
        """(d_tt - Lap) psi."""
        if self.box is not None:
            return self.box
        return fw.wave_operator(self.grid, self.psi, order=2)

    def violations(self) -> dict:
        return gauge_violations(self.grid, self.psi, self.window.t1 if self.window else 0.0)


def gauge_violations(grid: Grid, psi: np.ndarray, t1: float) -> dict:
    """Largest violation of each admissibility constraint."""
    early = psi[grid.t <= t1 + 1e-12]
    trace = fw.neumann_trace(grid, psi)
    return {
        "psi_before_t1": float(np.abs(early).max()) if early.size else 0.0,
        "psi_on_sigma": float(np.abs(trace.dirichlet).max()),
        "dnu_psi_on_sigma": float(np.abs(trace.neumann).max()),
    }


def _check(viol: dict, scale: float, trace_tol: float | None):
    limits = {
        "psi_before_t1": 1e-12 * max(scale, 1.0),
        "psi_on_sigma": 1e-10 * max(scale, 1.0) if trace_tol is None else trace_tol,
        "dnu_psi_on_sigma": 1e-10 * max(scale, 1.0) if trace_tol is None else trace_tol,
    }
    return {k: v for k, v in viol.items() if v > limits[k]}


def default_bump(grid: Grid, window: TimeWindow) -> BumpParams:
    """Bump filling the coefficient window in time and the middle of the box in space."""
    tc = 0.5 * (window.t1 + window.t2)
    tw = 0.5 * (window.t2 - window.t1)
    return BumpParams(tc, tw, (0.5,) * grid.dim, (0.35,) * grid.dim)


def make_gauge(grid: Grid, window: TimeWindow, amplitude: float,
               params: BumpParams | None = None) -> GaugeFunction:
    """psi = amplitude * bump(t) * prod bump(x_i), each bump a squared smooth bump."""
    params = params or default_bump(grid, window)
    if len(params.x_centers) != grid.dim or len(params.x_halfwidths) != grid.dim:
        raise ConfigurationError("bump needs one spatial center and width per axis")
    t_lo = params.t_center - params.t_halfwidth
    t_hi = params.t_center + params.t_halfwidth
    if t_lo < window.t1 or t_hi > grid.T:
        raise ConfigurationError(
            f"gauge time support ({t_lo:.4g}, {t_hi:.4g}) must lie in (t1={window.t1}, T={grid.T:.4g})"
        )
    margin = 2 * grid.hx
    for c, w in zip(params.x_centers, params.x_halfwidths):
        if c - w < margin or c + w > grid.length - margin:
            raise ConfigurationError(
                f"gauge spatial support ({c - w:.4g}, {c + w:.4g}) must keep a margin of "
                f"{margin:.3g} from the boundary"
            )
    tp = Profile(params.t_center, params.t_halfwidth)
    xps = [Profile(c, w) for c, w in zip(params.x_centers, params.x_halfwidths)]
    t = grid.t.reshape((-1,) + (1,) * grid.dim)
    coords = [c[None] for c in grid.coords()]
    bt, btt = tp(t), tp(t, 2)
    bx = [p(c) for p, c in zip(xps, coords)]
    bxx = [p(c, 2) for p, c in zip(xps, coords)]
    space = np.prod(bx, axis=0)
    psi = amplitude * bt * space
    lap = 0.0
    for i in range(grid.dim):
        others = [bx[j] for j in range(grid.dim) if j != i]
        lap = lap + bxx[i] * (np.prod(others, axis=0) if others else 1.0)
    box = amplitude * (btt * space - bt * lap)
    psi = np.broadcast_to(psi, grid.shape).copy()
    box = np.broadcast_to(box, grid.shape).copy()
    gauge = GaugeFunction(grid, psi, window, None, box, params)
    bad = _check(gauge.violations(), abs(amplitude), None)
    if bad:
        raise GaugeError(f"gauge violates admissibility: {bad}", bad)
    return gauge


def zero_gauge(grid: Grid, window: TimeWindow) -> GaugeFunction:
    z = np.zeros(grid.shape)
    return GaugeFunction(grid, z, window, None, z.copy())


# -- transforms ---------------------------------------------------------------


def transform_polynomial(q, F, gauge: GaugeFunction):
    """Coefficients and source of the polynomial gauge partner.

    q'_{n-k} = sum_{l=0}^{k} C(n-k+l, l) q_{n-k+l} psi^l  and
    F' = F - (d_tt - Lap) psi - sum_i q_i psi^i.
    For n = 1 this is the linear potential case: q' = q, F' = F - box psi - q psi.
    """
    q = list(q)
    n = len(q)
    if n < 1:
        raise ConfigurationError("need at least one coefficient")
    psi = gauge.psi
    powers = [np.ones_like(psi)]
    for _ in range(n):
        powers.append(powers[-1] * psi)
    new = []
    for j in range(1, n + 1):  # j = n - k
        acc = 0.0
        for l in range(0, n - j + 1):
            acc = acc + comb(j + l, l) * q[j + l - 1] * powers[l]
        new.append(acc)
    new[-1] = q[-1]  # the top coefficient is untouched
    shift = sum(q[i - 1] * powers[i] for i in range(1, n + 1))
    F = 0.0 if F is None else F
    F_new = F - gauge.wave() - shift
    return tuple(new), F_new


def transform_exponential(q, F, gauge: GaugeFunction):
    """q' = q e^psi, F' = F - (d_tt - Lap) psi."""
    F = 0.0 if F is None else F
    return q * np.exp(gauge.psi), F - gauge.wave()


def transform_trig(p, q, F, gauge: GaugeFunction):
    """Rotation of (p, q) by psi for a = p sin z + q cos z.

    The transformed solution is u + psi, so the source picks up
    +(d_tt - Lap) psi.
    """
    c, s = np.cos(gauge.psi), np.sin(gauge.psi)
    F = 0.0 if F is None else F
    return p * c + q * s, -p * s + q * c, F + gauge.wave()


def transform_spec(spec: fw.ProblemSpec, gauge: GaugeFunction) -> fw.ProblemSpec:
    """Apply the matching gauge transform to a whole problem."""
    nl = spec.nonlinearity
    F = spec.source()
    if nl.kind == "polynomial":
        q, F2 = transform_polynomial(nl.q, F, gauge)
        return spec.with_changes(nonlinearity=nl.replace(q=q), F=_field(spec, F2))
    if nl.kind == "exp_potential":
        q, F2 = transform_exponential(nl.q[0], F, gauge)
        return spec.with_changes(nonlinearity=nl.replace(q=(q,)), F=_field(spec, F2))
    if nl.kind == "sin_plus_cos":
        p, q, F2 = transform_trig(nl.p, nl.q[0], F, gauge)
        return spec.with_changes(nonlinearity=nl.replace(p=p, q=(q,)), F=_field(spec, F2))
    raise ConfigurationError(f"{nl.kind} has no gauge symmetry")


def _field(spec, value):
    return np.broadcast_to(value, spec.grid.shape).copy()


def inverse_polynomial(q_transformed, F_transformed, gauge: GaugeFunction):
    """Recover the reference coefficients: same formula with -psi."""
    neg = GaugeFunction(gauge.grid, -gauge.psi, gauge.window, None, -gauge.wave())
    return transform_polynomial(q_transformed, F_transformed, neg)


# -- solver-mediated gauges and DtN checks ------------------------------------


@dataclass
class GaugeDiagnostic:
    """Returned instead of a gauge when psi = u02 - u01 is not admissible."""

    violations: dict
    psi: np.ndarray

    @property
    def ok(self) -> bool:
        return False


def gauge_from_solutions(grid: Grid, u01: np.ndarray, u02: np.ndarray,
                         window: TimeWindow, trace_tol: float | None = None):
    """psi = u02 - u01, checked against the admissibility constraints."""
    psi = np.asarray(u02) - np.asarray(u01)
    viol = gauge_violations(grid, psi, window.t1)
    scale = max(float(np.abs(u01).max()), float(np.abs(u02).max()), 1.0)
    bad = _check(viol, scale, trace_tol)
    if bad:
        return GaugeDiagnostic(viol, psi)
    return GaugeFunction(grid, psi, window)


@dataclass
class ProbeComparison:
    max_discrepancy: float
    l2_discrepancy: float
    floor: float

    @property
    def ratio(self) -> float:
        if self.l2_discrepancy == 0.0:
            return 0.0
        return self.l2_discrepancy / max(self.floor, 1e-300)


@dataclass
class InvarianceReport:
    comparisons: list = field(default_factory=list)
    tolerance: float = 10.0
    role: str = ROLE_NOTE

    @property
    def equivalent(self) -> bool:
        return all(c.ratio <= self.tolerance for c in self.comparisons)

    @property
    def verdict(self) -> str:
        return "gauge-equivalent" if self.equivalent else "not equivalent"

    @property
    def max_ratio(self) -> float:
        return max((c.ratio for c in self.comparisons), default=0.0)


def compare_dtn(spec1: fw.ProblemSpec, spec2: fw.ProblemSpec, f,
                t1: float | None = None, t2: float | None = None) -> ProbeComparison:
    """Trace discrepancy of two problems for one input, with its noise floor.

    The optional (t1, t2) restricts the comparison to part of the boundary
    time interval.
    """
    grid = spec1.grid
    u1 = fw.solve_semilinear(spec1, f)
    u2 = u1 if spec2 is spec1 else fw.solve_semilinear(spec2, f)
    n1 = fw.neumann_trace(grid, u1).neumann
    n2 = fw.neumann_trace(grid, u2).neumann
    e1 = fw.spec_trace_error(spec1, u1)
    e2 = e1 if spec2 is spec1 else fw.spec_trace_error(spec2, u2)
    diff = n1 - n2
    mask = np.ones(grid.nt + 1, dtype=bool)
    if t1 is not None:
        mask &= grid.t >= t1 - 1e-12
    if t2 is not None:
        mask &= grid.t <= t2 + 1e-12
    return ProbeComparison(
        max_discrepancy=float(np.abs(diff[mask]).max()),
        l2_discrepancy=l2_sigma(grid, diff, t1, t2),
        floor=fw.comparison_floor(grid, e1, e2, t1, t2),
    )


def verify_dtn_invariance(spec1: fw.ProblemSpec, spec2: fw.ProblemSpec, inputs,
                          tolerance: float = 10.0) -> InvarianceReport:
    """Compare DtN outputs over a battery of boundary inputs."""
    report = InvarianceReport(tolerance=tolerance)
    for f in inputs:
        report.comparisons.append(compare_dtn(spec1, spec2, f))
    return report


def collapse_check(q_top, gauge_psi: np.ndarray, window_mask: np.ndarray,
                   n: int, tol: float = 1e-12) -> bool:
    """True when imposing q'_{n-1} = q_{n-1} forces psi = 0 on the window.

    The constraint reads n q_n psi = 0 pointwise; where q_n != 0 the only
    solution is psi = 0.  Returns whether the candidate psi is admissible.
    """
    q_top = np.broadcast_to(q_top, gauge_psi.shape)
    support = window_mask & (np.abs(q_top) > tol)
    residual = n * q_top * gauge_psi
    return bool(np.all(np.abs(residual[support]) <= tol))
