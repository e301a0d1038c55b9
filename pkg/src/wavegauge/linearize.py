"""
Higher-order linearization of the solution and DtN maps.

For boundary data f0 + sum_l eps_l f_l the mixed derivative of u in the
active amplitudes S solves the linear problem with potential
d_z a(t, x, u0), zero boundary and Cauchy data, and the source

    - sum over set partitions pi of S with |pi| >= 2 of
        d_z^{|pi|} a(t, x, u0) * prod_{B in pi} u^(B),

which is Faa di Bruno's formula with the single-block term moved to the
left side.  Order one is the first variation with boundary data f_l.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from . import forward as fw
from .errors import ConfigurationError, ContractError
from .mesh import l2_sigma

MAX_ORDER = 6
DEFAULT_LADDER = (1e-2, 5e-3, 2.5e-3)
RICHARDSON_GATE = 0.10
ORACLE_PICARD_TOL = 1e-13


def set_partitions(items):
    """All set partitions of a sequence, as lists of tuples."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        yield [(first,)] + part
        for i, block in enumerate(part):
            yield part[:i] + [(first,) + block] + part[i + 1:]


@dataclass
class LinearizationRequest:
    spec: fw.ProblemSpec
    f0: np.ndarray
    directions: list
    active: tuple = None

    def __post_init__(self):
        if self.active is None:
            self.active = (1,) * len(self.directions)
        if len(self.active) != len(self.directions):
            raise ConfigurationError("multi-index length must match the number of directions")
        if any(a not in (0, 1) for a in self.active):
            raise ConfigurationError("multi-index entries must be 0 or 1")

    @property
    def order(self) -> int:
        return sum(self.active)

    @property
    def subset(self) -> frozenset:
        return frozenset(i for i, a in enumerate(self.active) if a)


@dataclass
class EffectivePotential:
    """q_k = d_z^k a(t, x, u0) for k = 1..K."""

    fields: dict

    def __getitem__(self, k):
        return self.fields[k]


def base_solution(spec: fw.ProblemSpec, f0=None, tol: float = fw.PICARD_TOL) -> np.ndarray:
    return fw.solve_semilinear(spec, f0, tol=tol)


def effective_potentials(spec: fw.ProblemSpec, u0: np.ndarray, K: int) -> EffectivePotential:
    nl = spec.nonlinearity
    out = {}
    for k in range(1, K + 1):
        if k > nl.max_order:
            out[k] = np.zeros(spec.grid.shape)
        else:
            out[k] = np.broadcast_to(fw.eval_nonlinearity(nl, u0, k), spec.grid.shape)
    return EffectivePotential(out)


def first_variation(spec: fw.ProblemSpec, u0: np.ndarray, f1) -> np.ndarray:
    pot = fw.eval_nonlinearity(spec.nonlinearity, u0, 1)
    return fw.solve_linear(spec.grid, np.broadcast_to(pot, spec.grid.shape), None, None, None, f1)


class Linearizer:
    """Variations u^(S) around one base solution, cached by direction subset.

    The cache is safe to share between threads: reads are lock-free and
    insertion happens under a lock with a re-check, so each subset is
    stored once.
    """

    def __init__(self, spec: fw.ProblemSpec, f0=None, directions=(), u0=None):
        self.spec = spec
        self.grid = spec.grid
        self.f0 = fw.zero_boundary(self.grid) if f0 is None else f0
        self.directions = list(directions)
        self.u0 = base_solution(spec, self.f0) if u0 is None else u0
        self._potentials = {}
        self._cache = {}
        self._lock = threading.Lock()

    def potential(self, k: int) -> np.ndarray:
        if k not in self._potentials:
            self._potentials[k] = effective_potentials(self.spec, self.u0, k)[k]
        return self._potentials[k]

    def _nonzero_order(self, k: int) -> bool:
        return k <= self.spec.nonlinearity.max_order

    def source(self, subset: frozenset) -> np.ndarray:
        """Right-hand side of the equation for u^(subset), |subset| >= 2."""
        src = np.zeros(self.grid.shape, dtype=self._dtype())
        for part in set_partitions(sorted(subset)):
            if len(part) < 2 or not self._nonzero_order(len(part)):
                continue
            prod = self.potential(len(part))
            for block in part:
                prod = prod * self.variation(frozenset(block))
            src = src - prod
        return src

    def _dtype(self):
        return complex if any(np.iscomplexobj(d) for d in self.directions) else float

    def variation(self, subset) -> np.ndarray:
        subset = frozenset(subset)
        if not subset:
            raise ContractError("empty multi-index")
        if len(subset) > MAX_ORDER:
            raise ContractError(f"order {len(subset)} exceeds the supported maximum {MAX_ORDER}")
        hit = self._cache.get(subset)
        if hit is not None:
            return hit
        pot = self.potential(1)
        if len(subset) == 1:
            (l,) = subset
            value = fw.solve_linear(self.grid, pot, None, None, None, self.directions[l])
        else:
            value = fw.solve_linear(self.grid, pot, self.source(subset), None, None, None,
                                    check=False)
        with self._lock:
            return self._cache.setdefault(subset, value)

    def trace(self, subset) -> np.ndarray:
        return fw.neumann_trace(self.grid, self.variation(subset)).neumann


def kth_variation(request: LinearizationRequest, linearizer: Linearizer | None = None) -> np.ndarray:
    if request.order > MAX_ORDER:
        raise ContractError(f"order {request.order} exceeds the supported maximum {MAX_ORDER}")
    if request.order == 0:
        raise ContractError("at least one active direction is required")
    lin = linearizer or Linearizer(request.spec, request.f0, request.directions)
    return lin.variation(request.subset)


# -- finite-difference oracle -------------------------------------------------


@dataclass
class FDDerivative:
    """Richardson-extrapolated mixed derivative of the DtN map."""

    record: fw.BoundaryRecord
    raw: list
    estimates: list
    gap: float
    flagged: bool
    message: str = ""
    ladder: tuple = DEFAULT_LADDER

    @property
    def neumann(self) -> np.ndarray:
        return self.record.neumann

    @property
    def spread(self) -> np.ndarray:
        """Pointwise difference of the two Richardson estimates."""
        return self.estimates[1] - self.estimates[0]


def mixed_difference(dtn_map, f0, directions, eps: float) -> np.ndarray:
    """sum_s (prod s) Lambda(f0 + eps sum s_l f_l) / (2 eps)^k over s in {-1, 1}^k."""
    k = len(directions)
    total = None
    for bits in range(2**k):
        signs = [1 - 2 * ((bits >> l) & 1) for l in range(k)]
        f = f0 + eps * sum(s * d for s, d in zip(signs, directions))
        val = np.prod(signs) * dtn_map(f)
        total = val if total is None else total + val
    return total / (2 * eps) ** k


def dtn_derivative_fd(spec: fw.ProblemSpec, f0, directions, order: int | None = None,
                      ladder=DEFAULT_LADDER, dtn_map=None,
                      tol: float = ORACLE_PICARD_TOL) -> FDDerivative:
    """Mixed central difference of the DtN map with one Richardson step.

    ``dtn_map`` may replace the simulated map by any oracle taking
    Dirichlet data and returning a Neumann trace.
    """
    grid = spec.grid
    directions = list(directions)
    order = len(directions) if order is None else order
    if order != len(directions):
        raise ConfigurationError("order must equal the number of directions")
    if order < 1 or order > MAX_ORDER:
        raise ContractError(f"unsupported order {order}")
    if len(ladder) != 3:
        raise ConfigurationError("the epsilon ladder needs three values")
    f0 = fw.zero_boundary(grid) if f0 is None else f0
    if dtn_map is None:
        def dtn_map(f):
            return fw.dtn(spec, f, tol=tol).neumann
    raw = [mixed_difference(dtn_map, f0, directions, e) for e in ladder]
    ests = []
    for (e1, d1), (e2, d2) in zip(zip(ladder, raw), zip(ladder[1:], raw[1:])):
        r2 = (e2 / e1) ** 2
        ests.append((d2 - r2 * d1) / (1 - r2))
    best = ests[-1]
    scale = max(l2_sigma(grid, best), l2_sigma(grid, raw[-1]))
    gap_abs = l2_sigma(grid, ests[1] - ests[0])
    gap = gap_abs / max(scale, 1e-8 * max(l2_sigma(grid, d) for d in raw) + 1e-300)
    flagged = gap > RICHARDSON_GATE
    message = "nonlinearity too strong / eps too large" if flagged else ""
    rec = fw.BoundaryRecord(dirichlet=sum(directions), neumann=best, grid=grid)
    return FDDerivative(rec, raw, ests, gap, flagged, message, tuple(ladder))
