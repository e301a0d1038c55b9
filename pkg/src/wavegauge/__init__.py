"""Numerical laboratory for inverse problems of semilinear wave equations."""

from .errors import ConfigurationError, ContractError, GaugeError, SolverError
from .mesh import Grid, TimeWindow, build_grid, norm, sample, sample_boundary, sample_space
from .forward import (
    BoundaryRecord,
    Nonlinearity,
    ProblemSpec,
    dtn,
    eval_nonlinearity,
    neumann_trace,
    residual,
    solve_linear,
    solve_semilinear,
)

__version__ = "0.1.0"
