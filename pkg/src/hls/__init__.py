"""Discrete sharp Hardy-Littlewood-Sobolev constants on compact manifolds."""

from .errors import (
    ConfigurationError,
    DegenerateInputError,
    DomainError,
    ExponentError,
    HLSError,
    UsageError,
)
from .geometry import ManifoldSpec, NormalChart, QuadratureGrid, build_grid, normal_chart
from .riesz import (
    DensityField,
    KernelMatrix,
    RieszKernel,
    apply_ialpha,
    assemble_kernel,
    critical_exponent,
    lp_norm,
    tail_norm,
)
from .extremal import ExtremalResult, SolverConfig, alternating_maximize, euclidean_baseline

__version__ = "0.1.0"
