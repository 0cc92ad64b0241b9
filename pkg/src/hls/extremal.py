"""Sharp constants by alternating dual-norm maximisation of the bilinear form.

For fixed ``g`` the best unit ``f`` in ``L^p`` against ``h = I g`` is the
Holder dual element ``h^(p'-1) / ||h^(p'-1)||_p``; alternating the two
updates never decreases ``B(f, g) = <f, I g>``.  At a fixed point the pair
solves the discrete Euler-Lagrange system ``I g = N f^(p-1)``,
``I f = N g^(t-1)``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import DegenerateInputError, DomainError, ExponentError, UsageError
from .geometry import ManifoldSpec, QuadratureGrid, build_grid
from .riesz import (
    DensityField,
    KernelMatrix,
    RieszKernel,
    apply_ialpha,
    assemble_kernel,
    bilinear_form,
    critical_exponent,
    lp_norm,
)

logger = logging.getLogger(__name__)

# Allowed relative decrease of the functional per half step (rounding only).
MONOTONE_TOL = 1e-12


@dataclass(frozen=True)
class SolverConfig:
    """Exponents and stopping rule for :func:`alternating_maximize`.

    ``p`` is the exponent of ``f`` and ``t`` that of ``g``; ``q = t / (t - 1)``.
    """

    p: float
    t: float
    max_iter: int = 2000
    tol: float = 1e-10
    seed: Optional[int] = None

    def __post_init__(self):
        if not (self.p > 1 and self.t > 1):
            raise ExponentError("solver exponents p and t must exceed 1")
        if not self.tol > 0:
            raise UsageError("tolerance must be positive")
        if self.max_iter < 1:
            raise UsageError("max_iter must be at least 1")

    @property
    def q(self) -> float:
        return self.t / (self.t - 1.0)

    @classmethod
    def from_exponents(cls, n: int, alpha: float, p: float, **kwargs) -> "SolverConfig":
        _, t = critical_exponent(n, alpha, p)
        return cls(p=p, t=t, **kwargs)


@dataclass
class ExtremalResult:
    value: float
    f: DensityField
    g: DensityField
    iterations: int
    history: List[float]
    residuals: Tuple[float, float]
    converged: bool
    monotone: bool = True
    half_steps: List[float] = field(default_factory=list)
    residual_history: List[Tuple[float, float]] = field(default_factory=list)
    grid: Optional[QuadratureGrid] = None
    kernel: Optional[KernelMatrix] = None

    @property
    def p(self) -> float:
        return self.f.exponent

    @property
    def t(self) -> float:
        return self.g.exponent

    def history_to_csv(self, path) -> None:
        """Columns: iteration, value, residual_f, residual_g."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "value", "residual_f", "residual_g"])
            for k, (v, (rf, rg)) in enumerate(zip(self.history, self.residual_history), start=1):
                w.writerow([k, repr(v), repr(rf), repr(rg)])


def dual_exponent(p: float) -> float:
    return p / (p - 1.0)


def dual_element(grid: QuadratureGrid, h, p: float) -> np.ndarray:
    """Unit-``L^p`` field maximising ``sum_i w_i f_i h_i``.

    The maximum equals ``lp_norm(grid, h, p')``.
    """
    if not p > 1:
        raise ExponentError("dual_element needs p > 1")
    h = np.asarray(h, dtype=float).ravel()
    m = np.abs(h).max(initial=0.0)
    if not m > 0:
        raise DegenerateInputError("cannot dualise the zero field")
    a = np.abs(h) / m
    f = np.sign(h) * a ** (1.0 / (p - 1.0))
    return f / lp_norm(grid, f, p)


def el_residual(K: KernelMatrix, grid: QuadratureGrid, f, g, N: float, p: float, t: float):
    """Relative residuals of ``I g = N f^(p-1)`` and ``I f = N g^(t-1)``.

    Each is measured in the dual norm of the field it pairs with.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    Ig = apply_ialpha(K, grid, g)
    If = apply_ialpha(K, grid, f)
    return _residual(grid, Ig, f, N, p), _residual(grid, If, g, N, t)


def _residual(grid, Ih, f, N, p) -> float:
    pd = dual_exponent(p)
    scale = lp_norm(grid, Ih, pd)
    if scale == 0:
        return 0.0
    return lp_norm(grid, Ih - N * np.abs(f) ** (p - 1.0), pd) / scale


def _initial_field(grid: QuadratureGrid, seed: Optional[int]) -> np.ndarray:
    if seed is None:
        return np.ones(grid.size)
    rng = np.random.default_rng(seed)
    return rng.uniform(0.05, 1.0, grid.size)


def alternating_maximize(K: KernelMatrix, grid: QuadratureGrid, config: SolverConfig,
                         g0=None) -> ExtremalResult:
    """Maximise ``B(f, g)`` over unit ``f`` in ``L^p`` and ``g`` in ``L^t``.

    Stops once the relative change of ``B`` is below ``config.tol`` on two
    consecutive sweeps and both Euler-Lagrange residuals are below
    ``10 * config.tol``.  The default start is ``g = 1``; with ``config.seed``
    set it is a seeded uniform random positive field.
    """
    p, t = config.p, config.t
    if g0 is None:
        g0 = _initial_field(grid, config.seed)
    g = np.asarray(g0, dtype=float).ravel()
    if g.size != grid.size:
        raise UsageError("initial field does not match the grid")
    if np.any(g < 0) or not np.any(g > 0):
        raise DegenerateInputError("initial field must be nonnegative and nonzero")
    g = g / lp_norm(grid, g, t)
    Ig = apply_ialpha(K, grid, g)

    history: List[float] = []
    half_steps: List[float] = []
    res_hist: List[Tuple[float, float]] = []
    monotone = True
    converged = False
    value = prev_half = -math.inf
    quiet = 0
    for it in range(1, config.max_iter + 1):
        f = dual_element(grid, Ig, p)
        v_half = float(np.dot(grid.weights * f, Ig))
        If = apply_ialpha(K, grid, f)
        g = dual_element(grid, If, t)
        v_full = float(np.dot(grid.weights * g, If))
        Ig = apply_ialpha(K, grid, g)

        for v in (v_half, v_full):
            if v < prev_half * (1 - MONOTONE_TOL):
                monotone = False
                logger.warning("functional decreased at iteration %d: %r -> %r", it, prev_half, v)
            prev_half = v
        half_steps.extend((v_half, v_full))

        rf = _residual(grid, Ig, f, v_full, p)
        rg = _residual(grid, If, g, v_full, t)
        res_hist.append((rf, rg))
        change = abs(v_full - value) / abs(v_full) if history else math.inf
        value = v_full
        history.append(value)
        quiet = quiet + 1 if change < config.tol else 0
        if quiet >= 2 and max(rf, rg) < 10 * config.tol:
            converged = True
            break

    if not converged:
        logger.warning("alternating maximisation stopped unconverged after %d sweeps", len(history))
    return ExtremalResult(
        value=value,
        f=DensityField(np.maximum(f, 0.0), p, grid),
        g=DensityField(np.maximum(g, 0.0), t, grid),
        iterations=len(history),
        history=history,
        residuals=res_hist[-1],
        converged=converged,
        monotone=monotone,
        half_steps=half_steps,
        residual_history=res_hist,
        grid=grid,
        kernel=K,
    )


def euclidean_baseline(n: int, alpha: float, p: float, radius: float = 1.0, resolution: int = 40,
                       config: Optional[SolverConfig] = None) -> ExtremalResult:
    """Flat-kernel extremal pair on the ball of the given radius.

    The ball problem's value is a proxy for the Euclidean sharp constant; on a
    fixed lattice it does not depend on ``radius`` (the discrete problem is
    exactly scale invariant).
    """
    if config is None:
        config = SolverConfig.from_exponents(n, alpha, p)
    spec = ManifoldSpec.ball(n, radius)
    grid = build_grid(spec, resolution)
    K = assemble_kernel(RieszKernel(alpha, spec), grid)
    return alternating_maximize(K, grid, config)


def rescale_grid(grid: QuadratureGrid, lam: float) -> QuadratureGrid:
    """Ball grid with nodes ``lam x_i`` and weights ``lam^n w_i``."""
    if not lam > 0:
        raise DomainError("scale must be positive")
    if not grid.spec.is_ball:
        raise UsageError("only ball grids can be rescaled")
    n = grid.spec.dim
    spec = ManifoldSpec.ball(n, grid.spec.radius * lam)
    return QuadratureGrid(spec, grid.nodes * lam, grid.weights * lam**n, h=grid.h * lam)


def scaling_family(field: DensityField, lam: float, p: Optional[float] = None,
                   container_radius: Optional[float] = None,
                   scaled_grid: Optional[QuadratureGrid] = None) -> DensityField:
    """Norm-preserving rescaling ``x -> lam^(-n/p) f(x / lam)`` of a field on a ball grid.

    The grid itself is rescaled (nodes ``lam x_i``, weights ``lam^n w_i``), so
    the ``L^p`` norm and the bilinear quotient are preserved exactly.  Raises
    :class:`DomainError` if part of the support would leave the ball of radius
    ``container_radius`` (default: the field's own ball).  Pass
    ``scaled_grid`` (from :func:`rescale_grid`) to put several fields on one
    rescaled grid.
    """
    if not lam > 0:
        raise DomainError("scale must be positive")
    grid = field.grid
    if grid is None or not grid.spec.is_ball:
        raise UsageError("scaling_family needs a field on a Euclidean ball grid")
    p = field.exponent if p is None else p
    n = grid.spec.dim
    limit = grid.spec.radius if container_radius is None else container_radius
    support = field.values > 0
    if np.any(support):
        reach = lam * np.linalg.norm(grid.nodes[support], axis=1).max()
        if reach > limit * (1 + 1e-12):
            raise DomainError(f"rescaled support reaches {reach:g}, beyond the ball radius {limit:g}")
    if lam == 1:
        return field
    if scaled_grid is None:
        scaled_grid = rescale_grid(grid, lam)
    elif scaled_grid.size != grid.size:
        raise UsageError("scaled grid does not match the field's grid")
    return DensityField(field.values * lam ** (-n / p), p, scaled_grid)


def quotient(K: KernelMatrix, grid: QuadratureGrid, f, g, p: float, t: float) -> float:
    """``B(f, g) / (||f||_p ||g||_t)``."""
    denom = lp_norm(grid, f, p) * lp_norm(grid, g, t)
    if denom == 0:
        raise DegenerateInputError("quotient of a zero field")
    return bilinear_form(K, grid, f, g) / denom
