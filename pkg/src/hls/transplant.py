"""Lower bound for the manifold constant by transplanting Euclidean extremals.

A scaled Euclidean extremal pair is truncated to ``B_delta``, pushed onto the
manifold through a normal chart, and its manifold quotient is compared with
the certificate

    (1-eps)^n / (1+eps)^(n/2 (1/p + 1/t) + n - alpha) * (N - I - II)

where ``I`` and ``II`` are the tail masses cut off by the truncation.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import UsageError
from .extremal import (
    ExtremalResult,
    SolverConfig,
    alternating_maximize,
    euclidean_baseline,
    quotient,
    rescale_grid,
    scaling_family,
)
from .geometry import (
    ManifoldSpec,
    NormalChart,
    QuadratureGrid,
    build_grid,
    distance_to,
    exp_map,
    normal_chart,
    volume_factor,
)
from .riesz import DensityField, KernelMatrix, RieszKernel, assemble_kernel, critical_exponent

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TransplantReport:
    lam: float
    delta: float
    epsilon: float
    quotient: float
    n_proxy: float
    term_I: float
    term_II: float
    term_III: float
    certificate: float
    euclidean_quotient: float = math.nan
    manifold_sup: float = math.nan
    converged: bool = True

    CSV_FIELDS = ("lambda", "delta", "epsilon", "I", "II", "III", "certificate", "quotient",
                  "euclidean_quotient", "manifold_sup")

    def row(self):
        return (self.lam, self.delta, self.epsilon, self.term_I, self.term_II, self.term_III,
                self.certificate, self.quotient, self.euclidean_quotient, self.manifold_sup)


@dataclass(frozen=True, eq=False)
class Transplanted:
    """Transplanted pair on a composite manifold grid.

    ``chart_nodes`` flags the nodes that came from the chart; all other nodes
    belong to the background grid and carry zero values.
    """

    grid: QuadratureGrid
    u: DensityField
    v: DensityField
    chart_nodes: np.ndarray


def distortion_prefactor(eps: float, n: int, alpha: float, p: float, t: float) -> float:
    """``(1-eps)^n / (1+eps)^(n/2 (1/p + 1/t) + n - alpha)``."""
    return (1 - eps) ** n / (1 + eps) ** (0.5 * n * (1 / p + 1 / t) + n - alpha)


def truncate(field: DensityField, delta: float) -> DensityField:
    """Zero a ball-grid field outside ``B_delta(0)``."""
    grid = field.grid
    if grid is None or not grid.spec.is_ball:
        raise UsageError("truncate needs a field on a Euclidean ball grid")
    r = np.linalg.norm(grid.nodes, axis=1)
    return DensityField(np.where(r <= delta, field.values, 0.0), field.exponent, grid)


def correction_terms(f: DensityField, g: DensityField, delta: float, n_proxy: float,
                     kernel: Optional[KernelMatrix] = None, alpha: Optional[float] = None):
    """Tail terms ``(I, II, III)`` of a pair on a ball grid.

    ``I = N * mass of f^p outside B_delta``, ``II`` likewise for ``g^t``, and
    ``III`` is the bilinear form with both arguments restricted to the
    outside.  ``kernel`` (or ``alpha`` to assemble one) is needed for ``III``.
    """
    grid = f.grid
    if grid is None or g.grid is not grid:
        raise UsageError("f and g must share one ball grid")
    outside = np.linalg.norm(grid.nodes, axis=1) > delta
    w = grid.weights
    term1 = n_proxy * float(np.dot(w[outside], f.values[outside] ** f.exponent))
    term2 = n_proxy * float(np.dot(w[outside], g.values[outside] ** g.exponent))
    if not np.any(outside):
        return term1, term2, 0.0
    if kernel is None:
        if alpha is None:
            raise UsageError("pass a kernel or alpha to evaluate term III")
        kernel = assemble_kernel(RieszKernel(alpha, grid.spec), grid)
    fo = np.where(outside, f.values, 0.0) * w
    go = np.where(outside, g.values, 0.0) * w
    term3 = float(fo @ kernel.offdiag @ go + np.sum(kernel.diag * fo * go))
    return term1, term2, term3


def _chart_patch(chart: NormalChart, f: DensityField, g: DensityField):
    grid = f.grid
    if grid is None or g.grid is not grid or not grid.spec.is_ball:
        raise UsageError("transplanted fields must share one Euclidean ball grid")
    if grid.spec.dim != chart.dim:
        raise UsageError("chart and field dimensions differ")
    r = np.linalg.norm(grid.nodes, axis=1)
    inside = r <= chart.delta
    if np.any(f.values[~inside] > 0) or np.any(g.values[~inside] > 0):
        raise UsageError("fields are not truncated to the chart radius")
    u = grid.nodes[inside]
    points = exp_map(chart, u)
    weights = grid.weights[inside] * volume_factor(chart, u)
    cover = min(chart.delta, grid.spec.radius)
    return points, weights, f.values[inside], g.values[inside], cover


def scaled_pair(baseline: ExtremalResult, lam: float):
    """``(f_lam, g_lam)`` on one rescaled copy of the baseline's ball grid."""
    grid_lam = rescale_grid(baseline.f.grid, lam) if lam != 1 else baseline.f.grid
    return (scaling_family(baseline.f, lam, scaled_grid=grid_lam),
            scaling_family(baseline.g, lam, scaled_grid=grid_lam))


def bubble_patch(chart: NormalChart, baseline: ExtremalResult, lam: float, coefficient: float = 1.0):
    """Scaled, truncated baseline pair ready for :func:`transplant_many`."""
    f_lam, g_lam = scaled_pair(baseline, lam)
    return chart, truncate(f_lam, chart.delta), truncate(g_lam, chart.delta), coefficient


def transplant_many(patches: Sequence[Tuple[NormalChart, DensityField, DensityField, float]],
                    base_grid: QuadratureGrid) -> Transplanted:
    """Superpose several transplanted pairs ``(chart, f, g, coefficient)``.

    Background nodes within the chart region, plus a margin of half the
    background mesh size, are replaced by the chart's nodes.  Without the
    margin a coarse background cell can sit right next to fine chart cells,
    where the point-evaluated kernel overstates the cell interaction.
    """
    spec = base_grid.spec
    keep = np.ones(base_grid.size, dtype=bool)
    pts, wts, us, vs = [], [], [], []
    p = t = None
    for chart, f, g, coef in patches:
        if chart.spec != spec:
            raise UsageError("chart and background grid live on different manifolds")
        points, weights, fu, gv, cover = _chart_patch(chart, f, g)
        keep &= distance_to(spec, base_grid.nodes, chart.center) > cover + 0.5 * base_grid.h
        pts.append(points)
        wts.append(weights)
        us.append(coef * fu)
        vs.append(coef * gv)
        p, t = f.exponent, g.exponent
    if p is None:
        raise UsageError("no patches given")
    nb = int(keep.sum())
    nodes = np.vstack([base_grid.nodes[keep]] + pts)
    weights = np.concatenate([base_grid.weights[keep]] + wts)
    u = np.concatenate([np.zeros(nb)] + us)
    v = np.concatenate([np.zeros(nb)] + vs)
    flags = np.concatenate([np.zeros(nb, dtype=bool), np.ones(nodes.shape[0] - nb, dtype=bool)])
    grid = QuadratureGrid(spec, nodes, weights)
    return Transplanted(grid, DensityField(u, p, grid), DensityField(v, t, grid), flags)


def transplant(chart: NormalChart, f: DensityField, g: DensityField,
               base_grid: QuadratureGrid) -> Transplanted:
    """Push a truncated Euclidean pair through ``chart`` onto ``base_grid``'s manifold."""
    return transplant_many([(chart, f, g, 1.0)], base_grid)


def lower_bound_sweep(spec: ManifoldSpec, center, alpha: float, p: float,
                      lambdas: Sequence[float], delta: Optional[float] = None,
                      resolution: int = 1000, ball_resolution: int = 40,
                      baseline: Optional[ExtremalResult] = None,
                      solve: bool = True, config: Optional[SolverConfig] = None) -> List[TransplantReport]:
    """Certificates ``N_M >= prefactor * (N - I - II)`` along a decreasing scale sweep.

    ``delta`` defaults to half the injectivity radius.  With ``solve`` set the
    manifold problem is also solved on each composite grid, starting from the
    transplanted ``v``, which gives the directly computed supremum.
    """
    lambdas = [float(x) for x in lambdas]
    if any(b >= a for a, b in zip(lambdas, lambdas[1:])):
        raise UsageError("lambda values must be strictly decreasing")
    n = spec.dim
    q, t = critical_exponent(n, alpha, p)
    if delta is None:
        delta = 0.5 * spec.injectivity_radius
    chart = normal_chart(spec, center, delta)
    if baseline is None:
        baseline = euclidean_baseline(n, alpha, p, 1.0, ball_resolution, config)
    if config is None:
        config = SolverConfig(p=p, t=t)
    N = baseline.value
    base_grid = build_grid(spec, resolution)
    factor = distortion_prefactor(chart.epsilon, n, alpha, p, t)

    reports = []
    for lam in lambdas:
        f_lam, g_lam = scaled_pair(baseline, lam)
        K_e = assemble_kernel(RieszKernel(alpha, f_lam.grid.spec), f_lam.grid)
        t1, t2, t3 = correction_terms(f_lam, g_lam, delta, N, kernel=K_e)
        f_tr, g_tr = truncate(f_lam, delta), truncate(g_lam, delta)
        eq = quotient(K_e, f_lam.grid, f_tr, g_tr, p, t)
        del K_e
        tr = transplant(chart, f_tr, g_tr, base_grid)
        K_m = assemble_kernel(RieszKernel(alpha, spec), tr.grid)
        qm = quotient(K_m, tr.grid, tr.u, tr.v, p, t)
        sup = math.nan
        ok = True
        if solve:
            res = alternating_maximize(K_m, tr.grid, config, g0=tr.v.values)
            sup, ok = res.value, res.converged
        del K_m
        reports.append(TransplantReport(
            lam=lam, delta=delta, epsilon=chart.epsilon, quotient=qm, n_proxy=N,
            term_I=t1, term_II=t2, term_III=t3, certificate=factor * (N - t1 - t2),
            euclidean_quotient=eq, manifold_sup=sup, converged=ok,
        ))
        logger.info("lambda=%g certificate=%.6g quotient=%.6g sup=%.6g", lam,
                    reports[-1].certificate, qm, sup)
    return reports


def sweep_to_csv(reports: Sequence[TransplantReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TransplantReport.CSV_FIELDS)
        for rep in reports:
            w.writerow([repr(float(x)) for x in rep.row()])
