"""Discretised Riesz potential, weighted Lebesgue norms and kernel splitting.

The operator is the Nystrom sum

    (I f)_i = sum_{j != i} K_ij w_j f_j + c_i w_i f_i,   K_ij = d(x_i, x_j)^(alpha - n),

where the self term ``c_i`` replaces the singular diagonal by the integral
of ``r^(alpha-n)`` over a geodesic disk with the cell's volume ``w_i``:
``c_i = (n / alpha) * h_i^(alpha - n)`` with ``h_i = (w_i / omega_n)^(1/n)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    ConfigurationError, DegenerateInputError, DomainError, ExponentError, UsageError)
from .geometry import ManifoldSpec, QuadratureGrid, pairwise_distance, unit_ball_volume

# Rows per block when forming the distance matrix.
_BLOCK = 1024


@dataclass(frozen=True)
class RieszKernel:
    """Kernel ``d^(alpha - n)`` on a catalog manifold."""

    alpha: float
    spec: ManifoldSpec

    def __post_init__(self):
        n = self.spec.dim
        if not (0 < self.alpha < n):
            raise ConfigurationError(f"alpha must lie in (0, n) = (0, {n}), got {self.alpha}")

    @property
    def n(self) -> int:
        return self.spec.dim

    @property
    def exponent(self) -> float:
        """``n - alpha``; the kernel is ``d^(-exponent)``."""
        return self.n - self.alpha


class DensityField:
    """Nonnegative nodal values with an associated Lebesgue exponent.

    ``grid`` is optional and only carried along where the field's location
    matters (scaled or transplanted fields).
    """

    __slots__ = ("values", "exponent", "grid")

    def __init__(self, values, exponent: float, grid: Optional[QuadratureGrid] = None):
        v = np.array(values, dtype=float).ravel()
        if np.any(v < 0):
            raise DomainError("density values must be nonnegative")
        if not exponent > 1:
            raise ExponentError("density exponent must exceed 1")
        if grid is not None and grid.size != v.size:
            raise UsageError("field length does not match the grid")
        v.setflags(write=False)
        self.values = v
        self.exponent = float(exponent)
        self.grid = grid

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self):
        return self.values.size

    def __repr__(self):
        return f"DensityField(n={self.values.size}, exponent={self.exponent})"

    def norm(self, grid: Optional[QuadratureGrid] = None) -> float:
        grid = grid or self.grid
        if grid is None:
            raise UsageError("no grid attached to the field")
        return lp_norm(grid, self.values, self.exponent)


def cell_radius(weights: np.ndarray, n: int) -> np.ndarray:
    """Radius of the n-ball whose volume equals each cell weight."""
    return (np.asarray(weights) / unit_ball_volume(n)) ** (1.0 / n)


def self_cell_integral(h, alpha: float, n: int, s: float = 1.0):
    """``int_{B_h} |y|^((alpha-n) s) dy`` for the flat n-ball of radius ``h``."""
    e = (alpha - n) * s + n
    if e <= 0:
        raise ExponentError("kernel power is not integrable: need (alpha - n) s + n > 0")
    return n * unit_ball_volume(n) * np.asarray(h, dtype=float) ** e / e


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Dense Riesz kernel on a grid.

    ``offdiag`` holds ``d_ij^(alpha-n)`` with zeros on the diagonal; ``diag``
    holds the self-cell values ``c_i``.  When ``split_radius`` is set, ``near``
    marks entries with ``d_ij <= split_radius`` (the diagonal is near).
    """

    offdiag: np.ndarray
    diag: np.ndarray
    alpha: float
    n: int
    split_radius: Optional[float] = None
    near: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return self.diag.shape[0]

    @classmethod
    def from_dense(cls, matrix, alpha: float = 1.0, n: int = 2) -> "KernelMatrix":
        """Wrap an arbitrary symmetric nonnegative matrix (diagonal goes into ``diag``).

        Used for toy problems; with unit weights the bilinear form is ``f @ matrix @ g``.
        """
        m = np.array(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise UsageError("kernel matrix must be square")
        if not np.array_equal(m, m.T):
            raise UsageError("kernel matrix must be symmetric")
        diag = np.diag(m).copy()
        off = m.copy()
        np.fill_diagonal(off, 0.0)
        return cls(off, diag, float(alpha), int(n))

    def distance_threshold(self, rho: float) -> float:
        """Kernel value at distance ``rho``; ``d <= rho`` iff ``K >= this``."""
        return rho ** (self.alpha - self.n)

    def split(self, rho: float) -> "KernelMatrix":
        """Same kernel with near/far masks at radius ``rho``."""
        if not rho > 0:
            raise UsageError("split radius must be positive")
        near = self.offdiag >= self.distance_threshold(rho)
        np.fill_diagonal(near, True)
        return KernelMatrix(self.offdiag, self.diag, self.alpha, self.n, float(rho), near)

    def part(self, which: str) -> np.ndarray:
        """Off-diagonal entries restricted to ``'full'``, ``'far'`` or ``'near'``."""
        if which == "full":
            return self.offdiag
        if self.near is None:
            raise UsageError("kernel has no split; call split(rho) first")
        if which == "far":
            return np.where(self.near, 0.0, self.offdiag)
        if which == "near":
            return np.where(self.near, self.offdiag, 0.0)
        raise UsageError(f"unknown kernel part {which!r}")

    def to_csv(self, path) -> None:
        """Debug export: one ``row,col,value`` line per entry (diagonal = self-cell value)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "col", "value"])
            for i in range(self.size):
                for j in range(self.size):
                    v = self.diag[i] if i == j else self.offdiag[i, j]
                    w.writerow([i, j, repr(float(v))])


def assemble_kernel(kernel: RieszKernel, grid: QuadratureGrid,
                    split_radius: Optional[float] = None) -> KernelMatrix:
    """Assemble ``d(x_i, x_j)^(alpha-n)`` and the self-cell correction on ``grid``."""
    if grid.spec.dim != kernel.n:
        raise UsageError("grid and kernel live on manifolds of different dimension")
    if split_radius is not None and not (0 < split_radius < grid.spec.diameter):
        raise UsageError(f"split radius must lie in (0, {grid.spec.diameter})")
    N = grid.size
    power = kernel.alpha - kernel.n
    off = np.empty((N, N))
    for start in range(0, N, _BLOCK):
        stop = min(N, start + _BLOCK)
        d = pairwise_distance(grid.spec, grid.nodes[start:stop], grid.nodes)
        idx = np.arange(start, stop)
        d[idx - start, idx] = 1.0
        if np.any(d <= 0):
            raise UsageError("grid contains coincident nodes")
        np.power(d, power, out=d)
        d[idx - start, idx] = 0.0
        off[start:stop] = d
    h = cell_radius(grid.weights, kernel.n)
    diag = (kernel.n / kernel.alpha) * h**power
    K = KernelMatrix(off, diag, float(kernel.alpha), kernel.n)
    return K.split(split_radius) if split_radius is not None else K


def _values(f) -> np.ndarray:
    return np.asarray(f, dtype=float).ravel()


def apply_ialpha(K: KernelMatrix, grid: QuadratureGrid, f, part: str = "full") -> np.ndarray:
    """``I_alpha f`` at the nodes (``part`` selects the full, far or near kernel)."""
    v = _values(f)
    if v.size != K.size or grid.size != K.size:
        raise UsageError(f"dimension mismatch: field {v.size}, kernel {K.size}, grid {grid.size}")
    wf = grid.weights * v
    out = K.part(part) @ wf
    if part != "far":
        out = out + K.diag * wf
    return out


def bilinear_form(K: KernelMatrix, grid: QuadratureGrid, f, g) -> float:
    """``sum_ij w_i f_i K_ij w_j g_j`` including the self-cell term."""
    return float(np.dot(grid.weights * _values(f), apply_ialpha(K, grid, g)))


def lp_norm(grid: QuadratureGrid, f, p: float) -> float:
    """Weighted Lebesgue norm ``(sum_i w_i |f_i|^p)^(1/p)``."""
    if p < 1:
        raise ExponentError("lp_norm needs p >= 1")
    v = _values(f)
    if v.size != grid.size:
        raise UsageError(f"dimension mismatch: field {v.size}, grid {grid.size}")
    a = np.abs(v)
    m = a.max(initial=0.0)
    if m == 0:
        return 0.0
    # Scale by the max so large exponents do not overflow.
    return float(m * np.dot(grid.weights, (a / m) ** p) ** (1.0 / p))


def critical_exponent(n: int, alpha: float, p: float):
    """Return ``(q, t)`` with ``1/q = 1/p - alpha/n`` and ``t = q / (q - 1)``."""
    if not (0 < alpha < n):
        raise ExponentError(f"alpha must lie in (0, n) = (0, {n})")
    if not (1 < p < n / alpha):
        raise ExponentError(f"p must satisfy 1 < p < n/alpha = {n / alpha:g}; got p = {p:g}")
    q = 1.0 / (1.0 / p - alpha / n)
    t = q / (q - 1.0)
    return q, t


def tail_norm(K: KernelMatrix, grid: QuadratureGrid, rho: float, s: float) -> float:
    """``max_i (sum_{d_ij <= rho} w_j K_ij^s)^(1/s)`` for the near part of the kernel.

    The self cell contributes the flat integral of ``r^((alpha-n) s)`` over a
    ball of radius ``min(h_i, rho)``.
    """
    n, alpha = K.n, K.alpha
    if not (1 <= s < n / (n - alpha)):
        raise ExponentError(f"s must satisfy 1 <= s < n/(n-alpha) = {n / (n - alpha):g}")
    if not rho > 0:
        raise UsageError("rho must be positive")
    h = cell_radius(grid.weights, n)
    self_part = self_cell_integral(np.minimum(h, rho), alpha, n, s)
    near = K.offdiag >= K.distance_threshold(rho)
    rows = np.where(near, K.offdiag, 0.0) ** s @ grid.weights
    return float(np.max(rows + self_part) ** (1.0 / s))


def kernel_row_norm(K: KernelMatrix, grid: QuadratureGrid, s: float) -> float:
    """``L^s`` norm of the kernel profile ``y -> d(x, y)^(alpha-n)``, maximised over nodes ``x``."""
    return tail_norm(K, grid, math.inf, s)


def young_check(grid: QuadratureGrid, K: KernelMatrix, g, p: float, q: float, r: float) -> float:
    """Ratio ``||g * h||_r / (||g||_q ||h||_p)`` with ``h`` the kernel profile.

    Exponents must satisfy ``1 + 1/r = 1/q + 1/p``.
    """
    for name, e in (("p", p), ("q", q), ("r", r)):
        if not (1 < e < math.inf):
            raise UsageError(f"{name} must lie in (1, inf)")
    if not math.isclose(1 + 1 / r, 1 / q + 1 / p, rel_tol=1e-12, abs_tol=1e-12):
        raise UsageError("exponents must satisfy 1 + 1/r = 1/q + 1/p")
    gn = lp_norm(grid, g, q)
    if gn == 0:
        return 0.0
    conv = apply_ialpha(K, grid, g)
    return lp_norm(grid, conv, r) / (gn * kernel_row_norm(K, grid, p))


def relative_spread(grid: QuadratureGrid, values) -> float:
    """Weighted RMS deviation from the weighted mean, relative to the mean."""
    v = _values(values)
    w = grid.weights / grid.weights.sum()
    mean = float(np.dot(w, v))
    if mean == 0:
        raise DegenerateInputError("mean is zero")
    return float(np.sqrt(np.dot(w, (v - mean) ** 2)) / abs(mean))
