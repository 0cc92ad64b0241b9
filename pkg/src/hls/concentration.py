"""Concentration-compactness diagnostics for sequences of discrete fields.

Weak limits have no meaning on a single finite grid, so every routine here
works on explicitly constructed families (concentrating bubbles, spreading
or oscillating fields) whose limit is known by construction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import ExponentError, UsageError
from .geometry import ManifoldSpec, QuadratureGrid, distance_to, pairwise_distance
from .riesz import KernelMatrix, apply_ialpha, lp_norm, tail_norm


@dataclass(frozen=True, eq=False)
class MeasurePair:
    """Nodal masses ``mu_i = w_i |f_i|^p`` and ``nu_i = w_i |(I f)_i|^q``."""

    grid: QuadratureGrid
    mu: np.ndarray
    nu: np.ndarray
    p: float
    q: float

    @property
    def mu_total(self) -> float:
        return float(self.mu.sum())

    @property
    def nu_total(self) -> float:
        return float(self.nu.sum())

    def local(self, P, r: float):
        """``(mu, nu)`` mass of the closed geodesic ball ``B_r(P)``."""
        inside = distance_to(self.grid.spec, self.grid.nodes, P) <= r
        return float(self.mu[inside].sum()), float(self.nu[inside].sum())


@dataclass(frozen=True)
class AtomReport:
    node: int
    point: tuple
    mu: float
    nu: float
    p: float
    q: float
    radius: float
    mu_history: tuple = ()

    def slack(self, n_proxy: float) -> float:
        return check_atom_inequality(self, n_proxy)

    def summary(self, n_proxy: Optional[float] = None) -> str:
        pt = ", ".join(f"{x:.6g}" for x in self.point)
        line = f"atom at node {self.node} ({pt}): mu={self.mu:.6g} nu={self.nu:.6g} r={self.radius:g}"
        if n_proxy is not None:
            line += f" slack={self.slack(n_proxy):.6g}"
        return line


@dataclass(frozen=True)
class CutoffFamily:
    """Bump ``(1 - (d/scale)^2)^2`` centred at ``center``; zero beyond ``scale``."""

    spec: ManifoldSpec
    center: tuple
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise UsageError("cutoff scale must be positive")

    def values(self, grid: QuadratureGrid) -> np.ndarray:
        d = distance_to(self.spec, grid.nodes, np.asarray(self.center, dtype=float))
        x = np.clip(1.0 - (d / self.scale) ** 2, 0.0, 1.0)
        return x * x


def build_measures(grid: QuadratureGrid, K: KernelMatrix, f, p: float, q: float) -> MeasurePair:
    """Discrete ``|f|^p dV`` and ``|I f|^q dV``."""
    if not (p >= 1 and q >= 1):
        raise ExponentError("measure exponents must be at least 1")
    v = np.asarray(f, dtype=float).ravel()
    mu = grid.weights * np.abs(v) ** p
    nu = grid.weights * np.abs(apply_ialpha(K, grid, v)) ** q
    return MeasurePair(grid, mu, nu, float(p), float(q))


def local_mass(grid: QuadratureGrid, masses, P, r: float) -> float:
    """Sum of nodal masses within geodesic distance ``r`` of ``P``."""
    if not r > 0:
        raise UsageError("radius must be positive")
    inside = distance_to(grid.spec, grid.nodes, P) <= r
    return float(np.asarray(masses)[inside].sum())


def _ball_masses(grid: QuadratureGrid, masses: np.ndarray, r: float, block: int = 1024) -> np.ndarray:
    out = np.empty(grid.size)
    for s in range(0, grid.size, block):
        d = pairwise_distance(grid.spec, grid.nodes[s:s + block], grid.nodes)
        out[s:s + block] = (d <= r) @ masses
    return out


def detect_atoms(measures: Sequence[MeasurePair], radii: Sequence[float],
                 threshold: float = 0.1) -> List[AtomReport]:
    """Nodes carrying at least ``threshold`` of the total mu mass at the smallest radius.

    The last measure of the sequence stands in for the limit.  Atoms are
    picked greedily by decreasing local mass; nodes within twice the radius
    of an accepted atom are excluded afterwards.
    """
    if not measures:
        raise UsageError("empty measure sequence")
    if not (0 < threshold < 1):
        raise UsageError("threshold must lie in (0, 1)")
    spec = measures[0].grid.spec
    if any(m.grid.spec != spec for m in measures):
        raise UsageError("measures come from grids on different manifolds")
    r = float(min(radii))
    last = measures[-1]
    total = last.mu_total
    if total == 0:
        return []
    local = _ball_masses(last.grid, last.mu, r)
    available = np.ones(last.grid.size, dtype=bool)
    atoms = []
    while True:
        cand = np.where(available, local, -np.inf)
        i = int(np.argmax(cand))
        if not cand[i] >= threshold * total:
            break
        P = last.grid.nodes[i]
        mu_loc, nu_loc = last.local(P, r)
        history = tuple(m.local(P, r)[0] for m in measures)
        atoms.append(AtomReport(i, tuple(float(x) for x in P), mu_loc, nu_loc,
                                last.p, last.q, r, history))
        available &= distance_to(spec, last.grid.nodes, P) > 2 * r
    return atoms


def check_atom_inequality(report: AtomReport, n_proxy: float, relative: bool = False) -> float:
    """Slack ``N mu^(1/p) - nu^(1/q)``; nonnegative when the atom inequality holds."""
    if not n_proxy > 0:
        raise UsageError("the Euclidean constant must be positive")
    bound = n_proxy * report.mu ** (1.0 / report.p)
    slack = bound - report.nu ** (1.0 / report.q)
    if relative:
        return slack / bound if bound > 0 else 0.0
    return slack


def brezis_lieb_defect(K: KernelMatrix, grid: QuadratureGrid, f_m, f, q: float) -> float:
    """``int |I f_m|^q - |I (f_m - f)|^q - |I f|^q``."""
    fm = np.asarray(f_m, dtype=float).ravel()
    f0 = np.asarray(f, dtype=float).ravel()
    a = np.abs(apply_ialpha(K, grid, fm)) ** q
    b = np.abs(apply_ialpha(K, grid, fm - f0)) ** q
    c = np.abs(apply_ialpha(K, grid, f0)) ** q
    return float(np.dot(grid.weights, a - b - c))


def commutator_norm(K: KernelMatrix, grid: QuadratureGrid, phi, f, q: float) -> float:
    """``|| phi I f - I(phi f) ||_q``; ``phi`` is a :class:`CutoffFamily` or nodal values.

    The self-cell terms cancel, so only the off-diagonal kernel contributes.
    """
    ph = phi.values(grid) if isinstance(phi, CutoffFamily) else np.asarray(phi, dtype=float).ravel()
    wf = grid.weights * np.asarray(f, dtype=float).ravel()
    comm = ph * (K.offdiag @ wf) - K.offdiag @ (ph * wf)
    return lp_norm(grid, comm, q)


def split_exponent(p: float, r: float) -> float:
    """``s`` with ``1/r + 1 = 1/p + 1/s``."""
    inv = 1.0 / r + 1.0 - 1.0 / p
    if not inv > 0:
        raise ExponentError("no admissible s for these p and r")
    return 1.0 / inv


@dataclass
class SplitTable:
    """Rows of the far/near decomposition plus the near-part slope fit."""

    s: float
    expected_slope: float
    rows: List[dict] = field(default_factory=list)
    slope: float = math.nan

    FIELDS = ("rho", "m", "far_diff", "near_diff", "near_bound", "tail")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.FIELDS)
            for row in self.rows:
                w.writerow([repr(row[k]) if isinstance(row[k], float) else row[k] for k in self.FIELDS])

    def far(self, rho: float) -> List[float]:
        return [row["far_diff"] for row in self.rows if row["rho"] == rho]


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def compactness_split_check(K: KernelMatrix, grid: QuadratureGrid, f_seq, f, rhos: Sequence[float],
                            r: float, p: float) -> SplitTable:
    """Far/near split of ``I(f_m - f)`` in ``L^r`` over a radius schedule.

    For each radius the far part ``||K^rho * (f_m - f)||_r`` is tabulated along
    the sequence, next to the near part and its Young bound
    ``tail_norm(rho, s) * ||f_m - f||_p``.  The fitted log-log slope of the
    tail norm should be ``(alpha - n) + n/s``.
    """
    n, alpha = K.n, K.alpha
    q = 1.0 / (1.0 / p - alpha / n)
    if not (1 <= r < q):
        raise ExponentError(f"r must satisfy 1 <= r < q = {q:g}")
    s = split_exponent(p, r)
    if not (1 <= s < n / (n - alpha)):
        raise ExponentError(f"derived s = {s:g} is outside [1, n/(n-alpha))")
    f0 = np.asarray(f, dtype=float).ravel()
    table = SplitTable(s=s, expected_slope=(alpha - n) + n / s)
    tails = []
    for rho in rhos:
        Ks = K.split(rho)
        far = Ks.part("far")
        near = Ks.part("near")
        tail = tail_norm(K, grid, rho, s)
        tails.append(tail)
        for m, fm in enumerate(f_seq):
            diff = np.asarray(fm, dtype=float).ravel() - f0
            wd = grid.weights * diff
            table.rows.append({
                "rho": float(rho),
                "m": m,
                "far_diff": lp_norm(grid, far @ wd, r),
                "near_diff": lp_norm(grid, near @ wd + K.diag * wd, r),
                "near_bound": tail * lp_norm(grid, diff, p),
                "tail": tail,
            })
        del far, near
    if len(rhos) >= 2:
        table.slope = loglog_slope(rhos, tails)
    return table


def contradiction_chain(n_manifold: float, n_proxy: float, f_mass: float, atom_masses,
                        p: float, q: float):
    """Value of ``N_M^q (int |f|^p)^(q/p) + sum_j N^q mu_j^(q/p)`` and the bound ``N_M^q``.

    With ``f_mass + sum mu_j = 1``, some ``mu_j > 0`` and ``N < N_M`` the
    chain value is strictly below the bound, since ``q / p > 1``.
    """
    mu = np.asarray(atom_masses, dtype=float)
    e = q / p
    chain = n_manifold**q * f_mass**e + float(np.sum(n_proxy**q * mu**e))
    return chain, n_manifold**q
