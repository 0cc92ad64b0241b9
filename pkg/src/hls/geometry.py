"""Manifold catalog, geodesic distances, quadrature grids and normal charts.

Canonical coordinates per catalog entry:

* ``circle``   -- angle in ``[0, 2*pi)``, shape ``(N, 1)``
* ``sphere2``  -- Cartesian points of norm ``radius``, shape ``(N, 3)``
* ``torusD``   -- points in ``[0, L_1) x ... x [0, L_D)``, shape ``(N, D)``
* ``ballD``    -- Euclidean points with norm at most ``radius``, shape ``(N, D)``
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import gamma

from .errors import ConfigurationError, DomainError

KINDS = ("circle", "sphere2", "torus1", "torus2", "ball1", "ball2", "ball3")

_ALIASES = {
    "s1": "circle",
    "sphere": "sphere2",
    "s2": "sphere2",
    "torus-1": "torus1",
    "torus-2": "torus2",
    "ball-1": "ball1",
    "ball-2": "ball2",
    "ball-3": "ball3",
    "euclidean-ball-1": "ball1",
    "euclidean-ball-2": "ball2",
    "euclidean-ball-3": "ball3",
}

_DIM = {"circle": 1, "sphere2": 2, "torus1": 1, "torus2": 2, "ball1": 1, "ball2": 2, "ball3": 3}

# Tolerance for the on-manifold check of sphere points, relative to the radius.
_SPHERE_TOL = 1e-9


def unit_ball_volume(n: int) -> float:
    """Volume of the unit ball in R^n."""
    return math.pi ** (n / 2) / gamma(n / 2 + 1)


def canonical_kind(kind: str) -> str:
    k = kind.strip().lower()
    k = _ALIASES.get(k, k)
    if k not in KINDS:
        raise ConfigurationError(f"unknown manifold kind {kind!r}; expected one of {', '.join(KINDS)}")
    return k


@dataclass(frozen=True)
class ManifoldSpec:
    """A catalog manifold with its scale parameters.

    ``radius`` is used by circles, spheres and balls; ``periods`` by tori.
    """

    kind: str
    radius: float = 1.0
    periods: Optional[tuple] = None

    def __post_init__(self):
        kind = canonical_kind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind.startswith("torus"):
            d = _DIM[kind]
            periods = (1.0,) * d if self.periods is None else tuple(float(x) for x in self.periods)
            if len(periods) == 1 and d > 1:
                periods = periods * d
            if len(periods) != d:
                raise ConfigurationError(f"{kind} needs {d} periods, got {len(periods)}")
            if any(not (L > 0) for L in periods):
                raise ConfigurationError("torus periods must be strictly positive")
            object.__setattr__(self, "periods", periods)
        else:
            if self.periods is not None:
                raise ConfigurationError(f"{kind} takes a radius, not periods")
            if not (self.radius > 0):
                raise ConfigurationError("radius must be strictly positive")
            object.__setattr__(self, "radius", float(self.radius))

    # convenience constructors
    @classmethod
    def circle(cls, radius=1.0):
        return cls("circle", radius=radius)

    @classmethod
    def sphere(cls, radius=1.0):
        return cls("sphere2", radius=radius)

    @classmethod
    def torus(cls, periods=(1.0,)):
        periods = tuple(periods)
        return cls(f"torus{len(periods)}", periods=periods)

    @classmethod
    def ball(cls, n, radius=1.0):
        return cls(f"ball{n}", radius=radius)

    @property
    def dim(self) -> int:
        return _DIM[self.kind]

    @property
    def ambient_dim(self) -> int:
        """Number of canonical coordinates per point."""
        return 3 if self.kind == "sphere2" else self.dim

    @property
    def is_flat(self) -> bool:
        return self.kind != "sphere2"

    @property
    def is_ball(self) -> bool:
        return self.kind.startswith("ball")

    @property
    def volume(self) -> float:
        if self.kind == "circle":
            return 2 * math.pi * self.radius
        if self.kind == "sphere2":
            return 4 * math.pi * self.radius**2
        if self.kind.startswith("torus"):
            return float(np.prod(self.periods))
        return unit_ball_volume(self.dim) * self.radius**self.dim

    @property
    def diameter(self) -> float:
        if self.kind in ("circle", "sphere2"):
            return math.pi * self.radius
        if self.kind.startswith("torus"):
            return 0.5 * math.sqrt(sum(L * L for L in self.periods))
        return 2 * self.radius

    @property
    def injectivity_radius(self) -> float:
        if self.kind in ("circle", "sphere2"):
            return math.pi * self.radius
        if self.kind.startswith("torus"):
            return 0.5 * min(self.periods)
        # Charts on a ball must stay inside it.
        return self.radius


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    """Nodes and positive weights approximating the volume measure of ``spec``."""

    spec: ManifoldSpec
    nodes: np.ndarray
    weights: np.ndarray
    h: float = field(default=float("nan"))

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        weights = np.asarray(self.weights, dtype=float).ravel()
        if nodes.shape[0] != weights.shape[0]:
            raise ConfigurationError("nodes and weights differ in length")
        if nodes.shape[1] != self.spec.ambient_dim:
            raise ConfigurationError(
                f"{self.spec.kind} nodes need {self.spec.ambient_dim} coordinates, got {nodes.shape[1]}"
            )
        if np.any(weights <= 0):
            raise ConfigurationError("quadrature weights must be positive")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)
        if math.isnan(self.h):
            object.__setattr__(self, "h", mesh_size(self.spec, nodes))

    def __len__(self):
        return self.weights.shape[0]

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def to_csv(self, path) -> None:
        """One row per node: coordinates then weight."""
        d = self.nodes.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{k}" for k in range(d)] + ["weight"])
            for x, wt in zip(self.nodes, self.weights):
                w.writerow([repr(float(v)) for v in x] + [repr(float(wt))])


def _as_points(spec: ManifoldSpec, x) -> np.ndarray:
    pts = np.asarray(x, dtype=float)
    if pts.ndim == 0:
        pts = pts.reshape(1, 1)
    elif pts.ndim == 1:
        pts = pts.reshape(1, -1) if spec.ambient_dim > 1 or pts.size == 1 else pts[:, None]
    if pts.shape[1] != spec.ambient_dim:
        raise DomainError(f"{spec.kind} points need {spec.ambient_dim} coordinates")
    return pts


def check_on_manifold(spec: ManifoldSpec, pts: np.ndarray) -> None:
    if spec.kind == "sphere2":
        r = np.linalg.norm(pts, axis=1)
        if np.any(np.abs(r - spec.radius) > _SPHERE_TOL * spec.radius):
            raise DomainError("point is not on the sphere (norm differs from the radius)")
    elif spec.is_ball:
        r = np.linalg.norm(pts, axis=1)
        if np.any(r > spec.radius * (1 + 1e-12)):
            raise DomainError("point lies outside the ball")


def pairwise_distance(spec: ManifoldSpec, X, Y=None) -> np.ndarray:
    """Geodesic distance matrix between point sets ``X`` (M) and ``Y`` (N).

    Differences are formed coordinate by coordinate so the result for
    ``pairwise_distance(spec, X, X)`` is symmetric to the bit.
    """
    X = _as_points(spec, X)
    Y = X if Y is None else _as_points(spec, Y)
    if spec.kind == "circle":
        d = np.abs(X[:, 0, None] - Y[None, :, 0]) % (2 * math.pi)
        return spec.radius * np.minimum(d, 2 * math.pi - d)
    if spec.kind.startswith("torus"):
        acc = np.zeros((X.shape[0], Y.shape[0]))
        for k, L in enumerate(spec.periods):
            d = np.abs(X[:, k, None] - Y[None, :, k]) % L
            d = np.minimum(d, L - d)
            acc += d * d
        return np.sqrt(acc)
    acc = np.zeros((X.shape[0], Y.shape[0]))
    for k in range(X.shape[1]):
        d = X[:, k, None] - Y[None, :, k]
        acc += d * d
    chord = np.sqrt(acc)
    if spec.kind == "sphere2":
        R = spec.radius
        return 2 * R * np.arcsin(np.minimum(chord / (2 * R), 1.0))
    return chord


def geodesic_distance(spec: ManifoldSpec, x, y) -> float:
    """Geodesic distance between two points in canonical coordinates."""
    px, py = _as_points(spec, x), _as_points(spec, y)
    if px.shape[0] != 1 or py.shape[0] != 1:
        raise DomainError("geodesic_distance takes single points; use pairwise_distance")
    check_on_manifold(spec, px)
    check_on_manifold(spec, py)
    return float(pairwise_distance(spec, px, py)[0, 0])


def mesh_size(spec: ManifoldSpec, nodes: np.ndarray) -> float:
    """Largest distance from a node to its nearest neighbour."""
    nodes = np.asarray(nodes, dtype=float)
    if nodes.shape[0] < 2:
        return float("inf")
    if spec.kind == "circle":
        arc = (nodes[:, 0] % (2 * math.pi)) * spec.radius
        tree = cKDTree(arc[:, None], boxsize=2 * math.pi * spec.radius)
        pts = arc[:, None]
    elif spec.kind.startswith("torus"):
        pts = np.mod(nodes, spec.periods)
        # cKDTree requires coordinates strictly below the box size.
        pts = np.where(pts >= np.asarray(spec.periods), 0.0, pts)
        tree = cKDTree(pts, boxsize=spec.periods)
    else:
        pts = nodes
        tree = cKDTree(pts)
    dist, _ = tree.query(pts, k=2)
    nn = dist[:, 1]
    if spec.kind == "sphere2":
        R = spec.radius
        nn = 2 * R * np.arcsin(np.minimum(nn / (2 * R), 1.0))
    return float(nn.max())


def fibonacci_sphere(npoints: int, radius: float = 1.0) -> np.ndarray:
    """Golden-angle spiral with ``npoints`` points on the sphere."""
    i = np.arange(npoints, dtype=float) + 0.5
    z = 1.0 - 2.0 * i / npoints
    theta = math.pi * (1.0 + math.sqrt(5.0)) * i
    s = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return radius * np.column_stack((np.cos(theta) * s, np.sin(theta) * s, z))


def ball_lattice(n: int, radius: float, resolution: int) -> np.ndarray:
    """Cell centres of a cubic lattice with ``resolution`` cells per diameter, inside the ball."""
    h = 2 * radius / resolution
    axis = -radius + h * (np.arange(resolution) + 0.5)
    mesh = np.meshgrid(*([axis] * n), indexing="ij")
    pts = np.stack(mesh, axis=-1).reshape(-1, n)
    return pts[np.einsum("ij,ij->i", pts, pts) <= radius * radius * (1 + 1e-12)]


def build_grid(spec: ManifoldSpec, resolution: int) -> QuadratureGrid:
    """Deterministic quadrature grid on a catalog manifold.

    ``resolution`` is the node count for circles and spheres, the nodes per
    axis for tori, and the cells per diameter for balls.  Weights are equal;
    on balls they are scaled so their sum is exactly the ball volume.
    """
    if int(resolution) != resolution or resolution < 2:
        raise ConfigurationError("resolution must be an integer >= 2")
    resolution = int(resolution)
    if spec.kind == "circle":
        nodes = 2 * math.pi * np.arange(resolution) / resolution
        weights = np.full(resolution, 2 * math.pi * spec.radius / resolution)
        return QuadratureGrid(spec, nodes[:, None], weights, h=2 * math.pi * spec.radius / resolution)
    if spec.kind == "sphere2":
        nodes = fibonacci_sphere(resolution, spec.radius)
        return QuadratureGrid(spec, nodes, np.full(resolution, spec.volume / resolution))
    if spec.kind.startswith("torus"):
        axes = [L * np.arange(resolution) / resolution for L in spec.periods]
        mesh = np.meshgrid(*axes, indexing="ij")
        nodes = np.stack(mesh, axis=-1).reshape(-1, spec.dim)
        m = nodes.shape[0]
        return QuadratureGrid(spec, nodes, np.full(m, spec.volume / m),
                              h=max(spec.periods) / resolution)
    nodes = ball_lattice(spec.dim, spec.radius, resolution)
    if nodes.shape[0] < 2:
        raise ConfigurationError(f"resolution {resolution} leaves fewer than 2 nodes in {spec.kind}")
    m = nodes.shape[0]
    return QuadratureGrid(spec, nodes, np.full(m, spec.volume / m))


@dataclass(frozen=True, eq=False)
class NormalChart:
    """Exponential-map chart of radius ``delta`` centred at ``center``.

    ``epsilon`` bounds the metric in the chart: ``(1-eps) I <= g <= (1+eps) I``
    on the ball of radius ``delta``.
    """

    spec: ManifoldSpec
    center: np.ndarray
    delta: float
    epsilon: float
    basis: Optional[np.ndarray] = None

    @property
    def dim(self):
        return self.spec.dim


def _tangent_basis(P: np.ndarray) -> np.ndarray:
    """Orthonormal basis (rows) of the tangent plane at a sphere point."""
    p = P / np.linalg.norm(P)
    a = np.zeros(3)
    a[int(np.argmin(np.abs(p)))] = 1.0
    e1 = a - (a @ p) * p
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(p, e1)
    return np.vstack((e1, e2))


def metric_distortion(spec: ManifoldSpec, P, delta: float) -> float:
    """Smallest ``eps`` with ``(1-eps) I <= g <= (1+eps) I`` in normal coordinates on ``B_delta``.

    On the sphere the angular metric coefficient is ``(R sin(r/R) / r)^2``,
    which is smallest at ``r = delta``; flat entries return 0.
    """
    if not (0 < delta < spec.injectivity_radius):
        raise DomainError(
            f"chart radius {delta} must lie in (0, {spec.injectivity_radius}) for {spec.kind}"
        )
    check_on_manifold(spec, _as_points(spec, P))
    if spec.kind != "sphere2":
        return 0.0
    R = spec.radius
    ratio = R * math.sin(delta / R) / delta
    return 1.0 - ratio * ratio


def normal_chart(spec: ManifoldSpec, P, delta: float) -> NormalChart:
    """Chart at ``P`` with radius ``delta`` and its distortion bound."""
    center = _as_points(spec, P)[0]
    eps = metric_distortion(spec, center, delta)
    basis = _tangent_basis(center) if spec.kind == "sphere2" else None
    center.setflags(write=False)
    return NormalChart(spec, center, float(delta), eps, basis)


def exp_map(chart: NormalChart, u) -> np.ndarray:
    """Map tangent coordinates ``u`` (shape ``(n,)`` or ``(M, n)``) to manifold points."""
    u = np.asarray(u, dtype=float)
    single = u.ndim <= 1
    u = u.reshape(1, -1) if single else u
    if u.shape[1] != chart.dim:
        raise DomainError(f"tangent vectors need {chart.dim} components")
    r = np.linalg.norm(u, axis=1)
    if np.any(r > chart.delta * (1 + 1e-12)):
        raise DomainError("tangent vector outside the chart ball")
    spec = chart.spec
    P = chart.center
    if spec.kind == "circle":
        out = ((P[0] + u[:, 0] / spec.radius) % (2 * math.pi))[:, None]
    elif spec.kind.startswith("torus"):
        out = np.mod(P + u, spec.periods)
    elif spec.is_ball:
        out = P + u
        check_on_manifold(spec, out)
    else:
        R = spec.radius
        direction = u @ chart.basis
        safe = np.where(r > 0, r, 1.0)
        direction = direction / safe[:, None]
        out = np.cos(r / R)[:, None] * P + (R * np.sin(r / R))[:, None] * direction
    return out[0] if single else out


def volume_factor(chart: NormalChart, u) -> np.ndarray:
    """``sqrt(det g)`` at tangent coordinates ``u`` in the chart."""
    u = np.asarray(u, dtype=float).reshape(-1, chart.dim)
    if chart.spec.kind != "sphere2":
        return np.ones(u.shape[0])
    R = chart.spec.radius
    r = np.linalg.norm(u, axis=1)
    out = np.ones_like(r)
    nz = r > 0
    out[nz] = R * np.sin(r[nz] / R) / r[nz]
    return out


def distance_to(spec: ManifoldSpec, nodes: np.ndarray, P) -> np.ndarray:
    """Distances from every node to a single point ``P``."""
    return pairwise_distance(spec, nodes, _as_points(spec, P))[:, 0]

