"""Numerical potential theory on discretised compact sets.

Energies are double sums of a power-law (or logarithmic) kernel against a
probability measure on mesh points; capacity is the reciprocal of the
minimal energy over the weight simplex, computed by Frank-Wolfe with
away steps; Hausdorff-measure upper bounds come from greedy covers.
Everything runs under either the Euclidean metric or the anisotropic
time-space metric sqrt|t-s| + |x-y|.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._fits import ScalingFit, loglog_fit

__all__ = [
    "RieszKernelSpec", "DiscreteMeasure", "CompactSetMesh", "CoverReport",
    "SingularityError", "ResolutionError", "ConvergenceError",
    "riesz_kernel", "energy", "capacity", "hausdorff_upper", "box_occupancy",
    "parabolic_distance", "box_dimension",
    "interval_mesh", "square_mesh", "ball_mesh",
]


class SingularityError(ValueError):
    """Kernel evaluated at zero distance without a regularisation length."""


class ResolutionError(ValueError):
    """Requested scale is below the mesh resolution."""


class ConvergenceError(RuntimeError):
    """The equilibrium solver ran out of iterations."""


@dataclass(frozen=True)
class RieszKernelSpec:
    """Kernel K_beta: r^-beta for beta > 0, log(N0/r) at beta = 0, and the
    constant 1 for beta < 0.

    N0 None means "4 x set diameter", resolved where a set is known; the
    log kernel stays positive as long as N0 exceeds the diameter.
    cutoff_h > 0 clamps distances below cutoff_h / 2, representing an atom
    spread over its mesh cell.
    """

    beta: float
    N0: Optional[float] = None
    cutoff_h: float = 0.0

    def resolve_n0(self, diameter: float) -> float:
        if self.N0 is not None:
            return self.N0
        return max(4.0 * diameter, math.e * max(self.cutoff_h, 1e-12))


def parabolic_distance(p1, p2) -> float:
    """Anisotropic time-space distance sqrt|t-s| + |x-y|."""
    t1, x1 = p1
    t2, x2 = p2
    return math.sqrt(abs(t1 - t2)) + abs(x1 - x2)


def _pairwise(points: np.ndarray, metric: str) -> np.ndarray:
    if metric == "euclidean":
        diff = points[:, None, :] - points[None, :, :]
        return np.sqrt((diff * diff).sum(axis=-1))
    if metric == "parabolic":
        if points.shape[1] != 2:
            raise ValueError("parabolic metric needs (t, x) points")
        dt = np.abs(points[:, None, 0] - points[None, :, 0])
        dx = np.abs(points[:, None, 1] - points[None, :, 1])
        return np.sqrt(dt) + dx
    raise ValueError(f"unknown metric {metric!r}")


@dataclass
class DiscreteMeasure:
    """Nonnegative weights summing to one on a finite set of points."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.weights) != len(self.points):
            raise ValueError("points and weights differ in length")
        if np.any(self.weights < -1e-15):
            raise ValueError("weights must be nonnegative")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {self.weights.sum()}, not 1")


@dataclass
class CompactSetMesh:
    """Finite mesh of a compact set with a declared resolution and metric."""

    points: np.ndarray
    cell_size: float
    metric: str = "euclidean"

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if self.metric not in ("euclidean", "parabolic"):
            raise ValueError(f"unknown metric {self.metric!r}")

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def ambient_dim(self) -> int:
        return self.points.shape[1]

    def distances(self) -> np.ndarray:
        return _pairwise(self.points, self.metric)

    def diameter(self) -> float:
        if self.n_points == 1:
            return 0.0
        return float(self.distances().max())

    def subset(self, indices) -> "CompactSetMesh":
        return CompactSetMesh(self.points[np.asarray(indices)], self.cell_size,
                              self.metric)


@dataclass(frozen=True)
class CoverReport:
    """Greedy cover at scale epsilon and its Hausdorff-sum value."""

    epsilon: float
    beta: float
    value: float
    n_balls: int
    centers: np.ndarray
    radii: np.ndarray
    infinite: bool = False


def riesz_kernel(spec: RieszKernelSpec, r, diameter: float = 1.0):
    """Kernel value at distance r (arrays broadcast)."""
    r = np.asarray(r, dtype=float)
    scalar = r.ndim == 0
    if spec.cutoff_h > 0:
        r = np.maximum(r, spec.cutoff_h / 2.0)
    elif np.any(r <= 0) and spec.beta >= 0:
        raise SingularityError(
            "kernel is singular at r = 0; set cutoff_h > 0 to regularise")
    if spec.beta > 0:
        out = r ** (-spec.beta)
    elif spec.beta == 0:
        out = np.log(spec.resolve_n0(diameter) / r)
    else:
        out = np.ones_like(r)
    return float(out) if scalar else out


def energy(mu: DiscreteMeasure, spec: RieszKernelSpec,
           metric: str = "euclidean") -> float:
    """Double sum of the kernel against mu x mu, diagonal included.

    Requires cutoff_h > 0 for beta >= 0 (the diagonal is at distance 0)."""
    if spec.beta >= 0 and spec.cutoff_h <= 0:
        raise SingularityError("energy with beta >= 0 needs cutoff_h > 0")
    dist = _pairwise(mu.points, metric)
    diam = float(dist.max()) if len(mu.points) > 1 else 0.0
    K = riesz_kernel(spec, dist, diameter=diam)
    return float(mu.weights @ K @ mu.weights)


def _kernel_matrix(mesh: CompactSetMesh, spec: RieszKernelSpec) -> np.ndarray:
    eff = spec
    if spec.cutoff_h <= 0:
        eff = RieszKernelSpec(beta=spec.beta, N0=spec.N0, cutoff_h=mesh.cell_size)
    return riesz_kernel(eff, mesh.distances(), diameter=mesh.diameter())


def capacity(mesh: CompactSetMesh, spec: RieszKernelSpec, tol: float = 1e-6,
             max_iter: int = 100_000):
    """Reciprocal of the minimal regularised energy over the simplex.

    Frank-Wolfe with away steps and exact line search from the uniform
    measure; stops when the duality gap falls below tol * energy. Returns
    (capacity, equilibrium DiscreteMeasure, duality gap). When
    cutoff_h is unset it is tied to the mesh cell size.
    """
    n = mesh.n_points
    Q = _kernel_matrix(mesh, spec)
    if spec.beta < 0:
        w = np.full(n, 1.0 / n)
        return 1.0, DiscreteMeasure(mesh.points, w), 0.0

    w = np.full(n, 1.0 / n)
    g = Q @ w                     # g = Qw; gradient is 2g
    E = float(w @ g)
    gap = math.inf
    for it in range(max_iter):
        if it % 128 == 127:       # refresh accumulated float drift
            g = Q @ w
            E = float(w @ g)
        s = int(np.argmin(g))
        gap = 2.0 * (E - g[s])
        if gap <= tol * max(abs(E), 1e-300):
            break
        supp = np.flatnonzero(w > 0)
        a = int(supp[np.argmax(g[supp])])
        fw_drop = E - g[s]        # descent rates along each direction
        away_drop = g[a] - E
        if fw_drop >= away_drop:
            # toward vertex s: w <- (1-gam) w + gam e_s
            d_g = g[s] - E
            curv = Q[s, s] - 2.0 * g[s] + E
            gam_max = 1.0
        else:
            # away from vertex a: w <- (1+gam) w - gam e_a
            d_g = E - g[a]
            curv = E - 2.0 * g[a] + Q[a, a]
            gam_max = w[a] / (1.0 - w[a]) if w[a] < 1.0 else math.inf
        if curv <= 0:
            gam = gam_max
        else:
            gam = min(max(-d_g / curv, 0.0), gam_max)
        if gam <= 0 or not math.isfinite(gam):
            break
        if fw_drop >= away_drop:
            w *= (1.0 - gam)
            w[s] += gam
            g = (1.0 - gam) * g + gam * Q[:, s]
        else:
            w *= (1.0 + gam)
            w[a] -= gam
            if gam == gam_max:
                w[a] = 0.0        # drop step
            g = (1.0 + gam) * g - gam * Q[:, a]
        E = float(w @ g)
    else:
        raise ConvergenceError(
            f"equilibrium solver exhausted {max_iter} iterations "
            f"(duality gap {gap:.3e}, energy {E:.6e})")
    w = np.maximum(w, 0.0)
    w /= w.sum()
    return 1.0 / E, DiscreteMeasure(mesh.points, w), gap


def hausdorff_upper(mesh: CompactSetMesh, beta: float, epsilon: float) -> CoverReport:
    """Greedy ball cover at scale epsilon; value sum (2 r_i)^beta.

    Balls are centred on mesh points with the largest admissible radius
    (= epsilon); each step covers the most uncovered points, ties broken
    by lowest center index. The value is an upper bound for the
    epsilon-restricted cover infimum up to greedy suboptimality.
    """
    if beta < 0:
        return CoverReport(epsilon=epsilon, beta=beta, value=math.inf, n_balls=0,
                           centers=np.empty((0, mesh.ambient_dim)),
                           radii=np.empty(0), infinite=True)
    if epsilon <= mesh.cell_size:
        raise ResolutionError(
            f"epsilon {epsilon:g} must exceed the mesh cell size {mesh.cell_size:g}")
    dist = mesh.distances()
    covered_by = dist <= epsilon * (1 + 1e-12)
    uncovered = np.ones(mesh.n_points, dtype=bool)
    centers = []
    while uncovered.any():
        counts = covered_by[:, uncovered].sum(axis=1)
        c = int(np.argmax(counts))
        centers.append(c)
        uncovered &= ~covered_by[c]
    centers = np.array(centers, dtype=int)
    radii = np.full(len(centers), epsilon)
    value = float(((2.0 * radii) ** beta).sum())
    return CoverReport(epsilon=epsilon, beta=beta, value=value,
                       n_balls=len(centers), centers=mesh.points[centers],
                       radii=radii)


def box_occupancy(points: np.ndarray, metric: str, scales,
                  origin=None, span=None) -> np.ndarray:
    """Number of occupied boxes at each scale.

    For the parabolic metric, boxes are anisotropic: eps^2 along the time
    axis and eps along space. ``origin``/``span`` fix the box lattice
    (defaulting to the point cloud's own bounding box)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if metric == "parabolic" and points.shape[1] != 2:
        raise ValueError("parabolic metric needs (t, x) points")
    origin = points.min(axis=0) if origin is None else np.asarray(origin, dtype=float)
    if span is None:
        span = points.max(axis=0) - origin
    counts = []
    for eps in scales:
        if metric == "parabolic":
            widths = np.array([eps * eps, eps])
        else:
            widths = np.full(points.shape[1], eps)
        idx = np.floor((points - origin) / widths).astype(np.int64)
        # Points sitting exactly on the top face belong to the last box.
        top = np.maximum(np.ceil(span / widths - 1e-12) - 1, 0).astype(np.int64)
        idx = np.minimum(idx, top)
        counts.append(len(np.unique(idx, axis=0)))
    return np.asarray(counts, dtype=float)


def box_dimension(points: np.ndarray, metric: str, scales) -> ScalingFit:
    """Box-counting slope of log N(eps) against log 1/eps."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    scales = np.asarray(sorted(scales, reverse=True), dtype=float)
    if len(scales) < 4:
        raise ValueError("need at least 4 scales")
    if len(points) < 100:
        raise ValueError("need at least 100 points")
    counts = box_occupancy(points, metric, scales)
    return loglog_fit(1.0 / scales, counts)


# ---------------------------------------------------------------------------
# Mesh constructors for the built-in shapes.


def interval_mesh(a: float = 0.0, b: float = 1.0, n: int = 1000) -> CompactSetMesh:
    pts = np.linspace(a, b, n)[:, None]
    return CompactSetMesh(pts, cell_size=(b - a) / max(n - 1, 1))


def square_mesh(n: int = 40) -> CompactSetMesh:
    ax = np.linspace(0.0, 1.0, n)
    xg, yg = np.meshgrid(ax, ax, indexing="ij")
    pts = np.stack([xg.ravel(), yg.ravel()], axis=1)
    return CompactSetMesh(pts, cell_size=1.0 / (n - 1))


def ball_mesh(center, radius: float, n_per_axis: int = 9) -> CompactSetMesh:
    """Axis grid restricted to the Euclidean ball; works in any dimension
    (intended for d <= 3)."""
    center = np.asarray(center, dtype=float)
    k = len(center)
    ax = np.linspace(-radius, radius, n_per_axis)
    grids = np.meshgrid(*([ax] * k), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    pts = pts[(pts * pts).sum(axis=1) <= radius * radius * (1 + 1e-12)]
    return CompactSetMesh(pts + center, cell_size=2 * radius / (n_per_axis - 1))
