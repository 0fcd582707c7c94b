"""Monte Carlo estimators over simulated ensembles: kernel density
estimates of one- and two-point laws, hitting probabilities with Wilson
intervals, level-set extraction, and box-counting dimension reports
joined against the theoretical predictions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._fits import loglog_fit
from .potential import box_dimension, box_occupancy
from .solver import (CoefficientModel, FinalSlice, GridSpec, MinDistance, BoxHit,
                     RngSpec, SeriesAtX, AnchorValues, Trajectory, ensemble_run)

__all__ = [
    "KdeEstimate", "HitReport", "LevelSetSample", "DimensionReport",
    "kde_density", "density_bound_check", "increment_collapse",
    "hit_probability", "sandwich_experiment", "level_set", "dimension_report",
    "wilson_interval",
    "DIM_PREDICTIONS",
]

_WILSON_Z = 1.959963984540054  # two-sided 95%


class MassError(RuntimeError):
    """KDE mass left the [0.99, 1.01] band (grid too narrow or coarse)."""


@dataclass
class KdeEstimate:
    """Gaussian-product KDE evaluated on a rectangular grid.

    axes: one coordinate array per dimension; values has the matching
    meshgrid shape. mass is the Riemann-cell integral over the grid.
    """

    axes: list
    values: np.ndarray
    bandwidth: np.ndarray
    n_samples: int

    @property
    def d(self) -> int:
        return len(self.axes)

    @property
    def mass(self) -> float:
        cell = 1.0
        for ax in self.axes:
            cell *= ax[1] - ax[0]
        return float(self.values.sum() * cell)

    @property
    def peak(self) -> float:
        return float(self.values.max())

    def grid_points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


def _silverman(samples: np.ndarray) -> np.ndarray:
    n, d = samples.shape
    std = samples.std(axis=0, ddof=1)
    q75, q25 = np.percentile(samples, [75, 25], axis=0)
    a = np.minimum(std, (q75 - q25) / 1.34)
    a = np.where(a <= 0, np.maximum(std, 1e-12), a)
    return 0.9 * a * n ** (-1.0 / (d + 4))


def kde_density(samples, grid=None, bandwidth=None,
                grid_points: int = 0) -> KdeEstimate:
    """Gaussian-kernel density estimate with per-axis Silverman bandwidth.

    ``grid`` may give one coordinate array per axis; otherwise a grid
    covering the samples plus five bandwidths is built. Raises on empty
    input, fewer than 500 samples, d > 3, or if the grid mass leaves
    [0.99, 1.01].
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    n, d = samples.shape
    if n == 0:
        raise ValueError("no samples")
    if n < 500:
        raise ValueError(f"need at least 500 samples, got {n}")
    if d > 3:
        raise ValueError("gridded KDE supports d <= 3")
    h = np.asarray(bandwidth, dtype=float) if bandwidth is not None else _silverman(samples)
    h = np.broadcast_to(np.atleast_1d(h), (d,)).astype(float)
    if grid is None:
        res = grid_points or {1: 512, 2: 101, 3: 41}[d]
        grid = [np.linspace(samples[:, k].min() - 5 * h[k],
                            samples[:, k].max() + 5 * h[k], res) for k in range(d)]
    else:
        grid = [np.asarray(g, dtype=float) for g in np.atleast_2d(grid)] \
            if not isinstance(grid, (list, tuple)) else [np.asarray(g, dtype=float) for g in grid]

    mesh = np.meshgrid(*grid, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)   # (G, d)
    norm = n * np.prod(h) * (2 * math.pi) ** (d / 2.0)
    vals = np.empty(len(pts))
    chunk = max(1, int(4e6 // max(n, 1)))
    for lo in range(0, len(pts), chunk):
        block = pts[lo:lo + chunk]                       # (g, d)
        z = (block[:, None, :] - samples[None, :, :]) / h
        vals[lo:lo + chunk] = np.exp(-0.5 * (z * z).sum(axis=-1)).sum(axis=1) / norm
    est = KdeEstimate(axes=grid, values=vals.reshape([len(g) for g in grid]),
                      bandwidth=h, n_samples=n)
    if not (0.99 <= est.mass <= 1.01):
        raise MassError(f"KDE grid mass {est.mass:.4f} outside [0.99, 1.01]")
    return est


def _gaussian_sup(variance_per_axis) -> float:
    v = np.atleast_1d(np.asarray(variance_per_axis, dtype=float))
    return float(np.prod(1.0 / np.sqrt(2 * math.pi * v)))


def density_bound_check(model: CoefficientModel, grid: GridSpec, rng: RngSpec,
                        t_list, x_list, n_samples: int = 10_000,
                        z_halfwidth_sds: float = 3.0, threads: int = 1) -> dict:
    """Boundedness and Gaussian-type lower envelope of the one-point law.

    Part (a): the KDE sup over z at each anchor, its spread across
    anchors, and the spread a Gaussian surrogate with the empirical
    variances predicts (sup ~ prod variance^(-1/2)). Part (b): the
    largest c with KDE(z) >= c t^(-d/4) exp(-|z|^2/(c sqrt(t))) on the
    bulk grid (|z| within z_halfwidth_sds sample sds), by bisection; the
    claim holds with margin when c > 0 at every anchor.
    """
    if model.ellipticity_rho <= 0:
        raise ValueError("density bounds need a uniformly elliptic model")
    pairs = [(grid.snap_time(t), grid.snap_space(x)) for t in t_list for x in x_list]
    obs = AnchorValues(pairs, name="anchors")
    res = ensemble_run(grid, model, rng, n_samples, [obs], threads=threads)
    vals = res["anchors"]          # (n, n_pairs, d)
    d = model.d

    sups, c_vals = {}, {}
    for k, (t, x) in enumerate(pairs):
        samples = vals[:, k, :]
        sd = samples.std(axis=0, ddof=1)
        bulk = [np.linspace(m - z_halfwidth_sds * s, m + z_halfwidth_sds * s,
                            41 if d > 1 else 201)
                for m, s in zip(samples.mean(axis=0), sd)]
        est = kde_density(samples, grid=bulk)
        sups[(t, x)] = est.peak

        pts = est.grid_points()
        dens = est.values.ravel()
        norm2 = (pts * pts).sum(axis=1)

        def feasible(c):
            env = c * t ** (-d / 4.0) * np.exp(-norm2 / (c * math.sqrt(t)))
            return bool(np.all(dens >= env))

        lo, hi = 0.0, 10.0
        while feasible(hi):
            hi *= 4
            if hi > 1e12:
                break
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if feasible(mid) else (lo, mid)
        c_vals[(t, x)] = lo

    sup_arr = np.array(list(sups.values()))
    variances = {k: vals[:, i, :].var(axis=0, ddof=1) for i, k in enumerate(pairs)}
    pred = np.array([_gaussian_sup(variances[k]) for k in pairs])
    measured_spread = float(sup_arr.max() / sup_arr.min())
    predicted_spread = float(pred.max() / pred.min())
    return {
        "sup_by_anchor": sups,
        "c_by_anchor": c_vals,
        "measured_spread": measured_spread,
        "predicted_spread": predicted_spread,
        "uniform_bound_ok": bool(sup_arr.max() <= 1.5 * pred.max()),
        "lower_envelope_ok": bool(min(c_vals.values()) > 0),
        "c_lower": float(min(c_vals.values())),
    }


def increment_collapse(model: CoefficientModel, grid: GridSpec, rng: RngSpec,
                       t: float, x: float, partners, n_samples: int = 4000,
                       ratio_bound: float = 2.0, threads: int = 1) -> dict:
    """Sup-density of the rescaled increment per separation scale.

    ``partners`` lists either positions y (same time t) or (s, y) pairs;
    each increment u(t,x) - u(s,y) is rescaled by its parabolic
    separation^(1/2). The collapse verdict is max/min of the per-scale
    sups against ``ratio_bound``.
    """
    norm_partners = []
    for p in partners:
        s, y = (t, p) if np.isscalar(p) else p
        if (s, y) == (t, x):
            raise ValueError("partner coincides with the anchor")
        norm_partners.append((s, y))
    pairs = [(t, x)] + norm_partners
    obs = AnchorValues(pairs, name="anchors")
    res = ensemble_run(grid, model, rng, n_samples, [obs], threads=threads)
    vals = res["anchors"]

    from .potential import parabolic_distance
    sups, scales = [], []
    for k, (s, y) in enumerate(norm_partners, start=1):
        delta = parabolic_distance((t, x), (s, y))
        resc = (vals[:, 0, :] - vals[:, k, :]) / math.sqrt(delta)
        est = kde_density(resc)
        sups.append(est.peak)
        scales.append(delta)
    sups = np.array(sups)
    ratio = float(sups.max() / sups.min())
    return {
        "scales": np.array(scales),
        "sup_per_scale": sups,
        "ratio": ratio,
        "collapsed": bool(ratio <= ratio_bound),
        "ratio_bound": ratio_bound,
    }


def wilson_interval(k: int, n: int, z: float = _WILSON_Z):
    p = k / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(center - half, 0.0), min(center + half, 1.0)


@dataclass(frozen=True)
class HitReport:
    target: dict
    estimate: float
    ci_low: float
    ci_high: float
    n_paths: int
    nx: int
    dt: float
    noise_floor: float
    below_floor: bool

    @property
    def ci(self):
        return (self.ci_low, self.ci_high)


def _noise_floor(grid: GridSpec, model: CoefficientModel, rng: RngSpec,
                 I, J, threads: int = 1) -> float:
    """2 x the sample movement over one grid cell: the largest of the RMS
    one-step and one-cell increments around the middle of I x J, from a
    small pilot ensemble."""
    t_mid = grid.snap_time((I[0] + I[1]) / 2)
    x_mid = grid.snap_space((J[0] + J[1]) / 2)
    obs = [FinalSlice(t_mid, name="slice"),
           SeriesAtX(x_mid, max(I[0], t_mid - 256 * grid.dt), t_mid, 1, name="series")]
    res = ensemble_run(grid, model, rng, 16, obs, threads=threads)
    sl = res["slice"]                               # (16, nx+1, d)
    space_inc = np.diff(sl, axis=1)
    rms_space = float(np.sqrt((space_inc ** 2).sum(axis=-1).mean()))
    se = res["series"]                              # (16, n_t, d)
    time_inc = np.diff(se, axis=1)
    rms_time = float(np.sqrt((time_inc ** 2).sum(axis=-1).mean()))
    return 2.0 * max(rms_space, rms_time)


def hit_probability(grid: GridSpec, model: CoefficientModel, rng: RngSpec,
                    n_paths: int, I, J, target: dict,
                    threads: int = 1, noise_floor: Optional[float] = None) -> HitReport:
    """Fraction of paths with some grid node in I x J landing in the
    target ({"type": "ball", "z", "r"} or {"type": "box", "lo", "hi"}).

    Hits are assessed on grid nodes only; targets thinner than the
    sampled one-cell movement are flagged (below_floor), not rejected.
    """
    if not (0 < I[0] < I[1] <= grid.T) or not (0 <= J[0] < J[1] <= 1):
        raise ValueError("I must lie in (0, T], J in (0, 1)")
    if noise_floor is None:
        noise_floor = _noise_floor(grid, model, rng, I, J, threads)
    if target["type"] == "ball":
        obs = MinDistance(target["z"], I, J, name="hit")
        thin = target["r"] < noise_floor
    elif target["type"] == "box":
        lo, hi = np.asarray(target["lo"], float), np.asarray(target["hi"], float)
        obs = BoxHit(lo, hi, I, J, name="hit")
        thin = float((hi - lo).min()) / 2.0 < noise_floor
    else:
        raise ValueError(f"unknown target type {target['type']!r}")
    res = ensemble_run(grid, model, rng, n_paths, [obs], threads=threads)
    if target["type"] == "ball":
        hits = int((res["hit"] <= target["r"]).sum())
    else:
        hits = int(res["hit"].sum())
    lo_ci, hi_ci = wilson_interval(hits, n_paths)
    return HitReport(target=target, estimate=hits / n_paths, ci_low=lo_ci,
                     ci_high=hi_ci, n_paths=n_paths, nx=grid.nx, dt=grid.dt,
                     noise_floor=noise_floor, below_floor=bool(thin))


def sandwich_experiment(model: CoefficientModel, grid: GridSpec, rng: RngSpec,
                        n_paths: int, I, J, z, r_ladder, mode: str = "space_time",
                        eta: float = 0.05, cap_points: int = 65,
                        threads: int = 1) -> dict:
    """Hitting probability of balls around z down an r-ladder, joined with
    the capacity and cover values at the matching indices.

    mode "space_time" uses index d - 6 (the full sheet), "fixed_t" uses
    d - 2 (a single time slice; hits assessed at the end time of I).
    Emits per-r values and the three log-log slopes where defined.
    """
    from .potential import RieszKernelSpec, ball_mesh, capacity, hausdorff_upper

    d = model.d
    z = np.asarray(z, dtype=float)
    base_index = {"space_time": d - 6.0, "fixed_t": d - 2.0}[mode]
    obs = MinDistance(z, I if mode == "space_time" else (I[1] - grid.dt / 2, I[1]), J,
                      name="dist")
    floor = _noise_floor(grid, model, rng, I, J, threads)
    res = ensemble_run(grid, model, rng, n_paths, [obs], threads=threads)
    dmin = res["dist"]

    rows = []
    for r in sorted(r_ladder):
        hits = int((dmin <= r).sum())
        ci = wilson_interval(hits, n_paths)
        mesh = ball_mesh(z, r, n_per_axis=max(3, int(round(cap_points ** (1.0 / d)))))
        cap_lo, _, _ = capacity(mesh, RieszKernelSpec(base_index + eta))
        beta_up = base_index - eta
        if beta_up < 0:
            cover_val = math.inf
        else:
            cover_val = hausdorff_upper(mesh, beta_up, max(r / 4, mesh.cell_size * 1.5)).value
        rows.append({"r": r, "estimate": hits / n_paths, "ci": ci,
                     "capacity": cap_lo, "cover": cover_val,
                     "below_floor": r < floor})

    ests = np.array([row["estimate"] for row in rows])
    rs = np.array([row["r"] for row in rows])

    def safe_fit(vals):
        try:
            return loglog_fit(rs, np.asarray(vals, dtype=float))
        except Exception:
            return None

    return {
        "rows": rows,
        "noise_floor": floor,
        "hit_slope": safe_fit(ests) if np.all(ests > 0) else None,
        "capacity_slope": safe_fit([row["capacity"] for row in rows]),
        "cover_slope": (safe_fit([row["cover"] for row in rows])
                        if all(math.isfinite(row["cover"]) for row in rows) else None),
        "min_over_max": float(ests.min() / ests.max()) if ests.max() > 0 else 0.0,
    }


@dataclass
class LevelSetSample:
    """Grid nodes within ``tol`` of the level z, with projections and the
    fixed-time / fixed-position sections."""

    z: np.ndarray
    tol: float
    points: np.ndarray        # (n, 2) of (t, x)
    values: np.ndarray        # (n, d) field values at the points
    proj_t: np.ndarray
    proj_x: np.ndarray
    section_t: Optional[float] = None
    section_x: Optional[float] = None
    section_t_points: np.ndarray = field(default_factory=lambda: np.empty(0))
    section_x_points: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        if len(self.points) and not np.all(
                np.linalg.norm(self.values - self.z, axis=1) <= self.tol):
            raise AssertionError("stored level-set point violates the tolerance")


def level_set(traj: Trajectory, z, tol: float, section_t: Optional[float] = None,
              section_x: Optional[float] = None) -> LevelSetSample:
    """All grid nodes with ||u - z|| <= tol, plus t/x projections and the
    sections at section_t / section_x (snapped to the grid)."""
    if tol < 0:
        raise ValueError("tol must be >= 0")
    g = traj.grid
    z = np.atleast_1d(np.asarray(z, dtype=float))
    dist = np.linalg.norm(traj.values - z, axis=-1)   # (nt+1, nx+1)
    mask = dist <= tol
    nn, mm = np.nonzero(mask)
    pts = np.stack([nn * g.dt, mm * g.dx], axis=1)
    vals = traj.values[nn, mm]
    kw = {}
    if section_t is not None:
        n0 = g.time_index(section_t)
        kw["section_t"] = n0 * g.dt
        kw["section_t_points"] = np.nonzero(mask[n0])[0] * g.dx
    if section_x is not None:
        m0 = g.space_index(section_x)
        kw["section_x"] = m0 * g.dx
        kw["section_x_points"] = np.nonzero(mask[:, m0])[0] * g.dt
    return LevelSetSample(z=z, tol=tol, points=pts, values=vals,
                          proj_t=np.unique(nn) * g.dt, proj_x=np.unique(mm) * g.dx,
                          **kw)


# ---------------------------------------------------------------------------
# Dimension reports. Predictions: each random set has a hitting-critical
# index ("codimension") and, when that index is strictly inside (0, n),
# dimension = ambient n - codim. Sets of time-space points use the
# anisotropic metric (ambient 3: time counts twice); image sets in R^d
# use the Euclidean one.


def _codim(which: str, d: int) -> float:
    table = {
        "range_tx": max(d - 6.0, 0.0),
        "range_x": max(d - 2.0, 0.0),
        "range_t": max(d - 4.0, 0.0),
        "levelset_L": d / 2.0,
        "levelset_T": max((d - 2.0) / 4.0, 0.0),
        "levelset_X": max((d - 4.0) / 2.0, 0.0),
        "levelset_Lx": d / 4.0,
        "levelset_Lt": d / 2.0,
    }
    return table[which]


def _ambient(which: str, d: int) -> float:
    if which.startswith("range"):
        return float(d)
    return {"levelset_L": 3.0, "levelset_T": 1.0, "levelset_X": 1.0,
            "levelset_Lx": 1.0, "levelset_Lt": 1.0}[which]


def DIM_PREDICTIONS(which: str, d: int) -> dict:
    """Predicted dimension, codimension and validity: the prediction is
    quantitative only when the codimension is strictly inside (0, n)
    or zero (full dimension)."""
    n = _ambient(which, d)
    c = _codim(which, d)
    return {"ambient": n, "codim": c, "predicted": max(n - c, 0.0),
            "covered": c < n}


@dataclass
class DimensionReport:
    which: str
    d: int
    dims: np.ndarray
    n_paths: int
    n_empty: int
    mean: float
    stderr: float
    predicted: float
    codim: float
    ambient: float
    covered: bool
    tol: Optional[float] = None

    @property
    def codim_identity_dev(self) -> float:
        return abs(self.mean + self.codim - self.ambient)


def _halfoctave_ladder(extent: float, floor: float, trim: int = 2):
    """Scales extent * 2^(-j/2) down to ~floor, with the coarsest and
    finest ``trim`` scales dropped for the fit (saturation at both ends).
    Falls back to a smaller trim when the ladder is short."""
    n_gen = int(math.floor(2 * math.log2(max(extent / max(floor, 1e-300), 4.0))))
    scales = [extent * 2.0 ** (-j / 2.0) for j in range(1, n_gen + 1)]
    while len(scales) - 2 * trim < 4 and trim > 0:
        trim -= 1
    return scales[trim:len(scales) - trim if trim else None]


def _pooled_dimension(point_sets, metric, scales, origin, span):
    """Fit of log mean occupied-box count against log 1/scale, pooled over
    paths on a shared box lattice. Returns (fit, n_empty, n_used)."""
    counts, n_empty = [], 0
    for pts in point_sets:
        if len(pts) == 0:
            n_empty += 1
            continue
        counts.append(box_occupancy(pts, metric, scales, origin=origin, span=span))
    if not counts:
        raise RuntimeError("the set was empty on every path")
    mean_counts = np.mean(counts, axis=0)
    fit = loglog_fit(1.0 / np.asarray(scales), mean_counts)
    return fit, n_empty, len(counts)


def dimension_report(which: str, model: CoefficientModel, grid: GridSpec,
                     rng: RngSpec, n_paths: int, z=None, I=None, J=None,
                     section_t: Optional[float] = None,
                     section_x: Optional[float] = None,
                     tol: Optional[float] = None, threads: int = 1) -> DimensionReport:
    """Box-counting dimension of a random set versus its predicted value.

    which selects the set: the image of the field over I x J
    ("range_tx"), over a fixed-time slice ("range_x") or a fixed position
    ("range_t"), or a level set at z: full ("levelset_L", anisotropic
    boxes), its projections ("levelset_T"/"levelset_X"), or the fixed-x /
    fixed-t sections ("levelset_Lx"/"levelset_Lt").

    Image sets carry enough points for a fit per path (the reported mean
    and stderr average those); the thin 1-d level sets do not at explicit-
    scheme resolutions, so their box counts are pooled across the
    ensemble on a shared lattice before the single fit.
    """
    d = model.d
    I = I or (0.05 * grid.T, grid.T)
    J = J or (0.05, 0.95)
    z = np.zeros(d) if z is None else np.atleast_1d(np.asarray(z, dtype=float))
    pred = DIM_PREDICTIONS(which, d)

    observables = []
    t_sec = grid.time_index(section_t if section_t is not None else I[1]) * grid.dt
    x_sec = grid.space_index(section_x if section_x is not None else 0.5) * grid.dx
    if which == "range_x":
        observables.append(FinalSlice(t_sec, name="slice"))
    if which == "levelset_Lt":
        # The prediction holds at every fixed time; pooling the section
        # over several well-separated times multiplies the crossing
        # statistics at no extra simulation cost.
        slice_times = sorted({grid.snap_time(t)
                              for t in np.linspace(t_sec / 2, t_sec, 8)})
        observables.extend(FinalSlice(t, name=f"slice{k}")
                           for k, t in enumerate(slice_times))
    if which in ("levelset_L", "levelset_T", "levelset_X", "range_tx"):
        observables.append(_SliceStack(I[0], I[1], max(1, grid.nt // 512), name="stack"))
    if which in ("range_t", "levelset_Lx"):
        observables.append(SeriesAtX(x_sec, I[0], I[1], 1, name="series"))
    res = ensemble_run(grid, model, rng, n_paths, observables, threads=threads)

    m_lo = int(math.ceil(J[0] * grid.nx))
    m_hi = int(math.floor(J[1] * grid.nx))
    xs = np.arange(m_lo, m_hi + 1) * grid.dx
    x_span = xs[-1] - xs[0]

    per_path_dims, n_empty = [], 0
    eff_tol = tol
    pooled = None

    if which == "range_x":
        for p in range(n_paths):
            cloud = res["slice"][p, m_lo:m_hi + 1, :]
            scales = _cloud_ladder(cloud, pred["predicted"])
            per_path_dims.append(box_dimension(cloud, "euclidean", scales).exponent)
    elif which == "range_t":
        for p in range(n_paths):
            cloud = res["series"][p]
            scales = _cloud_ladder(cloud, pred["predicted"])
            per_path_dims.append(box_dimension(cloud, "euclidean", scales).exponent)
    elif which == "range_tx":
        stack, _times = res["stack"]
        for p in range(n_paths):
            cloud = stack[p, :, m_lo:m_hi + 1, :].reshape(-1, d)
            scales = _cloud_ladder(cloud, pred["predicted"])
            per_path_dims.append(box_dimension(cloud, "euclidean", scales).exponent)
    elif which == "levelset_Lx":
        se = res["series"]                       # (P, n_t, d)
        ts = I[0] + np.arange(se.shape[1]) * grid.dt
        sets = [_level_hits_1d(se[p], z, ts, eff_tol) for p in range(n_paths)]
        t_floor = 16 * grid.dt if d == 1 else 32 * grid.dt
        scales = _halfoctave_ladder(I[1] - I[0], t_floor)
        pooled = _pooled_dimension(sets, "euclidean", scales,
                                   origin=np.array([ts[0]]),
                                   span=np.array([ts[-1] - ts[0]]))
    elif which == "levelset_Lt":
        slices = [res[f"slice{k}"][:, m_lo:m_hi + 1, :]
                  for k in range(len(slice_times))]
        rms = float(np.sqrt((np.diff(slices[-1], axis=1) ** 2).sum(axis=-1).mean()))
        if d > 1 and eff_tol is None:
            eff_tol = 2.0 * rms
        sets = [_level_hits_1d(sl[p], z, xs, eff_tol, NEAR_MISS_ALPHA * rms)
                for sl in slices for p in range(n_paths)]
        # The slice decorrelates over ~sqrt(t); above that the box counts
        # follow the finite number of macroscopic crossings, not the
        # local fractal structure.
        extent = min(x_span, 0.5 * math.sqrt(slice_times[0]))
        scales = _halfoctave_ladder(extent, 8 * grid.dx)
        pooled = _pooled_dimension(sets, "euclidean", scales,
                                   origin=np.array([xs[0]]), span=np.array([x_span]))
    else:  # levelset_L / levelset_T / levelset_X
        stack, times = res["stack"]
        sl = stack[:, :, m_lo:m_hi + 1, :]
        if d > 1 and eff_tol is None:
            eff_tol = 2.0 * float(np.sqrt(
                (np.diff(stack[:, -1, m_lo:m_hi + 1, :], axis=1) ** 2)
                .sum(axis=-1).mean()))
        tau = times[1] - times[0]
        t_span = times[-1] - times[0]
        rms_x = float(np.sqrt(
            (np.diff(stack[:, -1, m_lo:m_hi + 1, :], axis=1) ** 2)
            .sum(axis=-1).mean()))
        sets = []
        for p in range(n_paths):
            tt, mm = _level_cells_2d(sl[p], z, eff_tol, NEAR_MISS_ALPHA * rms_x)
            if which == "levelset_L":
                sets.append(np.stack([times[tt], xs[mm]], axis=1))
            elif which == "levelset_T":
                sets.append(np.unique(times[tt])[:, None])
            else:
                sets.append(np.unique(xs[mm])[:, None])
        if which == "levelset_L":
            scales = _halfoctave_ladder(max(x_span, math.sqrt(t_span)),
                                        max(math.sqrt(tau), 2 * grid.dx))
            pooled = _pooled_dimension(sets, "parabolic", scales,
                                       origin=np.array([times[0], xs[0]]),
                                       span=np.array([t_span, x_span]))
        elif which == "levelset_T":
            scales = _halfoctave_ladder(t_span, 4 * tau)
            pooled = _pooled_dimension(sets, "euclidean", scales,
                                       origin=np.array([times[0]]),
                                       span=np.array([t_span]))
        else:
            scales = _halfoctave_ladder(x_span, 2 * grid.dx)
            pooled = _pooled_dimension(sets, "euclidean", scales,
                                       origin=np.array([xs[0]]),
                                       span=np.array([x_span]))

    if pooled is not None:
        fit, n_empty, n_used = pooled
        mean, stderr = fit.exponent, fit.stderr
        dims = np.array([fit.exponent])
    else:
        dims = np.array(per_path_dims, dtype=float)
        if len(dims) == 0:
            raise RuntimeError(f"the set was empty on every path (which={which})")
        mean = float(dims.mean())
        stderr = float(dims.std(ddof=1) / math.sqrt(len(dims))) if len(dims) > 1 else 0.0
    return DimensionReport(
        which=which, d=d, dims=dims, n_paths=n_paths, n_empty=n_empty,
        mean=mean, stderr=stderr,
        predicted=pred["predicted"], codim=pred["codim"], ambient=pred["ambient"],
        covered=pred["covered"], tol=eff_tol)


def _cloud_extent(cloud: np.ndarray) -> float:
    return float(np.linalg.norm(cloud.max(axis=0) - cloud.min(axis=0)))


def _cloud_ladder(cloud: np.ndarray, target_dim: float):
    """Fit scales for the image of a sampled curve in R^d.

    The sample chain has total length L inside a region of diameter D;
    it fills target_dim dimensions only between the crossover
    ~(D^target / L)^(1/(target-1)) (below which it looks like a curve)
    and D (above which one box swallows everything). Trimming handles
    the residual curvature at both ends."""
    D = _cloud_extent(cloud)
    L = float(np.linalg.norm(np.diff(cloud, axis=0), axis=1).sum())
    if target_dim > 1.0 and L > D:
        crossover = (D ** target_dim / L) ** (1.0 / (target_dim - 1.0))
    else:
        crossover = D * len(cloud) ** (-1.0 / max(target_dim, 1.0))
    return _halfoctave_ladder(D, 2.0 * crossover, trim=1)


# Near-miss allowance for crossing detection on a Hoelder-1/2 axis, in
# units of the one-cell increment rms. Excursions shorter than a cell are
# invisible to sign changes and their omission depresses fine-scale box
# counts like sqrt(cell/scale); admitting samples within half an rms of
# the level cancels that deficit. The value 0.5 was calibrated once on
# the exactly-known zero set of a discrete Brownian path (dimension 1/2)
# and is resolution-stable; it is not fitted to the field being measured.
NEAR_MISS_ALPHA = 0.5


def _level_hits_1d(vals: np.ndarray, z: np.ndarray, coords: np.ndarray,
                   tol: Optional[float], near_rms: float = 0.0) -> np.ndarray:
    """Level-set proxy along one axis, as (n, 1) coordinates.

    For a single component the sampled sign changes of u - z are used
    (plus samples within ``near_rms`` of the level, see NEAR_MISS_ALPHA).
    For d > 1 components there is no sign to change, so the tol-ball set
    is the fallback."""
    if vals.shape[1] == 1 and tol is None:
        f = vals[:, 0] - z[0]
        hit = np.zeros(len(f), dtype=bool)
        hit[:-1] = f[:-1] * f[1:] <= 0
        if near_rms > 0:
            hit |= np.abs(f) <= near_rms
        return coords[hit][:, None]
    eff = tol if tol is not None else 0.0
    hit = np.linalg.norm(vals - z, axis=1) <= eff
    return coords[hit][:, None]


def _level_cells_2d(sl: np.ndarray, z: np.ndarray, tol: Optional[float],
                    near_rms: float = 0.0):
    """Grid cells hit by the level z in a (n_t, n_x, d) block: for d = 1,
    cells whose corner values straddle z (with the near-miss allowance
    along space); else tol-ball nodes."""
    if sl.shape[2] == 1 and tol is None:
        f = sl[:, :, 0] - z[0]
        lo = np.minimum.reduce([f[:-1, :-1], f[:-1, 1:], f[1:, :-1], f[1:, 1:]])
        hi = np.maximum.reduce([f[:-1, :-1], f[:-1, 1:], f[1:, :-1], f[1:, 1:]])
        hit = (lo <= near_rms) & (hi >= -near_rms)
        return np.nonzero(hit)
    eff = tol if tol is not None else 0.0
    return np.nonzero(np.linalg.norm(sl - z, axis=-1) <= eff)


class _SliceStack(SeriesAtX):
    """Full spatial slices at strided steps in [t_lo, t_hi]; result is
    (stack (P, n_kept, nx+1, d), times)."""

    def __init__(self, t_lo, t_hi, stride, name="stack"):
        self.t_lo, self.t_hi, self.stride, self.name = t_lo, t_hi, stride, name

    def steps(self, grid):
        n_lo = int(math.ceil(self.t_lo / grid.dt - 1e-9))
        n_hi = int(math.floor(self.t_hi / grid.dt + 1e-9))
        self._steps = np.arange(n_lo, n_hi + 1, self.stride)
        self._dt = grid.dt
        return self._steps

    def start_batch(self, grid, path_indices):
        self._rows = []

    def collect(self, n, u_batch):
        self._rows.append(u_batch.copy())

    def take_batch(self):
        return np.stack(self._rows, axis=1)

    def merge(self, parts):
        self._merged = np.concatenate(parts, axis=0)

    def result(self):
        return self._merged, self._steps * self._dt
