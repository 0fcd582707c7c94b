"""Heat kernel on [0,1] with zero-flux (or absorbing) boundary conditions.

Two exact representations are kept side by side:

* an eigenfunction (cosine/sine) series, which converges fast for large
  times, and
* a method-of-images sum over the free-space Gaussian kernel, which
  converges fast for small times.

Both are truncated at a configurable tolerance and cross-checked against
each other. On top of the pointwise evaluator sit the integral
quantities used throughout the package: mass, the two-time product
identity, and the squared-kernel windows that control local noise
intensity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._quad import adaptive_gauss_legendre, graded_breakpoints

__all__ = [
    "KernelConfig", "DomainError", "TruncationError",
    "free_space", "eval_green", "kernel_mass", "semigroup_residual",
    "l2_window", "local_l2_lower", "l2q_upper",
    "free_space_gap", "envelope_constant", "kernel_check_rows",
]

_PI2 = math.pi * math.pi


class DomainError(ValueError):
    """An argument is outside the operation's admissible domain."""


class TruncationError(RuntimeError):
    """A series did not converge within the configured term budget."""


@dataclass(frozen=True)
class KernelConfig:
    """Evaluation policy for the Green kernel.

    method: "auto" switches between representations at t = 0.05 (images
    below, eigenseries above), "cosine-series" and "image-sum" force one.
    boundary: "neumann" (zero flux) or "dirichlet" (absorbing).
    """

    method: str = "auto"
    truncation_tol: float = 1e-12
    max_terms: int = 200_000
    boundary: str = "neumann"

    # Crossover time for method="auto". Each representation converges
    # slowly exactly where the other converges fast.
    SWITCH_T: float = 0.05

    def __post_init__(self):
        if self.method not in ("auto", "cosine-series", "image-sum"):
            raise DomainError(f"unknown method {self.method!r}")
        if self.boundary not in ("neumann", "dirichlet"):
            raise DomainError(f"unknown boundary {self.boundary!r}")
        if not (0 < self.truncation_tol < 1e-3):
            raise DomainError("truncation_tol must be in (0, 1e-3)")
        if self.max_terms < 8:
            raise DomainError("max_terms too small")


def free_space(t: float, r) -> np.ndarray:
    """Free-space heat kernel p_t(r) = (4 pi t)^(-1/2) exp(-r^2 / (4t))."""
    if t <= 0:
        raise DomainError(f"t must be positive, got {t}")
    r = np.asarray(r, dtype=float)
    return np.exp(-(r * r) / (4.0 * t)) / math.sqrt(4.0 * math.pi * t)


def _cosine_terms_needed(t: float, tol: float, max_terms: int) -> int:
    # Remainder after N terms is at most 2 e^{-(N+1)^2 pi^2 t} / (1 - q)
    # with q = e^{-(2N+3) pi^2 t} the geometric decay of term ratios.
    n = max(1, int(math.sqrt(max(-math.log(tol / 4.0), 1.0) / (_PI2 * t))))
    while True:
        q = math.exp(-(2 * n + 3) * _PI2 * t)
        rem = 2.0 * math.exp(-((n + 1) ** 2) * _PI2 * t) / max(1.0 - q, 1e-300)
        if rem <= 0.5 * tol:
            return n
        if n >= max_terms:
            raise TruncationError(
                f"eigenseries needs > {max_terms} terms at t={t:g} "
                f"(remainder bound {rem:.3e} > {0.5 * tol:.3e})")
        n = max(n + 1, int(1.1 * n))


def _image_terms_needed(t: float, tol: float, max_terms: int) -> int:
    # Terms with |n| > N contribute at most 8 p_t(2N - 2) in total.
    n = 1
    while 8.0 * math.exp(-((2 * n - 2) ** 2) / (4.0 * t)) / math.sqrt(4 * math.pi * t) > 0.5 * tol:
        n += 1
        if n > max_terms:
            raise TruncationError(f"image sum needs > {max_terms} images at t={t:g}")
    return n


def _eval_cosine(t, x, y, cfg: KernelConfig):
    n_terms = _cosine_terms_needed(t, cfg.truncation_tol, cfg.max_terms)
    neumann = cfg.boundary == "neumann"
    out = np.ones(np.broadcast(x, y).shape) if neumann else np.zeros(np.broadcast(x, y).shape)
    # Chunk the mode index so small-t evaluations stay in bounded memory.
    for lo in range(1, n_terms + 1, 4096):
        n = np.arange(lo, min(lo + 4096, n_terms + 1), dtype=float)
        damp = 2.0 * np.exp(-(n * n) * _PI2 * t)
        ax = n * math.pi * x[..., None]
        ay = n * math.pi * y[..., None]
        if neumann:
            out = out + (damp * np.cos(ax) * np.cos(ay)).sum(axis=-1)
        else:
            out = out + (damp * np.sin(ax) * np.sin(ay)).sum(axis=-1)
    return out


def _eval_images(t, x, y, cfg: KernelConfig):
    n_imgs = _image_terms_needed(t, cfg.truncation_tol, cfg.max_terms)
    shifts = 2.0 * np.arange(-n_imgs, n_imgs + 1, dtype=float)
    direct = free_space(t, (x - y)[..., None] - shifts)
    mirror = free_space(t, (x + y)[..., None] - shifts)
    if cfg.boundary == "neumann":
        return (direct + mirror).sum(axis=-1)
    return (direct - mirror).sum(axis=-1)


def eval_green(cfg: KernelConfig, t: float, x, y):
    """Green kernel G_t(x, y) on [0,1]; broadcasts over x and y.

    Arguments are canonicalised to (min, max) first so the symmetry
    G_t(x,y) = G_t(y,x) holds bit-exactly.
    """
    if t <= 0:
        raise DomainError(f"t must be positive, got {t}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x < -1e-12) or np.any(x > 1 + 1e-12) or np.any(y < -1e-12) or np.any(y > 1 + 1e-12):
        raise DomainError("x and y must lie in [0, 1]")
    scalar = x.ndim == 0 and y.ndim == 0
    lo, hi = np.minimum(x, y), np.maximum(x, y)

    method = cfg.method
    if method == "auto":
        method = "image-sum" if t < cfg.SWITCH_T else "cosine-series"
    if method == "cosine-series":
        out = _eval_cosine(t, lo, hi, cfg)
    else:
        out = _eval_images(t, lo, hi, cfg)
    return float(out) if scalar else out


def _spike_breaks(t: float, centers, lo: float = 0.0, hi: float = 1.0):
    """Initial panel edges resolving kernel spikes of width ~sqrt(t).

    Boundaries are included as centers because image mass piles up there
    at small times.
    """
    scale = min(math.sqrt(t), 0.25 * (hi - lo))
    cs = sorted(set(list(centers) + [lo, hi]))
    return graded_breakpoints(cs, scale, lo, hi)


def kernel_mass(cfg: KernelConfig, t: float, x: float, tol: float = 1e-9) -> float:
    """Quadrature of y -> G_t(x, y) over [0, 1]."""
    if t <= 0:
        raise DomainError(f"t must be positive, got {t}")
    return adaptive_gauss_legendre(lambda y: eval_green(cfg, t, x, y), 0.0, 1.0,
                                   tol=tol, breakpoints=_spike_breaks(t, [x]))


def semigroup_residual(cfg: KernelConfig, s: float, t: float, r: float,
                       x: float, y: float, tol: float = 1e-9) -> float:
    """|integral of G_{s-r}(y,.) G_{t-r}(x,.) - G_{s+t-2r}(x,y)|.

    The two-time product of kernels integrates to the kernel at the
    summed time; this returns the absolute defect of that identity under
    quadrature.
    """
    if not (r < s <= t):
        raise DomainError(f"need r < s <= t, got r={r}, s={s}, t={t}")
    lhs = adaptive_gauss_legendre(
        lambda v: eval_green(cfg, s - r, y, v) * eval_green(cfg, t - r, x, v),
        0.0, 1.0, tol=tol, breakpoints=_spike_breaks(s - r, [x, y]))
    rhs = eval_green(cfg, s + t - 2 * r, x, y)
    return abs(lhs - rhs)


def _sq_mass(cfg: KernelConfig, u: float, x: float, lo: float, hi: float,
             tol: float) -> float:
    """Inner integral of G_u(x, .)**2 over [lo, hi]."""
    return adaptive_gauss_legendre(
        lambda yy: eval_green(cfg, u, x, yy) ** 2, lo, hi, tol=tol,
        breakpoints=_spike_breaks(u, [x], lo, hi))


def l2_window(cfg: KernelConfig, a: float, b: float, x: float,
              tol: float = 1e-9) -> float:
    """Double integral of G_s(x,y)^2 over s in [a,b], y in [0,1].

    The time integrand behaves like s^(-1/2) near 0, so the outer
    quadrature runs in the variable sqrt(s).
    """
    if not (0 < a < b):
        raise DomainError(f"need 0 < a < b, got a={a}, b={b}")

    span = math.sqrt(b) - math.sqrt(a)

    def outer(tau):
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        # Inner absolute error is weighted by 2*tau*span in the outer
        # integral, so the inner tolerance may relax as tau -> 0.
        return np.array([2.0 * tt * _sq_mass(cfg, tt * tt, x, 0.0, 1.0,
                                             0.05 * tol / max(tt * span, 1e-6))
                         for tt in tau])

    return adaptive_gauss_legendre(outer, math.sqrt(a), math.sqrt(b), tol=tol)


def local_l2_lower(cfg: KernelConfig, t: float, eps: float, x: float,
                   tol: float = 1e-9) -> float:
    """Squared-kernel mass near the diagonal, normalised by sqrt(eps).

    Integrates G_{t-s}(x,y)^2 over the window s in [t-eps, t],
    y in [x - sqrt(eps), x + sqrt(eps)] and divides by sqrt(eps). The
    result is bounded below by a positive constant uniformly in eps; the
    free-space value is (2 pi)^(-1/2) ~ 0.3989.
    """
    if not (0 < eps <= t):
        raise DomainError(f"need 0 < eps <= t, got eps={eps}, t={t}")
    root = math.sqrt(eps)
    if x - root < -1e-12 or x + root > 1 + 1e-12:
        raise DomainError(f"window [x-sqrt(eps), x+sqrt(eps)] exits [0,1] at x={x}")
    lo, hi = max(x - root, 0.0), min(x + root, 1.0)

    def outer(tau):
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        return np.array([2.0 * tt * _sq_mass(cfg, tt * tt, x, lo, hi,
                                             0.05 * tol / max(tt * root, 1e-6))
                         for tt in tau])

    val = adaptive_gauss_legendre(outer, 0.0, root, tol=tol)
    return val / root


def l2q_upper(cfg: KernelConfig, t: float, eps: float, x: float, q: float,
              tol: float = 1e-9) -> float:
    """Windowed integral of G^(2q), normalised by eps^(3/2 - q).

    The integral of G_{t-s}(x,y)^(2q) over s in [t-eps, t], y in [0,1]
    diverges at q >= 3/2 and is otherwise O(eps^(3/2-q)); the returned
    ratio is bounded and stable in eps.
    """
    if not (0 < eps <= t):
        raise DomainError(f"need 0 < eps <= t, got eps={eps}, t={t}")
    if not (0 < q < 1.5):
        raise DomainError(f"exponent q must be in (0, 1.5), got {q} (integral diverges)")

    def inner(u, inner_tol):
        d_bnd = min(x, 1.0 - x)
        if u < 1e-13:
            # Spike narrower than float64 can resolve on [0,1]; boundary
            # images are exp(-d^2/u)-suppressed, so the free-space closed
            # form is exact to machine precision in the interior.
            if d_bnd < 12.0 * math.sqrt(u):
                raise DomainError(
                    f"x={x} too close to the boundary for the q-window at u={u:g}")
            return (4.0 * math.pi * u) ** (0.5 - q) / math.sqrt(2.0 * q)
        # Peak of G^(2q) fixes what absolute accuracy float64 can deliver.
        peak = (4.0 * math.pi * u) ** (-q)
        floor = peak * math.sqrt(u) * 1e-12 + 1e-15
        return adaptive_gauss_legendre(
            lambda yy: eval_green(cfg, u, x, yy) ** (2.0 * q), 0.0, 1.0,
            tol=max(inner_tol, floor), breakpoints=_spike_breaks(u, [x]))

    # Integrand ~ (t-s)^((1-2q)/2); substitute t - s = tau^kappa with kappa
    # large enough that the transformed integrand vanishes at tau = 0.
    kappa = max(2.0, 2.0 / (1.5 - q) + 1.0)
    upper = eps ** (1.0 / kappa)

    def g(taus):
        taus = np.atleast_1d(np.asarray(taus, dtype=float))
        out = np.empty_like(taus)
        for i, tau in enumerate(taus):
            u = tau ** kappa
            w = kappa * tau ** (kappa - 1.0)
            if u <= 0.0 or w == 0.0:
                out[i] = 0.0
                continue
            out[i] = w * inner(u, 0.05 * tol / max(w * upper, 1e-12))
        return out

    val = adaptive_gauss_legendre(g, 0.0, upper, tol=tol)
    return val / eps ** (1.5 - q)


# ---------------------------------------------------------------------------
# Diagnostics used by the invariant lattice and the kernel-check command.


def free_space_gap(cfg: KernelConfig, ts, xs) -> float:
    """max |G_t(x,y) - p_t(x-y)| over the lattice ts x xs x xs."""
    worst = 0.0
    xs = np.asarray(xs, dtype=float)
    xg, yg = np.meshgrid(xs, xs, indexing="ij")
    for t in ts:
        gap = np.abs(eval_green(cfg, t, xg, yg) - free_space(t, xg - yg))
        worst = max(worst, float(gap.max()))
    return worst


def envelope_constant(cfg: KernelConfig, ts, xs) -> float:
    """Empirical constant of the Gaussian envelope with exponent rate 1/2.

    Returns max over the lattice of
    G_t(x,y) * sqrt(2 pi t) * exp(|x-y|^2 / (2t)), evaluated in log space;
    recorded as a diagnostic only, never asserted (the rate-1/2 envelope
    fails for the dominant image term as t -> 0 at fixed |x-y|, so the
    constant grows without bound).
    """
    worst = -np.inf
    xs = np.asarray(xs, dtype=float)
    xg, yg = np.meshgrid(xs, xs, indexing="ij")
    for t in ts:
        g = eval_green(cfg, t, xg, yg)
        pos = g > 0
        log_ratio = (np.log(g, where=pos, out=np.full_like(g, -np.inf))
                     + 0.5 * math.log(2 * math.pi * t)
                     + (xg - yg) ** 2 / (2.0 * t))
        worst = max(worst, float(log_ratio[pos].max()))
    return float(np.exp(worst))


def kernel_check_rows(cfg: KernelConfig, nx: int = 100, nt: int = 50,
                      n_semigroup: int = 1000, seed: int = 0) -> list[dict]:
    """Run the kernel invariant lattice; returns CSV-ready row dicts.

    Columns: check, t, x, y, value, bound, pass. Covers positivity, mass,
    symmetry, method agreement, the two-time product identity and the
    windowed L2 estimates.
    """
    rows = []
    xs = np.linspace(0.0, 1.0, nx)
    ts = np.geomspace(1e-6, 10.0, nt)
    neumann = cfg.boundary == "neumann"

    xg, yg = np.meshgrid(xs, xs, indexing="ij")
    min_pos, min_arg = np.inf, (0.0, 0.0, 0.0)
    underflow_ok = True
    max_sym = 0.0
    max_agree = 0.0
    cfg_cos = KernelConfig(method="cosine-series", truncation_tol=cfg.truncation_tol,
                           max_terms=cfg.max_terms, boundary=cfg.boundary)
    cfg_img = KernelConfig(method="image-sum", truncation_tol=cfg.truncation_tol,
                           max_terms=cfg.max_terms, boundary=cfg.boundary)
    for t in ts:
        g = eval_green(cfg, t, xg, yg)
        interior = (xg > 1e-9) & (xg < 1 - 1e-9) & (yg > 1e-9) & (yg < 1 - 1e-9)
        vals = g if neumann else np.where(interior, g, np.inf)
        idx = np.unravel_index(np.argmin(vals), vals.shape)
        if vals[idx] < min_pos:
            min_pos, min_arg = float(vals[idx]), (t, xs[idx[0]], xs[idx[1]])
        # A zero is acceptable only where the true value underflows
        # float64 (Gaussian exponent beyond ~745).
        zeros = (vals == 0.0) & ((xg - yg) ** 2 / (4.0 * t) < 700.0)
        if np.any(zeros) or np.any(vals < 0.0):
            underflow_ok = False
        max_sym = max(max_sym, float(np.abs(g - g.T).max()))
        max_agree = max(max_agree, float(np.abs(
            eval_green(cfg_cos, t, xg, yg) - eval_green(cfg_img, t, xg, yg)).max()))
    rows.append({"check": "positivity", "t": min_arg[0], "x": min_arg[1], "y": min_arg[2],
                 "value": min_pos, "bound": 0.0,
                 "pass": underflow_ok and min_pos >= 0.0})
    rows.append({"check": "symmetry", "t": np.nan, "x": np.nan, "y": np.nan,
                 "value": max_sym, "bound": 0.0, "pass": max_sym == 0.0})
    agree_bound = 10.0 * cfg.truncation_tol
    rows.append({"check": "method-agreement", "t": np.nan, "x": np.nan, "y": np.nan,
                 "value": max_agree, "bound": agree_bound, "pass": max_agree <= agree_bound})

    if neumann:
        worst_mass, worst_arg = 0.0, (0.0, 0.0)
        for t in ts:
            for x in xs:
                dev = abs(kernel_mass(cfg, t, x) - 1.0)
                if dev > worst_mass:
                    worst_mass, worst_arg = dev, (t, x)
        rows.append({"check": "mass", "t": worst_arg[0], "x": worst_arg[1], "y": np.nan,
                     "value": worst_mass, "bound": 1e-8, "pass": worst_mass <= 1e-8})

    rng = np.random.default_rng(seed)
    worst_semi = 0.0
    worst_tuple = (0.0,) * 5
    for _ in range(n_semigroup):
        r = rng.uniform(0.0, 0.4)
        s = r + rng.uniform(1e-3, 0.5)
        t = s + rng.uniform(0.0, 0.5)
        x, y = rng.uniform(0.02, 0.98, size=2)
        res = semigroup_residual(cfg, s, t, r, x, y)
        mag = eval_green(cfg, s + t - 2 * r, x, y)
        rel = res / max(abs(mag), 1.0)
        if rel > worst_semi:
            worst_semi, worst_tuple = rel, (s, t, r, x, y)
    rows.append({"check": "semigroup", "t": worst_tuple[1], "x": worst_tuple[3],
                 "y": worst_tuple[4], "value": worst_semi, "bound": 1e-6,
                 "pass": worst_semi <= 1e-6})

    for eps in (1e-2, 1e-3, 1e-4):
        ratio = local_l2_lower(cfg, 0.5, eps, 0.5)
        rows.append({"check": f"local-l2-lower-eps={eps:g}", "t": 0.5, "x": 0.5,
                     "y": np.nan, "value": ratio, "bound": 0.3, "pass": ratio >= 0.3})
    for q in (0.5, 1.0, 1.25):
        ratios = [l2q_upper(cfg, 0.5, eps, 0.5, q) for eps in (1e-2, 1e-3, 1e-4)]
        spread = max(ratios) / min(ratios) - 1.0
        rows.append({"check": f"l2q-stability-q={q:g}", "t": 0.5, "x": 0.5, "y": np.nan,
                     "value": spread, "bound": 0.10, "pass": spread <= 0.10})
    win = l2_window(cfg, 0.01, 0.02, 0.5)
    bound = (0.02 - 0.01) / (math.sqrt(0.02) + math.sqrt(0.01))
    rows.append({"check": "l2-window", "t": np.nan, "x": 0.5, "y": np.nan,
                 "value": win, "bound": bound, "pass": win <= bound})

    # Diagnostic rows, never gating: free-space proximity and the
    # empirical rate-1/2 envelope constant.
    small_ts = np.geomspace(1e-6, 1e-3, 8)
    interior = np.linspace(0.1, 0.9, 17)
    gap_small = free_space_gap(cfg, small_ts, interior)
    rows.append({"check": "free-space-gap-small-t", "t": 1e-3, "x": np.nan, "y": np.nan,
                 "value": gap_small, "bound": 1e-3, "pass": gap_small <= 1e-3})
    gap_full = free_space_gap(cfg, np.geomspace(1e-6, 0.1, 12), interior)
    rows.append({"check": "free-space-gap-informational", "t": 0.1, "x": np.nan, "y": np.nan,
                 "value": gap_full, "bound": np.nan, "pass": True})
    env = envelope_constant(cfg, np.geomspace(1e-4, 0.1, 8), interior)
    rows.append({"check": "envelope-constant-informational", "t": 0.1, "x": np.nan,
                 "y": np.nan, "value": env, "bound": np.nan, "pass": True})
    return rows
