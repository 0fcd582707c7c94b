"""Least-squares scaling fits on log-log data, shared across modules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class FitError(ValueError):
    """Raised when a scaling fit is degenerate or under-determined."""


@dataclass(frozen=True)
class ScalingFit:
    """Result of a power-law fit ``y ~ C * x**exponent``.

    ``exponent`` and ``intercept`` are the slope and offset of the
    least-squares line through ``(log x, log y)``; ``stderr`` is the
    standard error of the slope.
    """

    exponent: float
    intercept: float
    stderr: float
    r_squared: float
    scales: tuple = field(default=())

    def __post_init__(self):
        if len(self.scales) < 3:
            raise FitError("scaling fit needs at least 3 scales, got %d" % len(self.scales))
        if not np.isfinite(self.stderr):
            raise FitError("scaling fit produced a non-finite standard error")


def loglog_fit(x, y, min_points: int = 3) -> ScalingFit:
    """Fit log(y) = exponent * log(x) + intercept.

    Raises FitError for fewer than ``min_points`` usable points or
    non-positive data.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise FitError("x and y must be equal-length 1-d arrays")
    if x.size < min_points:
        raise FitError(f"need at least {min_points} scales, got {x.size}")
    if np.any(x <= 0) or np.any(y <= 0) or not np.all(np.isfinite(x) & np.isfinite(y)):
        raise FitError("log-log fit requires positive finite data")

    lx, ly = np.log(x), np.log(y)
    n = lx.size
    vx = lx - lx.mean()
    sxx = float(vx @ vx)
    if sxx == 0.0:
        raise FitError("degenerate fit: all scales identical")
    slope = float(vx @ (ly - ly.mean())) / sxx
    intercept = float(ly.mean() - slope * lx.mean())
    resid = ly - (slope * lx + intercept)
    ss_res = float(resid @ resid)
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    if n > 2:
        stderr = float(np.sqrt(ss_res / (n - 2) / sxx))
    else:
        stderr = 0.0
    return ScalingFit(exponent=slope, intercept=intercept, stderr=stderr,
                      r_squared=r2, scales=tuple(float(v) for v in x))
