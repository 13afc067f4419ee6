"""Exponential decay-rate estimation for recorded distance curves.

The model is log d(t) = intercept - rate * t + noise.  Ordinary least squares
gives the point estimate; the confidence interval comes from a moving-block
bootstrap of the residuals (block length ~ sqrt(n)), because distances
recorded along one coupled trajectory are autocorrelated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import FitError
from .rng import aux_generator


@dataclass
class FitResult:
    rate: float
    intercept: float
    ci_half: float
    residual: float
    n_used: int
    n_zero_excluded: int
    window: tuple[float, float]
    degenerate: bool = False


def _ols_slope(t: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    tbar = np.mean(t)
    ybar = np.mean(y)
    dt = t - tbar
    denom = float(np.dot(dt, dt))
    slope = float(np.dot(dt, y - ybar) / denom)
    return slope, float(ybar - slope * tbar)


def fit_exponential_rate(times, distances, window: Optional[tuple[float, float]] = None,
                         n_boot: int = 1000, block: Optional[int] = None,
                         seed: int = 0) -> FitResult:
    """Fit distance ~ exp(intercept - rate * t) on a time window.

    Zero distances cannot enter the log fit; they are excluded and counted.
    Raises FitError when fewer than 4 usable points remain, and returns a
    degenerate result when every distance in the window is zero.
    """
    t = np.asarray(times, dtype=float)
    d = np.asarray(distances, dtype=float)
    if t.shape != d.shape or t.ndim != 1:
        raise ValueError("times and distances must be equal-length 1-d arrays")
    if window is None:
        window = (t[-1] / 4.0, t[-1])
    lo, hi = float(window[0]), float(window[1])
    in_win = (t >= lo - 1e-15) & (t <= hi + 1e-15)
    t_w, d_w = t[in_win], d[in_win]
    if t_w.size and np.all(d_w == 0.0):
        return FitResult(rate=0.0, intercept=-math.inf, ci_half=0.0, residual=0.0,
                         n_used=0, n_zero_excluded=int(t_w.size), window=(lo, hi),
                         degenerate=True)
    pos = d_w > 0.0
    n_zero = int(np.sum(~pos))
    t_w, d_w = t_w[pos], d_w[pos]
    if t_w.size < 4:
        raise FitError(f"only {t_w.size} positive points in window [{lo}, {hi}]; need >= 4")
    y = np.log(d_w)
    slope, intercept = _ols_slope(t_w, y)
    fitted = intercept + slope * t_w
    resid = y - fitted
    rss = float(np.sqrt(np.mean(resid**2)))

    n = t_w.size
    if block is None:
        block = max(1, int(round(math.sqrt(n))))
    block = min(block, n)
    n_blocks_avail = n - block + 1
    k = math.ceil(n / block)
    rng = aux_generator(seed, tag=11)
    starts = rng.integers(0, n_blocks_avail, size=(n_boot, k))
    idx = (starts[:, :, None] + np.arange(block)[None, None, :]).reshape(n_boot, -1)[:, :n]
    resampled = fitted[None, :] + resid[idx]
    # vectorized OLS slope per bootstrap replicate
    dt = t_w - np.mean(t_w)
    denom = float(np.dot(dt, dt))
    slopes = (resampled - resampled.mean(axis=1, keepdims=True)) @ dt / denom
    q_lo, q_hi = np.quantile(slopes, [0.025, 0.975])
    ci_half = float(0.5 * (q_hi - q_lo))
    return FitResult(rate=-slope, intercept=intercept, ci_half=ci_half, residual=rss,
                     n_used=n, n_zero_excluded=n_zero, window=(lo, hi))
