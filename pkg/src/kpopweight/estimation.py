"""Weighted outcome estimates with conservative design-based errors.

The calibration weights are treated as sampling weights in a
single-stage with-replacement linearized variance; no calibration
(residual-based) adjustment is attempted, so the standard errors are
conservative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_Z_975 = 1.959964


@dataclass(frozen=True)
class EstimateResult:
    estimate: float
    se: float
    ci_low: float
    ci_high: float
    n_effective: float


def weighted_mean(y: np.ndarray, w: np.ndarray) -> EstimateResult:
    """Weighted mean with the weights-as-sampling-weights standard error.

    se^2 = N_s/(N_s - 1) * sum w_i^2 (y_i - mu)^2; a 95% normal-theory
    interval is attached.
    """
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if y.shape != w.shape:
        raise ValueError(f"length mismatch: y {y.shape}, w {w.shape}")
    n = len(y)
    if n < 2:
        raise ValueError("need at least 2 observations for a standard error")
    mu = float(w @ y)
    se = float(np.sqrt(n / (n - 1) * np.sum(w**2 * (y - mu) ** 2)))
    return EstimateResult(
        estimate=mu,
        se=se,
        ci_low=mu - _Z_975 * se,
        ci_high=mu + _Z_975 * se,
        n_effective=float(1.0 / np.sum(w**2)),
    )


def margin_estimate(p_d: np.ndarray, p_r: np.ndarray, w: np.ndarray) -> EstimateResult:
    """Weighted two-party margin (D minus R) in percentage points."""
    base = weighted_mean(np.asarray(p_d, dtype=float) - np.asarray(p_r, dtype=float), w)
    return EstimateResult(
        estimate=100.0 * base.estimate,
        se=100.0 * base.se,
        ci_low=100.0 * base.ci_low,
        ci_high=100.0 * base.ci_high,
        n_effective=base.n_effective,
    )
