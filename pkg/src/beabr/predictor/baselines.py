"""Rule-based delay predictors and error metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HM_WINDOW = 5  # throughput samples feeding the harmonic mean


def harmonic_mean(values) -> float:
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError("harmonic mean needs at least one sample")
    if any(v <= 0 for v in vals):
        raise ValueError("harmonic mean needs positive samples")
    return len(vals) / sum(1.0 / v for v in vals)


def hm_predict(throughputs_Bps, d_star_bytes: float, window: int = HM_WINDOW) -> float:
    """Delay estimate from the harmonic mean of the last few throughputs."""
    recent = list(throughputs_Bps)[-window:]
    return d_star_bytes / harmonic_mean(recent)


def robust_hm_predict(throughputs_Bps, d_star_bytes: float, error_history,
                      window: int = HM_WINDOW) -> float:
    """Harmonic-mean delay inflated by the recent worst relative error.

    `error_history` holds past |predicted - realized| / realized ratios; with
    fewer than `window` of them this falls back to the plain estimate. Always
    >= hm_predict for the same inputs.
    """
    base = hm_predict(throughputs_Bps, d_star_bytes, window)
    errors = list(error_history)[-window:]
    if len(errors) < window:
        return base
    return base * (1.0 + max(errors))


@dataclass(frozen=True)
class EvalMetrics:
    mae: float
    rmse: float
    mape_pct: float
    mape_excluded: int = 0  # zero-target points left out of the MAPE

    def __iter__(self):
        return iter((self.mae, self.rmse, self.mape_pct))


def eval_metrics(predictions, targets) -> EvalMetrics:
    """MAE, RMSE, and MAPE (percent); zero targets are excluded from the MAPE
    with the exclusion count reported."""
    pred = np.asarray(predictions, dtype=np.float64)
    tgt = np.asarray(targets, dtype=np.float64)
    if pred.shape != tgt.shape or pred.size == 0:
        raise ValueError("predictions and targets must be equal-length and nonempty")
    err = pred - tgt
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err * err)))
    nz = tgt != 0
    excluded = int(np.sum(~nz))
    if np.any(nz):
        mape = float(100.0 * np.mean(np.abs(err[nz] / tgt[nz])))
    else:
        mape = float("nan")
    return EvalMetrics(mae, rmse, mape, excluded)
