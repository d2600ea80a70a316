"""QoE scores, wastage, rewards, and the fluctuation-adaptive weight.

Two families of scores live here:
  - session-level scores over a recorded ledger (`qoe_at_departure`,
    `qoe_lin`, `qoe_log`, `session_reward`), and
  - planning-window scores over predicted dynamics (`window_qoe`,
    `window_was`, `adaptive_reward`), which delegate to the rollout kernel.

Window normalizers: quality and variation are true means over the chunks
actually planned; the rebuffer term and the buffered-volume average divide by
the wall-clock width the plan actually covers (sum of predicted download and
wait times), which is the only choice under which a constant S(t)=c yields a
window average of exactly c.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernel
from .media import QualityMap, QualityMode, VideoManifest, quality


@dataclass(frozen=True)
class QoEWeights:
    alpha1: float = 1.0
    alpha2: float = 600.0
    alpha3: float = 1.0
    mode: QualityMode = field(default_factory=QualityMode)

    def __post_init__(self):
        if min(self.alpha1, self.alpha2, self.alpha3) < 0:
            raise ValueError("QoE weights must be non-negative")

    @staticmethod
    def linear_default() -> "QoEWeights":
        return QoEWeights(1.0, 600.0, 1.0, QualityMode(QualityMap.LINEAR))

    @staticmethod
    def log_default(r_min_kbps: float) -> "QoEWeights":
        return QoEWeights(1.0, 266.0, 1.0, QualityMode(QualityMap.LOGARITHMIC, r_min_kbps))


@dataclass(frozen=True)
class RewardConfig:
    """Knobs of the wastage-aware planning objective."""

    beta_per_byte: float | None = None  # wastage weight; None = ladder-scaled default
    loss_ratio: float = 0.9             # fraction of the step-max QoE any plan must retain
    cv_window: int = 5                  # throughput samples feeding the adaptive weight

    def __post_init__(self):
        if self.beta_per_byte is not None and self.beta_per_byte < 0:
            raise ValueError("beta must be >= 0")
        if not 0.0 <= self.loss_ratio <= 1.0:
            raise ValueError("loss_ratio must be in [0, 1]")
        if self.cv_window < 2:
            raise ValueError("cv_window must be >= 2")


def default_beta(manifest: VideoManifest) -> float:
    """Wastage weight making ten top-bitrate chunks cost one quality unit."""
    top = manifest.size_matrix()[:, -1].mean()
    return 1.0 / (10.0 * top)


def rebuffer_time(download_s: float, bvt_s: float) -> float:
    """Stall caused by one download: (D - L)_+ ."""
    if download_s < 0 or bvt_s < 0:
        raise ValueError("download and buffer times must be >= 0")
    return max(download_s - bvt_s, 0.0)


# -- session ledger -----------------------------------------------------------


@dataclass(frozen=True)
class ChunkRecord:
    chunk_index: int
    bitrate_kbps: float
    size_bytes: int
    download_s: float
    rebuffer_s: float   # 0 for the first chunk; its stall is startup delay
    wait_s: float


@dataclass
class SessionLedger:
    """Per-chunk outcome of one session plus departure-time bookkeeping."""

    chunks: list[ChunkRecord] = field(default_factory=list)
    viewed_count: int = 0              # chunks fully watched before departure
    elapsed_s: float = 0.0             # wall-clock departure time
    startup_delay_s: float = 0.0
    bdv_at_departure_bytes: float = 0.0
    r_min_kbps: float = 0.0

    @property
    def downloaded_count(self) -> int:
        return len(self.chunks)

    def validate(self, total_chunks: int | None = None) -> None:
        if not 0 <= self.viewed_count <= self.downloaded_count:
            raise ValueError("need viewed <= downloaded")
        if total_chunks is not None and self.downloaded_count > total_chunks:
            raise ValueError("downloaded more chunks than the video has")
        if any(c.rebuffer_s < 0 for c in self.chunks):
            raise ValueError("rebuffer times must be >= 0")

    def rebuffer_total_s(self) -> float:
        return sum(c.rebuffer_s for c in self.chunks)


def qoe_at_departure(ledger: SessionLedger, t0: float, weights: QoEWeights) -> float:
    """Departure-time QoE: mean viewed quality, stall share of wall time,
    mean viewed-chunk quality switch.

    Only viewed chunks contribute quality and variation; every downloaded
    chunk's stall counts. Degenerate sessions: with one viewed chunk the
    variation term is 0; with none the quality term is 0 as well.
    """
    if t0 <= 0:
        raise ValueError("departure time must be > 0")
    k1 = ledger.viewed_count
    k2 = ledger.downloaded_count
    qs = [quality(c.bitrate_kbps, weights.mode) for c in ledger.chunks[:k1]]
    quality_term = weights.alpha1 * (sum(qs) / k1) if k1 >= 1 else 0.0
    reb_term = weights.alpha2 * sum(c.rebuffer_s for c in ledger.chunks[:k2]) / t0
    if k1 >= 2:
        var_term = weights.alpha3 * (
            sum(abs(b - a) for a, b in zip(qs, qs[1:])) / (k1 - 1)
        )
    else:
        var_term = 0.0
    return quality_term - reb_term - var_term


def qoe_lin(ledger: SessionLedger, weights: QoEWeights | None = None) -> float:
    """Summed linear-quality score: bitrates minus stalls minus switches."""
    w = weights or QoEWeights.linear_default()
    k1 = ledger.viewed_count
    rates = [c.bitrate_kbps for c in ledger.chunks[:k1]]
    score = w.alpha1 * sum(rates)
    score -= w.alpha2 * ledger.rebuffer_total_s()
    score -= w.alpha3 * sum(abs(b - a) for a, b in zip(rates, rates[1:]))
    return score


def qoe_log(ledger: SessionLedger, weights: QoEWeights | None = None) -> float:
    """Summed log-quality score; switching measured in log-bitrate space."""
    r_min = ledger.r_min_kbps
    if r_min <= 0:
        raise ValueError("ledger.r_min_kbps must be set for the log score")
    w = weights or QoEWeights.log_default(r_min)
    k1 = ledger.viewed_count
    logs = [math.log(c.bitrate_kbps) for c in ledger.chunks[:k1]]
    score = w.alpha1 * sum(v - math.log(r_min) for v in logs)
    score -= w.alpha2 * ledger.rebuffer_total_s()
    score -= w.alpha3 * sum(abs(b - a) for a, b in zip(logs, logs[1:]))
    return score


def session_reward(ledger: SessionLedger, t0: float, weights: QoEWeights,
                   beta_per_byte: float) -> float:
    """Departure QoE minus the wastage penalty on the bytes left behind."""
    return qoe_at_departure(ledger, t0, weights) - beta_per_byte * ledger.bdv_at_departure_bytes


# -- adaptive weighting -----------------------------------------------------------


def fluctuation_gamma(throughputs_Bps) -> float:
    """Bandwidth-volatility discount in (0, 1]: exp(-CV) of recent samples.

    CV uses the sample (n-1) standard deviation over the mean, so the value
    is invariant under rescaling all samples. Fewer than two samples is the
    cold start: gamma = 1.
    """
    samples = [float(b) for b in throughputs_Bps]
    if len(samples) < 2:
        return 1.0
    if any(b <= 0 for b in samples):
        raise ValueError("throughput samples must be > 0")
    if all(b == samples[0] for b in samples):
        return 1.0  # keeps gamma exactly 1 despite rounding in the mean
    mean = sum(samples) / len(samples)
    var = sum((b - mean) ** 2 for b in samples) / (len(samples) - 1)
    cv = math.sqrt(var) / mean
    return math.exp(-cv)


# -- planning-window scores -----------------------------------------------------------


@dataclass(frozen=True)
class PlanWindow:
    """Everything the window ops need to know about chunks k..k+N.

    Rows of `sizes_bytes` / `delays_s` follow the planned chunks in order;
    columns follow the bitrate ladder. `prev_quality` is the quality of the
    chunk before the window (None at session start: the first planned chunk
    then carries no switching penalty).
    """

    sizes_bytes: np.ndarray
    delays_s: np.ndarray
    quality_units: np.ndarray
    chunk_duration_s: float
    buffer_cap_s: float
    start_bvt_s: float
    start_bdv_bytes: float
    prev_quality: float | None = None

    def __post_init__(self):
        sizes = np.ascontiguousarray(self.sizes_bytes, dtype=np.float64)
        delays = np.ascontiguousarray(self.delays_s, dtype=np.float64)
        qual = np.ascontiguousarray(self.quality_units, dtype=np.float64)
        if sizes.ndim != 2 or delays.shape != sizes.shape:
            raise ValueError("sizes and delays must be matching [chunks, levels] matrices")
        if qual.shape != (sizes.shape[1],):
            raise ValueError("quality vector must have one entry per ladder level")
        if not (np.all(np.isfinite(delays)) and np.all(delays > 0)):
            raise ValueError("every (chunk, bitrate) needs a finite positive delay prediction")
        if not np.all(sizes > 0):
            raise ValueError("chunk sizes must be positive")
        object.__setattr__(self, "sizes_bytes", sizes)
        object.__setattr__(self, "delays_s", delays)
        object.__setattr__(self, "quality_units", qual)

    @property
    def n_chunks(self) -> int:
        return self.sizes_bytes.shape[0]

    @property
    def n_levels(self) -> int:
        return self.sizes_bytes.shape[1]


def _as_plan_arrays(plan_levels, plan_waits, window: PlanWindow):
    levels = np.atleast_2d(np.asarray(plan_levels, dtype=np.int32))
    waits = np.atleast_2d(np.asarray(plan_waits, dtype=np.float64))
    if levels.shape != waits.shape or levels.shape[1] != window.n_chunks:
        raise ValueError("plan must carry one (level, wait) pair per window chunk")
    if levels.min() < 0 or levels.max() >= window.n_levels:
        raise ValueError("plan bitrate index outside the ladder")
    return levels, waits


def window_scores(plan_levels, plan_waits, window: PlanWindow,
                  weights: QoEWeights) -> tuple[np.ndarray, np.ndarray]:
    """(expected QoE, expected mean buffered volume) per candidate plan."""
    levels, waits = _as_plan_arrays(plan_levels, plan_waits, window)
    has_prev = window.prev_quality is not None
    return kernel.evaluate_plans(
        levels, waits, window.sizes_bytes, window.delays_s, window.quality_units,
        window.chunk_duration_s, window.buffer_cap_s,
        window.start_bvt_s, window.start_bdv_bytes,
        window.prev_quality if has_prev else 0.0, has_prev,
        weights.alpha1, weights.alpha2, weights.alpha3,
    )


def window_qoe(plan_levels, plan_waits, window: PlanWindow, weights: QoEWeights) -> float:
    qoe, _ = window_scores(plan_levels, plan_waits, window, weights)
    return float(qoe[0]) if qoe.size == 1 else qoe


def window_was(plan_levels, plan_waits, window: PlanWindow,
               weights: QoEWeights | None = None) -> float:
    _, was = window_scores(plan_levels, plan_waits, window, weights or QoEWeights.linear_default())
    return float(was[0]) if was.size == 1 else was


def adaptive_reward(plan_levels, plan_waits, window: PlanWindow, weights: QoEWeights,
                    gamma: float, beta_per_byte: float) -> float:
    """Window QoE minus the volatility-discounted wastage penalty."""
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must be in (0, 1]")
    if beta_per_byte < 0:
        raise ValueError("beta must be >= 0")
    qoe, was = window_scores(plan_levels, plan_waits, window, weights)
    reward = qoe - gamma * beta_per_byte * was
    return float(reward[0]) if reward.size == 1 else reward
