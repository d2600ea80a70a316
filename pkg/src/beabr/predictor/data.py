"""History windows, delay datasets, CSV round-trip, and synthetic training data."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

CSV_HEADER = "chunk_bytes,throughput_Bps,sample_time_s,target_delay_s"


def sample_midpoint(start_s: float, download_s: float) -> float:
    """Timestamp assigned to a throughput sample: the download's midpoint."""
    if download_s < 0:
        raise ValueError("download duration must be >= 0")
    return start_s + 0.5 * download_s


@dataclass(frozen=True)
class HistorySample:
    chunk_bytes: float
    throughput_Bps: float
    sample_time_s: float  # midpoint of the chunk's download

    def __post_init__(self):
        if self.chunk_bytes <= 0 or self.throughput_Bps <= 0:
            raise ValueError("chunk size and throughput must be > 0")


@dataclass(frozen=True)
class HistoryWindow:
    """Exactly T time-ordered samples plus the decision time `now`."""

    samples: tuple[HistorySample, ...]
    now_s: float

    def __post_init__(self):
        if not self.samples:
            raise ValueError("window needs at least one sample")
        times = [s.sample_time_s for s in self.samples]
        if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
            raise ValueError("sample times must be strictly increasing")
        if self.now_s < times[-1]:
            raise ValueError("`now` must not precede the last sample")

    def __len__(self) -> int:
        return len(self.samples)

    def features(self) -> np.ndarray:
        return np.array([[s.chunk_bytes, s.throughput_Bps] for s in self.samples])

    def throughputs(self) -> list[float]:
        return [s.throughput_Bps for s in self.samples]


def time_deltas(window: HistoryWindow) -> np.ndarray:
    """Ages of the samples at decision time: all >= 0, strictly decreasing."""
    return np.array([window.now_s - s.sample_time_s for s in window.samples])


@dataclass
class DelayDataset:
    """Raw-unit window tensors: x [N,T,2], deltas [N,T], d_star [N], target_s [N]."""

    x: np.ndarray
    deltas: np.ndarray
    d_star: np.ndarray
    target_s: np.ndarray

    def __post_init__(self):
        n = len(self.target_s)
        if not (len(self.x) == len(self.deltas) == len(self.d_star) == n):
            raise ValueError("dataset arrays disagree on the number of windows")
        if np.any(self.target_s <= 0):
            raise ValueError("target delays must be > 0")

    def __len__(self) -> int:
        return len(self.target_s)

    @property
    def history_len(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "DelayDataset":
        return DelayDataset(self.x[idx], self.deltas[idx], self.d_star[idx], self.target_s[idx])


def split_dataset(ds: DelayDataset, seed: int = 0,
                  fractions=(0.8, 0.1, 0.1)) -> tuple[DelayDataset, DelayDataset, DelayDataset]:
    """Shuffled train/validation/test split."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ds))
    n_train = int(len(ds) * fractions[0])
    n_val = int(len(ds) * fractions[1])
    return (ds.subset(order[:n_train]),
            ds.subset(order[n_train:n_train + n_val]),
            ds.subset(order[n_train + n_val:]))


def save_dataset_csv(ds: DelayDataset, path: str | os.PathLike) -> None:
    """One window = T history rows plus a query row.

    History rows carry (chunk_bytes, throughput_Bps, sample_time_s) with the
    target field zero; the query row carries the requested size, zero
    throughput, the decision time, and the realized delay.
    """
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for i in range(len(ds)):
            times = -ds.deltas[i]  # encode ages as times relative to now = 0
            for t in range(ds.history_len):
                fh.write(f"{ds.x[i, t, 0]:.6f},{ds.x[i, t, 1]:.6f},{times[t]:.6f},0\n")
            fh.write(f"{ds.d_star[i]:.6f},0,0.000000,{ds.target_s[i]:.9f}\n")
    os.replace(tmp, path)


def load_dataset_csv(path: str | os.PathLike, history_len: int) -> DelayDataset:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if parts[0].lower() == "chunk_bytes":
                continue
            rows.append([float(p) for p in parts[:4]])
    group = history_len + 1
    if len(rows) % group != 0:
        raise ValueError(
            f"{path}: expected groups of {group} rows (T history + 1 query), got {len(rows)} rows"
        )
    n = len(rows) // group
    x = np.empty((n, history_len, 2))
    deltas = np.empty((n, history_len))
    d_star = np.empty(n)
    target = np.empty(n)
    for i in range(n):
        block = rows[i * group:(i + 1) * group]
        hist, query = block[:-1], block[-1]
        now = query[2]
        for t, (size, thr, when, _tgt) in enumerate(hist):
            x[i, t, 0] = size
            x[i, t, 1] = thr
            deltas[i, t] = now - when
        d_star[i] = query[0]
        target[i] = query[3]
    return DelayDataset(x, deltas, d_star, target)


# -- synthetic data ------------------------------------------------------------

_SLOWSTART_BYTES = 250_000.0  # small requests see proportionally less bandwidth


def _effective_throughput(base_Bps: float, size_bytes: float) -> float:
    return base_Bps * size_bytes / (size_bytes + _SLOWSTART_BYTES)


def synthetic_dataset(n_windows: int, history_len: int = 8, seed: int = 0,
                      regime_means_Bps=(4e5, 1.2e6, 3e6), rho: float = 0.92,
                      rel_sigma: float = 0.10, switch_prob: float = 0.05,
                      noise: float = 0.04) -> DelayDataset:
    """Regime-switching AR(1) sessions with size-dependent effective throughput.

    Realized per-chunk throughput is the session's AR(1) base level scaled by
    a slow-start-like factor of the requested size plus multiplicative noise;
    the recorded history sample is exactly what a client would measure
    (size / realized delay). Harmonic-mean prediction is blind to the size
    effect, which is what a size-aware model is supposed to learn.
    """
    rng = np.random.default_rng(seed)
    T = history_len
    x = np.empty((n_windows, T, 2))
    deltas = np.empty((n_windows, T))
    d_star = np.empty(n_windows)
    target = np.empty(n_windows)
    made = 0
    while made < n_windows:
        # one synthetic session yields several overlapping windows
        regime = int(rng.integers(len(regime_means_Bps)))
        base = regime_means_Bps[regime] * rng.uniform(0.7, 1.3)
        session_len = T + int(rng.integers(4, 24))
        t_clock = 0.0
        hist: list[tuple[float, float, float]] = []
        for _ in range(session_len):
            if rng.random() < switch_prob:
                regime = int(rng.integers(len(regime_means_Bps)))
            mu = regime_means_Bps[regime]
            base = mu + rho * (base - mu) + rel_sigma * mu * rng.standard_normal()
            base = max(base, 2e4)
            size = float(np.exp(rng.uniform(np.log(6e4), np.log(1.1e6))))
            eff = _effective_throughput(base, size) * float(np.exp(noise * rng.standard_normal()))
            delay = size / eff
            midpoint = sample_midpoint(t_clock, delay)
            hist.append((size, size / delay, midpoint))
            t_clock += delay + float(rng.uniform(0.0, 1.5))
            if len(hist) >= T:
                # the query chunk is downloaded next, at the post-evolution base
                qsize = float(np.exp(rng.uniform(np.log(6e4), np.log(1.1e6))))
                qeff = _effective_throughput(base, qsize) * float(np.exp(noise * rng.standard_normal()))
                window = hist[-T:]
                x[made, :, 0] = [h[0] for h in window]
                x[made, :, 1] = [h[1] for h in window]
                deltas[made] = [t_clock - h[2] for h in window]
                d_star[made] = qsize
                target[made] = qsize / qeff
                made += 1
                if made == n_windows:
                    break
    return DelayDataset(x, deltas, d_star, target)
