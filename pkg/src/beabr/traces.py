"""Network throughput traces and trace-driven download timing."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np


class TraceError(ValueError):
    pass


class TraceExhausted(TraceError):
    """A non-looping trace ended before the requested transfer finished."""


@dataclass(frozen=True)
class NetworkTrace:
    """Piecewise-constant throughput over time.

    Each point (t_i, b_i) sets the throughput to b_i bytes/second on
    [t_i, t_{i+1}). The final point extends for one trailing interval equal
    to the preceding spacing (1 s for a single-point trace); with loop=True
    the trace then wraps with that period.
    """

    times_s: tuple[float, ...]
    throughputs_Bps: tuple[float, ...]
    loop: bool = True
    name: str = field(default="trace", compare=False)

    def __post_init__(self):
        times = tuple(float(t) for t in self.times_s)
        thr = tuple(float(b) for b in self.throughputs_Bps)
        if not times or len(times) != len(thr):
            raise TraceError("trace needs equal, nonzero numbers of times and throughputs")
        if any(b <= 0 for b in thr):
            raise TraceError("throughputs must be > 0")
        if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
            raise TraceError("timestamps must be strictly increasing")
        object.__setattr__(self, "times_s", times)
        object.__setattr__(self, "throughputs_Bps", thr)

    @property
    def start_s(self) -> float:
        return self.times_s[0]

    @property
    def end_s(self) -> float:
        tail = self.times_s[-1] - self.times_s[-2] if len(self.times_s) > 1 else 1.0
        return self.times_s[-1] + tail

    @property
    def period_s(self) -> float:
        return self.end_s - self.start_s

    def throughput_at(self, t: float) -> float:
        """Throughput in bytes/second at absolute time t (>= start)."""
        t = self._fold(t)
        idx = np.searchsorted(self.times_s, t, side="right") - 1
        return self.throughputs_Bps[max(idx, 0)]

    def mean_throughput_Bps(self) -> float:
        widths = np.diff(list(self.times_s) + [self.end_s])
        return float(np.dot(widths, self.throughputs_Bps) / self.period_s)

    def _fold(self, t: float) -> float:
        if t < self.start_s:
            raise TraceError(f"time {t} precedes trace start {self.start_s}")
        if t < self.end_s:
            return t
        if not self.loop:
            raise TraceExhausted(f"trace {self.name} exhausted at t={t:.3f}s (ends {self.end_s:.3f}s)")
        return self.start_s + (t - self.start_s) % self.period_s


def simulate_download(trace: NetworkTrace, start_s: float, size_bytes: float) -> float:
    """Ground-truth transfer duration for `size_bytes` starting at `start_s`.

    Integrates the piecewise-constant throughput until the requested bytes
    are delivered; deterministic. Raises TraceExhausted if a non-looping
    trace ends first.
    """
    if size_bytes <= 0:
        raise ValueError("size_bytes must be > 0")
    remaining = float(size_bytes)
    elapsed = 0.0
    t = trace._fold(start_s)
    times = trace.times_s
    end = trace.end_s
    while True:
        idx = int(np.searchsorted(times, t, side="right")) - 1
        idx = max(idx, 0)
        seg_end = times[idx + 1] if idx + 1 < len(times) else end
        rate = trace.throughputs_Bps[idx]
        width = seg_end - t
        if rate * width >= remaining:
            return elapsed + remaining / rate
        remaining -= rate * width
        elapsed += width
        if seg_end >= end:
            if not trace.loop:
                raise TraceExhausted(
                    f"trace {trace.name} exhausted with {remaining:.0f} bytes outstanding"
                )
            t = trace.start_s
        else:
            t = seg_end


def synth_trace(kind: str, params: dict | None = None, seed: int = 0) -> NetworkTrace:
    """Deterministic synthetic traces: constant, step, ar1, regime.

    ar1: b_{t+1} = mu + rho (b_t - mu) + sigma eps, clamped to floor.
    regime: Markov switching between ar1 regimes (params: regimes list,
    switch_prob).
    """
    params = dict(params or {})
    rng = np.random.default_rng(seed)
    dt = float(params.pop("dt_s", 0.5))
    n = int(params.pop("n_points", 600))
    if kind == "constant":
        bps = float(params.pop("throughput_Bps", 1e6))
        _reject_extras(kind, params)
        return NetworkTrace((0.0,), (bps,), name=f"constant-{bps:.0f}")
    if kind == "step":
        levels = [float(v) for v in params.pop("levels_Bps", (1e6, 2e6))]
        period = float(params.pop("period_s", 10.0))
        _reject_extras(kind, params)
        times = np.arange(len(levels)) * period
        return NetworkTrace(tuple(times), tuple(levels), name="step")
    if kind == "ar1":
        mu = float(params.pop("mean_Bps", 1e6))
        rho = float(params.pop("rho", 0.9))
        sigma = float(params.pop("sigma_Bps", 0.1 * mu))
        floor = float(params.pop("floor_Bps", max(mu * 0.01, 1.0)))
        start = float(params.pop("start_Bps", mu * 0.5))
        _reject_extras(kind, params)
        vals = _ar1_series(rng, n, mu, rho, sigma, floor, start)
        times = np.arange(n) * dt
        return NetworkTrace(tuple(times), tuple(vals), name=f"ar1-{seed}")
    if kind == "regime":
        regimes = params.pop(
            "regimes",
            ({"mean_Bps": 6e5, "rho": 0.9, "sigma_Bps": 6e4},
             {"mean_Bps": 2.4e6, "rho": 0.9, "sigma_Bps": 2.4e5}),
        )
        switch_prob = float(params.pop("switch_prob", 0.02))
        floor = float(params.pop("floor_Bps", 1e4))
        _reject_extras(kind, params)
        state = int(rng.integers(len(regimes)))
        vals = np.empty(n)
        b = float(regimes[state]["mean_Bps"])
        for i in range(n):
            if rng.random() < switch_prob:
                state = int(rng.integers(len(regimes)))
            r = regimes[state]
            mu, rho, sigma = float(r["mean_Bps"]), float(r.get("rho", 0.9)), float(r.get("sigma_Bps", 0.1 * r["mean_Bps"]))
            b = mu + rho * (b - mu) + sigma * rng.standard_normal()
            vals[i] = max(b, floor)
            b = vals[i]
        times = np.arange(n) * dt
        return NetworkTrace(tuple(times), tuple(vals), name=f"regime-{seed}")
    raise ValueError(f"unknown trace kind {kind!r}")


def _ar1_series(rng, n, mu, rho, sigma, floor, start) -> np.ndarray:
    vals = np.empty(n)
    b = start
    for i in range(n):
        b = mu + rho * (b - mu) + sigma * rng.standard_normal()
        vals[i] = max(b, floor)
        b = vals[i]
    return vals


def _reject_extras(kind: str, params: dict) -> None:
    if params:
        raise ValueError(f"unknown {kind} trace params: {sorted(params)}")


def load_trace_csv(path: str | os.PathLike, loop: bool = True) -> NetworkTrace:
    """Read a `time_s,throughput_Bps` CSV (header optional)."""
    times, thr = [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            a, b = (p.strip() for p in line.split(",")[:2])
            if a.lower() in ("time_s", "time"):
                continue
            times.append(float(a))
            thr.append(float(b))
    if not times:
        raise TraceError(f"trace file {path} has no samples")
    return NetworkTrace(tuple(times), tuple(thr), loop=loop, name=os.path.basename(str(path)))


def save_trace_csv(trace: NetworkTrace, path: str | os.PathLike) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write("time_s,throughput_Bps\n")
        for t, b in zip(trace.times_s, trace.throughputs_Bps):
            fh.write(f"{t:.6f},{b:.6f}\n")
    os.replace(tmp, path)


def convert_packet_log(path: str | os.PathLike, bin_s: float = 0.1,
                       packet_bytes: int = 1500, loop: bool = True) -> NetworkTrace:
    """Convert a packet-delivery log (one millisecond timestamp per line,
    one `packet_bytes` delivery opportunity each) into a binned trace."""
    stamps_ms = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#")[0].strip()
            if line:
                stamps_ms.append(float(line))
    if not stamps_ms:
        raise TraceError(f"packet log {path} is empty")
    stamps = np.asarray(stamps_ms) / 1000.0
    n_bins = int(np.floor(stamps.max() / bin_s)) + 1
    counts = np.bincount((stamps / bin_s).astype(int), minlength=n_bins)
    rates = np.maximum(counts * packet_bytes / bin_s, packet_bytes / bin_s * 0.01)
    times = np.arange(n_bins) * bin_s
    return NetworkTrace(tuple(times), tuple(rates), loop=loop, name=os.path.basename(str(path)))
