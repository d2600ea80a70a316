"""Trace-driven session simulator, departure sampling, and the batch runner.

All time is simulated (waiting advances a virtual clock); sessions are
bit-deterministic given their seeds. A departure time is drawn before the
session and enforced as a hard stop: the in-flight chunk is truncated there
with its accrued bytes counted as wastage.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .bufferdyn import SessionTimeline, wait_bounds
from .controller import ControllerState, PlannerConfig, make_controller
from .media import VideoManifest
from .predictor import DelayModel, HistorySample, sample_midpoint
from .qoe import ChunkRecord, QoEWeights, SessionLedger, qoe_at_departure, qoe_lin, qoe_log
from .traces import NetworkTrace, simulate_download


@dataclass(frozen=True)
class DepartureModel:
    """Viewing-ratio distribution: mass `p_complete` at r=1 plus a continuous
    part, uniform (f1 mode) or browsing-skewed logarithmic (f2 mode)."""

    mode: str = "uniform_f1"     # uniform_f1 | logarithmic_f2
    p_complete: float = 0.2
    browse_skew: float = 10.0    # only the logarithmic mode uses this

    def __post_init__(self):
        if self.mode not in ("uniform_f1", "logarithmic_f2"):
            raise ValueError(f"unknown departure mode {self.mode!r}")
        if not 0.0 <= self.p_complete <= 1.0:
            raise ValueError("completion probability must be in [0, 1]")
        if self.browse_skew <= 0:
            raise ValueError("browsing skew must be > 0")


def sample_viewing_ratio(model: DepartureModel, rng: np.random.Generator) -> float:
    """Inverse-CDF draw of the viewed fraction r in (0, 1]."""
    u = rng.random()
    p = model.p_complete
    if u >= 1.0 - p:
        return 1.0
    if model.mode == "uniform_f1":
        return u / (1.0 - p)
    a = model.browse_skew
    return ((1.0 + a) ** (u / (1.0 - p)) - 1.0) / a


def sample_departure(model: DepartureModel, video_duration_s: float,
                     rng: np.random.Generator) -> float:
    """Departure time in seconds: viewed fraction times the video duration."""
    if video_duration_s <= 0:
        raise ValueError("video duration must be > 0")
    return sample_viewing_ratio(model, rng) * video_duration_s


@dataclass(frozen=True)
class SessionConfig:
    buffer_cap_s: float = 20.0
    departure_clock: str = "media"   # media: stop at viewed fraction r; natural: wall clock
    collect_timing: bool = False
    request_overhead_bytes: float = 0.0  # per-request transport cost (connection ramp)

    def __post_init__(self):
        if self.departure_clock not in ("media", "natural"):
            raise ValueError("departure_clock must be 'media' or 'natural'")
        if self.request_overhead_bytes < 0:
            raise ValueError("request overhead must be >= 0")


@dataclass
class SessionResult:
    controller: str
    trace: str
    seed: int
    departure_ratio: float
    departure_s: float            # wall-clock stop actually enforced
    qoe_lin: float
    qoe_log: float
    qoe_departure: float
    wastage_bytes: float
    fetched_bytes: float
    consumed_bytes: float
    mean_bdv_bytes: float
    mean_bvt_s: float
    rebuffer_ratio: float
    rebuffer_total_s: float
    startup_delay_s: float
    mean_quality_kbps: float
    mean_switch_kbps: float
    mean_plan_latency_ms: float
    viewed_chunks: int
    downloaded_chunks: int
    ledger: SessionLedger = field(repr=False, default=None)
    timeline: SessionTimeline = field(repr=False, default=None)
    decisions: list = field(repr=False, default_factory=list)
    error: str | None = None


def run_session(manifest: VideoManifest, trace: NetworkTrace, controller,
                departure_ratio: float | None = None,
                config: SessionConfig | None = None) -> SessionResult:
    """Play one session under `controller` until departure or the video ends."""
    cfg = config or SessionConfig()
    chunk_s = manifest.chunk_duration_s
    total_chunks = manifest.chunk_count
    tl = SessionTimeline(chunk_s, cfg.buffer_cap_s)
    ladder = manifest.ladder

    r = 1.0 if departure_ratio is None else float(departure_ratio)
    if not 0.0 < r <= 1.0:
        raise ValueError("departure ratio must be in (0, 1]")
    target_media = r * manifest.duration_s if departure_ratio is not None else math.inf
    target_wall = r * manifest.duration_s if departure_ratio is not None else math.inf

    throughput_hist: list[float] = []
    error_hist: list[float] = []
    samples: list[HistorySample] = []
    prev_level: int | None = None
    records: list[ChunkRecord] = []
    decisions = []
    latencies: list[float] = []
    in_flight_bytes = 0.0
    in_flight_span = 0.0
    stop_t: float | None = None

    def media_cut(limit_s: float) -> float | None:
        """Wall time within (frontier, limit] at which the media target falls."""
        if cfg.departure_clock != "media" or not math.isfinite(target_media):
            return None
        t_cross = tl.time_at_media(target_media)
        return t_cross if t_cross <= limit_s + 1e-12 else None

    def natural_cut(limit_s: float) -> float | None:
        if cfg.departure_clock != "natural" or not math.isfinite(target_wall):
            return None
        return target_wall if target_wall <= limit_s else None

    k = 0
    while k < total_chunks:
        start = tl.frontier_s
        state = ControllerState(
            chunk_index=k,
            prev_level=prev_level,
            bvt_s=tl.bvt_at_next_start(),
            bdv_bytes=tl.bdv_at(start),
            now_s=start,
            throughput_history_Bps=list(throughput_hist),
            delay_error_history=list(error_hist),
            history_samples=list(samples),
        )
        t_wall = time.perf_counter()
        decision = controller.decide(state)
        latencies.append((time.perf_counter() - t_wall) * 1000.0)
        decisions.append(decision)

        size = manifest.size(k, decision.level)
        try:
            duration = simulate_download(trace, start, size + cfg.request_overhead_bytes)
        except Exception as exc:
            raise RuntimeError(f"chunk {k}: download simulation failed: {exc}") from exc
        finish = start + duration

        cut = natural_cut(finish - 1e-12) or media_cut(finish - 1e-12)
        if cut is not None and cut < finish:
            in_flight_bytes = size * (cut - start) / duration
            in_flight_span = cut - start
            stop_t = cut
            break

        lo, hi = wait_bounds(state.bvt_s, duration, chunk_s, cfg.buffer_cap_s)
        wait = min(max(decision.wait_s, lo), hi)
        if k == total_chunks - 1:
            wait = lo  # nothing left to throttle
        ev = tl.append_event(ladder.levels_kbps[decision.level], size, duration, wait)

        throughput_hist.append(size / duration)
        samples.append(HistorySample(size, size / duration, sample_midpoint(start, duration)))
        if decision.predicted_delay_s is not None:
            error_hist.append(abs(decision.predicted_delay_s - duration) / duration)
        records.append(ChunkRecord(
            chunk_index=k,
            bitrate_kbps=ladder.levels_kbps[decision.level],
            size_bytes=size,
            download_s=duration,
            rebuffer_s=0.0 if k == 0 else ev.stall_s,  # chunk 0's stall is startup
            wait_s=wait,
        ))
        prev_level = decision.level

        cut = natural_cut(ev.next_start_s) or media_cut(ev.next_start_s)
        if cut is not None:
            stop_t = max(cut, finish)
            break
        k += 1

    if stop_t is None:
        # video fully downloaded (or loop exited at departure): drain to the end
        drain_end = tl.drain_end_s()
        cut = natural_cut(drain_end) or media_cut(drain_end)
        stop_t = cut if cut is not None else drain_end

    t0 = max(stop_t, 1e-9)
    viewed_media = tl.playback_position(t0)
    k1 = int(viewed_media / chunk_s + 1e-9)
    consumed = tl.consumed_cum(t0)
    fetched = tl.fetched_bytes + in_flight_bytes
    wastage = fetched - consumed

    ledger = SessionLedger(
        chunks=records,
        viewed_count=min(k1, len(records)),
        elapsed_s=t0,
        startup_delay_s=tl.startup_delay_s(),
        bdv_at_departure_bytes=wastage,
        r_min_kbps=ladder.min_kbps,
    )
    ledger.validate(total_chunks)

    reb_total = ledger.rebuffer_total_s()
    mean_bdv = (tl.bdv_integral(0.0, t0) + 0.5 * in_flight_bytes * in_flight_span) / t0
    mean_bvt = tl.bvt_integral(0.0, t0) / t0
    viewed_rates = [c.bitrate_kbps for c in records[:ledger.viewed_count]]
    mean_quality = sum(viewed_rates) / len(viewed_rates) if viewed_rates else 0.0
    switches = [abs(b - a) for a, b in zip(viewed_rates, viewed_rates[1:])]
    mean_switch = sum(switches) / len(switches) if switches else 0.0
    weights = QoEWeights.linear_default()

    return SessionResult(
        controller=getattr(controller, "name", type(controller).__name__),
        trace=trace.name,
        seed=0,
        departure_ratio=r,
        departure_s=t0,
        qoe_lin=qoe_lin(ledger),
        qoe_log=qoe_log(ledger),
        qoe_departure=qoe_at_departure(ledger, t0, weights),
        wastage_bytes=wastage,
        fetched_bytes=fetched,
        consumed_bytes=consumed,
        mean_bdv_bytes=mean_bdv,
        mean_bvt_s=mean_bvt,
        rebuffer_ratio=reb_total / t0,
        rebuffer_total_s=reb_total,
        startup_delay_s=tl.startup_delay_s(),
        mean_quality_kbps=mean_quality,
        mean_switch_kbps=mean_switch,
        mean_plan_latency_ms=(sum(latencies) / len(latencies)) if latencies else 0.0,
        viewed_chunks=ledger.viewed_count,
        downloaded_chunks=ledger.downloaded_count,
        ledger=ledger,
        timeline=tl,
        decisions=decisions,
    )


# -- batch runner ------------------------------------------------------------

CSV_COLUMNS = (
    "session_id", "controller", "trace", "seed", "departure_s", "qoe_lin", "qoe_log",
    "wastage_bytes", "mean_bdv_bytes", "mean_bvt_s", "rebuffer_ratio",
    "mean_quality", "mean_switch", "mean_plan_latency_ms",
)


@dataclass(frozen=True)
class ExperimentSpec:
    controllers: tuple[str, ...]
    traces: tuple[NetworkTrace, ...]
    manifest: VideoManifest
    departure: DepartureModel | None = None
    fixed_departure_s: float | None = None
    repetitions: int = 1
    base_seed: int = 0
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    session: SessionConfig = field(default_factory=SessionConfig)
    weights: QoEWeights = field(default_factory=QoEWeights.linear_default)
    model: DelayModel | None = None
    normalize_against: str | None = None   # controller name, e.g. "be-abr"


def _departure_ratio_for(spec: ExperimentSpec, trace_idx: int, rep: int) -> float | None:
    """Same draw for every controller in a cell, so comparisons are paired."""
    if spec.fixed_departure_s is not None:
        return min(spec.fixed_departure_s / spec.manifest.duration_s, 1.0)
    if spec.departure is None:
        return None
    rng = np.random.default_rng((spec.base_seed, trace_idx, rep))
    return sample_viewing_ratio(spec.departure, rng)


def run_batch(spec: ExperimentSpec) -> tuple[list[SessionResult], list[dict]]:
    """Run the controller x trace x repetition grid; returns per-session
    results (spec order) and per-controller aggregate rows."""
    results: list[SessionResult] = []
    for name in spec.controllers:
        for trace_idx, trace in enumerate(spec.traces):
            for rep in range(spec.repetitions):
                seed = spec.base_seed + rep
                planner = replace(spec.planner,
                                  ga=replace(spec.planner.ga, seed=seed))
                controller = make_controller(name, spec.manifest, spec.model,
                                             planner, spec.weights)
                ratio = _departure_ratio_for(spec, trace_idx, rep)
                try:
                    res = run_session(spec.manifest, trace, controller, ratio, spec.session)
                    res.seed = seed
                except Exception as exc:
                    res = _failure_row(name, trace.name, seed, exc)
                results.append(res)
    return results, aggregate_rows(results, spec.normalize_against)


def _failure_row(controller: str, trace: str, seed: int, exc: Exception) -> SessionResult:
    res = SessionResult(
        controller=controller, trace=trace, seed=seed, departure_ratio=float("nan"),
        departure_s=float("nan"), qoe_lin=float("nan"), qoe_log=float("nan"),
        qoe_departure=float("nan"), wastage_bytes=float("nan"), fetched_bytes=float("nan"),
        consumed_bytes=float("nan"), mean_bdv_bytes=float("nan"), mean_bvt_s=float("nan"),
        rebuffer_ratio=float("nan"), rebuffer_total_s=float("nan"),
        startup_delay_s=float("nan"), mean_quality_kbps=float("nan"),
        mean_switch_kbps=float("nan"), mean_plan_latency_ms=float("nan"),
        viewed_chunks=0, downloaded_chunks=0,
        error=f"{type(exc).__name__}: {exc}",
    )
    return res


def aggregate_rows(results: list[SessionResult], normalize_against: str | None = None) -> list[dict]:
    by_controller: dict[str, list[SessionResult]] = {}
    for r in results:
        if math.isfinite(r.departure_s):
            by_controller.setdefault(r.controller, []).append(r)
    rows = []
    for name, group in by_controller.items():
        def mean(attr):
            return sum(getattr(g, attr) for g in group) / len(group)
        rows.append({
            "controller": name,
            "sessions": len(group),
            "qoe_lin": mean("qoe_lin"),
            "qoe_log": mean("qoe_log"),
            "wastage_bytes": mean("wastage_bytes"),
            "wastage_MB": mean("wastage_bytes") / 1e6,
            "mean_bdv_bytes": mean("mean_bdv_bytes"),
            "mean_bvt_s": mean("mean_bvt_s"),
            "rebuffer_ratio": mean("rebuffer_ratio"),
            "mean_quality": mean("mean_quality_kbps"),
            "mean_switch": mean("mean_switch_kbps"),
        })
    if normalize_against:
        base = next((row for row in rows if row["controller"] == normalize_against), None)
        if base is not None:
            keys = ("qoe_lin", "qoe_log", "wastage_bytes", "wastage_MB",
                    "mean_bdv_bytes", "mean_bvt_s", "mean_quality", "mean_switch")
            denoms = {key: base[key] for key in keys}  # snapshot before mutating
            for row in rows:
                for key in keys:
                    row[key] = row[key] / denoms[key] if denoms[key] else float("nan")
                row["normalized"] = True
    return rows


def write_results_csv(results: list[SessionResult], aggregates: list[dict],
                      path: str | os.PathLike, collect_timing: bool = False) -> None:
    """Atomic CSV emission; the latency column is zeroed unless timing was
    requested, so fixed-seed reruns are byte-identical."""
    lines = [",".join(CSV_COLUMNS)]
    for i, r in enumerate(results):
        latency = r.mean_plan_latency_ms if collect_timing else 0.0
        lines.append(
            f"{i},{r.controller},{r.trace},{r.seed},{r.departure_s:.6f},"
            f"{r.qoe_lin:.6f},{r.qoe_log:.6f},{r.wastage_bytes:.3f},"
            f"{r.mean_bdv_bytes:.3f},{r.mean_bvt_s:.6f},{r.rebuffer_ratio:.9f},"
            f"{r.mean_quality_kbps:.6f},{r.mean_switch_kbps:.6f},{latency:.3f}"
        )
    for row in aggregates:
        lines.append(
            f"mean:{row['controller']},{row['controller']},all,,"
            f",{row['qoe_lin']:.6f},{row['qoe_log']:.6f},{row['wastage_bytes']:.3f},"
            f"{row['mean_bdv_bytes']:.3f},{row['mean_bvt_s']:.6f},{row['rebuffer_ratio']:.9f},"
            f"{row['mean_quality']:.6f},{row['mean_switch']:.6f},"
        )
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)
