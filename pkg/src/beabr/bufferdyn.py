"""Playback-buffer dynamics: buffered video time, buffered data volume, playhead.

Everything here is event-driven and exact. Between download events both the
buffered video time L(t) and the buffered data volume S(t) are piecewise
linear; the media clock V(t) advances 1:1 with wall time except while the
buffer is empty (rebuffer freeze). No fixed time step is used anywhere in
production code; time-stepped simulation exists only as a test oracle.

Conventions:
  - Chunks are 0-indexed; chunk j occupies media [j*L, (j+1)*L).
  - A chunk becomes playable the instant its download completes.
  - The in-flight chunk's bytes accrue linearly over its download (the
    short-horizon constant-bandwidth reading of the fill term), even though
    the ground-truth transport may deliver unevenly.
  - Draining uses the actual stored byte density of the viewed chunk
    (size/L), which keeps byte conservation exact for jittered chunk sizes.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass


class ContractViolation(ValueError):
    """An operation was called outside its stated preconditions."""


def positive_part(x: float) -> float:
    return x if x > 0.0 else 0.0


def wait_bounds(bvt_s: float, download_s: float, chunk_s: float, cap_s: float) -> tuple[float, float]:
    """Feasible inter-chunk waiting range after a download.

    The lower bound keeps the refilled buffer at or below the cap; the upper
    bound stops short of draining the buffer into a rebuffer.
    """
    if min(bvt_s, download_s, chunk_s) < 0 or cap_s <= chunk_s:
        raise ContractViolation(
            f"need bvt, download, chunk >= 0 and cap > chunk; got "
            f"({bvt_s}, {download_s}, {chunk_s}, cap={cap_s})"
        )
    leftover = positive_part(bvt_s - download_s)
    lo = positive_part(leftover + chunk_s - cap_s)
    hi = leftover + chunk_s
    return lo, hi


def advance_bvt(bvt_s: float, download_s: float, wait_s: float, chunk_s: float) -> float:
    """Buffered video time at the next download start."""
    hi = positive_part(bvt_s - download_s) + chunk_s
    if not (-1e-9 <= wait_s <= hi + 1e-9):
        raise ContractViolation(f"wait {wait_s} outside feasible range [0, {hi}]")
    return positive_part(bvt_s - download_s) + chunk_s - wait_s


@dataclass(frozen=True)
class BufferConfig:
    cap_s: float = 20.0  # physical upper limit on buffered video time

    def validate(self, chunk_s: float) -> None:
        if self.cap_s <= chunk_s:
            raise ValueError(f"buffer cap {self.cap_s}s must exceed the chunk duration {chunk_s}s")


@dataclass(frozen=True)
class DownloadEvent:
    chunk_index: int
    bitrate_kbps: float
    size_bytes: int
    start_s: float          # t_k
    duration_s: float       # D_k
    wait_s: float           # waiting time before the next request
    bvt_start_s: float      # L(t_k)

    @property
    def finish_s(self) -> float:
        return self.start_s + self.duration_s

    @property
    def next_start_s(self) -> float:
        return self.start_s + self.duration_s + self.wait_s

    @property
    def stall_s(self) -> float:
        """Playhead freeze caused by this download (startup counts for chunk 0)."""
        return positive_part(self.duration_s - self.bvt_start_s)


@dataclass
class _PlaySegment:
    t0: float
    t1: float
    v0: float
    v1: float  # == v0 for frozen segments

    @property
    def frozen(self) -> bool:
        return self.v1 == self.v0


class SessionTimeline:
    """Single-writer record of one streaming session's buffer trajectories."""

    def __init__(self, chunk_duration_s: float, buffer_cap_s: float = 20.0, start_s: float = 0.0):
        if chunk_duration_s <= 0:
            raise ValueError("chunk duration must be > 0")
        BufferConfig(buffer_cap_s).validate(chunk_duration_s)
        self.chunk_s = float(chunk_duration_s)
        self.cap_s = float(buffer_cap_s)
        self.start_s = float(start_s)
        self.events: list[DownloadEvent] = []
        self._segments: list[_PlaySegment] = []
        self._seg_starts: list[float] = []
        self._finishes: list[float] = []   # monotone: finish_k <= start_{k+1} < finish_{k+1}
        self._frontier_t = float(start_s)
        self._frontier_v = 0.0
        self._bvt = 0.0
        self._prefix_bytes = [0]           # completed-chunk byte prefix sums (exact ints)

    # -- construction --------------------------------------------------------

    def append_event(self, bitrate_kbps: float, size_bytes: int, duration_s: float,
                     wait_s: float) -> DownloadEvent:
        """Record the next chunk's download and the wait that follows it."""
        if duration_s <= 0 or size_bytes <= 0:
            raise ContractViolation("download needs positive duration and size")
        lo, hi = wait_bounds(self._bvt, duration_s, self.chunk_s, self.cap_s)
        if not (lo - 1e-9 <= wait_s <= hi + 1e-9):
            raise ContractViolation(
                f"chunk {len(self.events)}: wait {wait_s:.6f}s outside [{lo:.6f}, {hi:.6f}]"
            )
        ev = DownloadEvent(
            chunk_index=len(self.events),
            bitrate_kbps=bitrate_kbps,
            size_bytes=int(size_bytes),
            start_s=self._frontier_t,
            duration_s=float(duration_s),
            wait_s=float(wait_s),
            bvt_start_s=self._bvt,
        )
        play1 = min(ev.bvt_start_s, ev.duration_s)
        if play1 > 0:
            self._push_segment(ev.start_s, ev.start_s + play1, playing=True)
        if ev.duration_s > ev.bvt_start_s:
            self._push_segment(ev.start_s + play1, ev.finish_s, playing=False)
        self.events.append(ev)         # chunk becomes playable at finish_s
        self._finishes.append(ev.finish_s)
        self._prefix_bytes.append(self._prefix_bytes[-1] + ev.size_bytes)
        if ev.wait_s > 0:
            self._push_segment(ev.finish_s, ev.next_start_s, playing=True)
        self._frontier_t = ev.next_start_s
        self._bvt = advance_bvt(ev.bvt_start_s, ev.duration_s, ev.wait_s, self.chunk_s)
        return ev

    def _push_segment(self, t0: float, t1: float, playing: bool) -> None:
        if t1 <= t0:
            return
        v0 = self._frontier_v
        if playing:
            # never play past the completed-content boundary
            v1 = min(v0 + (t1 - t0), len(self.events) * self.chunk_s)
        else:
            v1 = v0
        self._segments.append(_PlaySegment(t0, t1, v0, v1))
        self._seg_starts.append(t0)
        self._frontier_v = v1

    # -- basic state -----------------------------------------------------------

    @property
    def frontier_s(self) -> float:
        """Wall time up to which events have been recorded."""
        return self._frontier_t

    @property
    def completed_chunks(self) -> int:
        return len(self.events)

    @property
    def fetched_bytes(self) -> int:
        return self._prefix_bytes[-1]

    def avail_media_s(self, t: float) -> float:
        """Media seconds of fully downloaded content at wall time t."""
        return bisect.bisect_right(self._finishes, t + 1e-12) * self.chunk_s

    def bvt_at_next_start(self) -> float:
        """L at the frontier, i.e. at the next download's start."""
        return self._bvt

    def startup_delay_s(self) -> float:
        return self.events[0].stall_s if self.events else 0.0

    def frozen_time(self, until_s: float | None = None) -> float:
        """Total playhead freeze up to `until_s` (default: the frontier).

        For completed events the per-event stalls are summed verbatim, so the
        total matches a per-chunk (D_k - L_k)_+ ledger bit for bit.
        """
        end = self._frontier_t if until_s is None else until_s
        total = 0.0
        for ev in self.events:
            if ev.stall_s <= 0.0:
                continue
            stall_start = ev.start_s + ev.bvt_start_s
            if end >= ev.finish_s:
                total += ev.stall_s
            elif end > stall_start:
                total += end - stall_start
        if end > self._frontier_t:
            drain = self.avail_media_s(end) - self._frontier_v
            total += positive_part((end - self._frontier_t) - drain)
        return total

    # -- playhead ---------------------------------------------------------------

    def playback_position(self, t: float) -> float:
        """Media position V(t); frozen while the buffer is empty."""
        if t < self.start_s - 1e-12:
            raise ContractViolation(f"t={t} precedes the session start {self.start_s}")
        t = max(t, self.start_s)
        if self._segments and t < self._frontier_t:
            i = max(bisect.bisect_right(self._seg_starts, t) - 1, 0)
            seg = self._segments[i]
            if seg.frozen:
                return seg.v0
            return min(seg.v0 + (t - seg.t0), seg.v1)
        # beyond recorded events: drain what is buffered, then freeze
        return min(self._frontier_v + (t - self._frontier_t), self.avail_media_s(t))

    def time_at_media(self, v: float) -> float:
        """Earliest wall time at which V(t) reaches media position v."""
        if v <= 0:
            return self.start_s
        for seg in self._segments:
            if not seg.frozen and v <= seg.v1 + 1e-15:
                return seg.t0 + max(v - seg.v0, 0.0)
        avail = self.completed_chunks * self.chunk_s
        if v <= avail + 1e-12:
            return self._frontier_t + (v - self._frontier_v)
        return math.inf

    def drain_end_s(self) -> float:
        """Wall time when everything downloaded so far has been viewed."""
        return self.time_at_media(self.completed_chunks * self.chunk_s)

    # -- byte bookkeeping ----------------------------------------------------------

    def accrued_bytes(self, t: float) -> float:
        """Bytes delivered by wall time t, with linear fill inside downloads."""
        n_done = bisect.bisect_right(self._finishes, t)
        total = float(self._prefix_bytes[n_done])
        if n_done < len(self.events):
            ev = self.events[n_done]
            if t > ev.start_s:  # at most one download is ever in flight
                total += ev.size_bytes * (t - ev.start_s) / ev.duration_s
        return total

    def consumed_cum(self, t: float) -> float:
        """Bytes of media the viewer has consumed by wall time t."""
        return self._media_bytes(self.playback_position(t))

    def _media_bytes(self, v: float) -> float:
        j = min(int(v / self.chunk_s + 1e-12), len(self.events))
        base = self._prefix_bytes[j]
        rem = v - j * self.chunk_s
        if rem <= 0 or j >= len(self.events):
            return float(base)
        return base + rem * (self.events[j].size_bytes / self.chunk_s)

    def consumed_volume(self, t1: float, t2: float) -> float:
        """Bytes viewed over (t1, t2); additive by construction."""
        if t2 < t1:
            raise ContractViolation("need t1 <= t2")
        return self.consumed_cum(t2) - self.consumed_cum(t1)

    def bdv_at(self, t: float) -> float:
        """Buffered data volume S(t): delivered minus consumed bytes."""
        return max(self.accrued_bytes(t) - self.consumed_cum(t), 0.0)

    def bvt_at(self, t: float) -> float:
        """Buffered video time L(t): available minus viewed media seconds."""
        return max(self.avail_media_s(t) - self.playback_position(t), 0.0)

    # -- exact integrals --------------------------------------------------------------

    def _breakpoints(self, t_a: float, t_b: float) -> list[float]:
        pts = {t_a, t_b}

        def add(t: float) -> None:
            if t_a < t < t_b:
                pts.add(t)

        for ev in self.events:
            add(ev.start_s)
            add(ev.finish_s)
            add(ev.next_start_s)
        for seg in self._segments:
            add(seg.t0)
            add(seg.t1)
            if not seg.frozen:
                # density changes when the playhead crosses a chunk boundary
                m0 = math.floor(seg.v0 / self.chunk_s) + 1
                m1 = math.ceil(seg.v1 / self.chunk_s)
                for m in range(m0, m1):
                    add(seg.t0 + (m * self.chunk_s - seg.v0))
        if t_b > self._frontier_t:  # drain tail: crossings, then the empty point
            v0 = self._frontier_v
            avail = self.completed_chunks * self.chunk_s
            for m in range(math.floor(v0 / self.chunk_s) + 1, math.ceil(avail / self.chunk_s) + 1):
                add(self._frontier_t + (m * self.chunk_s - v0))
            add(self._frontier_t + (avail - v0))
        return sorted(pts)

    def _piecewise_integral(self, t_a: float, t_b: float, f) -> float:
        # midpoint rule: exact for the piecewise-linear f between breakpoints
        if t_b < t_a:
            raise ContractViolation("need t_a <= t_b")
        pts = self._breakpoints(t_a, t_b)
        total = 0.0
        for a, b in zip(pts, pts[1:]):
            total += (b - a) * f(0.5 * (a + b))
        return total

    def bdv_integral(self, t_a: float, t_b: float) -> float:
        """Exact integral of S(t) over [t_a, t_b], in byte-seconds."""
        return self._piecewise_integral(t_a, t_b, self.bdv_at)

    def bvt_integral(self, t_a: float, t_b: float) -> float:
        """Exact integral of L(t) over [t_a, t_b], in second-seconds."""
        return self._piecewise_integral(t_a, t_b, self.bvt_at)
