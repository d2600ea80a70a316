"""Reference plan-rollout kernel in pure Python.

Evaluates candidate download plans (joint bitrate + wait sequences) against
predicted per-chunk delays: expected window QoE and expected time-averaged
buffered data volume. The compiled extension in `_rollout.pyx` mirrors this
module expression for expression; this version is the semantic reference and
the fallback when the extension is unavailable.

Model used for the predicted trajectory:
  - buffered video time follows the (L - D)_+ + chunk - wait recursion with
    waits clamped into their feasible range on the plan's own trajectory;
  - pre-existing buffer content drains at uniform density bdv0/bvt0 (the
    planner only knows aggregates), planned chunks at their own size/chunk
    densities;
  - the in-flight chunk's bytes accrue linearly over its predicted delay.

BACKEND is "python" here; `beabr.kernel` rebinds to the compiled twin when
it imports cleanly.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def evaluate_plans(
    bitrate_idx,            # int32 [P, n] ladder level per planned chunk
    waits,                  # float64 [P, n] requested waits (clamped in-rollout)
    sizes,                  # float64 [n, levels] chunk bytes
    delays,                 # float64 [n, levels] predicted download seconds
    quality,                # float64 [levels] quality units per level
    chunk_s: float,
    cap_s: float,
    bvt0: float,
    bdv0: float,
    prev_quality: float,
    has_prev: bool,
    alpha1: float,
    alpha2: float,
    alpha3: float,
):
    """Expected (QoE, mean buffered volume) for each candidate plan."""
    bitrate_idx = np.ascontiguousarray(bitrate_idx, dtype=np.int32)
    waits = np.ascontiguousarray(waits, dtype=np.float64)
    n_plans, n = bitrate_idx.shape
    out_qoe = np.empty(n_plans)
    out_was = np.empty(n_plans)
    sizes_l = [[float(v) for v in row] for row in np.asarray(sizes, dtype=np.float64)]
    delays_l = [[float(v) for v in row] for row in np.asarray(delays, dtype=np.float64)]
    quality_l = [float(v) for v in np.asarray(quality, dtype=np.float64)]
    for p in range(n_plans):
        q, w = _rollout_one(
            [int(v) for v in bitrate_idx[p]],
            [float(v) for v in waits[p]],
            sizes_l, delays_l, quality_l,
            float(chunk_s), float(cap_s), float(bvt0), float(bdv0),
            float(prev_quality), bool(has_prev),
            float(alpha1), float(alpha2), float(alpha3),
        )
        out_qoe[p] = q
        out_was[p] = w
    return out_qoe, out_was


def _rollout_one(levels, wait_req, sizes, delays, quality, chunk_s, cap_s,
                 bvt0, bdv0, prev_quality, has_prev, alpha1, alpha2, alpha3):
    n = len(levels)
    prebuf_len = bvt0
    rho0 = bdv0 / bvt0 if bvt0 > 0.0 else 0.0

    bvt = bvt0
    bdv = bdv0
    playhead = 0.0   # media offset from the window start
    elapsed = 0.0
    int_bdv = 0.0
    sum_q = 0.0
    sum_reb = 0.0
    sum_var = 0.0
    last_q = prev_quality

    for i in range(n):
        r = levels[i]
        delay = delays[i][r]
        if delay < 1e-12:
            delay = 1e-12
        size = sizes[i][r]
        qv = quality[r]
        sum_q += qv
        if i > 0 or has_prev:
            sum_var += abs(qv - last_q)
        last_q = qv

        leftover = bvt - delay
        if leftover < 0.0:
            leftover = 0.0
        reb = delay - bvt
        if reb < 0.0:
            reb = 0.0
        sum_reb += reb

        lo = leftover + chunk_s - cap_s
        if lo < 0.0:
            lo = 0.0
        hi = leftover + chunk_s
        wait = wait_req[i]
        if wait < lo:
            wait = lo
        elif wait > hi:
            wait = hi

        span = delay + wait
        play1 = bvt if bvt < delay else delay

        drain1, c1 = _media_walk(playhead, play1, prebuf_len, rho0, chunk_s, sizes, levels, n)
        drain2, c2 = _media_walk(playhead + play1, wait, prebuf_len, rho0, chunk_s, sizes, levels, n)
        drain_int = drain1 + (reb + wait) * c1 + drain2
        consumed = c1 + c2

        int_bdv += bdv * span + size * (0.5 * delay + wait) - drain_int
        bdv += size - consumed
        playhead += play1 + wait
        bvt = leftover + chunk_s - wait
        elapsed += span

    width = elapsed if elapsed > 1e-12 else 1e-12
    qoe = alpha1 * (sum_q / n) - alpha2 * (sum_reb / width)
    n_var = n if has_prev else n - 1
    if n_var > 0:
        qoe -= alpha3 * (sum_var / n_var)
    was = int_bdv / width
    return qoe, was


def _media_walk(pos, length, prebuf_len, rho0, chunk_s, sizes, levels, n):
    """Walk the window's media layout from `pos` for `length` media seconds.

    Returns (integral of consumed-so-far over the walk, total bytes consumed);
    the media layout is [0, prebuf_len) at uniform density rho0 followed by
    the planned chunks at their own densities.
    """
    if length <= 0.0:
        return 0.0, 0.0
    # region -1 is the pre-existing buffer; j >= 0 are the planned chunks.
    # The index advances monotonically instead of being recomputed from the
    # position, so boundary-rounding can never re-walk or skip a region.
    if pos < prebuf_len:
        region = -1
    else:
        region = int((pos - prebuf_len) / chunk_s)
        if region > n - 1:
            region = n - 1
    integ = 0.0
    acc = 0.0
    remaining = length
    while remaining > 1e-15:
        if region < 0:
            density = rho0
            region_end = prebuf_len
        else:
            j = region if region < n - 1 else n - 1
            density = sizes[j][levels[j]] / chunk_s
            region_end = prebuf_len + (region + 1) * chunk_s
        step = region_end - pos
        if step > remaining:
            step = remaining
        if step < 0.0:    # position fractionally past the boundary
            step = 0.0
        integ += acc * step + 0.5 * density * step * step
        acc += density * step
        pos += step
        remaining -= step
        region += 1
    return integ, acc


def rollout_details(levels, wait_req, sizes, delays, quality, chunk_s, cap_s,
                    bvt0, bdv0, prev_quality, has_prev, alpha1, alpha2, alpha3):
    """Single-plan rollout keeping per-chunk diagnostics (clamped waits, stalls,
    predicted buffer trajectory). Matches _rollout_one's arithmetic."""
    n = len(levels)
    sizes_l = [[float(v) for v in row] for row in np.asarray(sizes, dtype=np.float64)]
    delays_l = [[float(v) for v in row] for row in np.asarray(delays, dtype=np.float64)]
    quality_l = [float(v) for v in np.asarray(quality, dtype=np.float64)]
    waits_out = []
    rebs = []
    bvts = [float(bvt0)]
    bvt = float(bvt0)
    for i in range(n):
        delay = max(delays_l[i][levels[i]], 1e-12)
        leftover = max(bvt - delay, 0.0)
        rebs.append(max(delay - bvt, 0.0))
        lo = max(leftover + chunk_s - cap_s, 0.0)
        hi = leftover + chunk_s
        wait = min(max(float(wait_req[i]), lo), hi)
        waits_out.append(wait)
        bvt = leftover + chunk_s - wait
        bvts.append(bvt)
    qoe, was = _rollout_one(
        list(levels), waits_out, sizes_l, delays_l, quality_l,
        float(chunk_s), float(cap_s), float(bvt0), float(bdv0),
        float(prev_quality), bool(has_prev), float(alpha1), float(alpha2), float(alpha3),
    )
    return {
        "waits_s": waits_out,
        "rebuffer_s": rebs,
        "bvt_trajectory_s": bvts,
        "qoe": qoe,
        "was_bytes": was,
    }
