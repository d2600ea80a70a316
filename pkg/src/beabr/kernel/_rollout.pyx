# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled plan-rollout kernel; mirrors pyrollout.py expression for expression."""

import numpy as np

from libc.math cimport fabs
from libc.stdlib cimport free, malloc

BACKEND = "compiled"


cdef double _media_walk(double pos, double length, double prebuf_len, double rho0,
                        double chunk_s, const double[:, ::1] sizes,
                        const int* levels, Py_ssize_t n, double* consumed) nogil:
    """Integral of consumed-so-far bytes over a playback walk; total via *consumed."""
    cdef double integ = 0.0
    cdef double acc = 0.0
    cdef double remaining = length
    cdef double density, region_end, step
    cdef Py_ssize_t region, j
    if length <= 0.0:
        consumed[0] = 0.0
        return 0.0
    # region -1 is the pre-existing buffer; the index advances monotonically
    # instead of being recomputed, so boundary rounding cannot re-walk a region
    if pos < prebuf_len:
        region = -1
    else:
        region = <Py_ssize_t>((pos - prebuf_len) / chunk_s)
        if region > n - 1:
            region = n - 1
    while remaining > 1e-15:
        if region < 0:
            density = rho0
            region_end = prebuf_len
        else:
            j = region if region < n - 1 else n - 1
            density = sizes[j, levels[j]] / chunk_s
            region_end = prebuf_len + (region + 1) * chunk_s
        step = region_end - pos
        if step > remaining:
            step = remaining
        if step < 0.0:
            step = 0.0
        integ += acc * step + 0.5 * density * step * step
        acc += density * step
        pos += step
        remaining -= step
        region += 1
    consumed[0] = acc
    return integ


def evaluate_plans(
    bitrate_idx,
    waits,
    sizes,
    delays,
    quality,
    double chunk_s,
    double cap_s,
    double bvt0,
    double bdv0,
    double prev_quality,
    bint has_prev,
    double alpha1,
    double alpha2,
    double alpha3,
):
    """Expected (QoE, mean buffered volume) for each candidate plan."""
    cdef const int[:, ::1] idx = np.ascontiguousarray(bitrate_idx, dtype=np.int32)
    cdef const double[:, ::1] wreq = np.ascontiguousarray(waits, dtype=np.float64)
    cdef const double[:, ::1] sz = np.ascontiguousarray(sizes, dtype=np.float64)
    cdef const double[:, ::1] dl = np.ascontiguousarray(delays, dtype=np.float64)
    cdef const double[:] qual = np.ascontiguousarray(quality, dtype=np.float64)
    cdef Py_ssize_t n_plans = idx.shape[0]
    cdef Py_ssize_t n = idx.shape[1]
    out_qoe_arr = np.empty(n_plans)
    out_was_arr = np.empty(n_plans)
    cdef double[:] out_qoe = out_qoe_arr
    cdef double[:] out_was = out_was_arr

    cdef int* levels = <int*> malloc(n * sizeof(int))
    if levels == NULL:
        raise MemoryError()

    cdef Py_ssize_t p, i
    cdef int r, n_var
    cdef double prebuf_len, rho0, bvt, bdv, playhead, elapsed, int_bdv
    cdef double sum_q, sum_reb, sum_var, last_q
    cdef double delay, size, qv, leftover, reb, lo, hi, wait, span, play1
    cdef double drain1, drain2, c1, c2, drain_int, consumed, width, qoe

    prebuf_len = bvt0
    rho0 = bdv0 / bvt0 if bvt0 > 0.0 else 0.0

    with nogil:
        for p in range(n_plans):
            for i in range(n):
                levels[i] = idx[p, i]
            bvt = bvt0
            bdv = bdv0
            playhead = 0.0
            elapsed = 0.0
            int_bdv = 0.0
            sum_q = 0.0
            sum_reb = 0.0
            sum_var = 0.0
            last_q = prev_quality
            for i in range(n):
                r = levels[i]
                delay = dl[i, r]
                if delay < 1e-12:
                    delay = 1e-12
                size = sz[i, r]
                qv = qual[r]
                sum_q += qv
                if i > 0 or has_prev:
                    sum_var += fabs(qv - last_q)
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
                wait = wreq[p, i]
                if wait < lo:
                    wait = lo
                elif wait > hi:
                    wait = hi

                span = delay + wait
                play1 = bvt if bvt < delay else delay

                drain1 = _media_walk(playhead, play1, prebuf_len, rho0, chunk_s, sz, levels, n, &c1)
                drain2 = _media_walk(playhead + play1, wait, prebuf_len, rho0, chunk_s, sz, levels, n, &c2)
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
            out_qoe[p] = qoe
            out_was[p] = int_bdv / width

    free(levels)
    return out_qoe_arr, out_was_arr
