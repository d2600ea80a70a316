import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beabr.qoe import (
    ChunkRecord,
    PlanWindow,
    QoEWeights,
    SessionLedger,
    adaptive_reward,
    fluctuation_gamma,
    qoe_at_departure,
    qoe_lin,
    qoe_log,
    rebuffer_time,
    session_reward,
    window_qoe,
    window_scores,
    window_was,
)
from oracles import window_rollout_oracle

LIN = QoEWeights.linear_default()


def record(i, rate, reb=0.0, size=250_000, dl=1.0):
    return ChunkRecord(i, rate, size, dl, reb, 0.0)


def ledger_of(rates, rebs=None, viewed=None, r_min=350.0, bdv=0.0):
    rebs = rebs or [0.0] * len(rates)
    chunks = [record(i, r, reb) for i, (r, reb) in enumerate(zip(rates, rebs))]
    return SessionLedger(
        chunks=chunks,
        viewed_count=len(rates) if viewed is None else viewed,
        elapsed_s=100.0,
        bdv_at_departure_bytes=bdv,
        r_min_kbps=r_min,
    )


class TestRebufferTime:
    @pytest.mark.parametrize("dl,bvt,expect", [(2, 10, 0.0), (5, 1, 4.0), (3, 3, 0.0)])
    def test_examples(self, dl, bvt, expect):
        assert rebuffer_time(dl, bvt) == expect

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            rebuffer_time(-1, 0)


class TestDepartureQoe:
    def test_constant_quality_no_stall(self):
        led = ledger_of([1000.0] * 5)
        assert qoe_at_departure(led, 300.0, LIN) == pytest.approx(1000.0, abs=1e-12)

    def test_rebuffer_term_scaling(self):
        # one 3 s stall over 300 s wall time at weight 600 costs exactly 6
        led = ledger_of([1000.0] * 5, rebs=[0, 0, 3.0, 0, 0])
        base = qoe_at_departure(ledger_of([1000.0] * 5), 300.0, LIN)
        assert base - qoe_at_departure(led, 300.0, LIN) == pytest.approx(6.0, abs=1e-12)

    def test_alternating_variation(self):
        led = ledger_of([1000.0, 2000.0, 1000.0, 2000.0, 1000.0])
        # mean quality 1400, variation mean = 1000, no stalls
        assert qoe_at_departure(led, 300.0, LIN) == pytest.approx(1400.0 - 1000.0, abs=1e-12)

    def test_unviewed_chunks_do_not_add_quality(self):
        viewed = ledger_of([500.0, 500.0], viewed=2)
        extra = ledger_of([500.0, 500.0, 3000.0], viewed=2)
        assert (qoe_at_departure(viewed, 100.0, LIN)
                == qoe_at_departure(extra, 100.0, LIN))

    def test_unviewed_rebuffer_still_counts(self):
        quiet = ledger_of([500.0, 500.0, 3000.0], viewed=2)
        noisy = ledger_of([500.0, 500.0, 3000.0], rebs=[0, 0, 2.0], viewed=2)
        assert qoe_at_departure(quiet, 100.0, LIN) - qoe_at_departure(noisy, 100.0, LIN) \
            == pytest.approx(600 * 2.0 / 100.0, abs=1e-12)

    def test_degenerate_single_view(self):
        led = ledger_of([1000.0, 2000.0], viewed=1)
        assert qoe_at_departure(led, 10.0, LIN) == pytest.approx(1000.0, abs=1e-12)

    def test_degenerate_nothing_viewed(self):
        led = ledger_of([1000.0], rebs=[0.0], viewed=0)
        assert qoe_at_departure(led, 10.0, LIN) == 0.0


class TestSummedScores:
    def test_single_chunk_lin(self):
        assert qoe_lin(ledger_of([1000.0], viewed=1)) == pytest.approx(1000.0)

    def test_three_chunk_switching(self):
        led = ledger_of([350.0, 1000.0, 350.0])
        assert qoe_lin(led) == pytest.approx(1700.0 - 1300.0, abs=1e-12)

    def test_log_at_floor_is_pure_rebuffer(self):
        led = ledger_of([350.0, 350.0], rebs=[0.0, 1.5], r_min=350.0)
        w = QoEWeights.log_default(350.0)
        assert qoe_log(led) == pytest.approx(-w.alpha2 * 1.5, abs=1e-12)

    def test_log_switch_in_log_space(self):
        led = ledger_of([350.0, 700.0])
        expected = (math.log(1.0) + math.log(2.0)) - abs(math.log(700.0) - math.log(350.0))
        assert qoe_log(led) == pytest.approx(expected, abs=1e-12)


class TestSessionReward:
    def test_beta_zero_is_pure_qoe(self):
        led = ledger_of([1000.0] * 3, bdv=9e9)
        assert session_reward(led, 50.0, LIN, 0.0) == qoe_at_departure(led, 50.0, LIN)

    def test_empty_buffer_is_pure_qoe(self):
        led = ledger_of([1000.0] * 3, bdv=0.0)
        assert session_reward(led, 50.0, LIN, 1e-6) == qoe_at_departure(led, 50.0, LIN)

    def test_five_megabytes_at_micro_beta(self):
        led = ledger_of([1000.0] * 3, bdv=5e6)
        assert (qoe_at_departure(led, 50.0, LIN) - session_reward(led, 50.0, LIN, 1e-6)
                == pytest.approx(5.0, abs=1e-12))


class TestFluctuationGamma:
    def test_constant_window(self):
        assert fluctuation_gamma([3, 3, 3, 3, 3]) == 1.0

    def test_linear_ramp(self):
        expected = math.exp(-math.sqrt(2.5) / 3.0)
        assert fluctuation_gamma([1, 2, 3, 4, 5]) == pytest.approx(expected, abs=1e-12)
        assert fluctuation_gamma([1, 2, 3, 4, 5]) == pytest.approx(0.590, abs=1e-3)

    def test_scale_invariance(self):
        a = fluctuation_gamma([1, 2, 3, 4, 5])
        b = fluctuation_gamma([10, 20, 30, 40, 50])
        assert a == pytest.approx(b, abs=1e-15)

    def test_cold_start(self):
        assert fluctuation_gamma([]) == 1.0
        assert fluctuation_gamma([7.0]) == 1.0

    def test_positive_required(self):
        with pytest.raises(ValueError):
            fluctuation_gamma([1.0, -2.0])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0.1, 1e6), min_size=2, max_size=12))
    def test_range_and_monotonicity(self, samples):
        g = fluctuation_gamma(samples)
        assert 0.0 < g <= 1.0
        if len(set(samples)) == 1:
            assert g == 1.0


def make_window(sizes, delays, quality, chunk_s=2.0, cap=20.0, bvt0=0.0, bdv0=0.0,
                prev_quality=None):
    return PlanWindow(
        sizes_bytes=np.asarray(sizes, dtype=float),
        delays_s=np.asarray(delays, dtype=float),
        quality_units=np.asarray(quality, dtype=float),
        chunk_duration_s=chunk_s,
        buffer_cap_s=cap,
        start_bvt_s=bvt0,
        start_bdv_bytes=bdv0,
        prev_quality=prev_quality,
    )


class TestWindowQoe:
    def test_fast_downloads_give_pure_quality(self):
        win = make_window([[1000.0]] * 3, [[1e-9]] * 3, [750.0],
                          bvt0=4.0, bdv0=2e6, prev_quality=750.0)
        assert window_qoe([0, 0, 0], [0.0, 0.0, 0.0], win, LIN) == 750.0

    def test_forced_rebuffer_term(self):
        # two chunks, 2 s total stall over a 10 s window: term = 600*2/10 = 120
        win = make_window([[400_000.0]] * 2, [[2.0]] * 2, [1000.0],
                          chunk_s=4.0, bvt0=0.0, bdv0=0.0, prev_quality=1000.0)
        got = window_qoe([0, 0], [2.0, 4.0], win, LIN)
        assert got == pytest.approx(1000.0 - 120.0, abs=1e-9)

    def test_missing_prediction_rejected(self):
        with pytest.raises(ValueError):
            make_window([[1.0]], [[np.nan]], [100.0])

    def test_deterministic_pure_function(self):
        win = make_window([[2e5, 4e5]] * 4, [[1.0, 2.0]] * 4, [500.0, 1000.0],
                          bvt0=3.0, bdv0=1e6, prev_quality=500.0)
        args = ([0, 1, 1, 0], [0.0, 1.0, 0.5, 2.0], win, LIN)
        assert window_qoe(*args) == window_qoe(*args)
        assert window_was(*args[:3]) == window_was(*args[:3])


class TestWindowWas:
    def test_constant_volume_is_exact(self):
        # fill rate equals the uniform pre-buffer drain: S pinned at its start
        win = make_window([[3000.0]], [[3.0]], [1000.0],
                          bvt0=10.0, bdv0=10_000.0, prev_quality=1000.0)
        assert window_was([0], [0.0], win) == pytest.approx(10_000.0, rel=1e-12)

    def test_vanishes_for_tiny_chunks(self):
        win = make_window([[1.0]] * 3, [[1e-6]] * 3, [1.0], prev_quality=1.0)
        assert window_was([0] * 3, [4.0] * 3, win) < 1.0

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_matches_stepped_rollout(self, seed):
        rng = np.random.default_rng(seed)
        n, n_levels = 4, 3
        sizes = np.sort(rng.uniform(5e4, 9e5, (n, n_levels)), axis=1)
        delays = rng.uniform(0.1, 4.0, (n, n_levels))
        quality = np.sort(rng.uniform(100, 3000, n_levels))
        bvt0 = float(rng.uniform(0, 8))
        win = make_window(sizes, delays, quality, chunk_s=2.133, bvt0=bvt0,
                          bdv0=float(rng.uniform(0, 2e6)) if bvt0 > 0 else 0.0,
                          prev_quality=float(quality[0]))
        levels = rng.integers(0, n_levels, n).tolist()
        waits = rng.choice([0.0, 0.5, 1.0, 2.0], n).tolist()
        qoe_ref, was_ref = window_rollout_oracle(levels, waits, win, LIN)
        qoe_got, was_got = window_scores([levels], [waits], win, LIN)
        scale = max(abs(was_ref), 1.0)
        assert abs(was_got[0] - was_ref) <= 1e-3 * scale
        assert qoe_got[0] == pytest.approx(qoe_ref, rel=1e-9, abs=1e-9)


class TestAdaptiveReward:
    def test_beta_zero_equals_window_qoe(self):
        win = make_window([[2e5, 4e5]] * 3, [[1.0, 2.0]] * 3, [500.0, 1000.0],
                          bvt0=2.0, bdv0=5e5, prev_quality=1000.0)
        plan = ([1, 0, 1], [0.5, 0.0, 1.0])
        assert adaptive_reward(*plan, win, LIN, gamma=0.7, beta_per_byte=0.0) \
            == window_qoe(*plan, win, LIN)

    def test_unit_penalty(self):
        # fill rate (300000/3 = 1e5 B/s) matches the pre-buffer drain, so S
        # sits at 1e6 bytes: beta 1e-6 and gamma 1 cost exactly 1.0
        win = make_window([[300_000.0]], [[3.0]], [1000.0],
                          bvt0=10.0, bdv0=1_000_000.0, prev_quality=1000.0)
        got = adaptive_reward([0], [0.0], win, LIN, gamma=1.0, beta_per_byte=1e-6)
        want = window_qoe([0], [0.0], win, LIN) - 1.0
        assert got == pytest.approx(want, rel=1e-12)

    def test_gamma_bounds(self):
        win = make_window([[1.0]], [[1.0]], [1.0])
        with pytest.raises(ValueError):
            adaptive_reward([0], [0.0], win, LIN, gamma=0.0, beta_per_byte=0.0)
