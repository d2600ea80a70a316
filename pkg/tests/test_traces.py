import numpy as np
import pytest

from beabr.traces import (
    NetworkTrace,
    TraceExhausted,
    convert_packet_log,
    load_trace_csv,
    save_trace_csv,
    simulate_download,
    synth_trace,
)


class TestTraceBasics:
    def test_validation(self):
        with pytest.raises(ValueError):
            NetworkTrace((0.0, 1.0), (1e6,))
        with pytest.raises(ValueError):
            NetworkTrace((0.0, 0.0), (1e6, 2e6))
        with pytest.raises(ValueError):
            NetworkTrace((0.0,), (-5.0,))

    def test_throughput_lookup_and_wrap(self):
        tr = NetworkTrace((0.0, 2.0), (1e6, 2e6), loop=True)
        assert tr.throughput_at(0.5) == 1e6
        assert tr.throughput_at(3.0) == 2e6
        assert tr.throughput_at(4.0 + 0.5) == 1e6  # period is 4 s

    def test_exhaustion(self):
        tr = NetworkTrace((0.0, 2.0), (1e6, 2e6), loop=False)
        with pytest.raises(TraceExhausted):
            tr.throughput_at(10.0)


class TestSimulateDownload:
    def test_constant_rate(self):
        tr = NetworkTrace((0.0,), (1e6,))
        assert simulate_download(tr, 0.0, 4e6) == pytest.approx(4.0, abs=1e-12)

    def test_step_trace_piecewise(self):
        # 1 MB/s for 2 s then 2 MB/s: 4 MB takes 2 + 1 = 3 s
        tr = NetworkTrace((0.0, 2.0), (1e6, 2e6))
        assert simulate_download(tr, 0.0, 4e6) == pytest.approx(3.0, abs=1e-12)

    def test_monotone_in_bytes(self):
        tr = synth_trace("ar1", {"mean_Bps": 8e5, "n_points": 100}, seed=3)
        sizes = [1, 1e4, 1e5, 1e6, 5e6]
        durs = [simulate_download(tr, 1.0, s) for s in sizes]
        assert durs == sorted(durs)
        assert durs[0] < 1e-4

    def test_bad_bytes(self):
        tr = NetworkTrace((0.0,), (1e6,))
        with pytest.raises(ValueError):
            simulate_download(tr, 0.0, 0)

    def test_non_loop_exhaustion(self):
        tr = NetworkTrace((0.0,), (1e3,), loop=False)
        with pytest.raises(TraceExhausted):
            simulate_download(tr, 0.0, 1e9)

    def test_matches_numeric_integration(self):
        tr = synth_trace("regime", seed=5)
        rng = np.random.default_rng(0)
        for _ in range(25):
            start = float(rng.uniform(0, 200))
            size = float(rng.uniform(1e4, 5e6))
            d = simulate_download(tr, start, size)
            # Riemann check on a fine grid
            grid = np.linspace(start, start + d, 20001)
            rates = np.array([tr.throughput_at(t) for t in grid[:-1]])
            integral = float(np.sum(rates * np.diff(grid)))
            assert integral == pytest.approx(size, rel=2e-3)


class TestSynthTrace:
    def test_constant(self):
        tr = synth_trace("constant", {"throughput_Bps": 3e6})
        assert tr.throughputs_Bps == (3e6,)

    def test_deterministic(self):
        a = synth_trace("ar1", seed=4)
        b = synth_trace("ar1", seed=4)
        assert a.throughputs_Bps == b.throughputs_Bps
        c = synth_trace("ar1", seed=5)
        assert c.throughputs_Bps != a.throughputs_Bps

    def test_ar1_zero_sigma_converges(self):
        tr = synth_trace("ar1", {"mean_Bps": 1e6, "sigma_Bps": 0.0, "start_Bps": 2e5,
                                 "n_points": 200}, seed=0)
        vals = np.array(tr.throughputs_Bps)
        gaps = np.abs(vals - 1e6)
        assert np.all(np.diff(gaps) <= 1e-6)
        assert gaps[-1] < gaps[0] * 1e-6

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            synth_trace("fractal")


class TestTraceIO:
    def test_csv_round_trip(self, tmp_path):
        tr = synth_trace("ar1", {"n_points": 50}, seed=2)
        path = tmp_path / "t.csv"
        save_trace_csv(tr, path)
        text = path.read_text()
        assert text.startswith("time_s,throughput_Bps\n")
        again = load_trace_csv(path)
        assert np.allclose(again.times_s, tr.times_s, atol=1e-6)
        assert np.allclose(again.throughputs_Bps, tr.throughputs_Bps, atol=1e-4)

    def test_packet_log_conversion(self, tmp_path):
        # 20 opportunities in the first 100 ms bin, 10 in the second
        path = tmp_path / "pkt.log"
        lines = [str(ms) for ms in range(0, 100, 5)] + [str(ms) for ms in range(100, 200, 10)]
        path.write_text("\n".join(lines) + "\n")
        tr = convert_packet_log(path, bin_s=0.1)
        assert tr.throughputs_Bps[0] == pytest.approx(20 * 1500 / 0.1)
        assert tr.throughputs_Bps[1] == pytest.approx(10 * 1500 / 0.1)
