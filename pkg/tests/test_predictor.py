import math

import numpy as np
import pytest

from beabr.predictor import (
    DelayModel,
    HistorySample,
    HistoryWindow,
    Normalizer,
    NumericError,
    PredictorConfig,
    TrainConfig,
    eval_metrics,
    fit,
    forward_batch,
    harmonic_mean,
    hm_predict,
    load_checkpoint,
    load_dataset_csv,
    lr_schedule,
    robust_hm_predict,
    sample_midpoint,
    save_checkpoint,
    save_dataset_csv,
    split_dataset,
    synthetic_dataset,
    time_deltas,
    train_step,
)
from beabr.predictor.model import mse_loss_and_grads
from beabr.predictor.train import AdamState
from oracles import transformer_forward_oracle

SMALL = PredictorConfig(history_len=4, state_dim=8, d_model=16, n_heads=4, ff_dim=32)


def small_inputs(seed=7, batch=3, T=4):
    rng = np.random.default_rng(seed)
    return (rng.standard_normal((batch, T, 2)), rng.standard_normal((batch, T)),
            rng.standard_normal(batch), rng.standard_normal(batch))


class TestSampling:
    def test_midpoint_examples(self):
        assert sample_midpoint(10.0, 4.0) == 12.0
        assert sample_midpoint(0.0, 0.0) == 0.0

    def test_interval_identity(self):
        # interval between consecutive sample midpoints decomposes into
        # half the two download times plus the wait between them
        rng = np.random.default_rng(3)
        for _ in range(50):
            t_i = rng.uniform(0, 100)
            d_i, d_next, gap = rng.uniform(0.1, 5, size=3)
            t_next = t_i + d_i + gap
            tau = sample_midpoint(t_next, d_next) - sample_midpoint(t_i, d_i)
            assert tau == pytest.approx(0.5 * (d_next + d_i) + gap, abs=1e-12)

    def test_time_deltas(self):
        samples = tuple(HistorySample(1e5, 1e6, float(t)) for t in (0, 1, 2, 3))
        win = HistoryWindow(samples, now_s=3.0)
        assert np.allclose(time_deltas(win), [3, 2, 1, 0])
        assert time_deltas(win)[-1] == 0.0

    def test_deltas_strictly_decreasing(self):
        rng = np.random.default_rng(5)
        times = np.cumsum(rng.uniform(0.1, 3, size=6))
        win = HistoryWindow(tuple(HistorySample(1e5, 1e6, float(t)) for t in times),
                            now_s=float(times[-1] + 1))
        d = time_deltas(win)
        assert np.all(np.diff(d) < 0)

    def test_window_validation(self):
        good = tuple(HistorySample(1.0, 1.0, float(t)) for t in (0, 1))
        with pytest.raises(ValueError):
            HistoryWindow(good, now_s=0.5)
        with pytest.raises(ValueError):
            HistorySample(0.0, 1.0, 0.0)


class TestForward:
    def test_attention_normalized(self):
        model = DelayModel.create(SMALL, seed=1)
        x, dl, ds, _ = small_inputs(batch=16)
        y, attn = forward_batch(model.params, SMALL, x, dl, ds)
        assert np.all(np.isfinite(y))
        assert np.allclose(attn.sum(axis=-1), 1.0, atol=1e-6)
        assert np.all(attn > 0)

    def test_equal_logits_give_uniform_attention(self):
        model = DelayModel.create(SMALL, seed=1)
        model.params["time_wk"][:] = 0.0   # keys identical for every age
        model.params["time_bk"][:] = 0.3
        x, dl, ds, _ = small_inputs()
        _, attn = forward_batch(model.params, SMALL, x, dl, ds)
        assert np.allclose(attn, 0.25, atol=1e-12)

    def test_single_sample_window(self):
        cfg = PredictorConfig(history_len=1, state_dim=8, d_model=16, n_heads=4, ff_dim=32)
        model = DelayModel.create(cfg, seed=0)
        x, dl, ds, _ = small_inputs(T=1)
        _, attn = forward_batch(model.params, cfg, x, dl, ds)
        assert np.allclose(attn, 1.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_step_by_step_oracle(self, seed):
        model = DelayModel.create(SMALL, seed=seed)
        x, dl, ds, _ = small_inputs(seed=seed + 100, batch=4)
        y, _ = forward_batch(model.params, SMALL, x, dl, ds)
        for b in range(4):
            ref = transformer_forward_oracle(model.params, SMALL, x[b], dl[b], float(ds[b]))
            assert y[b] == pytest.approx(ref, abs=1e-6)

    def test_permutation_sensitivity(self):
        model = DelayModel.create(SMALL, seed=2)
        x, dl, ds, _ = small_inputs(seed=8, batch=1)
        y0, _ = forward_batch(model.params, SMALL, x, dl, ds)
        perm = [2, 0, 3, 1]
        y1, _ = forward_batch(model.params, SMALL, x[:, perm], dl[:, perm], ds)
        assert abs(y0[0] - y1[0]) > 1e-9  # position encoding is active

    def test_decoupler_weights_shared(self):
        model = DelayModel.create(SMALL, seed=3)
        p = model.params

        def decouple(x_row):
            a1 = np.maximum(x_row @ p["dec_w1"] + p["dec_b1"], 0.0)
            a2 = np.maximum(a1 @ p["dec_w2"] + p["dec_b2"], 0.0)
            return a2 @ p["dec_w3"] + p["dec_b3"]

        sample = np.array([0.4, -1.2])
        before = [decouple(sample).copy() for _ in range(4)]
        assert all(np.array_equal(before[0], v) for v in before)  # one parameter set
        p["dec_w1"][0, 0] += 0.05
        after = decouple(sample)
        assert not np.array_equal(before[0], after)  # every position shifts together

    def test_nonfinite_input_raises(self):
        model = DelayModel.create(SMALL, seed=1)
        x, dl, ds, _ = small_inputs()
        x[0, 0, 0] = np.nan
        with pytest.raises(NumericError):
            forward_batch(model.params, SMALL, x, dl, ds)

    def test_wrong_window_length(self):
        model = DelayModel.create(SMALL, seed=1)
        x, dl, ds, _ = small_inputs(T=5)
        with pytest.raises(ValueError):
            forward_batch(model.params, SMALL, x, dl, ds)


class TestGradients:
    def test_all_tensors_match_finite_differences(self):
        model = DelayModel.create(SMALL, seed=3)
        x, dl, ds, tgt = small_inputs(seed=7)
        _, grads, _ = mse_loss_and_grads(model, x, dl, ds, tgt)
        h = 1e-4
        for name in sorted(model.params):
            p = model.params[name]
            fd = np.zeros_like(p)
            it = np.nditer(p, flags=["multi_index"])
            for _ in it:
                ix = it.multi_index
                orig = p[ix]
                p[ix] = orig + h
                lp, _, _ = mse_loss_and_grads(model, x, dl, ds, tgt)
                p[ix] = orig - h
                lm, _, _ = mse_loss_and_grads(model, x, dl, ds, tgt)
                p[ix] = orig
                fd[ix] = (lp - lm) / (2 * h)
            denom = np.maximum(np.maximum(np.abs(grads[name]), np.abs(fd)), 1e-7)
            rel = np.abs(grads[name] - fd) / denom
            assert rel.max() <= 1e-4, f"{name}: max rel err {rel.max():.2e}"

    def test_single_sample_batch(self):
        model = DelayModel.create(SMALL, seed=4)
        x, dl, ds, tgt = small_inputs(seed=9, batch=1)
        loss, grads, _ = mse_loss_and_grads(model, x, dl, ds, tgt)
        assert math.isfinite(loss)
        h = 1e-4
        name = "time_wk"  # spot-check one tensor elementwise on the 1-sample batch
        p = model.params[name]
        for ix in np.ndindex(p.shape):
            orig = p[ix]
            p[ix] = orig + h
            lp, _, _ = mse_loss_and_grads(model, x, dl, ds, tgt)
            p[ix] = orig - h
            lm, _, _ = mse_loss_and_grads(model, x, dl, ds, tgt)
            p[ix] = orig
            fd = (lp - lm) / (2 * h)
            denom = max(abs(grads[name][ix]), abs(fd), 1e-7)
            assert abs(grads[name][ix] - fd) / denom <= 1e-4


class TestTraining:
    def test_lr_schedule_peak(self):
        assert lr_schedule(5000, 64, 5000) == pytest.approx(1.768e-3, abs=1e-6)

    def test_lr_schedule_ramp_linear(self):
        peak = lr_schedule(5000, 64, 5000)
        assert lr_schedule(2500, 64, 5000) == pytest.approx(peak / 2, rel=1e-12)

    def test_lr_schedule_decay(self):
        peak = lr_schedule(5000, 64, 5000)
        assert lr_schedule(20000, 64, 5000) == pytest.approx(peak / 2, rel=1e-12)

    def test_perfect_model_step_is_noop(self):
        model = DelayModel.create(SMALL, seed=5)
        x, dl, ds, _ = small_inputs(seed=11, batch=8)
        y, _ = forward_batch(model.params, SMALL, x, dl, ds)
        before = model.clone_params()
        loss = train_step(model, (x, dl, ds, y.copy()), AdamState(), 1, TrainConfig())
        assert loss == 0.0
        for k in before:
            assert np.allclose(model.params[k], before[k], atol=1e-12)

    def test_two_thousand_steps_halve_validation_mse(self):
        ds = synthetic_dataset(3000, history_len=4, seed=21)
        model = DelayModel.create(SMALL, seed=1)
        cfg = TrainConfig(batch_size=64, max_epochs=60, seed=3, patience=60)
        result = fit(model, ds, cfg)
        assert result.steps_run >= 2000
        assert result.best_val_mse <= 0.5 * result.initial_val_mse

    def test_training_is_deterministic(self):
        ds = synthetic_dataset(600, history_len=4, seed=2)
        finals = []
        for _ in range(2):
            model = DelayModel.create(SMALL, seed=9)
            fit(model, ds, TrainConfig(batch_size=128, max_epochs=2, seed=4))
            finals.append(model.clone_params())
        for k in finals[0]:
            assert np.array_equal(finals[0][k], finals[1][k])


class TestBaselines:
    def test_hm_worked_example(self):
        # throughputs 1, 2, 4 MB/s; harmonic mean 12/7; 12 MB takes 7 s
        thr = [1e6, 2e6, 4e6]
        assert harmonic_mean(thr) == pytest.approx(12e6 / 7)
        assert hm_predict(thr, 12e6) == pytest.approx(7.0, abs=1e-12)

    def test_hm_constant(self):
        assert hm_predict([5e5] * 8, 1e6) == pytest.approx(2.0)

    def test_hm_below_arithmetic_mean(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            thr = rng.uniform(1e5, 5e6, size=5)
            assert harmonic_mean(thr) <= np.mean(thr) + 1e-9

    def test_hm_uses_last_five(self):
        thr = [1.0] * 10 + [2.0] * 5
        assert hm_predict(thr, 10.0) == pytest.approx(5.0)

    def test_robust_equals_hm_without_errors(self):
        thr = [1e6] * 5
        assert robust_hm_predict(thr, 1e6, []) == hm_predict(thr, 1e6)

    def test_robust_inflates_by_max_error(self):
        thr = [1e6] * 5
        errs = [0.1, 0.5, 0.2, 0.0, 0.3]
        assert robust_hm_predict(thr, 1e6, errs) == pytest.approx(1.5 * hm_predict(thr, 1e6))

    def test_robust_never_below_hm(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            thr = rng.uniform(1e5, 5e6, size=6)
            errs = rng.uniform(0, 1, size=rng.integers(0, 8))
            assert robust_hm_predict(thr, 2e6, errs) >= hm_predict(thr, 2e6) - 1e-12


class TestEvalMetrics:
    def test_perfect(self):
        m = eval_metrics([1.0, 2.0], [1.0, 2.0])
        assert (m.mae, m.rmse, m.mape_pct) == (0.0, 0.0, 0.0)

    def test_double(self):
        m = eval_metrics([2.0], [1.0])
        assert (m.mae, m.rmse, m.mape_pct) == (1.0, 1.0, 100.0)

    def test_mixed(self):
        m = eval_metrics([1.0, 3.0], [2.0, 2.0])
        assert m.mae == 1.0 and m.rmse == 1.0 and m.mape_pct == pytest.approx(50.0)

    def test_zero_targets_excluded(self):
        m = eval_metrics([1.0, 2.0, 3.0], [0.0, 2.0, 2.0])
        assert m.mape_excluded == 1
        assert m.mape_pct == pytest.approx(25.0)

    def test_unpacks_as_triple(self):
        mae, rmse, mape = eval_metrics([1.0], [1.0])
        assert (mae, rmse, mape) == (0.0, 0.0, 0.0)


class TestPersistence:
    def test_checkpoint_round_trip_bit_exact(self, tmp_path):
        model = DelayModel.create(SMALL, seed=6)
        model.norm = Normalizer(mean_x=np.array([1.0, 2.0]), std_x=np.array([3.0, 4.0]),
                                mean_delta=5.0, std_delta=6.0, mean_dstar=7.0, std_dstar=8.0)
        path = str(tmp_path / "model.npz")
        save_checkpoint(model, path)
        again = load_checkpoint(path)
        assert again.config == model.config
        for k in model.params:
            assert np.array_equal(again.params[k], model.params[k])
        assert np.array_equal(again.norm.mean_x, model.norm.mean_x)
        assert again.norm.std_dstar == 8.0

    def test_dataset_csv_round_trip(self, tmp_path):
        ds = synthetic_dataset(40, history_len=4, seed=12)
        path = str(tmp_path / "windows.csv")
        save_dataset_csv(ds, path)
        header = open(path).readline().strip()
        assert header == "chunk_bytes,throughput_Bps,sample_time_s,target_delay_s"
        again = load_dataset_csv(path, history_len=4)
        assert len(again) == 40
        assert np.allclose(again.x, ds.x, rtol=1e-5)
        assert np.allclose(again.deltas, ds.deltas, atol=2e-6)
        assert np.allclose(again.target_s, ds.target_s, rtol=1e-6)

    def test_csv_bad_group_count(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("chunk_bytes,throughput_Bps,sample_time_s,target_delay_s\n1,1,0,0\n")
        with pytest.raises(ValueError, match="groups"):
            load_dataset_csv(path, history_len=4)


class TestSyntheticData:
    def test_shapes_and_positivity(self):
        ds = synthetic_dataset(200, history_len=6, seed=0)
        assert ds.x.shape == (200, 6, 2)
        assert np.all(ds.target_s > 0)
        assert np.all(ds.x > 0)
        assert np.all(ds.deltas > 0)

    def test_deterministic(self):
        a = synthetic_dataset(100, history_len=4, seed=3)
        b = synthetic_dataset(100, history_len=4, seed=3)
        assert np.array_equal(a.x, b.x) and np.array_equal(a.target_s, b.target_s)

    def test_split_fractions(self):
        ds = synthetic_dataset(1000, history_len=4, seed=1)
        tr, va, te = split_dataset(ds, seed=0)
        assert len(tr) == 800 and len(va) == 100
        assert len(tr) + len(va) + len(te) == 1000
