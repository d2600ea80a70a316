"""Command-line surface: session runs, sweeps, predictor training, generators.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import kernel
from .controller import CONTROLLER_KINDS, GAConfig, PlannerConfig
from .media import (
    BitrateLadder,
    SD_LADDER_KBPS,
    UHD_LADDER_KBPS,
    load_manifest,
    save_manifest,
    synth_manifest,
)
from .predictor import (
    DelayModel,
    PredictorConfig,
    TrainConfig,
    eval_metrics,
    fit,
    hm_predict,
    load_checkpoint,
    load_dataset_csv,
    predict_delay_seconds,
    save_checkpoint,
    save_dataset_csv,
    split_dataset,
    synthetic_dataset,
)
from .qoe import RewardConfig
from .sim import (
    DepartureModel,
    ExperimentSpec,
    SessionConfig,
    run_batch,
    write_results_csv,
)
from .traces import load_trace_csv, save_trace_csv, synth_trace


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's default 2
        raise UsageError(message)


def build_parser() -> Parser:
    p = Parser(prog="beabr", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def add_session_flags(sp):
        sp.add_argument("--manifest", required=True, help="manifest JSON path")
        sp.add_argument("--trace", action="append", required=True,
                        help="trace CSV path (repeatable for sweeps)")
        sp.add_argument("--controller", default="be-abr",
                        help=f"one of {', '.join(CONTROLLER_KINDS)}; comma-list for sweeps")
        sp.add_argument("--departure", default="none",
                        help="f1 | f2 | fixed:<seconds> | none")
        sp.add_argument("--p", type=float, default=0.2, help="watch-to-end probability")
        sp.add_argument("--a", type=float, default=10.0, help="browsing-skew coefficient")
        sp.add_argument("--beta", type=float, default=None,
                        help="wastage weight per byte (default: ladder-scaled)")
        sp.add_argument("--loss-ratio", type=float, default=0.9,
                        help="fraction of the per-step max QoE any plan must retain")
        sp.add_argument("--lookahead", type=int, default=5)
        sp.add_argument("--l-max", type=float, default=20.0, help="buffer cap, seconds")
        sp.add_argument("--clock", choices=("media", "natural"), default="media",
                        help="departure ratio interpreted in media or wall-clock time")
        sp.add_argument("--overhead-bytes", type=float, default=0.0,
                        help="per-request transport overhead (connection ramp cost)")
        sp.add_argument("--model", default=None, help="delay-model checkpoint for be-abr/ablations")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--reps", type=int, default=1)
        sp.add_argument("--out", default=None, help="results CSV path")
        sp.add_argument("--normalize", default=None,
                        help="normalize aggregate rows against this controller")
        sp.add_argument("--timing", action="store_true",
                        help="record wall-clock plan latency (breaks byte-reproducibility)")

    run_p = sub.add_parser("run", help="run one session")
    add_session_flags(run_p)

    sweep_p = sub.add_parser("sweep", help="run a controller x trace x seed grid")
    add_session_flags(sweep_p)

    tp = sub.add_parser("train-predictor", help="train the delay model")
    tp.add_argument("--dataset", default=None, help="window CSV (default: synthetic)")
    tp.add_argument("--synthetic-windows", type=int, default=50_000)
    tp.add_argument("--history-len", type=int, default=8)
    tp.add_argument("--state-dim", type=int, default=16)
    tp.add_argument("--d-model", type=int, default=64)
    tp.add_argument("--batch-size", type=int, default=512)
    tp.add_argument("--max-epochs", type=int, default=20)
    tp.add_argument("--seed", type=int, default=0)
    tp.add_argument("--out", required=True, help="checkpoint path (.npz)")
    tp.add_argument("--dump-dataset", default=None, help="also write the training CSV here")

    ep = sub.add_parser("eval-predictor", help="evaluate a checkpoint against targets")
    ep.add_argument("--dataset", default=None, help="window CSV (default: synthetic)")
    ep.add_argument("--synthetic-windows", type=int, default=10_000)
    ep.add_argument("--history-len", type=int, default=None,
                    help="override window length when reading the CSV")
    ep.add_argument("--seed", type=int, default=1)
    ep.add_argument("--model", required=True)

    gt = sub.add_parser("gen-trace", help="write a synthetic throughput trace")
    gt.add_argument("--kind", choices=("constant", "step", "ar1", "regime"), default="ar1")
    gt.add_argument("--throughput-bps", type=float, default=1e6)
    gt.add_argument("--levels-bps", default="1000000,2000000")
    gt.add_argument("--period", type=float, default=10.0)
    gt.add_argument("--mean-bps", type=float, default=1e6)
    gt.add_argument("--rho", type=float, default=0.9)
    gt.add_argument("--sigma-bps", type=float, default=None)
    gt.add_argument("--switch-prob", type=float, default=0.02)
    gt.add_argument("--points", type=int, default=600)
    gt.add_argument("--dt", type=float, default=0.5)
    gt.add_argument("--seed", type=int, default=0)
    gt.add_argument("--out", required=True)

    gm = sub.add_parser("gen-manifest", help="write a synthetic video manifest")
    gm.add_argument("--ladder", default="sd", help="sd | uhd | comma-separated kbps")
    gm.add_argument("--chunks", type=int, default=150)
    gm.add_argument("--chunk-duration", type=float, default=2.133)
    gm.add_argument("--jitter", type=float, default=0.15)
    gm.add_argument("--seed", type=int, default=0)
    gm.add_argument("--out", required=True)

    return p


def _parse_departure(args) -> tuple[DepartureModel | None, float | None]:
    spec = args.departure
    if spec == "none":
        return None, None
    if spec == "f1":
        return DepartureModel("uniform_f1", args.p, args.a), None
    if spec == "f2":
        return DepartureModel("logarithmic_f2", args.p, args.a), None
    if spec.startswith("fixed:"):
        try:
            return None, float(spec.split(":", 1)[1])
        except ValueError as exc:
            raise UsageError(f"bad fixed departure {spec!r}") from exc
    raise UsageError(f"unknown departure {spec!r} (use f1|f2|fixed:<s>|none)")


def _parse_ladder(spec: str) -> BitrateLadder:
    if spec == "sd":
        return BitrateLadder(SD_LADDER_KBPS)
    if spec == "uhd":
        return BitrateLadder(UHD_LADDER_KBPS)
    return BitrateLadder(tuple(float(v) for v in spec.split(",")))


def _cmd_session(args, single: bool) -> int:
    manifest = load_manifest(args.manifest)
    traces = tuple(load_trace_csv(path) for path in args.trace)
    controllers = tuple(c.strip() for c in args.controller.split(","))
    for c in controllers:
        if c not in CONTROLLER_KINDS:
            raise UsageError(f"unknown controller {c!r}; choose from {CONTROLLER_KINDS}")
    departure, fixed_s = _parse_departure(args)
    model = load_checkpoint(args.model) if args.model else None
    planner = PlannerConfig(
        lookahead=args.lookahead,
        reward=RewardConfig(beta_per_byte=args.beta, loss_ratio=args.loss_ratio),
        ga=GAConfig(seed=args.seed),
        buffer_cap_s=args.l_max,
    )
    spec = ExperimentSpec(
        controllers=controllers,
        traces=traces,
        manifest=manifest,
        departure=departure,
        fixed_departure_s=fixed_s,
        repetitions=1 if single else args.reps,
        base_seed=args.seed,
        planner=planner,
        session=SessionConfig(buffer_cap_s=args.l_max, departure_clock=args.clock,
                              collect_timing=args.timing,
                              request_overhead_bytes=args.overhead_bytes),
        model=model,
        normalize_against=args.normalize,
    )
    results, aggregates = run_batch(spec)
    failures = [r for r in results if r.error]
    for r in results:
        if r.error:
            print(f"FAILED {r.controller} on {r.trace} seed {r.seed}: {r.error}", file=sys.stderr)
        else:
            print(
                f"{r.controller:>18s}  {r.trace:<14s} seed={r.seed} t0={r.departure_s:8.2f}s  "
                f"qoe_lin={r.qoe_lin:10.1f}  wastage={r.wastage_bytes / 1e6:7.3f} MB  "
                f"mean_bdv={r.mean_bdv_bytes / 1e6:6.3f} MB  reb={r.rebuffer_ratio * 100:.3f}%"
            )
    for row in aggregates:
        if row.get("normalized"):
            print(f"mean[{row['controller']}] sessions={row['sessions']} "
                  f"(relative to {args.normalize}) qoe_lin={row['qoe_lin']:.3f} "
                  f"qoe_log={row['qoe_log']:.3f} wastage={row['wastage_bytes']:.3f} "
                  f"mean_bdv={row['mean_bdv_bytes']:.3f}")
        else:
            print(f"mean[{row['controller']}] sessions={row['sessions']} "
                  f"qoe_lin={row['qoe_lin']:.1f} qoe_log={row['qoe_log']:.2f} "
                  f"wastage={row['wastage_MB']:.3f} MB "
                  f"mean_bdv={row['mean_bdv_bytes'] / 1e6:.3f} MB")
    if args.out:
        write_results_csv(results, aggregates, args.out, collect_timing=args.timing)
        print(f"wrote {args.out}")
    return 2 if failures else 0


def _cmd_train(args) -> int:
    if args.dataset:
        dataset = load_dataset_csv(args.dataset, args.history_len)
    else:
        dataset = synthetic_dataset(args.synthetic_windows, args.history_len, seed=args.seed)
    if args.dump_dataset:
        save_dataset_csv(dataset, args.dump_dataset)
    cfg = PredictorConfig(history_len=args.history_len, state_dim=args.state_dim,
                          d_model=args.d_model)
    model = DelayModel.create(cfg, seed=args.seed)
    result = fit(model, dataset,
                 TrainConfig(batch_size=args.batch_size, max_epochs=args.max_epochs,
                             seed=args.seed), verbose=True)
    save_checkpoint(model, args.out)
    print(f"val MSE {result.initial_val_mse:.5f} -> {result.best_val_mse:.5f} "
          f"({result.epochs_run} epochs, {result.steps_run} steps); wrote {args.out}")
    return 0


def _cmd_eval(args) -> int:
    model = load_checkpoint(args.model)
    T = args.history_len or model.config.history_len
    if args.dataset:
        dataset = load_dataset_csv(args.dataset, T)
        test = dataset
    else:
        dataset = synthetic_dataset(args.synthetic_windows, T, seed=args.seed)
        _, _, test = split_dataset(dataset, seed=args.seed)
    pred = predict_delay_seconds(model, test.x, test.deltas, test.d_star)
    m = eval_metrics(pred, test.target_s)
    hm = np.array([hm_predict(test.x[i, :, 1], test.d_star[i]) for i in range(len(test))])
    mh = eval_metrics(hm, test.target_s)
    print(f"model          MAE {m.mae:.4f}  RMSE {m.rmse:.4f}  MAPE {m.mape_pct:.2f}%")
    print(f"harmonic-mean  MAE {mh.mae:.4f}  RMSE {mh.rmse:.4f}  MAPE {mh.mape_pct:.2f}%")
    if m.mape_excluded:
        print(f"({m.mape_excluded} zero-target rows excluded from MAPE)")
    return 0


def _cmd_gen_trace(args) -> int:
    params: dict = {}
    if args.kind == "constant":
        params["throughput_Bps"] = args.throughput_bps
    elif args.kind == "step":
        params["levels_Bps"] = tuple(float(v) for v in args.levels_bps.split(","))
        params["period_s"] = args.period
    else:
        params["mean_Bps"] = args.mean_bps
        params["rho"] = args.rho
        if args.sigma_bps is not None:
            params["sigma_Bps"] = args.sigma_bps
        params["n_points"] = args.points
        params["dt_s"] = args.dt
        if args.kind == "regime":
            params.pop("mean_Bps")
            params.pop("rho")
            params.pop("sigma_Bps", None)
            params["switch_prob"] = args.switch_prob
    trace = synth_trace(args.kind, params, seed=args.seed)
    save_trace_csv(trace, args.out)
    print(f"wrote {args.out} ({len(trace.times_s)} points, "
          f"mean {trace.mean_throughput_Bps() / 1e6:.3f} MB/s)")
    return 0


def _cmd_gen_manifest(args) -> int:
    manifest = synth_manifest(_parse_ladder(args.ladder), args.chunks,
                              args.chunk_duration, seed=args.seed, jitter=args.jitter)
    save_manifest(manifest, args.out)
    print(f"wrote {args.out} ({manifest.chunk_count} chunks x {len(manifest.ladder)} levels, "
          f"kernel backend: {kernel.BACKEND})")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        if args.command == "run":
            return _cmd_session(args, single=True)
        if args.command == "sweep":
            return _cmd_session(args, single=False)
        if args.command == "train-predictor":
            return _cmd_train(args)
        if args.command == "eval-predictor":
            return _cmd_eval(args)
        if args.command == "gen-trace":
            return _cmd_gen_trace(args)
        if args.command == "gen-manifest":
            return _cmd_gen_manifest(args)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
