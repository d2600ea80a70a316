"""Transmission-delay prediction: the time-aware transformer and rule baselines."""

from .baselines import EvalMetrics, eval_metrics, harmonic_mean, hm_predict, robust_hm_predict
from .data import (
    CSV_HEADER,
    DelayDataset,
    HistorySample,
    HistoryWindow,
    load_dataset_csv,
    sample_midpoint,
    save_dataset_csv,
    split_dataset,
    synthetic_dataset,
    time_deltas,
)
from .model import (
    DelayModel,
    Normalizer,
    NumericError,
    PredictorConfig,
    forward_batch,
    load_checkpoint,
    predict_delay_seconds,
    predict_log_delay,
    save_checkpoint,
)
from .train import TrainConfig, TrainResult, evaluate_mse, fit, lr_schedule, train_step

__all__ = [
    "CSV_HEADER", "DelayDataset", "DelayModel", "EvalMetrics", "HistorySample",
    "HistoryWindow", "Normalizer", "NumericError", "PredictorConfig", "TrainConfig",
    "TrainResult", "eval_metrics", "evaluate_mse", "fit", "forward_batch",
    "harmonic_mean", "hm_predict", "load_checkpoint", "load_dataset_csv",
    "lr_schedule", "predict_delay_seconds", "predict_log_delay",
    "robust_hm_predict", "sample_midpoint", "save_checkpoint", "save_dataset_csv",
    "split_dataset", "synthetic_dataset", "time_deltas", "train_step",
]
