"""Training loop for the delay model: warmup schedule, Adam, early stopping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import DelayDataset, split_dataset
from .model import DelayModel, Normalizer, forward_batch, mse_loss_and_grads


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 512
    warmup_steps: int = 5000
    patience: int = 7          # early-stop epochs without validation improvement
    max_epochs: int = 60
    seed: int = 0
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    lr_scale: float = 1.0      # multiplies the schedule; 1.0 is the standard form

    def __post_init__(self):
        if self.warmup_steps < 1 or self.patience < 1:
            raise ValueError("warmup_steps and patience must be >= 1")


def lr_schedule(step_num: int, d_model: int, warmup_steps: int) -> float:
    """Inverse-square-root warmup: ramps linearly to the peak at `warmup_steps`,
    then decays as step^-0.5."""
    if step_num < 1:
        raise ValueError("step_num starts at 1")
    return d_model ** -0.5 * min(step_num ** -0.5, step_num * warmup_steps ** -1.5)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    state.t += 1
    t = state.t
    for name, grad in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1 - beta1) * grad
        v *= beta2
        v += (1 - beta2) * grad * grad
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        params[name] -= lr * mhat / (np.sqrt(vhat) + eps)


def _standardize(model: DelayModel, ds: DelayDataset):
    xs, deltas, dstar = model.norm.apply(ds.x, ds.deltas, ds.d_star)
    return xs, deltas, dstar, np.log(ds.target_s)


def train_step(model: DelayModel, batch, opt: AdamState, step_num: int,
               config: TrainConfig) -> float:
    """One optimizer step on a standardized (x, deltas, d_star, log-target) batch."""
    xs, deltas, dstar, target_log = batch
    loss, grads, _ = mse_loss_and_grads(model, xs, deltas, dstar, target_log)
    lr = config.lr_scale * lr_schedule(step_num, model.config.d_model, config.warmup_steps)
    adam_step(model.params, grads, opt, lr)
    return loss


def evaluate_mse(model: DelayModel, ds: DelayDataset, batch_size: int = 4096) -> float:
    """Mean squared log-delay error on raw-unit data."""
    xs, deltas, dstar, target_log = _standardize(model, ds)
    total = 0.0
    for lo in range(0, len(ds), batch_size):
        hi = min(lo + batch_size, len(ds))
        y, _ = forward_batch(model.params, model.config, xs[lo:hi], deltas[lo:hi], dstar[lo:hi])
        total += float(np.sum((y - target_log[lo:hi]) ** 2))
    return total / len(ds)


@dataclass
class TrainResult:
    train_losses: list[float]
    val_mse: list[float]
    best_val_mse: float
    initial_val_mse: float
    epochs_run: int
    steps_run: int


def fit(model: DelayModel, dataset: DelayDataset, config: TrainConfig | None = None,
        verbose: bool = False) -> TrainResult:
    """Split, standardize, train with early stopping; restores the best params.

    The normalizer is fitted on the training split only. Deterministic for a
    fixed seed on a single thread.
    """
    cfg = config or TrainConfig()
    train, val, _test = split_dataset(dataset, seed=cfg.seed, fractions=cfg.split)
    model.norm = Normalizer.fit(train.x, train.deltas, train.d_star)
    xs, deltas, dstar, target_log = _standardize(model, train)

    rng = np.random.default_rng(cfg.seed + 1)
    opt = AdamState()
    best = {k: v.copy() for k, v in model.params.items()}
    initial_val = evaluate_mse(model, val) if len(val) else float("inf")
    best_val = initial_val
    since_best = 0
    losses: list[float] = []
    val_curve: list[float] = []
    step = 0
    epochs = 0
    for epoch in range(cfg.max_epochs):
        epochs = epoch + 1
        order = rng.permutation(len(train))
        for lo in range(0, len(train), cfg.batch_size):
            sel = order[lo:lo + cfg.batch_size]
            step += 1
            losses.append(train_step(
                model, (xs[sel], deltas[sel], dstar[sel], target_log[sel]), opt, step, cfg))
        vmse = evaluate_mse(model, val) if len(val) else losses[-1]
        val_curve.append(vmse)
        if verbose:
            print(f"epoch {epochs:3d}  step {step:6d}  train {losses[-1]:.5f}  val {vmse:.5f}")
        if vmse < best_val - 1e-12:
            best_val = vmse
            best = {k: v.copy() for k, v in model.params.items()}
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    model.params = best
    return TrainResult(losses, val_curve, best_val, initial_val, epochs, step)
