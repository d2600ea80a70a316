"""Download planners: the QoE-bounded wastage-minimizing controller plus
MPC, RobustMPC, and buffer-threshold baselines.

The main planner jointly picks the next chunks' bitrates and inter-chunk
waits each step: it predicts per-(chunk, level) delays, computes the best
achievable window QoE by exhaustive enumeration (waits pinned at their lower
bounds), turns the configured loss ratio into a hard QoE floor, and runs a
seeded genetic search over (bitrate, wait) genomes maximizing the
volatility-discounted reward among plans above the floor. Only the first
(bitrate, wait) of the winning plan is executed; the rest is replanned next
step (receding horizon).
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field, replace

import numpy as np

from .media import VideoManifest
from .predictor import (
    DelayModel,
    hm_predict,
    predict_delay_seconds,
    robust_hm_predict,
)
from .qoe import PlanWindow, QoEWeights, RewardConfig, default_beta, fluctuation_gamma, window_scores
from .kernel import rollout_details

MPC_HORIZON = 5
BBA_RESERVOIR_S = 5.0
BBA_CUSHION_S = 10.0
DEFAULT_WAIT_GRID_S = (0.0, 0.25, 0.5, 1.0, 2.0, 4.0)


@dataclass(frozen=True)
class GAConfig:
    size_pop: int = 50
    max_iter: int = 200
    prob_mut: float = 0.001
    precision: float = 0.1   # continuous-gene quantization; vacuous on this integer genome
    early_stop: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.size_pop < 2 or self.max_iter < 1:
            raise ValueError("need size_pop >= 2 and max_iter >= 1")


@dataclass(frozen=True)
class PlannerConfig:
    lookahead: int = 5                                    # chunks beyond the current one
    wait_grid_s: tuple[float, ...] = DEFAULT_WAIT_GRID_S  # candidate waits, clamped per-plan
    reward: RewardConfig = field(default_factory=RewardConfig)
    ga: GAConfig = field(default_factory=GAConfig)
    buffer_cap_s: float = 20.0
    memo: bool = False          # cache the QoE bound on a discretized state key
    memo_bvt_step_s: float = 0.5
    memo_delay_step_s: float = 0.1
    memo_max_entries: int = 65536

    def __post_init__(self):
        if self.lookahead < 1:
            raise ValueError("lookahead must be >= 1")
        grid = tuple(sorted(float(w) for w in self.wait_grid_s))
        if not grid or grid[0] != 0.0 or any(w < 0 for w in grid):
            raise ValueError("wait grid must be non-negative and contain 0")
        object.__setattr__(self, "wait_grid_s", grid)


@dataclass(frozen=True)
class DownloadPlan:
    """Joint decision vector over the window: ladder indices and waits."""

    level_indices: tuple[int, ...]
    waits_s: tuple[float, ...]

    def __post_init__(self):
        if len(self.level_indices) != len(self.waits_s) or not self.level_indices:
            raise ValueError("plan needs matching, nonempty levels and waits")

    def bitrates_kbps(self, ladder) -> tuple[float, ...]:
        return tuple(ladder.levels_kbps[i] for i in self.level_indices)


@dataclass
class ControllerState:
    """Everything a controller may look at when deciding chunk k."""

    chunk_index: int
    prev_level: int | None
    bvt_s: float
    bdv_bytes: float
    now_s: float
    throughput_history_Bps: list[float] = field(default_factory=list)
    delay_error_history: list[float] = field(default_factory=list)
    history_samples: list = field(default_factory=list)   # HistorySample, time-ordered


@dataclass
class Decision:
    level: int
    wait_s: float
    cold_start: bool = False
    predicted_delay_s: float | None = None
    gamma: float | None = None
    max_qoe: float | None = None
    qoe_bound: float | None = None
    plan_qoe: float | None = None
    plan_was: float | None = None
    plan: DownloadPlan | None = None


# -- delay oracles ------------------------------------------------------------


class HarmonicMeanOracle:
    """Delay matrix from the harmonic mean of recent realized throughputs."""

    name = "hm"

    def predict(self, state: ControllerState, sizes: np.ndarray) -> np.ndarray:
        thr = state.throughput_history_Bps
        return np.array([[hm_predict(thr, s) for s in row] for row in sizes])


class RobustHarmonicMeanOracle:
    """Harmonic-mean delays inflated by the recent worst prediction error."""

    name = "robust-hm"

    def predict(self, state: ControllerState, sizes: np.ndarray) -> np.ndarray:
        thr = state.throughput_history_Bps
        err = state.delay_error_history
        return np.array([[robust_hm_predict(thr, s, err) for s in row] for row in sizes])


class ModelOracle:
    """Transformer delay matrix with harmonic-mean fallback.

    For lookahead chunks the same history window is reused with the decision
    time advanced, per ladder level, by that level's own cumulative predicted
    delays; history samples are never fed back.
    """

    name = "model"

    def __init__(self, model: DelayModel):
        self.model = model
        self._fallback = HarmonicMeanOracle()

    def predict(self, state: ControllerState, sizes: np.ndarray) -> np.ndarray:
        T = self.model.config.history_len
        samples = state.history_samples
        if len(samples) < T:
            return self._fallback.predict(state, sizes)
        try:
            recent = samples[-T:]
            x_raw = np.array([[s.chunk_bytes, s.throughput_Bps] for s in recent])
            ages = np.array([state.now_s - s.sample_time_s for s in recent])
            n, n_levels = sizes.shape
            delays = np.empty((n, n_levels))
            advance = np.zeros(n_levels)
            x_b = np.broadcast_to(x_raw, (n_levels, T, 2))
            for i in range(n):
                deltas_b = ages[None, :] + advance[:, None]
                row = predict_delay_seconds(self.model, x_b, deltas_b, sizes[i])
                delays[i] = row
                advance = advance + row
            return delays
        except FloatingPointError:
            return self._fallback.predict(state, sizes)


# -- window construction and the QoE bound ------------------------------------------


def build_window(manifest: VideoManifest, state: ControllerState, n: int,
                 delays: np.ndarray, weights: QoEWeights, buffer_cap_s: float) -> PlanWindow:
    k = state.chunk_index
    sizes = manifest.size_matrix()[k:k + n]
    prev_quality = None
    if state.prev_level is not None:
        prev_quality = float(manifest.quality_levels(weights.mode)[state.prev_level])
    return PlanWindow(
        sizes_bytes=sizes,
        delays_s=np.asarray(delays, dtype=np.float64)[:n],
        quality_units=manifest.quality_levels(weights.mode),
        chunk_duration_s=manifest.chunk_duration_s,
        buffer_cap_s=buffer_cap_s,
        start_bvt_s=state.bvt_s,
        start_bdv_bytes=state.bdv_bytes,
        prev_quality=prev_quality,
    )


def _lexicographic_block(start: int, stop: int, n_levels: int, n: int) -> np.ndarray:
    g = np.arange(start, stop, dtype=np.int64)
    out = np.empty((len(g), n), dtype=np.int32)
    for pos in range(n):
        out[:, pos] = (g // n_levels ** (n - 1 - pos)) % n_levels
    return out


def max_qoe_plan(window: PlanWindow, weights: QoEWeights,
                 batch: int = 250_000) -> tuple[float, DownloadPlan]:
    """Best achievable window QoE and its plan, by exhaustive enumeration.

    Waits are pinned to their per-step lower bounds (zero requests, clamped up
    only when the buffer would overflow). Ties break to the lexicographically
    smallest bitrate sequence — enumeration order guarantees it.
    """
    n, n_levels = window.n_chunks, window.n_levels
    total = n_levels ** n
    best_q = -math.inf
    best_row: np.ndarray | None = None
    for start in range(0, total, batch):
        stop = min(start + batch, total)
        block = _lexicographic_block(start, stop, n_levels, n)
        qoe, _ = window_scores(block, np.zeros_like(block, dtype=np.float64), window, weights)
        i = int(np.argmax(qoe))          # first max: lexicographically smallest
        if qoe[i] > best_q:
            best_q = float(qoe[i])
            best_row = block[i].copy()
    assert best_row is not None
    plan = DownloadPlan(tuple(int(v) for v in best_row), (0.0,) * n)
    return best_q, plan


def max_qoe(window: PlanWindow, weights: QoEWeights) -> float:
    return max_qoe_plan(window, weights)[0]


def qoe_bound(max_qoe_value: float, loss_ratio: float) -> float:
    """QoE floor for accepted plans. With a negative step maximum the scaled
    bound would exceed the maximum itself, so it degrades to the maximum."""
    return loss_ratio * max_qoe_value if max_qoe_value >= 0 else max_qoe_value


# -- genetic search ------------------------------------------------------------


def ga_search(window: PlanWindow, weights: QoEWeights, bound: float, gamma: float,
              beta_per_byte: float, wait_grid_s, ga: GAConfig,
              seed_plan: DownloadPlan) -> tuple[DownloadPlan, float, float, float]:
    """Constrained genome search: maximize QoE - gamma*beta*WAS subject to
    window QoE >= bound.

    Genome: n bitrate indices then n wait-grid indices. The seed plan (the
    QoE argmax with floor waits) joins the initial population, so a feasible
    candidate exists from generation zero whenever the loss ratio is <= 1.
    Returns (plan, fitness, plan_qoe, plan_was); deterministic per seed.
    """
    rng = np.random.default_rng(ga.seed)
    n, n_levels = window.n_chunks, window.n_levels
    grid = np.asarray(wait_grid_s, dtype=np.float64)
    n_waits = len(grid)
    glen = 2 * n
    highs = np.array([n_levels] * n + [n_waits] * n)

    pop = rng.integers(0, highs, size=(ga.size_pop, glen)).astype(np.int32)
    pop[0, :n] = seed_plan.level_indices
    pop[0, n:] = 0  # grid contains 0.0; the rollout clamps it up to the floor

    def evaluate(genomes: np.ndarray):
        levels = genomes[:, :n]
        waits = grid[genomes[:, n:]]
        qoe, was = window_scores(levels, waits, window, weights)
        feasible = qoe >= bound
        fitness = np.where(feasible, qoe - gamma * beta_per_byte * was, -np.inf)
        return fitness, qoe, was

    fitness, qoe, was = evaluate(pop)

    def better(i: int, key) -> bool:
        if key is None:
            return True
        if fitness[i] != key[0]:
            return fitness[i] > key[0]
        return tuple(pop[i]) < key[1]  # lowest bitrate, then smallest wait

    best_key = None
    best = None
    for i in range(ga.size_pop):
        if math.isfinite(fitness[i]) and better(i, best_key):
            best_key = (float(fitness[i]), tuple(pop[i]))
            best = (pop[i].copy(), float(qoe[i]), float(was[i]))

    stale = 0
    for _ in range(ga.max_iter):
        prev_best_fit = best_key[0] if best_key else -math.inf
        # tournament selection (k=3), uniform crossover, per-gene mutation
        contenders = rng.integers(0, ga.size_pop, size=(2 * ga.size_pop, 3))
        scores = np.where(np.isfinite(fitness[contenders]), fitness[contenders], -np.inf)
        parents = contenders[np.arange(2 * ga.size_pop), np.argmax(scores, axis=1)]
        mask = rng.random((ga.size_pop, glen)) < 0.5
        children = np.where(mask, pop[parents[::2]], pop[parents[1::2]]).astype(np.int32)
        mut = rng.random((ga.size_pop, glen)) < ga.prob_mut
        if mut.any():
            resample = rng.integers(0, highs, size=(ga.size_pop, glen)).astype(np.int32)
            children = np.where(mut, resample, children)
        if best_key is not None:
            children[0] = best_key[1]  # elitism
        pop = children
        fitness, qoe, was = evaluate(pop)
        for i in range(ga.size_pop):
            if math.isfinite(fitness[i]) and better(i, best_key):
                best_key = (float(fitness[i]), tuple(pop[i]))
                best = (pop[i].copy(), float(qoe[i]), float(was[i]))
        if best_key is not None and best_key[0] <= prev_best_fit:
            stale += 1
            if stale >= ga.early_stop:
                break
        else:
            stale = 0

    if best is None:
        # No feasible candidate surfaced (possible only for loss ratios > 1):
        # fall back to the QoE-optimal plan.
        qoe0, was0 = window_scores(
            np.asarray([seed_plan.level_indices], dtype=np.int32),
            np.zeros((1, n)), window, weights)
        return seed_plan, float(qoe0[0] - gamma * beta_per_byte * was0[0]), float(qoe0[0]), float(was0[0])
    genome, plan_qoe, plan_was = best
    plan = DownloadPlan(tuple(int(v) for v in genome[:n]),
                        tuple(float(grid[v]) for v in genome[n:]))
    return plan, best_key[0], plan_qoe, plan_was


# -- controllers ------------------------------------------------------------


class BufferPlanController:
    """Joint bitrate + wait planner with the QoE floor (the main controller)."""

    def __init__(self, manifest: VideoManifest, oracle, config: PlannerConfig | None = None,
                 weights: QoEWeights | None = None, name: str = "be-abr"):
        self.manifest = manifest
        self.oracle = oracle
        self.config = config or PlannerConfig()
        self.weights = weights or QoEWeights.linear_default()
        self.name = name
        reward = self.config.reward
        self.beta = reward.beta_per_byte if reward.beta_per_byte is not None else default_beta(manifest)
        self._memo: OrderedDict = OrderedDict()
        self._step = 0

    def decide(self, state: ControllerState) -> Decision:
        k = state.chunk_index
        n = min(self.config.lookahead + 1, self.manifest.chunk_count - k)
        if not state.throughput_history_Bps:
            return Decision(level=0, wait_s=0.0, cold_start=True, gamma=1.0)
        sizes = self.manifest.size_matrix()[k:k + n]
        delays = self.oracle.predict(state, sizes)
        window = build_window(self.manifest, state, n, delays, self.weights,
                              self.config.buffer_cap_s)
        gamma = fluctuation_gamma(state.throughput_history_Bps[-self.config.reward.cv_window:])
        maxq, max_plan = self._max_qoe(window, state, n, delays)
        bound = qoe_bound(maxq, self.config.reward.loss_ratio)
        ga_cfg = replace(self.config.ga, seed=self.config.ga.seed + self._step)
        self._step += 1
        plan, _fit, plan_qoe, plan_was = ga_search(
            window, self.weights, bound, gamma, self.beta,
            self.config.wait_grid_s, ga_cfg, max_plan)
        details = rollout_details(
            plan.level_indices, plan.waits_s, window.sizes_bytes, window.delays_s,
            window.quality_units, window.chunk_duration_s, window.buffer_cap_s,
            window.start_bvt_s, window.start_bdv_bytes,
            window.prev_quality if window.prev_quality is not None else 0.0,
            window.prev_quality is not None,
            self.weights.alpha1, self.weights.alpha2, self.weights.alpha3)
        level = plan.level_indices[0]
        return Decision(
            level=level, wait_s=details["waits_s"][0],
            predicted_delay_s=float(delays[0, level]), gamma=gamma,
            max_qoe=maxq, qoe_bound=bound, plan_qoe=plan_qoe, plan_was=plan_was,
            plan=plan)

    def _max_qoe(self, window: PlanWindow, state: ControllerState, n: int,
                 delays: np.ndarray) -> tuple[float, DownloadPlan]:
        if not self.config.memo:
            return max_qoe_plan(window, self.weights)
        key = (
            state.chunk_index, n, state.prev_level,
            round(state.bvt_s / self.config.memo_bvt_step_s),
            tuple(np.round(delays / self.config.memo_delay_step_s).astype(np.int64).ravel()),
        )
        hit = self._memo.get(key)
        if hit is not None:
            self._memo.move_to_end(key)
            # re-anchor the cached argmax on the true state so the bound stays achievable
            qoe, _ = window_scores(np.asarray([hit.level_indices], dtype=np.int32),
                                   np.zeros((1, n)), window, self.weights)
            return float(qoe[0]), hit
        maxq, plan = max_qoe_plan(window, self.weights)
        self._memo[key] = plan
        if len(self._memo) > self.config.memo_max_entries:
            self._memo.popitem(last=False)
        return maxq, plan


class MpcController:
    """Receding-horizon QoE maximizer over bitrates only (waits at the floor)."""

    def __init__(self, manifest: VideoManifest, oracle, weights: QoEWeights | None = None,
                 horizon: int = MPC_HORIZON, buffer_cap_s: float = 20.0, name: str = "mpc"):
        self.manifest = manifest
        self.oracle = oracle
        self.weights = weights or QoEWeights.linear_default()
        self.horizon = horizon
        self.buffer_cap_s = buffer_cap_s
        self.name = name

    def decide(self, state: ControllerState) -> Decision:
        k = state.chunk_index
        n = min(self.horizon, self.manifest.chunk_count - k)
        if not state.throughput_history_Bps:
            return Decision(level=0, wait_s=0.0, cold_start=True)
        sizes = self.manifest.size_matrix()[k:k + n]
        delays = self.oracle.predict(state, sizes)
        window = build_window(self.manifest, state, n, delays, self.weights, self.buffer_cap_s)
        maxq, plan = max_qoe_plan(window, self.weights)
        level = plan.level_indices[0]
        return Decision(level=level, wait_s=0.0, predicted_delay_s=float(delays[0, level]),
                        max_qoe=maxq, plan=plan)


def bba_select(bvt_s: float, ladder, reservoir_s: float = BBA_RESERVOIR_S,
               cushion_s: float = BBA_CUSHION_S) -> int:
    """Buffer-threshold level map: floor rate below the reservoir, ceiling
    above reservoir+cushion, linear in bitrate between, rounded down to a level."""
    if bvt_s < 0:
        raise ValueError("buffer level must be >= 0")
    levels = ladder.levels_kbps
    if bvt_s <= reservoir_s:
        return 0
    if bvt_s >= reservoir_s + cushion_s:
        return len(levels) - 1
    rate = levels[0] + (bvt_s - reservoir_s) / cushion_s * (levels[-1] - levels[0])
    level = 0
    for j, r in enumerate(levels):
        if r <= rate:
            level = j
    return level


class BbaController:
    def __init__(self, manifest: VideoManifest, reservoir_s: float = BBA_RESERVOIR_S,
                 cushion_s: float = BBA_CUSHION_S, name: str = "bba"):
        self.manifest = manifest
        self.reservoir_s = reservoir_s
        self.cushion_s = cushion_s
        self.name = name

    def decide(self, state: ControllerState) -> Decision:
        level = bba_select(state.bvt_s, self.manifest.ladder, self.reservoir_s, self.cushion_s)
        return Decision(level=level, wait_s=0.0)


CONTROLLER_KINDS = ("be-abr", "mpc", "robust-mpc", "bba", "ablation-hm-beabr", "ablation-model-mpc")


def make_controller(kind: str, manifest: VideoManifest, model: DelayModel | None = None,
                    config: PlannerConfig | None = None, weights: QoEWeights | None = None):
    """Controller factory covering the baselines and the component ablations."""
    cfg = config or PlannerConfig()
    w = weights or QoEWeights.linear_default()

    def _model_oracle():
        if model is None:
            raise ValueError(f"controller {kind!r} needs a trained delay model")
        return ModelOracle(model)

    if kind == "be-abr":
        return BufferPlanController(manifest, _model_oracle() if model else HarmonicMeanOracle(),
                                    cfg, w, name=kind)
    if kind == "ablation-hm-beabr":
        return BufferPlanController(manifest, HarmonicMeanOracle(), cfg, w, name=kind)
    if kind == "mpc":
        return MpcController(manifest, HarmonicMeanOracle(), w,
                             buffer_cap_s=cfg.buffer_cap_s, name=kind)
    if kind == "ablation-model-mpc":
        return MpcController(manifest, _model_oracle(), w,
                             buffer_cap_s=cfg.buffer_cap_s, name=kind)
    if kind == "robust-mpc":
        return MpcController(manifest, RobustHarmonicMeanOracle(), w,
                             buffer_cap_s=cfg.buffer_cap_s, name=kind)
    if kind == "bba":
        return BbaController(manifest, name=kind)
    raise ValueError(f"unknown controller {kind!r}; choose from {CONTROLLER_KINDS}")
