"""Shared fixtures: manifests, traces, a trained predictor, the component study.

The expensive fixtures are session-scoped: the predictor trains once on 50k
synthetic windows and the four-arm controller study runs once; the acceptance
tests and several unit tests read from them.
"""

from __future__ import annotations

import numpy as np
import pytest

from beabr.controller import GAConfig, PlannerConfig
from beabr.media import BitrateLadder, SD_LADDER_KBPS, synth_manifest
from beabr.predictor import DelayModel, PredictorConfig, TrainConfig, fit, synthetic_dataset
from beabr.qoe import QoEWeights, RewardConfig
from beabr.sim import DepartureModel, ExperimentSpec, SessionConfig, run_batch
from beabr.traces import synth_trace

# matches beabr.predictor.data._SLOWSTART_BYTES: the per-request transport cost
REQUEST_OVERHEAD_BYTES = 250_000.0

EXPERIMENT_REGIMES = (
    {"mean_Bps": 4.5e5, "rho": 0.92, "sigma_Bps": 4e4},
    {"mean_Bps": 1.1e6, "rho": 0.92, "sigma_Bps": 7e4},
)


@pytest.fixture(scope="session")
def sd_ladder():
    return BitrateLadder(SD_LADDER_KBPS)


@pytest.fixture(scope="session")
def sd_manifest(sd_ladder):
    return synth_manifest(sd_ladder, chunk_count=60, chunk_duration_s=2.133, seed=9)


@pytest.fixture(scope="session")
def experiment_traces():
    return tuple(
        synth_trace("regime", {"regimes": EXPERIMENT_REGIMES, "switch_prob": 0.01,
                               "n_points": 800, "dt_s": 0.5, "floor_Bps": 1.5e5},
                    seed=100 + i)
        for i in range(10)
    )


@pytest.fixture(scope="session")
def training_dataset():
    return synthetic_dataset(50_000, history_len=8, seed=11,
                             regime_means_Bps=(4.5e5, 7e5, 1.1e6))


@pytest.fixture(scope="session")
def trained_model(training_dataset):
    model = DelayModel.create(PredictorConfig(), seed=0)
    result = fit(model, training_dataset, TrainConfig(max_epochs=8, seed=5))
    model.train_result = result  # stashed for the acceptance checks
    return model


@pytest.fixture(scope="session")
def component_study(sd_manifest, experiment_traces, trained_model):
    """Four controller arms x 30 paired sessions on the regime traces.

    Planning runs under log-quality weights (stall-dominant, so predictor
    quality is decision-relevant); sessions are scored on both metrics and
    the comparisons read qoe_lin, matching the component-study reporting.
    """
    arms = ("be-abr", "ablation-hm-beabr", "ablation-model-mpc", "mpc")
    weights = QoEWeights.log_default(sd_manifest.ladder.min_kbps)
    spec = ExperimentSpec(
        controllers=arms,
        traces=experiment_traces,
        manifest=sd_manifest,
        departure=DepartureModel("uniform_f1", p_complete=0.2),
        repetitions=3,
        base_seed=50,
        planner=PlannerConfig(reward=RewardConfig(loss_ratio=0.9),
                              ga=GAConfig(seed=50)),
        session=SessionConfig(request_overhead_bytes=REQUEST_OVERHEAD_BYTES),
        model=trained_model,
        weights=weights,
    )
    results, _ = run_batch(spec)
    failed = [r for r in results if r.error]
    assert not failed, f"sessions failed: {[r.error for r in failed[:3]]}"
    grouped: dict[str, list] = {arm: [] for arm in arms}
    for r in results:
        grouped[r.controller].append(r)
    assert all(len(v) == 30 for v in grouped.values())
    return grouped


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)
