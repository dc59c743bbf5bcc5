"""Shared fixtures: one full 5-seed strategy comparison reused across suites."""

import time

import pytest

from melkit.data import COARSE, SyntheticSpec, gen_hierarchical
from melkit.ensemble import SubsetId, all_subsets
from melkit.nn import LrSchedule
from melkit.training import MelWeights, TrainPlan, run_strategy, standard_spec

SEEDS = (0, 1, 2, 3, 4)


def default_plan(granularity=None):
    return TrainPlan(
        epochs=30,
        batch_size=64,
        schedule=LrSchedule(base_rate=0.005, warmup_epochs=3, total_epochs=30, min_rate=1e-4),
        fine_tune_epochs=5,
        granularity=granularity,
    )


@pytest.fixture(scope="session")
def experiment():
    """Reports for mel/individual plus fine and coarse small baselines, 5 seeds each."""
    data = gen_hierarchical(SyntheticSpec())
    spec = standard_spec(input_dim=16, num_fine=16, num_coarse=4)
    weights = MelWeights.uniform(all_subsets(2))
    plan = default_plan()

    grain_coarse = {SubsetId.of(1): COARSE}
    spec_coarse = standard_spec(input_dim=16, num_fine=16, num_coarse=4, granularity=grain_coarse)
    plan_coarse = default_plan(granularity=grain_coarse)

    out = {"mel": [], "individual": [], "small_fine": [], "small_coarse": []}
    started = time.perf_counter()
    for seed in SEEDS:
        out["mel"].append(run_strategy("mel", data, spec, weights, plan, seed).report)
        out["individual"].append(run_strategy("individual", data, spec, weights, plan, seed).report)
    out["mel_seconds"] = time.perf_counter() - started
    for seed in SEEDS:
        out["small_fine"].append(run_strategy("small", data, spec, weights, plan, seed).report)
        out["small_coarse"].append(run_strategy("small", data, spec_coarse, weights, plan_coarse, seed).report)
    return out
