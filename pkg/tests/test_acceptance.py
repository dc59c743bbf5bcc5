"""Acceptance gate: one test and one printed pass/fail line per guarantee.

Tolerances are pinned where each check is asserted; accuracy comparisons use
the shared 5-seed session experiment and plain >= on seed means.
"""

import math
import time

import numpy as np
import pytest

from melkit.cli import content_checksum, main
from melkit.ensemble import SubsetId
from melkit.failover import (
    FailureTrace,
    LatencyModel,
    ModelPart,
    PlacementPlan,
    ServerSpec,
    ensemble_family,
    ensemble_latency,
    save_scenario,
    simulate,
    split_latency,
)
from melkit.genbounds import audit_random_instances

from test_cli import write_config
from test_failover import crafted_scenario, family_oracle
from test_nn import loss_through_graph, numeric_grad, rand_graph

P_VALUES = (0.0, 0.25, 0.5, 0.75, 1.0)


def criterion(num, ok, detail):
    print(f"{'PASS' if ok else 'FAIL'} criterion {num}: {detail}")
    assert ok, f"criterion {num}: {detail}"


def seed_mean(reports, subset):
    return float(np.mean([r.test_accuracy[subset] for r in reports]))


@pytest.fixture(scope="module")
def theory_audit():
    started = time.perf_counter()
    outcomes = audit_random_instances(100, seed=0, p_values=P_VALUES)
    return outcomes, time.perf_counter() - started


class TestTheory:
    def test_criterion_01_chain_identity(self, theory_audit):
        outcomes, seconds = theory_audit
        worst = max(abs(o.residual) for o in outcomes)
        criterion(
            1,
            len(outcomes) == 100 and worst < 1e-9 and seconds < 60.0,
            f"max |identity residual| {worst:.3e} over {len(outcomes)} instances in {seconds:.1f} s",
        )

    def test_criterion_02_bounds(self, theory_audit):
        outcomes, _ = theory_audit
        ok = True
        for o in outcomes:
            assert tuple(r.p for r in o.reports) == P_VALUES
            ok = ok and all(
                r.per_space_ok and r.ensemble_ok and r.data_processing_ok for r in o.reports
            )
        criterion(2, ok, f"per-space, weighted, and pair-processing bounds hold at p={list(P_VALUES)}")

    def test_criterion_03_gradients(self):
        worst = 0.0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            depth = int(rng.integers(1, 4))
            dims = [int(rng.integers(2, 6)) for _ in range(depth + 1)]
            g = rand_graph(rng, dims, final_relu=False)
            for b in g.biases:
                b.value = rng.normal(0.0, 0.3, size=b.value.shape)
            x = rng.normal(size=(4, dims[0]))
            labels = rng.integers(0, dims[-1], size=4)
            loss = loss_through_graph(g, x, labels)
            g.zero_grad()
            loss.backward()
            for p in g.parameters():
                num = numeric_grad(lambda: float(loss_through_graph(g, x, labels).value), p.value)
                denom = max(np.linalg.norm(num), np.linalg.norm(p.grad), 1e-8)
                worst = max(worst, float(np.linalg.norm(p.grad - num) / denom))
        criterion(3, worst < 1e-4, f"max relative gradient error {worst:.3e} over 20 random graphs")


class TestLearning:
    def test_criterion_04_combined_refines_singletons(self, experiment):
        m12 = seed_mean(experiment["mel"], SubsetId.of(1, 2))
        m1 = seed_mean(experiment["mel"], SubsetId.of(1))
        m2 = seed_mean(experiment["mel"], SubsetId.of(2))
        seconds = experiment["mel_seconds"]
        criterion(
            4,
            m12 >= m1 and m12 >= m2 and seconds < 300.0,
            f"combined {m12:.4f} >= singletons {m1:.4f}/{m2:.4f} over 5 seeds in {seconds:.0f} s",
        )

    def test_criterion_05_joint_beats_separate_training(self, experiment):
        joint = seed_mean(experiment["mel"], SubsetId.of(1, 2))
        separate = seed_mean(experiment["individual"], SubsetId.of(1, 2))
        criterion(5, joint >= separate, f"jointly trained combiner {joint:.4f} >= separately trained {separate:.4f}")

    def test_criterion_06_singletons_degrade_gracefully(self, experiment):
        single = 0.5 * (
            seed_mean(experiment["mel"], SubsetId.of(1)) + seed_mean(experiment["mel"], SubsetId.of(2))
        )
        m12 = seed_mean(experiment["mel"], SubsetId.of(1, 2))
        criterion(6, single >= 0.9 * m12, f"mean singleton {single:.4f} >= 0.9 * combined {m12:.4f}")

    def test_criterion_07_coarse_labels_ease_the_small_model(self, experiment):
        coarse = seed_mean(experiment["small_coarse"], SubsetId.of(1))
        fine = seed_mean(experiment["small_fine"], SubsetId.of(1))
        criterion(7, coarse >= fine, f"coarse-label small model {coarse:.4f} >= fine-label {fine:.4f}")


class TestDeployment:
    def test_criterion_08_family_matches_brute_force(self):
        matches = 0
        for case in range(50):
            rng = np.random.default_rng([8, case])
            widths = tuple(int(w) for w in rng.integers(2, 9, size=rng.integers(1, 4)))
            options = [
                (f"o{j}", () if rng.integers(2) == 0 else (int(rng.integers(2, 9)),))
                for j in range(int(rng.integers(1, 4)))
            ]
            m = int(rng.integers(2, 4))
            input_dim = int(rng.integers(2, 11))
            classes = int(rng.integers(2, 7))
            budget = int(rng.integers(50, 3000))
            entries = ensemble_family(widths, options, budget, m, input_dim, classes)
            got = [(e.blocks, e.option, e.demand, e.feasible) for e in entries]
            if got == family_oracle(widths, options, budget, m, input_dim, classes):
                matches += 1
        criterion(8, matches == 50, f"family enumeration matches the brute-force recount on {matches}/50 instances")

    def test_criterion_09a_parallel_never_slower_than_sequential(self):
        rng = np.random.default_rng(140)
        holds = 0
        for _ in range(25):
            m = int(rng.integers(2, 4))
            works = [float(rng.integers(1, 21)) for _ in range(m)]
            combine = float(rng.integers(1, 21))
            rep = float(rng.integers(1, 11))
            rtt = float(rng.integers(0, 4))
            members = tuple(range(1, m + 1))
            down_key = "downstream:" + "+".join(map(str, members))
            parts = [ModelPart(f"upstream:{i}", "upstream", 1.0, index=i) for i in members]
            parts.append(ModelPart(down_key, "downstream", 1.0, members=members))
            work = {f"upstream:{i}": works[i - 1] for i in members}
            work[down_key] = combine
            reps = {f"upstream:{i}": rep for i in members}
            stages = [ModelPart(f"stage:{j}", "stage", 1.0, index=j) for j in range(m + 1)]
            for j in range(m):
                work[f"stage:{j}"] = works[j]
                reps[f"stage:{j}"] = rep
            work[f"stage:{m}"] = combine
            latency = LatencyModel(1.0, rtt, work, reps)
            servers = [ServerSpec(f"s{i}", 99.0) for i in range(1, m + 2)]
            placement = PlacementPlan({p.key: f"s{j % (m + 1) + 1}" for j, p in enumerate(parts)})
            assignment = {f"stage:{j}": f"s{j % (m + 1) + 1}" for j in range(m + 1)}
            together = ensemble_latency(SubsetId(members), parts, placement, servers, latency)
            pipeline = split_latency(stages, assignment, servers, latency)
            if together <= pipeline:
                holds += 1
        criterion(9, holds == 25, f"(a) parallel <= sequential latency on {holds}/25 equal-hop scenarios")

    def test_criterion_09b_more_downtime_never_serves_more(self):
        requests = tuple(float(t) for t in np.arange(1.0, 300.0, 7.0))
        holds = 0
        for pair in range(20):
            rng = np.random.default_rng([9, pair])
            base, worse = [], []
            for sid in ("s1", "s2", "s3"):
                a = rng.random(6) < 0.3
                b = a | (rng.random(6) < 0.3)
                base.extend(_slot_events(a, sid, 50.0))
                worse.extend(_slot_events(b, sid, 50.0))
            frac_a = simulate(crafted_scenario(requests, tuple(sorted(base)))).summary["served_fraction"]
            frac_b = simulate(crafted_scenario(requests, tuple(sorted(worse)))).summary["served_fraction"]
            if frac_b <= frac_a:
                holds += 1
        criterion(9, holds == 20, f"(b) served fraction monotone on {holds}/20 dominated trace pairs")

    def test_criterion_09c_detection_lag_is_bounded(self):
        checked = 0
        late = 0
        for case in range(20):
            rng = np.random.default_rng([10, case])
            interval = float(rng.choice([3.0, 5.0, 10.0]))
            mult = float(rng.integers(1, 4))
            events = []
            for sid in ("s1", "s2", "s3"):
                events.extend(_slot_events(rng.random(6) < 0.5, sid, 50.0))
            trace = FailureTrace(interval, mult, tuple(sorted(events)))
            for t, sid, kind in trace.events:
                if kind != "down":
                    continue
                checked += 1
                if trace.deemed_up(sid, t + interval * mult):
                    late += 1
        criterion(
            9,
            checked >= 20 and late == 0,
            f"(c) every one of {checked} failures deemed down within interval*multiplier",
        )

    def test_criterion_09d_combiner_outage_falls_back_to_an_exit(self):
        result = simulate(crafted_scenario((90.0, 105.0, 110.0, 150.0, 199.0, 200.0, 210.0)))
        got = [(r.subset.key() if r.subset else None, r.served) for r in result.records]
        want = [("1+2", True), ("1+2", True), ("1", True), ("1", True), ("1", True), ("1+2", True), ("1+2", True)]
        criterion(
            9,
            got == want,
            "(d) singleton exit serves inside the deemed-down window, the pair otherwise",
        )


class TestDeterminism:
    def test_criterion_10_reruns_are_checksum_identical(self, tmp_path):
        cfg = str(write_config(
            tmp_path,
            plan={"epochs": 5, "batch_size": 16, "base_rate": 0.01, "warmup_epochs": 1, "fine_tune_epochs": 2, "seed": 0},
        ))
        train_sums = []
        for run in ("t1", "t2"):
            out = tmp_path / run
            assert main(["train", "--config", cfg, "--out", str(out)]) == 0
            train_sums.append(
                (
                    content_checksum(out / "report_mel_seed0.json"),
                    content_checksum(out / "curves_mel_seed0.csv"),
                )
            )
        scenario_path = tmp_path / "scenario.json"
        save_scenario(crafted_scenario((0.0, 50.0, 110.0, 200.0)), scenario_path)
        sim_sums = []
        for run in ("m1", "m2"):
            out = tmp_path / run
            assert main(["simulate", "--config", str(scenario_path), "--out", str(out)]) == 0
            sim_sums.append(
                (content_checksum(out / "summary.json"), content_checksum(out / "requests.csv"))
            )
        criterion(
            10,
            train_sums[0] == train_sums[1] and sim_sums[0] == sim_sums[1],
            f"train rerun {train_sums[0][0][:12]}.. and simulate rerun {sim_sums[0][0][:12]}.. are stable",
        )


def _slot_events(slots, sid, width):
    events = []
    down = False
    for j, is_down in enumerate(slots):
        t = j * width
        if is_down and not down:
            events.append((t, sid, "down"))
            down = True
        elif not is_down and down:
            events.append((t, sid, "up"))
            down = False
    return events
