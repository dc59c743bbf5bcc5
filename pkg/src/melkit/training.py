"""Training strategies for subset-indexed ensembles.

The joint objective is a weighted sum of per-subset empirical risks; every
subset with a positive weight contributes a cross-entropy head to one shared
backward pass per batch.  Baselines reuse the same engine: the standalone
baseline zeroes every weight except the full set, the individual baseline
trains upstreams in isolation before fitting combiners, and the small baseline
trains a single upstream with its exit head.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .data import FINE, DataView, LabeledDataset, process_dataset
from .ensemble import (
    EnsembleModel,
    EnsembleSpec,
    SubsetId,
    all_subsets,
    build_ensemble,
    subset_sort_key,
)
from .nn import AdamW, LrSchedule, Tensor, cosine_lr, softmax_cross_entropy

REPORT_FORMAT = "melkit-train-report"
REPORT_VERSION = 1

STRATEGIES = ("mel", "standalone", "individual", "small")


class ConfigError(ValueError):
    """Weights, granularity, and model do not describe the same experiment."""


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss)."""


@dataclass
class MelWeights:
    """Per-subset loss weights, with optional risk targets used for reporting."""

    lam: dict[SubsetId, float]
    gamma: dict[SubsetId, float] = field(default_factory=dict)

    def validate(self, subsets: list[SubsetId]) -> None:
        known = set(subsets)
        for s, w in self.lam.items():
            if s not in known:
                raise ConfigError(f"weight given for unknown subset {s}")
            if w < 0.0:
                raise ConfigError(f"negative weight {w} for subset {s}")
        if not any(w > 0.0 for w in self.lam.values()):
            raise ConfigError("at least one subset weight must be positive")
        for s in self.gamma:
            if s not in known:
                raise ConfigError(f"risk target given for unknown subset {s}")

    def active(self) -> list[SubsetId]:
        return sorted((s for s, w in self.lam.items() if w > 0.0), key=subset_sort_key)

    @classmethod
    def uniform(cls, subsets: list[SubsetId], value: float = 1.0) -> MelWeights:
        return cls({s: value for s in subsets})


@dataclass(frozen=True)
class TrainPlan:
    """Knobs shared by every strategy."""

    epochs: int
    batch_size: int
    schedule: LrSchedule
    fine_tune_epochs: int = 0
    seed: int = 0
    granularity: Mapping[SubsetId, str] | None = None
    weight_decay: float = 0.01

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.fine_tune_epochs < 0 or self.weight_decay < 0.0:
            raise ValueError("fine_tune_epochs and weight_decay must be non-negative")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    subset: SubsetId
    risk: float
    accuracy: float


@dataclass
class TrainReport:
    """Outcome of one training run.

    ``timing`` holds wall-clock data and is the only part excluded from
    content checksums, so repeated runs compare equal elsewhere.
    """

    strategy: str
    seed: int
    curves: list[EpochRecord]
    test_accuracy: dict[SubsetId, float]
    test_risk: dict[SubsetId, float]
    gamma_satisfied: dict[SubsetId, bool]
    param_counts: dict[SubsetId, int]
    timing: dict[str, float | str] = field(default_factory=dict)


def mel_loss(
    model: EnsembleModel,
    features: np.ndarray,
    weights: MelWeights,
    labels_by_subset: Mapping[SubsetId, np.ndarray],
) -> tuple[float, dict[SubsetId, float]]:
    """Weighted total loss and the unweighted per-subset cross-entropies."""
    weights.validate(model.subsets)
    total, per_subset = _mel_loss_tensor(model, Tensor(np.atleast_2d(np.asarray(features, dtype=np.float64))), weights.active(), {s: weights.lam[s] for s in weights.active()}, labels_by_subset)
    return float(total.value), {s: float(t.value) for s, t in per_subset.items()}


def _mel_loss_tensor(
    model: EnsembleModel,
    x: Tensor,
    active: list[SubsetId],
    lam: Mapping[SubsetId, float],
    labels_by_subset: Mapping[SubsetId, np.ndarray],
) -> tuple[Tensor, dict[SubsetId, Tensor]]:
    needed = sorted({i for s in active for i in s.members})
    for s in active:
        if s not in labels_by_subset:
            raise ConfigError(f"no labels supplied for weighted subset {s}")
    rep_cache = {i: model.upstream_rep_tensor(i, x) for i in needed}
    per_subset: dict[SubsetId, Tensor] = {}
    total: Tensor | None = None
    for s in active:
        ce = softmax_cross_entropy(model.head_logits_tensor(s, rep_cache), labels_by_subset[s])
        per_subset[s] = ce
        term = ce * lam[s]
        total = term if total is None else total + term
    assert total is not None
    return total, per_subset


def evaluate(model: EnsembleModel, s: SubsetId, view: DataView) -> float:
    """Accuracy of argmax predictions (lowest index wins ties) on a view."""
    if len(view.labels) == 0:
        raise ValueError("cannot evaluate on an empty view")
    logits = model.forward_subset(s, view.features)
    return float((np.argmax(logits, axis=1) == view.labels).mean())


def mean_risk(model: EnsembleModel, s: SubsetId, view: DataView) -> float:
    """Mean cross-entropy of subset ``s`` on a view."""
    if len(view.labels) == 0:
        raise ValueError("cannot evaluate on an empty view")
    logits = model.forward_subset_tensor(s, Tensor(view.features))
    return float(softmax_cross_entropy(logits, view.labels).value)


def _subset_views(model: EnsembleModel, data: LabeledDataset, plan: TrainPlan) -> dict[str, dict[SubsetId, DataView]]:
    """Train/val/test views per subset, checked against the model's label spaces."""
    out: dict[str, dict[SubsetId, DataView]] = {}
    splits = {tag: data.subset(tag) for tag in ("train", "val", "test")}
    for tag, part in splits.items():
        per: dict[SubsetId, DataView] = {}
        for s in model.subsets:
            view = process_dataset(part, s, plan.granularity)
            if view.num_classes != model.spec.num_classes[s]:
                raise ConfigError(
                    f"subset {s}: model expects {model.spec.num_classes[s]} classes "
                    f"but the {view.granularity} view has {view.num_classes}"
                )
            per[s] = view
        out[tag] = per
    return out


def _run_phase(
    model: EnsembleModel,
    views: dict[str, dict[SubsetId, DataView]],
    lam: Mapping[SubsetId, float],
    plan: TrainPlan,
    schedule: LrSchedule,
    epochs: int,
    trainable: list[Tensor],
    batch_rng: np.random.Generator,
    epoch_offset: int,
    curves: list[EpochRecord],
) -> None:
    active = sorted((s for s, w in lam.items() if w > 0.0), key=subset_sort_key)
    if not active:
        raise ConfigError("phase has no positively weighted subset")
    train_views = views["train"]
    features = train_views[active[0]].features
    labels = {s: train_views[s].labels for s in active}
    n = features.shape[0]
    opt = AdamW(trainable, weight_decay=plan.weight_decay)
    for e in range(epochs):
        lr = cosine_lr(schedule, e)
        order = batch_rng.permutation(n)
        risk_sum = {s: 0.0 for s in active}
        for start in range(0, n, plan.batch_size):
            idx = order[start : start + plan.batch_size]
            x = Tensor(features[idx])
            total, per_subset = _mel_loss_tensor(model, x, active, lam, {s: labels[s][idx] for s in active})
            if not np.isfinite(total.value):
                raise TrainingError(f"non-finite loss at epoch {epoch_offset + e}")
            for s in active:
                risk_sum[s] += float(per_subset[s].value) * len(idx)
            model.zero_grad()
            total.backward()
            opt.step(lr)
        for s in active:
            curves.append(
                EpochRecord(
                    epoch=epoch_offset + e,
                    subset=s,
                    risk=risk_sum[s] / n,
                    accuracy=evaluate(model, s, views["val"][s]),
                )
            )


def _finalize(
    model: EnsembleModel,
    views: dict[str, dict[SubsetId, DataView]],
    weights: MelWeights | None,
    strategy: str,
    plan: TrainPlan,
    curves: list[EpochRecord],
    started: float,
) -> TrainReport:
    subsets = model.subsets
    accuracy = {s: evaluate(model, s, views["test"][s]) for s in subsets}
    risk = {s: mean_risk(model, s, views["test"][s]) for s in subsets}
    gamma = weights.gamma if weights is not None else {}
    satisfied = {s: risk[s] <= gamma[s] for s in gamma}
    return TrainReport(
        strategy=strategy,
        seed=plan.seed,
        curves=curves,
        test_accuracy=accuracy,
        test_risk=risk,
        gamma_satisfied=satisfied,
        param_counts={s: model.param_count(s) for s in subsets},
        timing={
            "wall_clock_s": time.perf_counter() - started,
            "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        },
    )


def _fine_tune_schedule(plan: TrainPlan) -> LrSchedule:
    return LrSchedule(
        base_rate=plan.schedule.base_rate,
        warmup_epochs=0,
        total_epochs=plan.fine_tune_epochs,
        min_rate=plan.schedule.min_rate,
    )


def train_mel(model: EnsembleModel, data: LabeledDataset, weights: MelWeights, plan: TrainPlan, strategy: str = "mel") -> TrainReport:
    """Jointly train all weighted subsets; optionally fine-tune heads afterwards.

    The fine-tune phase freezes upstream parameters and re-fits exit and
    combiner heads with a fresh optimizer under a warmup-free schedule.
    """
    started = time.perf_counter()
    weights.validate(model.subsets)
    views = _subset_views(model, data, plan)
    lam = {s: weights.lam[s] for s in weights.active()}
    batch_rng = np.random.default_rng(plan.seed)
    curves: list[EpochRecord] = []
    _run_phase(model, views, lam, plan, plan.schedule, plan.epochs, model.parameters(), batch_rng, 0, curves)
    if plan.fine_tune_epochs > 0:
        _run_phase(
            model,
            views,
            lam,
            plan,
            _fine_tune_schedule(plan),
            plan.fine_tune_epochs,
            model.head_parameters(),
            batch_rng,
            plan.epochs,
            curves,
        )
    return _finalize(model, views, weights, strategy, plan, curves, started)


def train_standalone(model: EnsembleModel, data: LabeledDataset, plan: TrainPlan) -> TrainReport:
    """Weight only the full subset; otherwise identical to joint training."""
    full = SubsetId(tuple(range(1, model.num_upstreams + 1)))
    return train_mel(model, data, MelWeights({full: 1.0}), plan, strategy="standalone")


def train_individual(model: EnsembleModel, data: LabeledDataset, plan: TrainPlan) -> TrainReport:
    """Isolation baseline: per-upstream training, then combiners over frozen upstreams.

    Phase one trains each upstream with its exit head on the singleton view
    using a seed derived from (plan.seed, upstream index), so no upstream sees
    another's batch order.  Phase two trains every combiner head jointly with
    all upstream parameters frozen.
    """
    started = time.perf_counter()
    views = _subset_views(model, data, plan)
    curves: list[EpochRecord] = []
    for i in range(1, model.num_upstreams + 1):
        single = SubsetId.of(i)
        trainable = model.upstreams[i - 1].parameters() + model.heads[single].parameters()
        rng = np.random.default_rng([plan.seed, i])
        _run_phase(model, views, {single: 1.0}, plan, plan.schedule, plan.epochs, trainable, rng, 0, curves)
    multi = [s for s in model.subsets if len(s) >= 2]
    if multi:
        lam = {s: 1.0 for s in multi}
        trainable = model.head_parameters(min_size=2)
        rng = np.random.default_rng([plan.seed, 0])
        _run_phase(model, views, lam, plan, plan.schedule, plan.epochs, trainable, rng, plan.epochs, curves)
    return _finalize(model, views, None, "individual", plan, curves, started)


def train_small(model: EnsembleModel, data: LabeledDataset, plan: TrainPlan) -> TrainReport:
    """Train a single-upstream model (one upstream plus its exit head)."""
    if model.num_upstreams != 1:
        raise ConfigError(f"small strategy expects one upstream, got {model.num_upstreams}")
    return train_mel(model, data, MelWeights({SubsetId.of(1): 1.0}), plan, strategy="small")


def granularity_classes(num_fine: int, num_coarse: int, m: int, granularity: Mapping[SubsetId, str] | None) -> dict[SubsetId, int]:
    """Label-space size per subset implied by the granularity choices."""
    out: dict[SubsetId, int] = {}
    for s in all_subsets(m):
        grain = FINE if granularity is None else granularity.get(s, FINE)
        out[s] = num_fine if grain == FINE else num_coarse
    return out


def standard_spec(
    input_dim: int,
    num_fine: int,
    num_coarse: int,
    m: int = 2,
    widths: tuple[int, ...] = (16, 8),
    exit_hidden: tuple[int, ...] = (),
    downstream_hidden: tuple[int, ...] = (),
    granularity: Mapping[SubsetId, str] | None = None,
) -> EnsembleSpec:
    """Symmetric ensemble spec whose label spaces follow the granularity map."""
    from .ensemble import symmetric_spec

    classes = granularity_classes(num_fine, num_coarse, m, granularity)
    return symmetric_spec(input_dim, m, widths, classes, exit_hidden, downstream_hidden)


def small_spec(spec: EnsembleSpec, upstream: int = 1) -> EnsembleSpec:
    """Single-upstream spec copying one upstream and its exit head from ``spec``."""
    if not 1 <= upstream <= spec.num_upstreams:
        raise ConfigError(f"upstream {upstream} outside 1..{spec.num_upstreams}")
    single = SubsetId.of(upstream)
    return EnsembleSpec(
        input_dim=spec.input_dim,
        upstream_widths=(spec.upstream_widths[upstream - 1],),
        num_classes={SubsetId.of(1): spec.num_classes[single]},
        exit_hidden=(spec.head_hidden(single),),
        downstream_hidden={},
    )


@dataclass
class RunResult:
    report: TrainReport
    model: EnsembleModel


def run_strategy(
    strategy: str,
    data: LabeledDataset,
    spec: EnsembleSpec,
    weights: MelWeights,
    plan: TrainPlan,
    seed: int,
) -> RunResult:
    """Build a fresh model for (strategy, seed) and train it.

    Model initialization and batch order both derive from ``seed``, so the
    strategies are paired draw-for-draw when compared at equal seeds.
    """
    plan_s = replace(plan, seed=seed)
    if strategy == "small":
        small = build_ensemble(small_spec(spec), seed)
        grain = None
        if plan.granularity is not None:
            grain = {SubsetId.of(1): plan.granularity.get(SubsetId.of(1), FINE)}
        plan_small = replace(plan_s, granularity=grain)
        return RunResult(train_small(small, data, plan_small), small)
    model = build_ensemble(spec, seed)
    if strategy == "mel":
        return RunResult(train_mel(model, data, weights, plan_s), model)
    if strategy == "standalone":
        return RunResult(train_standalone(model, data, plan_s), model)
    if strategy == "individual":
        return RunResult(train_individual(model, data, plan_s), model)
    raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")


def report_to_json(report: TrainReport) -> dict:
    def by_key(d: Mapping[SubsetId, object]) -> dict:
        return {s.key(): d[s] for s in sorted(d, key=subset_sort_key)}

    return {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "strategy": report.strategy,
        "seed": report.seed,
        "test_accuracy": by_key(report.test_accuracy),
        "test_risk": by_key(report.test_risk),
        "gamma_satisfied": by_key(report.gamma_satisfied),
        "param_counts": by_key(report.param_counts),
        "curves": [[r.epoch, r.subset.key(), r.risk, r.accuracy] for r in report.curves],
        "timing": dict(report.timing),
    }


def report_from_json(obj: dict) -> TrainReport:
    if obj.get("format") != REPORT_FORMAT:
        raise ValueError("not a training report document")
    return TrainReport(
        strategy=obj["strategy"],
        seed=int(obj["seed"]),
        curves=[EpochRecord(int(e), SubsetId.parse(k), float(r), float(a)) for e, k, r, a in obj["curves"]],
        test_accuracy={SubsetId.parse(k): float(v) for k, v in obj["test_accuracy"].items()},
        test_risk={SubsetId.parse(k): float(v) for k, v in obj["test_risk"].items()},
        gamma_satisfied={SubsetId.parse(k): bool(v) for k, v in obj["gamma_satisfied"].items()},
        param_counts={SubsetId.parse(k): int(v) for k, v in obj["param_counts"].items()},
        timing=dict(obj.get("timing", {})),
    )


def save_report(report: TrainReport, path) -> None:
    import json
    from pathlib import Path

    Path(path).write_text(json.dumps(report_to_json(report), indent=1, sort_keys=True))


def load_report(path) -> TrainReport:
    import json
    from pathlib import Path

    return report_from_json(json.loads(Path(path).read_text()))


def save_curves(report: TrainReport, path) -> None:
    """Risk/accuracy curves as CSV rows of (epoch, subset, risk, accuracy)."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "subset", "risk", "accuracy"])
        for r in report.curves:
            writer.writerow([r.epoch, r.subset.key(), repr(r.risk), repr(r.accuracy)])
