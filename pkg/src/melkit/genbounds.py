"""Exact generalization-gap and mutual-information audits on finite problems.

Everything is enumerated: datasets are ordered tuples over a finite sample
space, learners are explicit conditional distributions, and losses live in
[0, 1].  That makes the information-theoretic bounds checkable to float
precision rather than by simulation.

Mutual information is in nats with the 0 log 0 = 0 convention.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

ENUMERATION_LIMIT = 10**6
PROB_TOL = 1e-9
BOUND_SLACK = 1e-12


class EnumerationLimitError(ValueError):
    """The dataset space is too large to enumerate exactly."""


def _check_rows_stochastic(mat: np.ndarray, name: str) -> None:
    if np.any(mat < -PROB_TOL):
        raise ValueError(f"{name} has negative entries")
    sums = mat.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > PROB_TOL):
        raise ValueError(f"{name} rows must each sum to 1")


@dataclass(frozen=True)
class FiniteLearningProblem:
    """Sample distribution plus bounded loss tables for three hypothesis spaces.

    ``loss1``/``loss2`` cover the two backup hypothesis spaces and ``loss12``
    the combined space; each is (num_hypotheses, num_outcomes) with values in
    [0, 1].  Datasets are ordered i.i.d. tuples of length ``n``.
    """

    z_probs: tuple[float, ...]
    n: int
    loss1: tuple[tuple[float, ...], ...]
    loss2: tuple[tuple[float, ...], ...]
    loss12: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        p = np.asarray(self.z_probs, dtype=np.float64)
        if p.ndim != 1 or p.size < 1:
            raise ValueError("z_probs must be a non-empty vector")
        if np.any(p < 0.0) or abs(p.sum() - 1.0) > PROB_TOL:
            raise ValueError("z_probs must be a probability vector")
        if self.n < 1:
            raise ValueError("dataset size n must be at least 1")
        for name, table in (("loss1", self.loss1), ("loss2", self.loss2), ("loss12", self.loss12)):
            arr = np.asarray(table, dtype=np.float64)
            if arr.ndim != 2 or arr.shape[1] != p.size:
                raise ValueError(f"{name} must be (hypotheses, {p.size})")
            if np.any(arr < 0.0) or np.any(arr > 1.0):
                raise ValueError(f"{name} values must sit in [0, 1]")

    @property
    def num_outcomes(self) -> int:
        return len(self.z_probs)

    @property
    def num_datasets(self) -> int:
        return self.num_outcomes**self.n

    def datasets(self) -> np.ndarray:
        """All ordered datasets as an (num_datasets, n) index array."""
        if self.num_datasets > ENUMERATION_LIMIT:
            raise EnumerationLimitError(
                f"{self.num_outcomes}^{self.n} datasets exceed the limit {ENUMERATION_LIMIT}"
            )
        return np.array(list(itertools.product(range(self.num_outcomes), repeat=self.n)), dtype=np.int64)

    def dataset_probs(self, datasets: np.ndarray) -> np.ndarray:
        return np.prod(np.asarray(self.z_probs)[datasets], axis=1)


class StochasticLearner:
    """Conditional distributions of the two backups and their combiner.

    By default the backups are conditionally independent given the dataset;
    passing ``pair_given_d`` overrides that with an explicit joint conditional
    (its marginals must match the per-backup conditionals).
    """

    def __init__(
        self,
        h1_given_d: np.ndarray,
        h2_given_d: np.ndarray,
        h12_given_pair: np.ndarray,
        pair_given_d: np.ndarray | None = None,
    ):
        self.h1_given_d = np.asarray(h1_given_d, dtype=np.float64)
        self.h2_given_d = np.asarray(h2_given_d, dtype=np.float64)
        self.h12_given_pair = np.asarray(h12_given_pair, dtype=np.float64)
        _check_rows_stochastic(self.h1_given_d, "h1_given_d")
        _check_rows_stochastic(self.h2_given_d, "h2_given_d")
        if self.h12_given_pair.ndim != 3:
            raise ValueError("h12_given_pair must be (|H1|, |H2|, |H12|)")
        _check_rows_stochastic(self.h12_given_pair, "h12_given_pair")
        if self.h12_given_pair.shape[0] != self.h1_given_d.shape[1] or self.h12_given_pair.shape[1] != self.h2_given_d.shape[1]:
            raise ValueError("h12_given_pair does not match the backup space sizes")
        if pair_given_d is not None:
            pair = np.asarray(pair_given_d, dtype=np.float64)
            if pair.shape != (self.h1_given_d.shape[0], self.h1_given_d.shape[1], self.h2_given_d.shape[1]):
                raise ValueError("pair_given_d shape mismatch")
            if np.any(pair < -PROB_TOL) or np.any(np.abs(pair.sum(axis=(1, 2)) - 1.0) > PROB_TOL):
                raise ValueError("pair_given_d slices must be joint distributions")
            if np.max(np.abs(pair.sum(axis=2) - self.h1_given_d)) > 1e-6 or np.max(np.abs(pair.sum(axis=1) - self.h2_given_d)) > 1e-6:
                raise ValueError("pair_given_d marginals disagree with the per-backup conditionals")
            self.pair_given_d = pair
        else:
            self.pair_given_d = None

    @classmethod
    def correlated(cls, pair_given_d: np.ndarray, h12_given_pair: np.ndarray) -> StochasticLearner:
        """Learner built from an explicit joint conditional; marginals are derived."""
        pair = np.asarray(pair_given_d, dtype=np.float64)
        return cls(pair.sum(axis=2), pair.sum(axis=1), h12_given_pair, pair_given_d=pair)

    def pair_conditional(self) -> np.ndarray:
        if self.pair_given_d is not None:
            return self.pair_given_d
        return self.h1_given_d[:, :, None] * self.h2_given_d[:, None, :]

    def check_shapes(self, problem: FiniteLearningProblem) -> None:
        d = problem.num_datasets
        if self.h1_given_d.shape[0] != d or self.h2_given_d.shape[0] != d:
            raise ValueError(f"learner covers {self.h1_given_d.shape[0]} datasets, problem has {d}")
        if self.h1_given_d.shape[1] != len(problem.loss1) or self.h2_given_d.shape[1] != len(problem.loss2):
            raise ValueError("learner hypothesis-space sizes disagree with the loss tables")
        if self.h12_given_pair.shape[2] != len(problem.loss12):
            raise ValueError("combined hypothesis-space size disagrees with loss12")


def mutual_information(joint: np.ndarray) -> float:
    """I(X;Y) in nats from a 2-d joint probability table."""
    j = np.asarray(joint, dtype=np.float64)
    if j.ndim != 2:
        raise ValueError(f"joint must be 2-d, got shape {j.shape}")
    if np.any(j < -PROB_TOL):
        raise ValueError("joint has negative entries")
    j = np.clip(j, 0.0, None)
    if abs(j.sum() - 1.0) > PROB_TOL:
        raise ValueError(f"joint must sum to 1, got {j.sum()}")
    px = j.sum(axis=1)
    py = j.sum(axis=0)
    mask = j > 0.0
    outer = np.outer(px, py)
    mi = float(np.sum(j[mask] * np.log(j[mask] / outer[mask])))
    return mi if mi > 0.0 else 0.0


@dataclass(frozen=True)
class InfoReport:
    """Every quantity needed to audit the identity and both bounds at one p."""

    p: float
    i_d_h1: float
    i_d_h2: float
    i_h1_h2: float
    i_d_pair: float
    i_d_h12: float
    gen_h1: float
    gen_h2: float
    gen_h12: float
    residual: float
    single_bound_h1: float
    single_bound_h2: float
    single_bound_h12: float
    overall_gen_sq: float
    ensemble_bound: float
    per_space_ok: bool
    ensemble_ok: bool
    data_processing_ok: bool

    def all_ok(self) -> bool:
        return self.per_space_ok and self.ensemble_ok and self.data_processing_ok

    def to_json(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        return out


@dataclass(frozen=True)
class _Joints:
    p_d: np.ndarray
    d_h1: np.ndarray
    d_h2: np.ndarray
    h1_h2: np.ndarray
    d_pair: np.ndarray
    d_h12: np.ndarray
    h1_given_d: np.ndarray
    h2_given_d: np.ndarray
    h12_given_d: np.ndarray
    datasets: np.ndarray


def _joints(problem: FiniteLearningProblem, learner: StochasticLearner) -> _Joints:
    learner.check_shapes(problem)
    datasets = problem.datasets()
    p_d = problem.dataset_probs(datasets)
    pair = learner.pair_conditional()
    h12_given_d = np.einsum("dab,abk->dk", pair, learner.h12_given_pair)
    d_pair = p_d[:, None, None] * pair
    return _Joints(
        p_d=p_d,
        d_h1=p_d[:, None] * learner.h1_given_d,
        d_h2=p_d[:, None] * learner.h2_given_d,
        h1_h2=d_pair.sum(axis=0),
        d_pair=d_pair.reshape(len(p_d), -1),
        d_h12=p_d[:, None] * h12_given_d,
        h1_given_d=learner.h1_given_d,
        h2_given_d=learner.h2_given_d,
        h12_given_d=h12_given_d,
        datasets=datasets,
    )


def _expected_gap(loss: np.ndarray, h_given_d: np.ndarray, p_d: np.ndarray, datasets: np.ndarray, z_probs: np.ndarray) -> float:
    """E over (D, h) of population risk minus empirical risk."""
    population = loss @ z_probs
    empirical = loss[:, datasets].mean(axis=2).T
    gaps = population[None, :] - empirical
    return float(np.sum(p_d[:, None] * h_given_d * gaps))


@dataclass(frozen=True)
class GenGaps:
    gen_h1: float
    gen_h2: float
    gen_h12: float


def enumerate_gen_error(problem: FiniteLearningProblem, learner: StochasticLearner) -> GenGaps:
    """Exact expected generalization gap for each hypothesis space."""
    j = _joints(problem, learner)
    z = np.asarray(problem.z_probs)
    return GenGaps(
        gen_h1=_expected_gap(np.asarray(problem.loss1), j.h1_given_d, j.p_d, j.datasets, z),
        gen_h2=_expected_gap(np.asarray(problem.loss2), j.h2_given_d, j.p_d, j.datasets, z),
        gen_h12=_expected_gap(np.asarray(problem.loss12), j.h12_given_d, j.p_d, j.datasets, z),
    )


def check_chain_identity(problem: FiniteLearningProblem, learner: StochasticLearner) -> float:
    """Signed residual I(D;(h1,h2)) - (I(D;h1) + I(D;h2) - I(h1;h2)).

    Zero (to float precision) whenever the backups are conditionally
    independent given the dataset; correlation injection can make it nonzero,
    which this reports rather than rejects.
    """
    j = _joints(problem, learner)
    return mutual_information(j.d_pair) - (
        mutual_information(j.d_h1) + mutual_information(j.d_h2) - mutual_information(j.h1_h2)
    )


def check_bounds(problem: FiniteLearningProblem, learner: StochasticLearner, p: float) -> InfoReport:
    """Audit the single-model bound per space and the weighted ensemble bound.

    Losses live in [0, 1], so the subgaussian factor is 1/(2n).  The weighted
    squared gap uses weights (1-p, p, p)/(1+p) over (combined, backup 1,
    backup 2); its bound drops the pair redundancy I(h1;h2) scaled by (1-p).
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"mixing weight p must sit in [0, 1], got {p}")
    j = _joints(problem, learner)
    gaps = enumerate_gen_error(problem, learner)
    factor = 1.0 / (2.0 * problem.n)
    i_d_h1 = mutual_information(j.d_h1)
    i_d_h2 = mutual_information(j.d_h2)
    i_h1_h2 = mutual_information(j.h1_h2)
    i_d_pair = mutual_information(j.d_pair)
    i_d_h12 = mutual_information(j.d_h12)
    residual = i_d_pair - (i_d_h1 + i_d_h2 - i_h1_h2)

    single_bound_h1 = factor * i_d_h1
    single_bound_h2 = factor * i_d_h2
    single_bound_h12 = factor * i_d_h12
    per_space_ok = (
        gaps.gen_h1**2 <= single_bound_h1 + BOUND_SLACK
        and gaps.gen_h2**2 <= single_bound_h2 + BOUND_SLACK
        and gaps.gen_h12**2 <= single_bound_h12 + BOUND_SLACK
    )

    overall = ((1.0 - p) * gaps.gen_h12**2 + p * gaps.gen_h1**2 + p * gaps.gen_h2**2) / (1.0 + p)
    ensemble_bound = factor * (i_d_h1 + i_d_h2 - (1.0 - p) * i_h1_h2) / (1.0 + p)
    ensemble_ok = overall <= ensemble_bound + BOUND_SLACK
    data_processing_ok = i_d_h12 <= i_d_pair + BOUND_SLACK

    return InfoReport(
        p=p,
        i_d_h1=i_d_h1,
        i_d_h2=i_d_h2,
        i_h1_h2=i_h1_h2,
        i_d_pair=i_d_pair,
        i_d_h12=i_d_h12,
        gen_h1=gaps.gen_h1,
        gen_h2=gaps.gen_h2,
        gen_h12=gaps.gen_h12,
        residual=residual,
        single_bound_h1=single_bound_h1,
        single_bound_h2=single_bound_h2,
        single_bound_h12=single_bound_h12,
        overall_gen_sq=overall,
        ensemble_bound=ensemble_bound,
        per_space_ok=per_space_ok,
        ensemble_ok=ensemble_ok,
        data_processing_ok=data_processing_ok,
    )


def random_problem(
    rng: np.random.Generator,
    max_outcomes: int = 3,
    max_n: int = 2,
    max_hypotheses: int = 4,
) -> FiniteLearningProblem:
    """Dirichlet sample distribution with uniform loss tables in [0, 1]."""
    z = int(rng.integers(2, max_outcomes + 1))
    n = int(rng.integers(1, max_n + 1))
    sizes = [int(rng.integers(2, max_hypotheses + 1)) for _ in range(3)]
    return FiniteLearningProblem(
        z_probs=tuple(rng.dirichlet(np.ones(z))),
        n=n,
        loss1=tuple(map(tuple, rng.uniform(0.0, 1.0, size=(sizes[0], z)))),
        loss2=tuple(map(tuple, rng.uniform(0.0, 1.0, size=(sizes[1], z)))),
        loss12=tuple(map(tuple, rng.uniform(0.0, 1.0, size=(sizes[2], z)))),
    )


def random_learner(rng: np.random.Generator, problem: FiniteLearningProblem) -> StochasticLearner:
    """Dirichlet conditionals per dataset; backups conditionally independent."""
    d = problem.num_datasets
    h1, h2, h12 = len(problem.loss1), len(problem.loss2), len(problem.loss12)
    return StochasticLearner(
        h1_given_d=rng.dirichlet(np.ones(h1), size=d),
        h2_given_d=rng.dirichlet(np.ones(h2), size=d),
        h12_given_pair=rng.dirichlet(np.ones(h12), size=(h1, h2)),
    )


@dataclass(frozen=True)
class InstanceOutcome:
    index: int
    residual: float
    reports: tuple[InfoReport, ...]

    def all_ok(self, residual_tol: float = 1e-9) -> bool:
        return abs(self.residual) < residual_tol and all(r.all_ok() for r in self.reports)


def audit_instance(
    seed: int,
    index: int,
    p_values: Sequence[float] = (0.0, 0.25, 0.5, 0.75, 1.0),
    max_outcomes: int = 3,
    max_n: int = 2,
    max_hypotheses: int = 4,
) -> InstanceOutcome:
    """Residual and bound audit of one seeded random problem/learner draw.

    The generator is derived from (seed, index), so instances are independent
    of evaluation order and can be fanned out across workers.
    """
    rng = np.random.default_rng([seed, index])
    problem = random_problem(rng, max_outcomes, max_n, max_hypotheses)
    learner = random_learner(rng, problem)
    residual = check_chain_identity(problem, learner)
    reports = tuple(check_bounds(problem, learner, p) for p in p_values)
    return InstanceOutcome(index=index, residual=residual, reports=reports)


def audit_random_instances(
    count: int,
    seed: int,
    p_values: Sequence[float] = (0.0, 0.25, 0.5, 0.75, 1.0),
    max_outcomes: int = 3,
    max_n: int = 2,
    max_hypotheses: int = 4,
    start: int = 0,
) -> list[InstanceOutcome]:
    """Audits of instances ``start .. start + count - 1`` for one base seed."""
    return [
        audit_instance(seed, start + i, p_values, max_outcomes, max_n, max_hypotheses)
        for i in range(count)
    ]
