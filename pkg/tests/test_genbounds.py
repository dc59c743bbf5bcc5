"""Mutual information, exact gap enumeration, identity and bound audits."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from melkit.genbounds import (
    EnumerationLimitError,
    FiniteLearningProblem,
    StochasticLearner,
    audit_instance,
    audit_random_instances,
    check_bounds,
    check_chain_identity,
    enumerate_gen_error,
    mutual_information,
    random_learner,
    random_problem,
)


class TestMutualInformation:
    def test_product_joint_is_zero(self):
        joint = np.outer([0.3, 0.7], [0.2, 0.5, 0.3])
        assert mutual_information(joint) == pytest.approx(0.0, abs=1e-15)

    def test_perfect_correlation_is_ln2(self):
        assert mutual_information(np.array([[0.5, 0.0], [0.0, 0.5]])) == pytest.approx(math.log(2.0), abs=1e-15)

    def test_frozen_high_precision_value(self):
        # sum over cells of p * ln(p / (0.5 * 0.5)), computed at 30 digits
        joint = np.array([[0.4, 0.1], [0.1, 0.4]])
        assert mutual_information(joint) == pytest.approx(0.19274475702175743, abs=1e-15)

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        j = rng.dirichlet(np.ones(12)).reshape(3, 4)
        assert mutual_information(j) == pytest.approx(mutual_information(j.T), abs=1e-12)

    def test_zero_rows_use_zero_log_zero_convention(self):
        joint = np.array([[0.5, 0.5], [0.0, 0.0]])
        assert mutual_information(joint) == pytest.approx(0.0, abs=1e-15)

    def test_invalid_joints_rejected(self):
        with pytest.raises(ValueError):
            mutual_information(np.array([[0.9, -0.1], [0.1, 0.1]]))
        with pytest.raises(ValueError):
            mutual_information(np.array([[0.5, 0.5], [0.5, 0.5]]))
        with pytest.raises(ValueError):
            mutual_information(np.ones(4))

    @given(st.lists(st.integers(min_value=1, max_value=50), min_size=6, max_size=6))
    def test_non_negative_and_capped_by_log_support(self, cells):
        joint = np.array(cells, dtype=float).reshape(2, 3)
        joint /= joint.sum()
        mi = mutual_information(joint)
        assert 0.0 <= mi <= math.log(2.0) + 1e-12


def erm_problem():
    """Hand instance: two outcomes, one sample, two complementary hypotheses."""
    return FiniteLearningProblem(
        z_probs=(0.6, 0.4),
        n=1,
        loss1=((0.0, 1.0), (1.0, 0.0)),
        loss2=((0.0, 1.0), (1.0, 0.0)),
        loss12=((0.0, 1.0), (1.0, 0.0)),
    )


def erm_learner():
    """Deterministic: pick the hypothesis with zero loss on the seen sample; combiner copies h1."""
    pick = np.array([[1.0, 0.0], [0.0, 1.0]])
    copy_first = np.zeros((2, 2, 2))
    copy_first[0, :, 0] = 1.0
    copy_first[1, :, 1] = 1.0
    return StochasticLearner(pick, pick, copy_first)


class TestGenError:
    def test_erm_hand_enumeration(self):
        # D=(z0) w.p. 0.6: gap = 0.4 - 0; D=(z1) w.p. 0.4: gap = 0.6 - 0
        gaps = enumerate_gen_error(erm_problem(), erm_learner())
        assert gaps.gen_h1 == pytest.approx(0.48, abs=1e-12)
        assert gaps.gen_h2 == pytest.approx(0.48, abs=1e-12)
        assert gaps.gen_h12 == pytest.approx(0.48, abs=1e-12)

    def test_constant_learner_has_zero_gap(self):
        problem = erm_problem()
        const = np.tile([1.0, 0.0], (2, 1))
        h12 = np.zeros((2, 2, 2))
        h12[:, :, 0] = 1.0
        learner = StochasticLearner(const, const, h12)
        gaps = enumerate_gen_error(problem, learner)
        assert gaps.gen_h1 == pytest.approx(0.0, abs=1e-15)
        assert gaps.gen_h12 == pytest.approx(0.0, abs=1e-15)
        report = check_bounds(problem, learner, 0.5)
        assert report.i_d_h1 == pytest.approx(0.0, abs=1e-12)
        assert report.all_ok()

    def test_enumeration_guard(self):
        z = 10
        probs = tuple([1.0 / z] * z)
        table = (tuple([0.0] * z),)
        problem = FiniteLearningProblem(z_probs=probs, n=7, loss1=table, loss2=table, loss12=table)
        with pytest.raises(EnumerationLimitError):
            problem.datasets()

    def test_loss_outside_unit_interval_rejected(self):
        with pytest.raises(ValueError):
            FiniteLearningProblem((1.0,), 1, ((1.5,),), ((0.0,),), ((0.0,),))

    def test_bad_distribution_rejected(self):
        with pytest.raises(ValueError):
            FiniteLearningProblem((0.6, 0.6), 1, ((0.0, 0.0),), ((0.0, 0.0),), ((0.0, 0.0),))


class TestChainIdentity:
    @pytest.mark.parametrize("index", range(20))
    def test_residual_vanishes_under_conditional_independence(self, index):
        outcome = audit_instance(seed=77, index=index)
        assert abs(outcome.residual) < 1e-9

    def test_correlated_backups_reported_not_rejected(self):
        # h2 is a copy of h1, so the residual equals H(h1) - I(D;h1) > 0
        rng = np.random.default_rng(5)
        h = 3
        loss = tuple(map(tuple, rng.uniform(0.0, 1.0, size=(h, 3))))
        loss12 = tuple(map(tuple, rng.uniform(0.0, 1.0, size=(2, 3))))
        problem = FiniteLearningProblem(tuple(rng.dirichlet(np.ones(3))), 1, loss, loss, loss12)
        h1 = rng.dirichlet(np.ones(h), size=problem.num_datasets)
        pair = np.zeros((problem.num_datasets, h, h))
        for a in range(h):
            pair[:, a, a] = h1[:, a]
        learner = StochasticLearner.correlated(pair, rng.dirichlet(np.ones(2), size=(h, h)))

        residual = check_chain_identity(problem, learner)

        p_d = problem.dataset_probs(problem.datasets())
        marginal = p_d @ h1
        entropy = -sum(p * math.log(p) for p in marginal if p > 0)
        i_d_h1 = mutual_information(p_d[:, None] * h1)
        assert residual == pytest.approx(entropy - i_d_h1, abs=1e-9)
        assert residual > 1e-6

    def test_pair_marginal_mismatch_rejected(self):
        pick = np.array([[1.0, 0.0], [0.0, 1.0]])
        bad_pair = np.zeros((2, 2, 2))
        bad_pair[:, 0, 0] = 1.0
        h12 = np.full((2, 2, 2), 0.5)
        with pytest.raises(ValueError):
            StochasticLearner(pick, pick, h12, pair_given_d=bad_pair)


class TestBounds:
    def test_erm_instance_satisfies_everything(self):
        for p in (0.0, 0.25, 0.5, 0.75, 1.0):
            report = check_bounds(erm_problem(), erm_learner(), p)
            assert report.all_ok(), f"p={p}: {report}"

    def test_weighting_endpoints(self):
        report0 = check_bounds(erm_problem(), erm_learner(), 0.0)
        assert report0.overall_gen_sq == pytest.approx(report0.gen_h12**2, abs=1e-15)
        report1 = check_bounds(erm_problem(), erm_learner(), 1.0)
        assert report1.overall_gen_sq == pytest.approx((report1.gen_h1**2 + report1.gen_h2**2) / 2.0, abs=1e-15)
        factor = 1.0 / (2.0 * erm_problem().n)
        assert report1.ensemble_bound == pytest.approx(factor * (report1.i_d_h1 + report1.i_d_h2) / 2.0, abs=1e-15)

    def test_pair_redundancy_discount_at_p_zero(self):
        report = check_bounds(erm_problem(), erm_learner(), 0.0)
        factor = 1.0 / (2.0 * erm_problem().n)
        want = factor * (report.i_d_h1 + report.i_d_h2 - report.i_h1_h2)
        assert report.ensemble_bound == pytest.approx(want, abs=1e-15)

    def test_invalid_p_rejected(self):
        with pytest.raises(ValueError):
            check_bounds(erm_problem(), erm_learner(), 1.5)

    @pytest.mark.parametrize("index", range(10))
    def test_random_instances_pass_all_checks(self, index):
        outcome = audit_instance(seed=31, index=index)
        assert outcome.all_ok()
        for report in outcome.reports:
            assert report.i_d_h12 <= report.i_d_pair + 1e-12

    def test_audit_deterministic_and_order_free(self):
        a = audit_random_instances(3, seed=9)
        b = [audit_instance(seed=9, index=i) for i in (2, 0, 1)]
        by_index = {o.index: o for o in b}
        for outcome in a:
            assert outcome.residual == by_index[outcome.index].residual

    def test_report_to_json_complete(self):
        doc = check_bounds(erm_problem(), erm_learner(), 0.5).to_json()
        for key in ("p", "i_d_h1", "gen_h12", "residual", "ensemble_bound", "per_space_ok"):
            assert key in doc


class TestLearnerValidation:
    def test_row_sums_checked(self):
        with pytest.raises(ValueError):
            StochasticLearner(np.array([[0.7, 0.7]]), np.array([[1.0, 0.0]]), np.full((2, 2, 2), 0.5))

    def test_shape_mismatch_with_problem(self):
        problem = erm_problem()
        learner = StochasticLearner(
            np.full((3, 2), 0.5), np.full((3, 2), 0.5), np.full((2, 2, 2), 0.5)
        )
        with pytest.raises(ValueError):
            enumerate_gen_error(problem, learner)

    def test_random_learner_matches_problem(self):
        rng = np.random.default_rng(1)
        problem = random_problem(rng)
        learner = random_learner(rng, problem)
        learner.check_shapes(problem)
