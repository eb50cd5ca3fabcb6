import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermarank.metrics import (
    MetricError,
    ScenarioEval,
    UndefinedTauError,
    j_sub,
    kendall_tau,
    n_ol,
    n_sub,
    regression_report,
)


def tau_brute(x, y):
    """O(n^2) tau-b reference."""
    n = len(x)
    conc = disc = tx = ty = 0
    for i, j in itertools.combinations(range(n), 2):
        a = (x[i] - x[j]) * (y[i] - y[j])
        if a > 0:
            conc += 1
        elif a < 0:
            disc += 1
        elif x[i] == x[j] and y[i] == y[j]:
            pass
        elif x[i] == x[j]:
            tx += 1
        else:
            ty += 1
    denom = math.sqrt((conc + disc + tx) * (conc + disc + ty))
    return (conc - disc) / denom


class TestKendallTau:
    def test_identity(self):
        x = [3.0, 1.0, 2.0, 5.0]
        assert kendall_tau(x, x) == pytest.approx(1.0)

    def test_reversal(self):
        assert kendall_tau([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)

    def test_hand_value(self):
        # pairs: (1,2),(1,3) concordant either way; (2,3) discordant
        assert kendall_tau([1, 2, 3], [1, 3, 2]) == pytest.approx(1.0 / 3.0)

    @pytest.mark.parametrize("n,seed", [(5, 0), (50, 1), (200, 2), (500, 3)])
    def test_matches_brute_force(self, n, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=n)
        y = rng.normal(size=n)
        assert kendall_tau(x, y) == pytest.approx(tau_brute(x, y), abs=1e-12)

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_brute_force_with_ties(self, seed):
        rng = np.random.default_rng(100 + seed)
        x = rng.integers(0, 5, 80).astype(float)
        y = rng.integers(0, 5, 80).astype(float)
        assert kendall_tau(x, y) == pytest.approx(tau_brute(x, y), abs=1e-12)

    def test_fully_tied_raises(self):
        with pytest.raises(UndefinedTauError):
            kendall_tau([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
        with pytest.raises(UndefinedTauError):
            kendall_tau([1.0, 2.0, 3.0], [7.0, 7.0, 7.0])

    def test_bad_input(self):
        with pytest.raises(MetricError):
            kendall_tau([1.0], [2.0])
        with pytest.raises(MetricError):
            kendall_tau([1.0, 2.0], [2.0])

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=40), st.data())
    def test_properties(self, x, data):
        y = data.draw(st.lists(st.floats(-1e6, 1e6),
                               min_size=len(x), max_size=len(x)))
        try:
            t = kendall_tau(x, y)
        except UndefinedTauError:
            assert len(set(x)) == 1 or len(set(y)) == 1
            return
        assert -1.0 - 1e-12 <= t <= 1.0 + 1e-12
        # antisymmetry under negating one argument
        assert kendall_tau(x, [-v for v in y]) == pytest.approx(-t, abs=1e-12)
        # symmetry in arguments
        assert kendall_tau(y, x) == pytest.approx(t, abs=1e-12)


class TestRankScreening:
    def test_perfect_prediction(self):
        J = [1.0, 5.0, 3.0]
        assert n_ol(J, J) == 0
        assert n_sub(J, J) == 0
        assert j_sub(J, J) == pytest.approx(1.0)

    def test_reversed_hand_case(self):
        J = [1.0, 2.0, 3.0]
        J_hat = [3.0, 2.0, 1.0]
        assert n_ol(J, J_hat) == 2
        assert n_sub(J, J_hat) == 2
        assert j_sub(J, J_hat) == pytest.approx(1.0 / 3.0)

    def test_hand_case_middle(self):
        J = [2.0, 9.0, 4.0, 7.0]
        J_hat = [9.0, 2.0, 7.0, 4.0]
        # true best (item 1) is ranked last by the predictor
        assert n_ol(J, J_hat) == 3
        # predicted best (item 0) is truly the worst
        assert n_sub(J, J_hat) == 3
        assert j_sub(J, J_hat) == pytest.approx(2.0 / 9.0)

    def test_ties_break_to_lowest_index(self):
        J = [5.0, 5.0, 1.0]
        J_hat = [1.0, 1.0, 0.0]
        # both argmaxes resolve to index 0
        assert n_ol(J, J_hat) == 0
        assert n_sub(J, J_hat) == 0
        assert j_sub(J, J_hat) == pytest.approx(1.0)

    def test_strictly_better_only(self):
        # predicted best is item 1, whose true value ties the maximum:
        # only STRICTLY greater entries count
        J = [4.0, 4.0, 2.0]
        J_hat = [1.0, 9.0, 0.0]
        assert n_sub(J, J_hat) == 0
        assert j_sub(J, J_hat) == pytest.approx(1.0)
        assert n_ol(J, J_hat) == 1

    def test_j_sub_needs_positive_optimum(self):
        with pytest.raises(MetricError):
            j_sub([-1.0, -2.0], [1.0, 2.0])

    def test_empty_and_mismatched(self):
        with pytest.raises(MetricError):
            n_ol([], [])
        with pytest.raises(MetricError):
            n_sub([1.0, 2.0], [1.0])

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(0.1, 1e3), min_size=2, max_size=30), st.data())
    def test_screening_properties(self, J, data):
        J_hat = data.draw(st.lists(st.floats(-1e3, 1e3),
                                   min_size=len(J), max_size=len(J)))
        ol = n_ol(J, J_hat)
        sub = n_sub(J, J_hat)
        ratio = j_sub(J, J_hat)
        assert 0 <= ol <= len(J) - 1
        assert 0 <= sub <= len(J) - 1
        assert 0.0 < ratio <= 1.0
        # the predicted best is truly optimal exactly when nothing beats it
        assert (sub == 0) == (ratio == pytest.approx(1.0))

    def test_screening_on_permutation(self):
        rng = np.random.default_rng(5)
        J = rng.uniform(1, 10, 50)
        # a predictor that is a monotone transform of the truth is perfect
        J_hat = np.log(J)
        assert n_ol(J, J_hat) == 0
        assert n_sub(J, J_hat) == 0
        assert kendall_tau(J, J_hat) == pytest.approx(1.0)


class TestRegressionReport:
    def test_hand_case(self):
        rep = regression_report([1.0, 2.0, 3.0], [1.0, 2.0, 4.0])
        assert rep["MSE"] == pytest.approx(1.0 / 3.0)
        assert rep["MAE"] == pytest.approx(1.0 / 3.0)
        assert rep["RMSE"] == pytest.approx(math.sqrt(1.0 / 3.0))
        assert rep["R2"] == pytest.approx(1.0 - (1.0 / 3.0) / (2.0 / 3.0))

    def test_perfect(self):
        rep = regression_report([1.0, 2.0], [1.0, 2.0])
        assert rep["MSE"] == 0.0
        assert rep["R2"] == pytest.approx(1.0)

    def test_zero_variance_truth(self):
        with pytest.raises(MetricError):
            regression_report([2.0, 2.0], [1.0, 3.0])


class TestScenarioEval:
    def test_from_values(self):
        ev = ScenarioEval.from_values(
            scenario_id=7, group="S3", J=[1.0, 3.0, 2.0], J_hat=[1.0, 3.0, 2.0])
        assert ev.tau == pytest.approx(1.0)
        assert ev.N_OL == 0
        assert ev.N_sub == 0
        assert ev.J_sub == pytest.approx(1.0)
        assert ev.n_graphs == 3

    def test_tau_none_when_degenerate(self):
        ev = ScenarioEval.from_values(
            scenario_id=0, group="S3", J=[2.0, 2.0], J_hat=[1.0, 3.0])
        assert ev.tau is None
