import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from pydantic import ValidationError

from analysis.mixture_lab import (
    ImprovementReport,
    closed_form_mixture_value,
    hesitant_policy,
    improvement_report,
    tightrope_bounds,
    tightrope_mdp,
    tightrope_optimal_policy,
    witness_penalty,
)
from greedy.kappa_greedy import kappa_greedy_policy
from mdp_core.errors import InvalidArgumentError
from mdp_core.generators import garnet
from mdp_core.mdp import Policy
from mdp_core.operators import evaluate_policy, mix_policies


class TestTightrope:
    def test_penalty_must_be_positive(self):
        with pytest.raises(InvalidArgumentError):
            tightrope_mdp(0.0, 0.9)

    def test_closed_form_value(self):
        v_s0, v_s1 = closed_form_mixture_value(2.0, 0.9, 0.5)
        assert v_s1 == pytest.approx(-4.5)
        assert v_s0 == pytest.approx(0.45 / 0.55 * -4.5)
        assert v_s0 == pytest.approx(-3.681818, abs=1e-6)

    @pytest.mark.parametrize("c, alpha", [(2.0, 0.5), (5.0, 0.3), (0.5, 0.9)])
    def test_closed_form_matches_evaluation(self, c, alpha):
        mdp = tightrope_mdp(c, 0.9)
        mixed = mix_policies(hesitant_policy(), tightrope_optimal_policy(), alpha)
        v = evaluate_policy(mdp, mixed)
        np.testing.assert_allclose(v[:2], closed_form_mixture_value(c, 0.9, alpha), atol=1e-10)

    def test_small_penalty_makes_kappa_greedy_optimal(self):
        # c = 0.1 lies below kappa / (1 - kappa) = 1
        mdp = tightrope_mdp(0.1, 0.9)
        v_pi0 = evaluate_policy(mdp, hesitant_policy())
        greedy = kappa_greedy_policy(mdp, v_pi0, 0.5)
        assert greedy.actions().tolist() == tightrope_optimal_policy().actions().tolist()

    def test_large_penalty_keeps_the_start_hesitant(self):
        mdp = tightrope_mdp(2.0, 0.9)
        greedy = kappa_greedy_policy(mdp, evaluate_policy(mdp, hesitant_policy()), 0.5)
        assert greedy.actions().tolist() == [0, 1, 0, 0]


class TestWitnessWindow:
    def test_bounds(self):
        assert tightrope_bounds(0.5, 0.8) == pytest.approx((1.0, 4.0))

    def test_kappa_one_window_is_unbounded(self):
        assert math.isinf(tightrope_bounds(0.5, 1.0)[1])

    def test_witness_inside_window(self):
        assert witness_penalty(0.5, 0.8) == pytest.approx(2.5)
        assert witness_penalty(0.2, 1.0) == pytest.approx(0.5 * (0.25 + 1.0))

    def test_no_witness_when_alpha_reaches_kappa(self):
        assert witness_penalty(0.8, 0.5) is None
        assert witness_penalty(0.5, 0.5) is None

    @pytest.mark.parametrize("alpha, kappa", [(0.0, 0.5), (1.0, 0.5), (0.5, 0.0), (0.5, 1.5)])
    def test_invalid_arguments(self, alpha, kappa):
        with pytest.raises(InvalidArgumentError):
            tightrope_bounds(alpha, kappa)

    @settings(max_examples=40, deadline=None)
    @given(alpha=st.floats(0.05, 0.9), gap=st.floats(0.05, 0.5))
    def test_witness_defeats_soft_update(self, alpha, gap):
        kappa = min(alpha + gap, 0.99)
        c = witness_penalty(alpha, kappa)
        report = improvement_report(tightrope_mdp(c, 0.9), hesitant_policy(), alpha, kappa=kappa)
        assert not report.improved_everywhere
        assert report.delta_vector[0] < 0.0


class TestImprovementReport:
    def test_small_stepsize_fails_at_start(self, tightrope, pi0):
        report = improvement_report(tightrope, pi0, 0.5, kappa=0.8)
        assert not report.improved_everywhere
        assert report.strict_somewhere
        assert report.delta_vector[0] == pytest.approx(-3.681818, abs=1e-6)
        assert report.delta_vector[1] == pytest.approx(13.5)
        assert report.mode == "kappa"

    def test_stepsize_at_least_kappa_improves(self, tightrope, pi0):
        report = improvement_report(tightrope, pi0, 0.9, kappa=0.8)
        assert report.improved_everywhere
        assert report.min_delta >= 0.0

    def test_h_greedy_needs_full_step(self, pi0):
        mdp = tightrope_mdp(5.0, 0.9)
        half = improvement_report(mdp, pi0, 0.5, h=2)
        full = improvement_report(mdp, pi0, 1.0, h=2)
        assert not half.improved_everywhere
        assert full.improved_everywhere
        assert half.mode == "h"
        assert half.mode_value == 2.0

    def test_exactly_one_mode(self, tightrope, pi0):
        with pytest.raises(InvalidArgumentError, match="exactly one"):
            improvement_report(tightrope, pi0, 0.5)
        with pytest.raises(InvalidArgumentError, match="exactly one"):
            improvement_report(tightrope, pi0, 0.5, kappa=0.5, h=2)

    def test_stepsize_range(self, tightrope, pi0):
        with pytest.raises(InvalidArgumentError):
            improvement_report(tightrope, pi0, 0.0, kappa=0.5)

    def test_flags_must_agree_with_deltas(self):
        with pytest.raises(ValidationError, match="improved_everywhere"):
            ImprovementReport(
                improved_everywhere=True, strict_somewhere=False, delta_vector=np.array([-1.0, 0.0]),
                alpha=0.5, mode="kappa", mode_value=0.5,
            )

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 5000), kappa=st.floats(0.05, 0.95), fraction=st.floats(0.0, 1.0))
    def test_stepsize_from_kappa_to_one_improves_garnets(self, seed, kappa, fraction):
        mdp = garnet(5, 3, seed)
        pi = Policy(probs=np.random.default_rng(seed).dirichlet(np.ones(3), size=5))
        alpha = kappa + fraction * (1.0 - kappa)
        assert improvement_report(mdp, pi, alpha, kappa=kappa).improved_everywhere
