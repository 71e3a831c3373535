import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from pydantic import ValidationError

from analysis.concentrability import (
    CoefficientReport,
    c_pi_star_1_kappa,
    c_pi_star_kappa,
    c_pi_star_seq,
    c_seq,
    c_seq_brute_force,
    coefficient_report,
    d_kappa_matrix,
    discounted_occupancy,
    help1_identity_gap,
    max_delivered_mass,
    scaled,
    series_coefficients,
    smoothed_kernel_power,
    smoothed_kernel_power_series,
    sup_ratio,
    verify_lemma3,
)
from mdp_core.errors import InvalidArgumentError
from mdp_core.generators import garnet
from mdp_core.mdp import Mdp, Policy, StateDistribution
from mdp_core.operators import induced_kernel, solve_optimal


class TestHelpers:
    def test_scaled_zero_times_inf(self):
        assert scaled(0.0, math.inf) == 0.0
        assert math.isinf(scaled(0.5, math.inf))

    def test_sup_ratio_ignores_zero_over_zero(self):
        nu = StateDistribution(p=[0.5, 0.5, 0.0])
        assert sup_ratio(np.array([0.25, 0.75, 0.0]), nu) == pytest.approx(1.5)

    def test_sup_ratio_is_infinite_off_support(self):
        nu = StateDistribution(p=[1.0, 0.0])
        assert math.isinf(sup_ratio(np.array([0.5, 0.5]), nu))


class TestCSequence:
    def test_equal_measures_start_at_one(self, small_garnet, uniform5):
        assert c_seq(small_garnet, uniform5, uniform5, 5)[0] == 1.0

    def test_point_mass_against_uniform(self, small_garnet, uniform5):
        mu = StateDistribution.point_mass(5, 0)
        assert c_seq(small_garnet, mu, uniform5, 0) == [pytest.approx(5.0)]

    def test_values_are_at_least_one(self, garnet_8x3):
        nu = StateDistribution(p=np.random.default_rng(0).dirichlet(np.ones(8)))
        assert all(value >= 1.0 for value in c_seq(garnet_8x3, StateDistribution.uniform(8), nu, 30))

    def test_delivered_mass_starts_at_identity(self, small_garnet):
        powers = max_delivered_mass(small_garnet, 2)
        assert len(powers) == 3
        np.testing.assert_array_equal(powers[0], np.eye(5))

    @pytest.mark.parametrize("seed", range(4))
    def test_dp_matches_enumeration(self, seed):
        mdp = garnet(3, 2, seed)
        rng = np.random.default_rng(seed)
        mu = StateDistribution(p=rng.dirichlet(np.ones(3)))
        nu = StateDistribution(p=rng.dirichlet(np.ones(3)))
        np.testing.assert_allclose(c_seq(mdp, mu, nu, 3), c_seq_brute_force(mdp, mu, nu, 3), rtol=1e-12)

    def test_single_action_collapses_to_policy_sequence(self):
        mdp = garnet(5, 1, 4)
        mu, nu = StateDistribution.point_mass(5, 2), StateDistribution(p=[0.1, 0.2, 0.3, 0.2, 0.2])
        only = Policy.uniform(5, 1)
        np.testing.assert_allclose(c_seq(mdp, mu, nu, 20), c_pi_star_seq(mdp, only, mu, nu, 20), rtol=1e-12)

    def test_dominates_optimal_policy_sequence(self, garnet_8x3):
        _, pi_star = solve_optimal(garnet_8x3)
        mu, nu = StateDistribution.point_mass(8, 1), StateDistribution.uniform(8)
        c = c_seq(garnet_8x3, mu, nu, 15)
        c_star = c_pi_star_seq(garnet_8x3, pi_star, mu, nu, 15)
        assert all(a >= b - 1e-12 for a, b in zip(c, c_star))

    def test_two_state_absorbing_chain_by_hand(self):
        # action 0 leaks half the mass of s0 into the absorbing s1, action 1 moves all of it
        transitions = np.array([[[0.5, 0.5], [0.0, 1.0]], [[0.0, 1.0], [0.0, 1.0]]])
        mdp = Mdp(transitions=transitions, rewards=np.zeros((2, 2)), gamma=0.9)
        mu, nu = StateDistribution.point_mass(2, 0), StateDistribution.uniform(2)
        leaky = Policy.from_actions([0, 0], 2)
        # mu P^i = (0.5^i, 1 - 0.5^i)
        assert c_pi_star_seq(mdp, leaky, mu, nu, 4) == pytest.approx([2.0, 1.0, 1.5, 1.75, 1.875])
        assert c_seq(mdp, mu, nu, 4) == pytest.approx([2.0] * 5)

    def test_unreachable_reference_gives_inf(self, tightrope):
        nu = StateDistribution(p=[0.5, 0.5, 0.0, 0.0])
        values = c_seq(tightrope, StateDistribution.point_mass(4, 0), nu, 2)
        assert values[0] == 2.0
        assert math.isinf(values[2])

    def test_negative_index_rejected(self, small_garnet, uniform5):
        with pytest.raises(InvalidArgumentError):
            c_seq(small_garnet, uniform5, uniform5, -1)

    def test_measure_size_mismatch(self, small_garnet):
        with pytest.raises(InvalidArgumentError, match="measure has"):
            c_seq(small_garnet, StateDistribution.uniform(4), StateDistribution.uniform(5), 2)


class TestSeries:
    def test_constant_sequence(self):
        series = series_coefficients([3.0] * 50, [2.0] * 50, 0.9, k_list=[0, 10])
        assert series.c1 == pytest.approx(3.0)
        assert series.c2 == pytest.approx(3.0)
        assert series.c2k == pytest.approx({0: 3.0, 10: 3.0})
        assert series.c_pi_star_1 == pytest.approx(2.0)
        assert not series.truncation_heuristic

    def test_all_ones_has_no_truncation_error(self):
        series = series_coefficients([1.0] * 10, [1.0] * 10, 0.5)
        assert series.truncation_bound == 0.0
        assert series.truncation_index == 10

    def test_geometric_sequence_matches_closed_form(self):
        gamma = 0.9
        values = [1.0 + 2.0 * 0.5 ** i for i in range(400)]
        series = series_coefficients(values, values, gamma)
        assert series.c1 == pytest.approx(1.0 + 2.0 * (1.0 - gamma) / (1.0 - 0.5 * gamma), rel=1e-10)
        # (1-g)^2 sum (m+1) g^m x^m = (1-g)^2 / (1 - g x)^2
        assert series.c2 == pytest.approx(1.0 + 2.0 * (1.0 - gamma) ** 2 / (1.0 - 0.5 * gamma) ** 2, rel=1e-10)

    def test_larger_shift_never_grows_for_non_increasing_c(self):
        values = [6.0, 4.0, 3.0, 2.5, 2.0, 1.5] + [1.2] * 40
        series = series_coefficients(values, values, 0.9, k_list=[0, 1, 3, 5, 20])
        shifted = [series.c2k[k] for k in (0, 1, 3, 5, 20)]
        assert shifted[0] == pytest.approx(series.c2)
        assert all(later <= earlier + 1e-12 for earlier, later in zip(shifted, shifted[1:]))
        assert shifted[-1] == pytest.approx(1.2)

    @settings(max_examples=50, deadline=None)
    @given(
        drops=st.lists(st.floats(0.0, 3.0), min_size=2, max_size=30),
        gamma=st.floats(0.5, 0.95),
    )
    def test_shift_ordering_holds_for_any_non_increasing_c(self, drops, gamma):
        values = list(np.cumsum(drops[::-1])[::-1] + 1.0)
        k_list = list(range(len(values)))
        c2k = series_coefficients(values, values, gamma, k_list=k_list).c2k
        assert all(c2k[k + 1] <= c2k[k] * (1.0 + 1e-12) for k in k_list[:-1])

    def test_infinite_term_propagates(self):
        series = series_coefficients([1.0, math.inf, 2.0], [1.0, 1.0, 1.0], 0.9)
        assert math.isinf(series.c1)
        assert math.isinf(series.c2)
        assert series.c_pi_star_1 == pytest.approx(1.0)

    def test_increasing_sequence_is_heuristic(self):
        values = [1.0 + i for i in range(20)]
        assert series_coefficients(values, values, 0.9).truncation_heuristic
        assert not series_coefficients(values, values, 0.9, c_upper=100.0).truncation_heuristic

    def test_known_majorant_bounds_tail(self):
        series = series_coefficients([1.0] * 5, [1.0] * 5, 0.5, c_upper=3.0)
        # second-order tail mass 0.5^5 (6 * 0.5 + 0.5) exceeds the first-order 0.5^5
        assert series.truncation_bound == pytest.approx(0.5 ** 5 * 3.5 * 2.0)

    @pytest.mark.parametrize("kwargs", [{"k_list": [5]}, {"tol": 0.0}, {"gamma": 1.0}])
    def test_invalid_arguments(self, kwargs):
        args = {"c_values": [1.0] * 5, "c_pi_star_values": [1.0] * 5, "gamma": 0.9} | kwargs
        with pytest.raises(InvalidArgumentError):
            series_coefficients(**args)

    def test_empty_sequence(self):
        with pytest.raises(InvalidArgumentError, match="non-empty"):
            series_coefficients([], [1.0], 0.9)


class TestSmoothedKernel:
    @pytest.mark.parametrize("kappa", [0.0, 0.4, 1.0])
    def test_d_kappa_is_stochastic(self, garnet_8x3, kappa):
        d = d_kappa_matrix(garnet_8x3, Policy.uniform(8, 3), kappa)
        assert np.all(d >= -1e-14)
        np.testing.assert_allclose(d.sum(axis=1), 1.0)

    def test_d_kappa_zero_is_identity(self, small_garnet):
        np.testing.assert_allclose(d_kappa_matrix(small_garnet, Policy.uniform(5, 2), 0.0), np.eye(5), atol=1e-15)

    def test_occupancy_at_kappa_one_is_start_measure(self, small_garnet):
        mu = StateDistribution(p=[0.1, 0.2, 0.3, 0.2, 0.2])
        np.testing.assert_allclose(discounted_occupancy(small_garnet, Policy.uniform(5, 2), 1.0, mu), mu.p)

    def test_occupancy_at_kappa_zero_is_discounted_visitation(self, small_garnet):
        pi, mu = Policy.uniform(5, 2), StateDistribution.point_mass(5, 0)
        p_pi = induced_kernel(small_garnet, pi)
        expected = sum(0.1 * 0.9 ** t * mu.p @ np.linalg.matrix_power(p_pi, t) for t in range(400))
        np.testing.assert_allclose(discounted_occupancy(small_garnet, pi, 0.0, mu), expected, atol=1e-12)

    @pytest.mark.parametrize("kappa, i", [(0.0, 1), (0.3, 2), (0.7, 3), (0.95, 1)])
    def test_power_matches_series(self, garnet_8x3, kappa, i):
        pi = Policy.uniform(8, 3)
        partial, tail = smoothed_kernel_power_series(garnet_8x3, pi, kappa, i, n_terms=600)
        gap = np.abs(smoothed_kernel_power(garnet_8x3, pi, kappa, i) - partial).sum(axis=1).max()
        assert gap <= tail + 1e-12
        assert tail < 1e-8

    def test_power_zero_is_identity(self, small_garnet):
        np.testing.assert_allclose(smoothed_kernel_power(small_garnet, Policy.uniform(5, 2), 0.5, 0), np.eye(5))

    def test_series_needs_positive_power(self, small_garnet):
        with pytest.raises(InvalidArgumentError):
            smoothed_kernel_power_series(small_garnet, Policy.uniform(5, 2), 0.5, 0)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2000), kappa=st.floats(0.0, 0.99), kappa_prime=st.floats(0.0, 1.0))
    def test_resolvent_identity(self, seed, kappa, kappa_prime):
        mdp = garnet(4, 2, seed)
        pi = Policy(probs=np.random.default_rng(seed).dirichlet(np.ones(2), size=4))
        assert help1_identity_gap(mdp, pi, kappa, kappa_prime) < 1e-8

    def test_resolvent_identity_needs_kappa_below_one(self, small_garnet):
        with pytest.raises(InvalidArgumentError):
            help1_identity_gap(small_garnet, Policy.uniform(5, 2), 1.0, 1.0)


class TestPiStarCoefficients:
    def test_kappa_one_is_c0(self, garnet_8x3):
        _, pi_star = solve_optimal(garnet_8x3)
        mu, nu = StateDistribution.point_mass(8, 3), StateDistribution.uniform(8)
        assert c_pi_star_kappa(garnet_8x3, pi_star, 1.0, mu, nu) == pytest.approx(8.0)

    def test_equal_measures_at_kappa_one(self, small_garnet, uniform5):
        _, pi_star = solve_optimal(small_garnet)
        assert c_pi_star_kappa(small_garnet, pi_star, 1.0, uniform5, uniform5) == pytest.approx(1.0)

    def test_first_order_kappa_endpoints(self):
        assert c_pi_star_1_kappa(4.0, 2.0, 0.0, 0.9) == pytest.approx(4.0)
        assert c_pi_star_1_kappa(4.0, 2.0, 1.0, 0.9) == pytest.approx(2.0)
        assert c_pi_star_1_kappa(math.inf, 2.0, 1.0, 0.9) == pytest.approx(2.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_larger_kappa_with_mixed_reference(self, seed):
        mdp = garnet(6, 2, seed)
        _, pi_star = solve_optimal(mdp)
        rng = np.random.default_rng(seed)
        mu = StateDistribution(p=rng.dirichlet(np.ones(6)))
        nu = StateDistribution(p=rng.dirichlet(np.ones(6)))
        report = verify_lemma3(mdp, pi_star, mu, nu, 0.2, 0.7)
        assert report.holds
        assert 0.0 < report.alpha_star <= 1.0
        assert report.grid_values is None

    def test_grid_recorded_for_equal_measures(self, small_garnet, uniform5):
        _, pi_star = solve_optimal(small_garnet)
        report = verify_lemma3(small_garnet, pi_star, uniform5, uniform5, 0.0, 0.5)
        assert sorted(report.grid_values) == [0.0, 0.25, 0.5, 0.75, 1.0]
        assert report.grid_values[1.0] == pytest.approx(1.0)
        assert report.grid_monotone is not None

    def test_kappa_prime_must_exceed_kappa(self, small_garnet, uniform5):
        with pytest.raises(InvalidArgumentError, match="kappa_prime"):
            verify_lemma3(small_garnet, Policy.uniform(5, 2), uniform5, uniform5, 0.5, 0.5)


class TestCoefficientReport:
    def test_uniform_measures(self, garnet_8x3):
        nu = StateDistribution.uniform(8)
        report = coefficient_report(garnet_8x3, nu, nu, kappas=(0.0, 0.5, 1.0), i_max=200, k_list=[3])
        assert report.c_seq[0] == 1.0
        assert report.first_link_holds
        assert report.truncation_index == 201
        assert set(report.c_pi_star_kappa) == {0.0, 0.5, 1.0}
        assert report.c_pi_star_kappa[0.0] == pytest.approx(report.c_pi_star)
        assert report.c_pi_star_1_kappa[0.0] == pytest.approx(report.c_pi_star_1)
        assert report.c_pi_star_1_kappa[1.0] == pytest.approx(report.c_seq[0])
        assert not report.floored_indices

    def test_rows_cover_every_coefficient(self, small_garnet, uniform5):
        report = coefficient_report(small_garnet, uniform5, uniform5, kappas=(0.5,), i_max=50, k_list=[1, 2])
        names = [row["name"] for row in report.to_rows()]
        assert names == ["C1", "C2", "C_pi_star", "C_pi_star_1", "C2k", "C2k", "C_pi_star_kappa", "C_pi_star_1_kappa"]
        assert all("truncation_bound" in row for row in report.to_rows())

    def test_rejects_values_below_one(self):
        with pytest.raises(ValidationError, match="below 1"):
            CoefficientReport(
                c_seq=[1.0], c_seq_raw=[1.0], c_pi_star_seq=[1.0], c1=0.5, c2=1.0, c_pi_star=1.0,
                c_pi_star_1=1.0, truncation_index=1, truncation_bound=0.0, truncation_heuristic=False,
            )

    def test_zero_mass_reference_gives_infinite_series(self, tightrope):
        mu = StateDistribution.point_mass(4, 0)
        nu = StateDistribution(p=[0.5, 0.5, 0.0, 0.0])
        report = coefficient_report(tightrope, mu, nu, kappas=(0.5,), i_max=20)
        assert math.isinf(report.c1)
        assert math.isinf(report.c2)
        assert report.ordering_violations == []
