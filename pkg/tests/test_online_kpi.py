import numpy as np
import pytest
from pydantic import ValidationError

from algorithms.online_kpi import (
    GenerativeModel,
    OnlineState,
    StepSchedule,
    Transition,
    apply_H,
    cautious_action,
    online_update,
    run_online,
    sample_step,
    td_errors,
)
from greedy.kappa_greedy import q_kappa
from mdp_core.errors import InvalidArgumentError, InvalidMeasureError
from mdp_core.generators import garnet
from mdp_core.mdp import Policy, StateDistribution
from mdp_core.operators import q_of_policy


@pytest.fixture
def schedule():
    return StepSchedule()


class TestStepSchedule:
    def test_defaults(self, schedule):
        assert schedule.fast(4) == pytest.approx(4 ** -0.6)
        assert schedule.slow(4) == pytest.approx(0.25)

    @pytest.mark.parametrize("fast, slow", [(0.5, 1.0), (0.8, 0.7), (0.6, 1.2), (0.7, 0.7)])
    def test_rejects_invalid_exponents(self, fast, slow):
        with pytest.raises(ValidationError, match="fast_exponent"):
            StepSchedule(fast_exponent=fast, slow_exponent=slow)


class TestCautiousAction:
    def test_takes_kappa_action_when_it_does_not_degrade(self):
        assert cautious_action(0, [[1.0, 2.0]], [[0.0, 5.0]], [[1.0, 0.0]]) == 1

    def test_falls_back_to_one_step_greedy(self):
        assert cautious_action(0, [[3.0, 2.0]], [[0.0, 5.0]], [[1.0, 0.0]]) == 0

    def test_equality_picks_kappa_action(self):
        assert cautious_action(0, [[2.0, 2.0]], [[0.0, 5.0]], [[1.0, 0.0]]) == 1

    def test_ties_in_q_kappa_go_to_lowest_index(self):
        assert cautious_action(0, [[1.0, 1.0, 1.0]], [[4.0, 4.0, 4.0]], [[0.0, 0.0, 1.0]]) == 0

    def test_tightrope(self, tightrope, pi0):
        q = q_of_policy(tightrope, pi0)
        qk = q_kappa(tightrope, pi0, 0.8)
        # advancing from s0 would step onto the edge where pi0 falls
        assert cautious_action(0, q, qk, pi0) == 0
        assert cautious_action(1, q, qk, pi0) == 1


class TestTdErrors:
    def test_kappa_one_is_q_learning(self):
        q = [[0.0, 0.0], [3.0, 1.0]]
        qk = [[0.5, 0.0], [2.0, 4.0]]
        pi = [[0.5, 0.5], [0.5, 0.5]]
        delta, delta_kappa = td_errors(q, qk, pi, Transition(0, 0, 1.0, 1), kappa=1.0, gamma=0.9)
        assert delta == pytest.approx(1.0 + 0.9 * 2.0)
        assert delta_kappa == pytest.approx(1.0 + 0.9 * 4.0 - 0.5)

    def test_kappa_zero_matches_expected_sarsa(self):
        q = [[0.0, 0.0], [3.0, 1.0]]
        qk = [[0.0, 0.0], [2.0, 4.0]]
        pi = [[0.5, 0.5], [0.25, 0.75]]
        delta, delta_kappa = td_errors(q, qk, pi, Transition(0, 1, 0.0, 1), kappa=0.0, gamma=0.5)
        assert delta == pytest.approx(0.5 * 1.5)
        assert delta_kappa == pytest.approx(delta)


class TestOnlineUpdate:
    def test_first_visit_takes_full_steps(self, schedule):
        state = OnlineState.initial(4, 2)
        nxt = online_update(state, Transition(2, 0, 1.0, 2), schedule, kappa=0.5, gamma=0.9)

        assert nxt.q[2, 0] == pytest.approx(1.0)
        assert nxt.q_kappa[2, 0] == pytest.approx(1.0)
        np.testing.assert_allclose(nxt.pi[2], [1.0, 0.0])
        assert nxt.state_counts[2] == 1
        assert nxt.sa_counts[2, 0] == 1
        assert nxt.step == 1

    def test_stepsizes_come_from_the_schedule(self, schedule, monkeypatch):
        monkeypatch.setattr(StepSchedule, "fast", lambda self, n: 0.5)
        monkeypatch.setattr(StepSchedule, "slow", lambda self, n: 0.25)
        nxt = online_update(OnlineState.initial(4, 2), Transition(2, 0, 1.0, 2), schedule, kappa=0.5, gamma=0.9)
        assert nxt.q[2, 0] == pytest.approx(0.5)
        assert nxt.q_kappa[2, 0] == pytest.approx(0.5)
        np.testing.assert_allclose(nxt.pi[2], [0.625, 0.375])

    def test_does_not_touch_input_state(self, schedule):
        state = OnlineState.initial(2, 2)
        online_update(state, Transition(0, 1, 1.0, 1), schedule, kappa=0.5, gamma=0.9)
        np.testing.assert_array_equal(state.q, np.zeros((2, 2)))
        assert state.step == 0

    def test_other_rows_unchanged(self, schedule):
        state = OnlineState.initial(3, 2)
        nxt = online_update(state, Transition(1, 1, 1.0, 0), schedule, kappa=0.5, gamma=0.9)
        np.testing.assert_allclose(nxt.pi[[0, 2]], 0.5)
        assert nxt.q[0].tolist() == [0.0, 0.0]

    def test_rejects_out_of_range_transition(self, schedule):
        with pytest.raises(InvalidArgumentError, match="out of range"):
            online_update(OnlineState.initial(2, 2), Transition(0, 2, 0.0, 1), schedule, 0.5, 0.9)

    def test_counter_mismatch_is_rejected(self):
        state = OnlineState.initial(2, 2)
        with pytest.raises(ValidationError, match="counter mismatch"):
            OnlineState(
                q=state.q, q_kappa=state.q_kappa, pi=state.pi,
                state_counts=[1, 0], sa_counts=state.sa_counts, step=1,
            )


class TestCoupledOperator:
    @pytest.mark.parametrize("kappa", [0.0, 0.4, 1.0])
    def test_policy_pair_is_fixed_point(self, small_garnet, kappa):
        pi = Policy.uniform(5, 2)
        q, qk = q_of_policy(small_garnet, pi), q_kappa(small_garnet, pi, kappa)
        first, second = apply_H(small_garnet, pi, kappa, q, qk)
        np.testing.assert_allclose(first, q, atol=1e-8)
        np.testing.assert_allclose(second, qk, atol=1e-8)

    def test_contracts_jointly_by_gamma(self, garnet_8x3, rng):
        pi = Policy(probs=rng.dirichlet(np.ones(3), size=8))
        for _ in range(20):
            q1, q2, k1, k2 = (rng.normal(scale=5.0, size=(8, 3)) for _ in range(4))
            a1, b1 = apply_H(garnet_8x3, pi, 0.6, q1, k1)
            a2, b2 = apply_H(garnet_8x3, pi, 0.6, q2, k2)
            gap_in = max(np.max(np.abs(q1 - q2)), np.max(np.abs(k1 - k2)))
            gap_out = max(np.max(np.abs(a1 - a2)), np.max(np.abs(b1 - b2)))
            assert gap_out <= garnet_8x3.gamma * gap_in + 1e-12


class TestSampling:
    def test_zero_mass_measure_is_rejected(self, tightrope, pi0, rng):
        nu = StateDistribution(p=[0.5, 0.5, 0.0, 0.0])
        with pytest.raises(InvalidMeasureError):
            sample_step(tightrope, nu, pi0, rng)

    def test_single_state_always_same_transition(self, single_state_mdp, rng):
        t = sample_step(single_state_mdp, StateDistribution.uniform(1), Policy.uniform(1, 1), rng)
        assert t == Transition(0, 0, 1.0, 0)

    def test_inverse_cdf_edges(self, tightrope, pi0):
        model = GenerativeModel(tightrope, StateDistribution.uniform(4))
        assert model.transition_from_uniforms(pi0.probs, 0.0, 0.0, 0.0) == Transition(0, 0, 0.0, 0)
        assert model.transition_from_uniforms(pi0.probs, 0.99, 0.3, 0.7) == Transition(3, 0, -2.0, 3)

    def test_empirical_state_frequencies_follow_nu(self, small_garnet, rng):
        nu = StateDistribution(p=[0.4, 0.3, 0.1, 0.1, 0.1])
        model = GenerativeModel(small_garnet, nu)
        pi = Policy.uniform(5, 2)
        counts = np.bincount([model.sample(pi.probs, rng).s for _ in range(20_000)], minlength=5)
        np.testing.assert_allclose(counts / 20_000, nu.p, atol=0.02)

    def test_joint_law_of_state_action_next_state(self, rng):
        mdp = garnet(4, 2, 3)
        nu = StateDistribution(p=[0.4, 0.3, 0.2, 0.1])
        pi = Policy(probs=[[0.7, 0.3], [0.2, 0.8], [0.5, 0.5], [0.9, 0.1]])
        model = GenerativeModel(mdp, nu)
        n = 40_000
        counts = np.zeros((4, 2, 4))
        for _ in range(n):
            t = model.sample(pi.probs, rng)
            assert t.r == mdp.rewards[t.s, t.a]
            counts[t.s, t.a, t.s_next] += 1
        expected = nu.p[:, None, None] * pi.probs[:, :, None] * mdp.transitions
        sigma = np.sqrt(n * expected * (1.0 - expected))
        assert np.all(np.abs(counts - n * expected) <= 4.0 * sigma + 1e-9)


class TestRunOnline:
    def test_same_seed_same_trajectory(self, small_garnet):
        nu = StateDistribution.uniform(5)
        first, trace1 = run_online(small_garnet, nu, 0.5, StepSchedule(), 3000, seed=9, snapshot_stride=1000)
        second, trace2 = run_online(small_garnet, nu, 0.5, StepSchedule(), 3000, seed=9, snapshot_stride=1000)
        np.testing.assert_array_equal(first.q, second.q)
        np.testing.assert_array_equal(first.pi, second.pi)
        assert trace1 == trace2

    def test_snapshot_steps(self, small_garnet):
        _, trace = run_online(small_garnet, StateDistribution.uniform(5), 0.5, StepSchedule(), 25, 0, 10)
        assert [snapshot.step for snapshot in trace.snapshots] == [10, 20, 25]
        assert set(trace.to_rows()[0]) == {"step", "q_err_inf", "qk_err_inf", "policy_match_frac"}

    def test_counters_add_up(self, small_garnet):
        final, _ = run_online(small_garnet, StateDistribution.uniform(5), 0.3, StepSchedule(), 500, 1)
        assert final.step == 500
        assert final.state_counts.sum() == 500
        np.testing.assert_array_equal(final.sa_counts.sum(axis=1), final.state_counts)

    def test_single_state_converges(self, single_state_mdp):
        final, trace = run_online(
            single_state_mdp, StateDistribution.uniform(1), 0.5, StepSchedule(), 20_000, 0, 5000
        )
        assert final.q[0, 0] == pytest.approx(10.0, abs=1e-2)
        assert final.q_kappa[0, 0] == pytest.approx(10.0, abs=1e-2)
        assert trace.snapshots[-1].policy_match_frac == 1.0

    @pytest.mark.parametrize("kwargs", [{"n_steps": 0}, {"snapshot_stride": 0}, {"kappa": 1.5}])
    def test_invalid_arguments(self, small_garnet, kwargs):
        args = {"kappa": 0.5, "n_steps": 10, "snapshot_stride": 5} | kwargs
        with pytest.raises(InvalidArgumentError):
            run_online(small_garnet, StateDistribution.uniform(5), sched=StepSchedule(), seed=0, **args)

    @pytest.mark.slow
    def test_garnet_convergence(self, small_garnet):
        _, trace = run_online(small_garnet, StateDistribution.uniform(5), 0.5, StepSchedule(), 2_000_000, 0, 100_000)
        assert trace.snapshots[-1].q_err_inf < 0.1
        assert trace.snapshots[-1].policy_match_frac == 1.0
