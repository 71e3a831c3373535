import pytest

from checks.invariant_checks import (
    SUITES,
    check_bound_validity,
    check_c_dp_enumeration,
    check_cli_determinism,
    check_exact_oracle_decay,
    check_h_contraction,
    check_kappa_pi_convergence,
    check_lemma3,
    check_online_convergence,
    check_operator_identities,
    check_rollout_consistency,
    check_soft_update_necessity,
    check_soft_update_sufficiency,
    check_solver_against_enumeration,
    check_tightrope_counterexample,
    check_value_difference,
    run_suite,
)


class TestReducedChecks:
    """The verify checks at a size that fits in the default test run."""

    def test_solver_against_enumeration(self):
        assert check_solver_against_enumeration(0, n_mdps=3).passed

    def test_value_difference(self):
        assert check_value_difference(0, n_draws=30).passed

    def test_kappa_pi_convergence(self):
        assert check_kappa_pi_convergence(0, n_mdps=3).passed

    def test_tightrope_counterexample(self):
        result = check_tightrope_counterexample(0)
        assert result.passed
        assert result.metrics["v_mix_s0"] == pytest.approx(-3.681818, abs=1e-6)

    def test_soft_update_sufficiency(self):
        assert check_soft_update_sufficiency(0, n_mdps=5, draws=2, threads=2).passed

    def test_soft_update_necessity(self):
        assert check_soft_update_necessity(0).passed

    def test_h_contraction(self):
        assert check_h_contraction(0, n_draws=50).passed

    def test_exact_oracle_decay(self):
        assert check_exact_oracle_decay(0, n_mdps=1, k=8).passed

    def test_bound_validity(self):
        result = check_bound_validity(0, n_mdps=2, k=5)
        assert result.passed, result.detail

    def test_rollout_consistency(self):
        assert check_rollout_consistency(0, n_rollouts=20_000, horizon=250).passed

    def test_lemma3(self):
        assert check_lemma3(0, n_mdps=5).passed

    def test_operator_identities(self):
        assert check_operator_identities(0, n_draws=10).passed

    def test_c_dp_enumeration(self):
        assert check_c_dp_enumeration(0, n_mdps=3, i_max=2).passed

    def test_online_convergence_short_run_reports(self):
        # too short to converge; the check must report, not raise
        result = check_online_convergence(0, n_steps=2000, tolerance=1e-6)
        assert not result.passed
        assert "relative q error" in result.detail


def test_unknown_suite():
    with pytest.raises(ValueError, match="unknown suite"):
        run_suite("everything", 0)


def test_every_suite_is_named():
    assert sorted(SUITES) == ["approx", "cli", "coeffs", "core", "kappa", "mixture", "online"]


@pytest.mark.slow
def test_cli_determinism():
    assert check_cli_determinism(0).passed


@pytest.mark.slow
@pytest.mark.parametrize("suite", ["core", "kappa", "mixture", "online", "approx", "coeffs"])
def test_full_size_suite(suite):
    results = run_suite(suite, seed=0, threads=2)
    failed = [f"{r.name}: {r.detail}" for r in results if not r.passed]
    assert not failed, failed
