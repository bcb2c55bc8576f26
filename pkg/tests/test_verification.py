import dataclasses
from unittest.mock import patch, MagicMock

import numpy as np
import pytest

from gaussian_prep.exceptions import NotDetectable
from gaussian_prep.system_model import derive_matrices
from gaussian_prep.verification import CriterionResult, VerificationSuite, summarize


@pytest.fixture
def mock_logger():
    """Mock logger for suite testing"""
    with patch('gaussian_prep.verification.get_logger') as mock_get_logger:
        mock_logger = MagicMock()
        mock_get_logger.return_value = mock_logger
        yield mock_logger


@pytest.fixture
def quick_suite(sample_settings):
    return VerificationSuite(sample_settings, quick=True)


def flipped_measurement_noise(spec):
    d = derive_matrices(spec)
    return dataclasses.replace(d, M=-d.M)


@pytest.mark.unit
def test_golden_values_pass(quick_suite):
    """Test the reference values of the single-mode system"""
    passed, margin, detail = quick_suite.example1_golden_values()

    assert passed, detail
    assert margin <= 1e-8


@pytest.mark.unit
def test_golden_values_catch_sign_error(sample_settings):
    """Test that a sign error in the derived matrices is caught"""
    suite = VerificationSuite(sample_settings, quick=True, derive=flipped_measurement_noise)

    passed, _, detail = suite.example1_golden_values()

    assert not passed
    assert "A_minus_MC" in detail or "solver failed" in detail


@pytest.mark.unit
def test_unconditional_infeasibility(quick_suite):
    """Test that no unconditional pure state exists for the reference Hamiltonian"""
    passed, margin, _ = quick_suite.unconditional_infeasibility()

    assert passed
    assert margin == pytest.approx(0.0, abs=1e-12)


@pytest.mark.unit
def test_axis_mode_equivalence(quick_suite):
    """Test agreement of both axis-mode characterizations on random systems"""
    passed, disagreements, detail = quick_suite.axis_mode_equivalence()

    assert passed, detail
    assert disagreements == 0


@pytest.mark.unit
def test_ode_convergence(quick_suite):
    """Test convergence of the covariance flow to the steady state"""
    passed, margin, detail = quick_suite.riccati_ode_convergence()

    assert passed, detail
    assert margin <= 1e-6


@pytest.mark.unit
def test_efficiency_sweep(quick_suite):
    """Test the steady state across detection efficiencies"""
    passed, _, detail = quick_suite.efficiency_sweep()

    assert passed, detail
    assert detail.count("eta=") == 4


@pytest.mark.unit
def test_run_selected_criteria(sample_settings, mock_logger):
    """Test running a named subset and logging each result"""
    suite = VerificationSuite(sample_settings, quick=True)

    results = suite.run(["example1_golden_values", "unconditional_infeasibility"])

    assert [r.name for r in results] == ["example1_golden_values", "unconditional_infeasibility"]
    assert all(r.passed for r in results)
    mock_logger.info.assert_any_call("Running criterion example1_golden_values")


@pytest.mark.unit
def test_run_reports_raised_errors(sample_settings):
    """Test that a criterion raising a library error is reported as a failure"""
    suite = VerificationSuite(sample_settings, quick=True)
    with patch.object(suite, "analyzer") as mock_analyzer:
        mock_analyzer.steady_state_verdict.side_effect = NotDetectable("forced")
        results = suite.run(["efficiency_sweep"])

    assert len(results) == 1
    assert not results[0].passed
    assert "NotDetectable" in results[0].detail
    assert np.isnan(results[0].margin)


@pytest.mark.unit
def test_summarize():
    """Test the verify report layout"""
    summary = summarize([
        CriterionResult("a", True, 0.5, "fine", 0.1),
        CriterionResult("b", False, float("nan"), "broken", 0.2),
    ])

    assert summary["passed"] is False
    assert summary["criteria"][0]["margin"] == 0.5
    assert summary["criteria"][1]["margin"] is None


@pytest.mark.integration
def test_random_suites_quick(quick_suite):
    """Test the randomized Riccati, purity and design criteria with reduced counts"""
    for check in (quick_suite.riccati_property_suite, quick_suite.steady_state_purity,
                  quick_suite.design_round_trip):
        passed, _, detail = check()
        assert passed, detail


@pytest.mark.integration
def test_monte_carlo_criteria_quick(quick_suite):
    """Test the Monte Carlo identity and determinism criteria with a reduced ensemble"""
    passed, residual, detail = quick_suite.monte_carlo_identity()
    assert passed, detail
    assert residual <= 0.05

    passed, _, detail = quick_suite.determinism()
    assert passed, detail
    assert "bit-identical=True" in detail
