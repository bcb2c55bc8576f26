from unittest.mock import patch, MagicMock

import numpy as np
import pytest

from gaussian_prep.analysis import (
    SteadyStateAnalyzer,
    heisenberg_certificate,
    is_pure,
    lemma4_equivalence_check,
    unconditional_pure_conditions,
    unconditional_pure_feasibility,
    unconditional_steady_covariance,
)
from gaussian_prep.exceptions import NotDetectable
from gaussian_prep.sampling import (
    example1_spec,
    random_detectable_spec,
    random_pure_covariance,
    random_system_spec,
    squeezed_covariance,
)
from gaussian_prep.system_model import SystemSpec, derive_matrices


@pytest.fixture
def mock_logger():
    """Mock logger for analyzer testing"""
    with patch('gaussian_prep.analysis.get_logger') as mock_get_logger:
        mock_logger = MagicMock()
        mock_get_logger.return_value = mock_logger
        yield mock_logger


@pytest.fixture
def analyzer(sample_settings):
    return SteadyStateAnalyzer(sample_settings)


class TestCertificates:
    def test_heisenberg_vacuum(self):
        """Test that the vacuum sits exactly on the uncertainty bound"""
        cert = heisenberg_certificate(0.5 * np.eye(2))

        assert cert.verdict
        assert cert.margin == pytest.approx(0.0, abs=1e-12)

    def test_heisenberg_boundary_state(self):
        """Test a non-vacuum covariance with zero margin"""
        cert = heisenberg_certificate(np.diag([1.0, 0.25]))

        assert cert.verdict
        assert cert.margin == pytest.approx(0.0, abs=1e-12)

    def test_heisenberg_violation_has_witness(self):
        """Test that a violating covariance yields an eigenvector witness"""
        V = 0.1 * np.eye(2)
        cert = heisenberg_certificate(V)

        assert not cert.verdict
        assert cert.margin == pytest.approx(-0.4, abs=1e-12)
        lam, vec = cert.witness
        J = np.array([[0.0, 1.0], [-1.0, 0.0]])
        np.testing.assert_allclose((V + 0.5j * J) @ vec, lam * vec, atol=1e-12)

    def test_is_pure(self):
        """Test the pure-state identity on pure and mixed states"""
        vacuum = is_pure(0.5 * np.eye(2))
        squeezed = is_pure(squeezed_covariance(0.4))
        thermal = is_pure(np.eye(2))

        assert vacuum.verdict and vacuum.purity == pytest.approx(1.0)
        assert squeezed.verdict and squeezed.purity == pytest.approx(1.0)
        assert not thermal.verdict
        assert thermal.purity == pytest.approx(0.5)
        assert thermal.margin == pytest.approx(0.75 * np.sqrt(2.0))

    def test_is_pure_checks_agree(self, rng):
        """Test that the identity residual and Tr[rho^2] give the same verdict"""
        slightly_mixed = is_pure(0.5 * np.diag([1.0 + 1e-3, 1.0]))

        assert not slightly_mixed.verdict
        assert not slightly_mixed.purity_verdict
        assert slightly_mixed.agree
        for m in (1, 2, 3):
            cert = is_pure(random_pure_covariance(m, rng))
            assert cert.verdict and cert.purity_verdict
            assert cert.agree
        assert is_pure(np.eye(2)).agree


class TestAxisModeEquivalence:
    def test_example1(self, example1_derived):
        """Test both characterizations on the reference system"""
        report = lemma4_equivalence_check(example1_derived)

        assert report.lhs
        assert report.rhs
        assert report.agree

    def test_random_systems_agree(self, rng):
        """Test that both characterizations agree on random systems"""
        for i in range(60):
            d = derive_matrices(random_system_spec(1 + i % 3, rng))

            assert lemma4_equivalence_check(d).agree

    def test_unmeasured_oscillator(self):
        """Test a system whose oscillation is invisible to the measurement"""
        spec = SystemSpec(1, np.eye(2), np.zeros((1, 2)))

        report = lemma4_equivalence_check(derive_matrices(spec))

        assert not report.lhs
        assert not report.rhs
        assert report.agree


class TestUnconditionalPurity:
    def test_example1_infeasible(self):
        """Test that the reference Hamiltonian admits no unconditional pure state"""
        report = unconditional_pure_feasibility(example1_spec().G)

        assert not report.feasible
        assert report.null_dimension == 1
        assert report.best_min_eigenvalue == pytest.approx(0.0, abs=1e-12)
        assert report.witness is None

    def test_oscillator_feasible(self):
        """Test that a harmonic oscillator admits a positive definite solution"""
        report = unconditional_pure_feasibility(np.eye(2))

        assert report.feasible
        assert report.null_dimension == 1
        np.testing.assert_allclose(report.witness, report.witness[0, 0] * np.eye(2), atol=1e-12)

    def test_two_mode_feasible(self):
        """Test a two-mode Hamiltonian with a multi-dimensional solution space"""
        report = unconditional_pure_feasibility(np.eye(4))

        assert report.feasible
        assert report.null_dimension > 1
        assert np.linalg.eigvalsh(report.witness)[0] > 0

    def test_conditions_of_example1(self, example1, example1_derived):
        """Test the unconditional purity conditions at the conditional steady state"""
        residuals = unconditional_pure_conditions(0.5 * np.eye(2), example1_derived, example1.G)

        assert residuals["eq1_residual"] == pytest.approx(np.sqrt(0.5))
        assert residuals["eq2_residual"] > 0

    def test_unconditional_steady_covariance(self, example1_derived):
        """Test the stationary unconditional covariance"""
        np.testing.assert_allclose(unconditional_steady_covariance(example1_derived), np.diag([0.5, 1.0]), atol=1e-12)


class TestSteadyStateAnalyzer:
    def test_example1_verdict(self, analyzer, example1):
        """Test the full steady-state report of the reference system"""
        report = analyzer.steady_state_verdict(example1)

        np.testing.assert_allclose(report.V, 0.5 * np.eye(2), atol=1e-10)
        assert report.purity.verdict
        assert report.purity.purity == pytest.approx(1.0, abs=1e-10)
        assert report.heisenberg_margin == pytest.approx(0.0, abs=1e-10)
        assert report.closed_loop_stable
        np.testing.assert_allclose(np.sort(report.feedback_spectrum.real), [-1.0, -1.0], atol=1e-10)
        np.testing.assert_allclose(report.V_unc, np.diag([0.5, 1.0]), atol=1e-10)
        assert report.ordering_margin == pytest.approx(0.0, abs=1e-10)
        assert report.complex_path_error is not None
        assert report.complex_path_error <= 1e-8

    def test_logging(self, sample_settings, example1, mock_logger):
        """Test that the analysis is logged"""
        SteadyStateAnalyzer(sample_settings).steady_state_verdict(example1)

        mock_logger.info.assert_any_call("Analyzing 1-mode system at eta=1.0")
        assert any("Steady state found" in args[0] for args, kwargs in mock_logger.info.call_args_list)

    def test_random_steady_states_are_pure(self, analyzer, rng):
        """Test purity of the steady state for random detectable systems"""
        for m in (1, 2, 3):
            for _ in range(5):
                report = analyzer.steady_state_verdict(random_detectable_spec(m, rng))

                assert report.heisenberg.verdict
                assert report.purity.purity == pytest.approx(1.0, abs=1e-6)
                assert report.closed_loop_stable

    def test_imperfect_detection(self, analyzer, example1):
        """Test that lower efficiency gives a mixed but physical state"""
        purities = []
        for eta in (0.25, 0.5, 0.75, 1.0):
            report = analyzer.steady_state_verdict(example1.with_eta(eta))

            assert report.heisenberg.verdict
            assert report.purity.purity <= 1.0 + 1e-8
            assert report.ordering_margin >= -1e-8
            assert report.feedback_spectrum is None or eta == 1.0
            purities.append(report.purity.purity)

        assert purities[0] < 1.0 - 1e-3
        assert purities[-1] == pytest.approx(1.0, abs=1e-6)

    def test_complex_path_matches_real_path(self, analyzer, example1):
        """Test that the complex covariance equation reproduces V at reduced efficiency"""
        report = analyzer.steady_state_verdict(example1.with_eta(0.5))

        assert report.complex_path_error is not None
        assert report.complex_path_error <= 1e-6

    def test_not_detectable(self, sample_settings, mock_logger):
        """Test that an unmeasured oscillator is rejected with a witness"""
        spec = SystemSpec(1, np.eye(2), np.zeros((1, 2)))

        with pytest.raises(NotDetectable) as excinfo:
            SteadyStateAnalyzer(sample_settings).steady_state_verdict(spec)

        assert excinfo.value.exit_code == 3
        assert abs(excinfo.value.certificate.witness_eigenvalue.imag) == pytest.approx(1.0)
        mock_logger.error.assert_called_once()

    def test_imperfect_detection_certificates(self, analyzer, example1_derived):
        """Test that the real and complex axis certificates agree"""
        for eta in (0.3, 0.7, 1.0):
            report = analyzer.imperfect_detection_certificates(example1_derived, eta)

            assert report.agree
            assert report.eta == eta

    def test_output_injection(self, analyzer):
        """Test that the injected gain stabilizes a detectable pair"""
        A = np.diag([1.0, -1.0])
        C = np.array([[1.0, 0.0]])

        L = analyzer.output_injection(C, A)

        assert np.isrealobj(L)
        assert np.max(np.linalg.eigvals(A + L @ C).real) < 0

    def test_output_injection_not_detectable(self, analyzer):
        """Test that an undetectable pair has no stabilizing injection"""
        with pytest.raises(NotDetectable):
            analyzer.output_injection(np.array([[0.0, 1.0]]), np.diag([1.0, -1.0]))
