from unittest.mock import patch, MagicMock

import numpy as np
import pytest
import scipy.linalg

from gaussian_prep.analysis import SteadyStateAnalyzer
from gaussian_prep.designer import feedback_gain
from gaussian_prep.exceptions import InvalidEfficiency, NotDetectable, StepSizeTooLarge, ValidationError
from gaussian_prep.simulator import EnsembleStats, FeedbackPolicy, MomentSimulator, ResourceMonitor, SimConfig
from gaussian_prep.system_model import SystemSpec, derive_matrices


@pytest.fixture
def mock_logger():
    """Mock logger for simulator testing"""
    with patch('gaussian_prep.simulator.get_logger') as mock_get_logger:
        mock_logger = MagicMock()
        mock_get_logger.return_value = mock_logger
        yield mock_logger


@pytest.fixture
def simulator(sample_settings):
    return MomentSimulator(sample_settings)


@pytest.mark.unit
class TestSimConfig:
    def test_validation(self):
        """Test rejection of invalid simulation settings"""
        with pytest.raises(ValidationError):
            SimConfig(dt=0.0, T=1.0)
        with pytest.raises(ValidationError):
            SimConfig(dt=2.0, T=1.0)
        with pytest.raises(ValidationError):
            SimConfig(dt=0.1, T=1.0, n_traj=0)
        with pytest.raises(ValidationError):
            SimConfig(dt=0.1, T=1.0, seed=-1)
        with pytest.raises(ValidationError):
            SimConfig(dt=0.1, T=1.0, gain_mode="adaptive")
        with pytest.raises(ValidationError):
            SimConfig(dt=0.1, T=1.0, scheme="milstein")
        with pytest.raises(ValidationError):
            SimConfig(dt=0.1, T=1.0, sample_every=0)
        with pytest.raises(InvalidEfficiency):
            SimConfig(dt=0.1, T=1.0, eta=0.0)

    def test_sample_indices_include_final_step(self):
        """Test that the last step is always sampled"""
        config = SimConfig(dt=0.1, T=1.0, sample_every=3)

        assert config.n_steps == 10
        np.testing.assert_array_equal(config.sample_indices(), [0, 3, 6, 9, 10])
        assert config.step_times()[-1] == pytest.approx(1.0)

    def test_metadata(self):
        """Test the metadata recorded with every ensemble"""
        meta = SimConfig(dt=0.1, T=1.0, n_traj=5, seed=42).metadata()

        assert meta["seed"] == 42
        assert meta["n_traj"] == 5
        assert meta["feedback"] == "none"
        assert meta["scheme"] == "euler_maruyama"

    def test_feedback_policy_validation(self):
        """Test feedback policy construction"""
        with pytest.raises(ValidationError):
            FeedbackPolicy("bang_bang")
        with pytest.raises(ValidationError):
            FeedbackPolicy("markovian", np.zeros((2, 1)))
        assert not FeedbackPolicy.none().active
        assert FeedbackPolicy.markovian(np.zeros((2, 1)), np.eye(1)).active


@pytest.mark.unit
class TestEnsembleStats:
    def test_identity_residual_and_standard_errors(self):
        """Test the summary helpers on a hand-built ensemble"""
        Vc = np.stack([0.5 * np.eye(2)] * 2)
        Sigmas = np.stack([np.zeros((2, 2)), np.diag([0.0, 0.5])])
        Vunc = Vc + Sigmas
        stats = EnsembleStats(times=np.array([0.0, 1.0]), n_traj=100, means=np.zeros((2, 2)),
                              Sigmas=Sigmas, Vc=Vc, Vunc=Vunc)

        assert stats.identity_residual == pytest.approx(0.0)
        np.testing.assert_allclose(stats.mean_standard_error()[-1], [0.0, np.sqrt(0.005)])
        np.testing.assert_allclose(stats.sigma_standard_error()[-1], [[0.0, 0.0], [0.0, np.sqrt(0.005)]])


@pytest.mark.integration
class TestMomentSimulator:
    def test_conditional_ensemble_identity(self, simulator, example1):
        """Test that conditional covariance plus spread of means matches the unconditional covariance"""
        config = SimConfig(dt=0.01, T=2.0, n_traj=2000, seed=11, sample_every=20)

        trajectories, stats = simulator.simulate_conditional(example1, config)

        assert stats.times.shape == (11,)
        assert stats.Sigmas.shape == (11, 2, 2)
        np.testing.assert_allclose(stats.Vc_final, 0.5 * np.eye(2), atol=1e-9)
        deviation = np.abs(stats.Vc_final + stats.Sigma - stats.Vunc_final)
        assert np.all(deviation <= 5.0 * stats.sigma_standard_error()[-1] + 0.02)
        assert np.all(np.abs(stats.mean_of_means) <= 5.0 * stats.mean_standard_error()[-1] + 1e-12)
        assert len(trajectories) == 4
        assert trajectories[0].mean.shape == (11, 2)
        assert stats.metadata["seed"] == 11
        assert stats.metadata["block_size"] == 250

    def test_same_seed_is_bit_identical(self, sample_settings, example1):
        """Test reproducibility for a fixed seed and independence from the worker count"""
        config = SimConfig(dt=0.01, T=0.5, n_traj=600, seed=5, sample_every=10)

        _, first = MomentSimulator(sample_settings).simulate_conditional(example1, config)
        _, second = MomentSimulator(dict(sample_settings, workers=3)).simulate_conditional(example1, config)

        np.testing.assert_array_equal(first.Sigmas, second.Sigmas)
        np.testing.assert_array_equal(first.means, second.means)

    def test_block_size_does_not_change_ensemble(self, sample_settings, example1):
        """Test that trajectory substreams and the reduction order are independent of the block size"""
        config = SimConfig(dt=0.01, T=0.5, n_traj=600, seed=5, sample_every=10)

        _, small = MomentSimulator(dict(sample_settings, block_size=250)).simulate_conditional(example1, config)
        _, large = MomentSimulator(dict(sample_settings, block_size=1000)).simulate_conditional(example1, config)

        np.testing.assert_array_equal(small.Sigmas, large.Sigmas)
        np.testing.assert_array_equal(small.means, large.means)
        assert small.metadata["block_size"] == 250
        assert large.metadata["block_size"] == 1000

    def test_block_size_rounded_to_reduction_chunk(self, sample_settings):
        """Test that blocks always hold whole reduction chunks"""
        assert MomentSimulator(dict(sample_settings, block_size=120)).block_size == 100
        assert MomentSimulator(dict(sample_settings, block_size=7)).block_size == 50

    def test_efficiency_falls_back_to_system(self, simulator, example1):
        """Test that a config without eta uses the efficiency of the system"""
        config = SimConfig(dt=0.01, T=0.2, n_traj=10, seed=1)

        _, stats = simulator.simulate_conditional(example1.with_eta(0.5), config)

        assert config.eta is None
        assert stats.metadata["eta"] == 0.5

    def test_different_seeds_differ(self, simulator, example1):
        """Test that distinct seeds give distinct ensembles"""
        _, a = simulator.simulate_conditional(example1, SimConfig(dt=0.01, T=0.5, n_traj=50, seed=1))
        _, b = simulator.simulate_conditional(example1, SimConfig(dt=0.01, T=0.5, n_traj=50, seed=2))

        assert not np.array_equal(a.Sigmas, b.Sigmas)

    def test_steady_feedback_freezes_means(self, simulator, example1, example1_derived):
        """Test that feedback at the steady state cancels the innovation noise"""
        gain = feedback_gain(0.5 * np.eye(2), example1_derived)
        config = SimConfig(dt=0.01, T=1.0, n_traj=20, seed=3,
                           feedback=FeedbackPolicy.markovian(gain.B, gain.F))

        _, stats = simulator.simulate_conditional(example1, config)

        np.testing.assert_allclose(stats.Sigma, np.zeros((2, 2)), atol=1e-12)

    def test_time_varying_gain(self, simulator, example1, example1_derived):
        """Test that a time-varying gain cancels the innovation noise along the covariance flow"""
        gain = feedback_gain(0.5 * np.eye(2), example1_derived)
        config = SimConfig(dt=0.01, T=1.0, n_traj=20, seed=3, gain_mode="time_varying",
                           feedback=FeedbackPolicy.markovian(gain.B, gain.F))

        _, stats = simulator.simulate_conditional(example1, config)

        np.testing.assert_allclose(stats.Sigma, np.zeros((2, 2)), atol=1e-12)

    def test_gain_modes_agree_at_steady_state(self, simulator, sample_settings, example1):
        """Test that fixed and time-varying gains coincide when the covariance starts at its steady value"""
        eta = 0.5
        spec = example1.with_eta(eta)
        V = SteadyStateAnalyzer(sample_settings).steady_state_verdict(spec).V
        gain = feedback_gain(V, derive_matrices(spec))
        policy = FeedbackPolicy.markovian(gain.B, gain.F)

        _, fixed = simulator.simulate_conditional(
            spec, SimConfig(dt=0.01, T=1.0, n_traj=50, seed=4, eta=eta, cov0=V, feedback=policy))
        _, varying = simulator.simulate_conditional(
            spec, SimConfig(dt=0.01, T=1.0, n_traj=50, seed=4, eta=eta, cov0=V, feedback=policy,
                            gain_mode="time_varying"))

        np.testing.assert_allclose(varying.Sigmas, fixed.Sigmas, atol=1e-6)
        np.testing.assert_allclose(varying.means, fixed.means, atol=1e-6)

    def test_exponential_scheme_tolerates_large_steps(self, simulator, example1):
        """Test that the exponential scheme stays bounded where Euler-Maruyama diverges"""
        config = SimConfig(dt=0.5, T=20.0, n_traj=100, seed=9, scheme="exponential")

        _, stats = simulator.simulate_conditional(example1, config)

        assert np.all(np.isfinite(stats.Sigmas))
        assert np.max(np.abs(stats.Sigma)) < 10.0

    def test_step_size_too_large(self, sample_settings, example1, mock_logger):
        """Test that a diverging Euler-Maruyama step is reported"""
        config = SimConfig(dt=5.0, T=500.0, n_traj=10, seed=1)

        with pytest.raises(StepSizeTooLarge) as excinfo:
            MomentSimulator(sample_settings).simulate_conditional(example1, config)

        assert excinfo.value.exit_code == 6
        assert any("Mean integration failed" in args[0] for args, kwargs in mock_logger.error.call_args_list)

    def test_not_detectable(self, simulator):
        """Test that an undetectable system is refused"""
        spec = SystemSpec(1, np.eye(2), np.zeros((1, 2)))

        with pytest.raises(NotDetectable):
            simulator.simulate_conditional(spec, SimConfig(dt=0.01, T=0.1))

    def test_unconditional_mean_flow(self, simulator, example1, example1_derived):
        """Test the exact unconditional mean and covariance"""
        x0 = np.array([1.0, 0.0])
        config = SimConfig(dt=0.01, T=2.0, mean0=x0, sample_every=50)

        traj = simulator.simulate_unconditional(example1, config)

        np.testing.assert_allclose(traj.final_mean, scipy.linalg.expm(2.0 * example1_derived.A) @ x0, atol=1e-10)
        assert traj.cov.shape == (5, 2, 2)

    def test_closed_loop_mean(self, simulator, example1):
        """Test the deterministic closed-loop mean under steady feedback"""
        x0 = np.array([1.0, 1.0])
        config = SimConfig(dt=0.01, T=3.0, mean0=x0)

        traj = simulator.simulate_closed_loop_mean(example1, 0.5 * np.eye(2), config)

        np.testing.assert_allclose(traj.final_mean, np.exp(-3.0) * x0, atol=1e-10)

    def test_logging(self, sample_settings, example1, mock_logger):
        """Test that ensemble runs are logged"""
        MomentSimulator(sample_settings).simulate_conditional(example1, SimConfig(dt=0.01, T=0.1, n_traj=10))

        mock_logger.info.assert_any_call("Simulating 10 conditional trajectories over T=0.1 with dt=0.01")


@pytest.mark.unit
class TestResourceMonitor:
    def test_high_memory_detected(self):
        """Test the memory threshold check"""
        logger = MagicMock()
        with patch('gaussian_prep.simulator.psutil.Process') as mock_process:
            mock_process.return_value.memory_info.return_value.rss = 600 * 1024 * 1024
            monitor = ResourceMonitor(logger, memory_threshold_mb=512)

            assert monitor.check_resources() is True
            logger.warning.assert_called_once()

    def test_low_memory(self):
        """Test that normal memory use is not flagged"""
        logger = MagicMock()
        with patch('gaussian_prep.simulator.psutil.Process') as mock_process:
            mock_process.return_value.memory_info.return_value.rss = 10 * 1024 * 1024
            monitor = ResourceMonitor(logger, memory_threshold_mb=512)

            assert monitor.check_resources() is False

    def test_memory_check_error(self):
        """Test that a failing memory probe is logged and ignored"""
        logger = MagicMock()
        with patch('gaussian_prep.simulator.psutil.Process') as mock_process:
            mock_process.return_value.memory_info.side_effect = RuntimeError("no access")
            monitor = ResourceMonitor(logger)

            assert monitor.check_resources() is False
            logger.error.assert_called_with("Error checking resources: no access")

    def test_cleanup(self):
        """Test forced garbage collection"""
        logger = MagicMock()
        with patch('gaussian_prep.simulator.gc.collect', return_value=7):
            ResourceMonitor(logger).perform_cleanup()

        logger.debug.assert_called_with("Garbage collection freed 7 objects")
