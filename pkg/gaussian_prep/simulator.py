"""Time-domain simulation of the conditional and unconditional moment equations.

Conditional means are driven by standard Wiener innovations. The covariance
V_t is deterministic, integrated once and shared by every trajectory. Each
trajectory draws from its own Philox substream keyed by the master seed and
its index, and moments are reduced over fixed chunks of trajectories in index
order, so neither the block size nor the worker count changes the ensemble.
"""

import gc
import logging
import math
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import psutil
import scipy.linalg

from gaussian_prep.exceptions import (
    DimensionMismatch,
    InvalidEfficiency,
    NonFiniteState,
    NotDetectable,
    StepSizeTooLarge,
    ValidationError,
)
from gaussian_prep.logger import get_logger
from gaussian_prep.pbh import is_detectable
from gaussian_prep.riccati import BLOWUP_NORM, RiccatiSolver
from gaussian_prep.system_model import DerivedMatrices, SystemSpec, derive_matrices
from gaussian_prep.types import Settings

GAIN_MODES = ("fixed", "time_varying")
SCHEMES = ("euler_maruyama", "exponential")
REDUCTION_CHUNK = 50
NOISE_STEPS = 256


@dataclass(frozen=True, eq=False)
class FeedbackPolicy:
    kind: str = "none"
    B: Optional[np.ndarray] = None
    F: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.kind not in ("none", "markovian"):
            raise ValidationError(f"unknown feedback kind {self.kind!r}")
        if self.kind == "markovian":
            if self.B is None or self.F is None:
                raise ValidationError("markovian feedback needs both B and F")
            B = np.atleast_2d(np.asarray(self.B, dtype=float))
            F = np.atleast_2d(np.asarray(self.F, dtype=float))
            if B.shape[1] != F.shape[0]:
                raise DimensionMismatch(f"B {B.shape} and F {F.shape} are incompatible")
            object.__setattr__(self, "B", B)
            object.__setattr__(self, "F", F)

    @classmethod
    def none(cls) -> "FeedbackPolicy":
        return cls("none")

    @classmethod
    def markovian(cls, B: np.ndarray, F: np.ndarray) -> "FeedbackPolicy":
        return cls("markovian", B, F)

    @property
    def active(self) -> bool:
        return self.kind == "markovian"


@dataclass(frozen=True, eq=False)
class SimConfig:
    dt: float
    T: float
    n_traj: int = 1
    seed: int = 0
    eta: Optional[float] = None
    feedback: FeedbackPolicy = field(default_factory=FeedbackPolicy.none)
    gain_mode: str = "fixed"
    scheme: str = "euler_maruyama"
    integrator: Optional[str] = None
    sample_every: int = 1
    mean0: Optional[np.ndarray] = None
    cov0: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if not (self.dt > 0 and self.T > 0):
            raise ValidationError(f"dt and T must be positive, got dt={self.dt}, T={self.T}")
        if self.dt > self.T:
            raise ValidationError(f"dt={self.dt} exceeds the horizon T={self.T}")
        if int(self.n_traj) < 1:
            raise ValidationError(f"n_traj must be at least 1, got {self.n_traj}")
        if not (0 <= int(self.seed) < 2 ** 64):
            raise ValidationError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.eta is not None and not (0.0 < float(self.eta) <= 1.0):
            raise InvalidEfficiency(f"detection efficiency must lie in (0, 1], got {self.eta}")
        if self.gain_mode not in GAIN_MODES:
            raise ValidationError(f"gain_mode must be one of {GAIN_MODES}, got {self.gain_mode!r}")
        if self.scheme not in SCHEMES:
            raise ValidationError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if int(self.sample_every) < 1:
            raise ValidationError(f"sample_every must be at least 1, got {self.sample_every}")
        object.__setattr__(self, "n_traj", int(self.n_traj))
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "sample_every", int(self.sample_every))

    def for_system(self, spec: SystemSpec) -> "SimConfig":
        """Config with the efficiency resolved, falling back to the system's own eta"""
        if self.eta is not None:
            return self
        return replace(self, eta=spec.eta)

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def step_times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def sample_indices(self) -> np.ndarray:
        idx = np.arange(0, self.n_steps + 1, self.sample_every)
        if idx[-1] != self.n_steps:
            idx = np.append(idx, self.n_steps)
        return idx

    def metadata(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "dt": self.dt,
            "T": self.T,
            "n_traj": self.n_traj,
            "eta": self.eta,
            "feedback": self.feedback.kind,
            "gain_mode": self.gain_mode,
            "scheme": self.scheme,
            "integrator": self.integrator,
            "sample_every": self.sample_every,
        }


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    mean: np.ndarray
    cov: Optional[np.ndarray] = None

    @property
    def final_mean(self) -> np.ndarray:
        return self.mean[-1]


@dataclass(frozen=True, eq=False)
class EnsembleStats:
    times: np.ndarray
    n_traj: int
    means: np.ndarray
    Sigmas: np.ndarray
    Vc: np.ndarray
    Vunc: np.ndarray
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def mean_of_means(self) -> np.ndarray:
        return self.means[-1]

    @property
    def Sigma(self) -> np.ndarray:
        return self.Sigmas[-1]

    @property
    def Vc_final(self) -> np.ndarray:
        return self.Vc[-1]

    @property
    def Vunc_final(self) -> np.ndarray:
        return self.Vunc[-1]

    def mean_standard_error(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diagonal(self.Sigmas, axis1=1, axis2=2), 0.0, None) / self.n_traj)

    def sigma_standard_error(self) -> np.ndarray:
        """Standard error of each entry of Sigma for Gaussian distributed means"""
        diag = np.clip(np.diagonal(self.Sigmas, axis1=1, axis2=2), 0.0, None)
        var = (diag[:, :, None] * diag[:, None, :] + self.Sigmas ** 2) / self.n_traj
        return np.sqrt(var)

    def identity_residuals(self) -> np.ndarray:
        """Relative Frobenius residual of Vc + Sigma = Vunc at every sample"""
        diff = np.linalg.norm(self.Vc + self.Sigmas - self.Vunc, axis=(1, 2))
        scale = np.maximum(np.linalg.norm(self.Vunc, axis=(1, 2)), 1e-300)
        return diff / scale

    @property
    def identity_residual(self) -> float:
        return float(self.identity_residuals()[-1])


class ResourceMonitor:
    """Watch process memory between ensemble blocks"""

    def __init__(self, logger: logging.Logger, memory_threshold_mb: float = 512) -> None:
        self.logger = logger
        self.process = psutil.Process()
        self.memory_threshold = memory_threshold_mb * 1024 * 1024

    def check_resources(self) -> bool:
        try:
            rss = self.process.memory_info().rss
            if rss > self.memory_threshold:
                self.logger.warning(f"High memory usage detected: {rss / 1024 / 1024:.1f}MB")
                return True
            return False
        except Exception as e:
            self.logger.error(f"Error checking resources: {e}")
            return False

    def perform_cleanup(self) -> None:
        collected = gc.collect()
        self.logger.debug(f"Garbage collection freed {collected} objects")


def _rowwise(X: np.ndarray, mat: np.ndarray) -> np.ndarray:
    """X @ mat.T with a per-row summation order that does not depend on the number of rows"""
    return (X[:, None, :] * mat[None, :, :]).sum(axis=2)


@dataclass
class _BlockResult:
    count: int
    s1: List[np.ndarray]
    s2: List[np.ndarray]
    recorded: np.ndarray


class MomentSimulator:
    def __init__(self, settings: Optional[Settings] = None, solver: Optional[RiccatiSolver] = None) -> None:
        self.settings: Settings = settings or {}
        self.logger: logging.Logger = get_logger(self.settings)
        self.solver: RiccatiSolver = solver or RiccatiSolver(self.settings)
        # blocks hold whole reduction chunks
        requested = int(self.settings.get("block_size", 1000))
        self.block_size: int = max(REDUCTION_CHUNK, requested // REDUCTION_CHUNK * REDUCTION_CHUNK)
        if self.block_size != requested:
            self.logger.debug(f"Block size {requested} rounded to {self.block_size}")
        self.workers: int = max(1, int(self.settings.get("workers", 1)))
        self.record_trajectories: int = int(self.settings.get("record_trajectories", 8))
        self.resource_monitor: ResourceMonitor = ResourceMonitor(
            self.logger, self.settings.get("memory_threshold_mb", 512)
        )

    def _initial_moments(self, d: DerivedMatrices, config: SimConfig) -> Tuple[np.ndarray, np.ndarray]:
        n = 2 * d.m
        mean0 = np.zeros(n) if config.mean0 is None else np.asarray(config.mean0, dtype=float).reshape(-1)
        cov0 = 0.5 * np.eye(n) if config.cov0 is None else np.asarray(config.cov0, dtype=float)
        if mean0.shape != (n,) or cov0.shape != (n, n):
            raise DimensionMismatch(f"initial moments must have sizes {n} and {n}x{n}")
        return mean0, cov0

    def _gain_sequence(self, d: DerivedMatrices, config: SimConfig, covs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Per-step drift D_k and noise coefficient Gamma_k of the mean equation"""
        assert config.eta is not None
        eta = config.eta
        sq = math.sqrt(eta)
        steps = covs.shape[0] - 1
        innovation = sq * (covs[:steps] @ d.C.T + d.M)

        policy = config.feedback
        if not policy.active:
            drift = np.broadcast_to(d.A, (steps,) + d.A.shape)
            return drift, innovation

        B = policy.B
        if B.shape[0] != d.A.shape[0]:
            raise DimensionMismatch(f"feedback B must have {d.A.shape[0]} rows, got {B.shape[0]}")
        if config.gain_mode == "time_varying":
            targets = covs[:steps] @ d.C.T + d.M
            gains = np.stack([-np.linalg.lstsq(B, target, rcond=None)[0] for target in targets])
        else:
            gains = np.broadcast_to(policy.F, (steps,) + policy.F.shape)

        BF = B @ gains
        drift = d.A + sq * BF @ d.C
        return drift, BF + innovation

    def _run_block(
        self,
        seed: int,
        start: int,
        count: int,
        n_record: int,
        mean0: np.ndarray,
        drift: np.ndarray,
        noise: np.ndarray,
        transitions: Optional[np.ndarray],
        config: SimConfig,
    ) -> _BlockResult:
        rngs = [np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(start + j,))))
                for j in range(count)]
        n = mean0.shape[0]
        m = noise.shape[2]
        dt = config.dt
        sqdt = math.sqrt(dt)
        sample_idx = config.sample_indices()
        n_samples = len(sample_idx)
        chunks = [slice(lo, min(lo + REDUCTION_CHUNK, count)) for lo in range(0, count, REDUCTION_CHUNK)]

        s1 = [np.zeros((n_samples, n)) for _ in chunks]
        s2 = [np.zeros((n_samples, n, n)) for _ in chunks]
        recorded = np.zeros((n_record, n_samples, n))

        X = np.tile(mean0, (count, 1))
        dW_buffer = np.empty((count, 0, m))
        slot = 0
        for k in range(config.n_steps + 1):
            if slot < n_samples and sample_idx[slot] == k:
                for c, rows in enumerate(chunks):
                    s1[c][slot] = X[rows].sum(axis=0)
                    s2[c][slot] = (X[rows, :, None] * X[rows, None, :]).sum(axis=0)
                if n_record:
                    recorded[:, slot, :] = X[:n_record]
                slot += 1
            if k == config.n_steps:
                break

            offset = k % NOISE_STEPS
            if offset == 0:
                width = min(NOISE_STEPS, config.n_steps - k)
                dW_buffer = np.stack([rng.standard_normal((width, m)) for rng in rngs]) * sqdt
            dW = dW_buffer[:, offset, :]
            if transitions is None:
                X = X + dt * _rowwise(X, drift[k]) + _rowwise(dW, noise[k])
            else:
                X = _rowwise(X, transitions[k]) + _rowwise(dW, noise[k])

            peak = float(np.max(np.abs(X)))
            if not math.isfinite(peak):
                raise NonFiniteState(f"conditional mean became non-finite at t={(k + 1) * dt:.6g}")
            if peak > BLOWUP_NORM:
                raise StepSizeTooLarge(f"conditional mean diverged at t={(k + 1) * dt:.6g} with dt={dt}")

        return _BlockResult(count=count, s1=s1, s2=s2, recorded=recorded)

    def simulate_conditional(
        self,
        spec: SystemSpec,
        config: SimConfig,
        require_detectable: bool = True,
    ) -> Tuple[List[Trajectory], EnsembleStats]:
        d = derive_matrices(spec)
        config = config.for_system(spec)
        assert config.eta is not None
        self.logger.info(f"Simulating {config.n_traj} conditional trajectories over T={config.T} with dt={config.dt}")

        if require_detectable:
            cert = is_detectable(d.C, d.A)
            if not cert.verdict:
                self.logger.error(f"System is not detectable, unobservable mode at {cert.witness_eigenvalue}")
                raise NotDetectable("[C, A] is not detectable", certificate=cert)

        mean0, cov0 = self._initial_moments(d, config)
        try:
            Vc = self.solver.integrate_riccati_ode(d, config.eta, cov0, config.T, config.dt, config.integrator).covs
            Vunc = self.solver.integrate_lyapunov_ode(d, cov0, config.T, config.dt, config.integrator).covs
        except Exception as e:
            self.logger.error(f"Covariance integration failed: {e}")
            self.logger.debug(traceback.format_exc())
            raise

        drift, noise = self._gain_sequence(d, config, Vc)
        transitions: Optional[np.ndarray] = None
        if config.scheme == "exponential":
            if config.feedback.active and config.gain_mode == "time_varying":
                transitions = np.stack([scipy.linalg.expm(D * config.dt) for D in drift])
            else:
                transitions = np.broadcast_to(scipy.linalg.expm(drift[0] * config.dt), drift.shape)

        n_blocks = math.ceil(config.n_traj / self.block_size)
        n_record_total = min(self.record_trajectories, config.n_traj)

        def run(i: int) -> _BlockResult:
            start = i * self.block_size
            count = min(self.block_size, config.n_traj - start)
            n_record = max(0, min(count, n_record_total - start))
            self.logger.debug(f"Running block {i + 1}/{n_blocks} with {count} trajectories")
            return self._run_block(config.seed, start, count, n_record, mean0, drift, noise, transitions, config)

        sample_idx = config.sample_indices()
        n = mean0.shape[0]
        s1 = np.zeros((len(sample_idx), n))
        s2 = np.zeros((len(sample_idx), n, n))
        recorded: List[np.ndarray] = []

        try:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                for block in pool.map(run, range(n_blocks)):
                    for c1, c2 in zip(block.s1, block.s2):
                        s1 += c1
                        s2 += c2
                    recorded.extend(block.recorded)
                    if self.resource_monitor.check_resources():
                        self.resource_monitor.perform_cleanup()
        except (StepSizeTooLarge, NonFiniteState) as e:
            self.logger.error(f"Mean integration failed: {e}")
            raise

        means = s1 / config.n_traj
        second = s2 / config.n_traj
        outer = means[:, :, None] * means[:, None, :]
        Sigmas = second - outer
        Sigmas = 0.5 * (Sigmas + np.swapaxes(Sigmas, 1, 2))

        times = config.step_times()[sample_idx]
        Vc_s = Vc[sample_idx]
        stats = EnsembleStats(
            times=times,
            n_traj=config.n_traj,
            means=means,
            Sigmas=Sigmas,
            Vc=Vc_s,
            Vunc=Vunc[sample_idx],
            metadata=dict(config.metadata(), block_size=self.block_size),
        )
        trajectories = [Trajectory(times=times, mean=path, cov=Vc_s) for path in recorded]
        self.logger.info(f"Conditional simulation complete, identity residual {stats.identity_residual:.3e}")
        return trajectories, stats

    def simulate_unconditional(self, spec: SystemSpec, config: SimConfig) -> Trajectory:
        d = derive_matrices(spec)
        mean0, cov0 = self._initial_moments(d, config)
        self.logger.info(f"Simulating unconditional moments over T={config.T}")
        covs = self.solver.integrate_lyapunov_ode(d, cov0, config.T, config.dt, config.integrator).covs
        sample_idx = config.sample_indices()
        times = config.step_times()[sample_idx]
        return Trajectory(times=times, mean=_linear_flow(d.A, mean0, times), cov=covs[sample_idx])

    def simulate_closed_loop_mean(self, spec: SystemSpec, V_steady: np.ndarray, config: SimConfig) -> Trajectory:
        """Deterministic mean under steady Markovian feedback, dX/dt = (A - sqrt(eta)(V C^T + M) C) X"""
        d = derive_matrices(spec)
        config = config.for_system(spec)
        assert config.eta is not None
        mean0, _ = self._initial_moments(d, config)
        V = np.asarray(V_steady, dtype=float)
        closed = d.A - math.sqrt(config.eta) * (V @ d.C.T + d.M) @ d.C
        eigs = scipy.linalg.eigvals(closed)
        self.logger.debug(f"Closed-loop mean spectrum: {eigs}")
        if np.max(eigs.real) >= 0:
            self.logger.warning("Closed-loop mean dynamics are not stable")
        times = config.step_times()[config.sample_indices()]
        return Trajectory(times=times, mean=_linear_flow(closed, mean0, times))


def _linear_flow(A: np.ndarray, x0: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Exact samples of dx/dt = A x at the given times"""
    out = np.empty((len(times), x0.shape[0]))
    out[0] = x0
    cache: Dict[float, np.ndarray] = {}
    x = x0
    for j in range(1, len(times)):
        delta = round(float(times[j] - times[j - 1]), 12)
        if delta not in cache:
            cache[delta] = scipy.linalg.expm(A * delta)
        x = cache[delta] @ x
        out[j] = x
    return out
