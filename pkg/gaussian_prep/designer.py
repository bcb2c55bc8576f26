"""Synthesis of system parameters whose conditional steady state is a chosen pure state."""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from gaussian_prep.analysis import SteadyStateAnalyzer, SteadyStateReport, is_detectable, is_pure
from gaussian_prep.exceptions import (
    DimensionMismatch,
    NonSymmetricCovariance,
    NotPure,
    RankDeficient,
    SingularCovariance,
    VerificationFailed,
)
from gaussian_prep.logger import get_logger
from gaussian_prep.riccati import RiccatiProblem, riccati_residual
from gaussian_prep.system_model import DerivedMatrices, SystemSpec, derive_matrices, symplectic_form
from gaussian_prep.types import Settings

RANK_TOL = 1e-8
G_SYMMETRY_TOL = 1e-10
ROUNDTRIP_TOL = 1e-6
SUBSTITUTION_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class DesignRequest:
    V_s: np.ndarray
    R_choice: Optional[np.ndarray] = None
    Im_choice: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        V = np.atleast_2d(np.asarray(self.V_s, dtype=float))
        n = V.shape[0]
        if V.shape != (n, n) or n % 2:
            raise DimensionMismatch(f"target covariance must be 2m x 2m, got {V.shape}")
        if float(np.linalg.norm(V - V.T)) > 1e-10 * max(1.0, float(np.linalg.norm(V))):
            raise NonSymmetricCovariance("target covariance is not symmetric")
        V = 0.5 * (V + V.T)
        if np.linalg.eigvalsh(V)[0] <= 0:
            raise SingularCovariance("target covariance must be positive definite")

        m = n // 2
        for name in ("R_choice", "Im_choice"):
            value = getattr(self, name)
            if value is None:
                continue
            mat = np.atleast_2d(np.asarray(value, dtype=float))
            if mat.shape != (m, n):
                raise DimensionMismatch(f"{name} must be {m}x{n}, got {mat.shape}")
            object.__setattr__(self, name, mat)

        cert = is_pure(V)
        if not cert.verdict:
            raise NotPure(f"target covariance is not pure (purity {cert.purity:.9f}, "
                          f"identity residual {cert.margin:.3e})")
        object.__setattr__(self, "V_s", V)

    @property
    def m(self) -> int:
        return self.V_s.shape[0] // 2


@dataclass(frozen=True, eq=False)
class FeedbackGain:
    B: np.ndarray
    F: np.ndarray
    K: np.ndarray


@dataclass(frozen=True, eq=False)
class DesignResult:
    spec: SystemSpec
    feedback_F: np.ndarray
    B_chosen: np.ndarray
    K: np.ndarray
    rank_margin: float
    verification: SteadyStateReport
    roundtrip_error: float
    substitution_residual: float


@dataclass(frozen=True)
class Remark4Report:
    rank_condition: bool
    detectable: bool
    rank_margin: float

    @property
    def agree(self) -> bool:
        return self.rank_condition == self.detectable


def default_R(m: int, V_s: Optional[np.ndarray] = None) -> np.ndarray:
    """R = [I 0]; its rank condition holds for every pure V_s"""
    return np.hstack([np.eye(m), np.zeros((m, m))])


def rank_margin(V_s: np.ndarray, R: np.ndarray) -> float:
    J = symplectic_form(V_s.shape[0] // 2)
    stacked = np.vstack([R @ V_s @ J, R])
    return float(np.linalg.svd(stacked, compute_uv=False)[-1])


def hamiltonian_for_target(V_s: np.ndarray, R: np.ndarray, Im: np.ndarray) -> np.ndarray:
    """G = -R^T Im - Im^T R + 2 J^T V_s R^T R + 2 R^T R V_s J"""
    J = symplectic_form(V_s.shape[0] // 2)
    RtR = R.T @ R
    G = -R.T @ Im - Im.T @ R + 2.0 * J.T @ V_s @ RtR + 2.0 * RtR @ V_s @ J
    asym = float(np.linalg.norm(G - G.T))
    if asym > G_SYMMETRY_TOL * max(1.0, float(np.linalg.norm(G))):
        raise VerificationFailed("synthesized Hamiltonian matrix is not symmetric", {"asymmetry": asym})
    return 0.5 * (G + G.T)


def feedback_gain(V: np.ndarray, d: DerivedMatrices) -> FeedbackGain:
    """Markovian feedback B F = -(V C^T + M) with B = V C^T + M and F = -I"""
    B = np.asarray(V, dtype=float) @ d.C.T + d.M
    F = -np.eye(d.m)
    K = 0.5 * d.J.T @ B
    return FeedbackGain(B=B, F=F, K=K)


class StateDesigner:
    def __init__(self, settings: Optional[Settings] = None, analyzer: Optional[SteadyStateAnalyzer] = None) -> None:
        self.settings: Settings = settings or {}
        self.logger: logging.Logger = get_logger(self.settings)
        self.analyzer: SteadyStateAnalyzer = analyzer or SteadyStateAnalyzer(self.settings)

    def _choices(self, req: DesignRequest) -> Tuple[np.ndarray, np.ndarray]:
        R = default_R(req.m) if req.R_choice is None else req.R_choice
        Im = np.zeros_like(R) if req.Im_choice is None else req.Im_choice
        return R, Im

    def synthesize(self, req: DesignRequest) -> DesignResult:
        m = req.m
        V_s = req.V_s
        R, Im = self._choices(req)
        self.logger.info(f"Synthesizing {m}-mode system for target covariance")

        margin = rank_margin(V_s, R)
        self.logger.debug(f"Rank margin of [R V_s J; R]: {margin:.3e}")
        if margin <= RANK_TOL:
            self.logger.error(f"Rank condition fails for the chosen R (margin {margin:.3e})")
            raise RankDeficient("rank condition on [R V_s J; R] fails for the chosen R", margin,
                                suggestion="use the default R = [I 0]")

        G = hamiltonian_for_target(V_s, R, Im)
        Lam = R + 1j * Im
        d = derive_matrices(SystemSpec(m, G, Lam))
        gain = feedback_gain(V_s, d)
        spec = SystemSpec(m, G, Lam, gain.K.astype(complex), 1.0)

        prob = RiccatiProblem.for_covariance(derive_matrices(spec), 1.0)
        substitution = riccati_residual(prob, V_s)
        substitution_bound = SUBSTITUTION_TOL * max(1.0, float(np.linalg.norm(prob.F)) ** 2
                                                     + float(np.linalg.norm(prob.Kc)))
        if substitution > substitution_bound:
            self.logger.error(f"Target does not satisfy the steady equation (residual {substitution:.3e})")
            raise VerificationFailed("target covariance does not solve the synthesized Riccati equation",
                                     {"substitution_residual": substitution})

        report = self.analyzer.steady_state_verdict(spec)
        error = float(np.linalg.norm(report.V - V_s)) / max(1.0, float(np.linalg.norm(V_s)))
        if error > ROUNDTRIP_TOL:
            self.logger.error(f"Round trip misses the target by {error:.3e}")
            raise VerificationFailed("steady covariance differs from the target",
                                     {"roundtrip_error": error, "rank_margin": margin})

        self.logger.info(f"Design complete: rank margin {margin:.3e}, round trip error {error:.3e}")
        return DesignResult(
            spec=spec,
            feedback_F=gain.F,
            B_chosen=gain.B,
            K=gain.K,
            rank_margin=margin,
            verification=report,
            roundtrip_error=error,
            substitution_residual=substitution,
        )

    def remark4_check(self, req: DesignRequest) -> Remark4Report:
        """Under the synthesized Hamiltonian, the rank condition holds iff [C, A - MC] is detectable"""
        R, Im = self._choices(req)
        margin = rank_margin(req.V_s, R)
        d = derive_matrices(SystemSpec(req.m, hamiltonian_for_target(req.V_s, R, Im), R + 1j * Im))
        detectable = is_detectable(d.C, d.A_minus_MC, self.analyzer.tol_axis, self.analyzer.tol_rank).verdict
        report = Remark4Report(rank_condition=margin > RANK_TOL, detectable=detectable, rank_margin=margin)
        if not report.agree:
            self.logger.warning(f"Rank condition ({report.rank_condition}) and detectability "
                                f"({report.detectable}) disagree")
        return report
