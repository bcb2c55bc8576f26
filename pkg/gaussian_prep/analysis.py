"""Certificates for detectability, uncertainty, purity and steady states."""

import logging
import traceback
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
import scipy.linalg
from scipy.optimize import minimize

from gaussian_prep import pbh
from gaussian_prep.exceptions import NotDetectable, SolverError, UnstableDrift
from gaussian_prep.logger import get_logger
from gaussian_prep.pbh import Certificate, has_imaginary_unobservable_modes, is_detectable
from gaussian_prep.riccati import RiccatiProblem, RiccatiSolution, RiccatiSolver, solve_lyapunov
from gaussian_prep.system_model import (
    HEISENBERG_TOL,
    DerivedMatrices,
    GaussianMoments,
    SystemSpec,
    derive_matrices,
    purity,
    symplectic_form,
)
from gaussian_prep.types import Settings

__all__ = [
    "Certificate",
    "FeasibilityReport",
    "ImperfectDetectionReport",
    "Lemma4Report",
    "PurityCertificate",
    "SteadyStateAnalyzer",
    "SteadyStateReport",
    "has_imaginary_unobservable_modes",
    "heisenberg_certificate",
    "is_detectable",
    "is_pure",
    "lemma4_equivalence_check",
    "unconditional_pure_conditions",
    "unconditional_pure_feasibility",
    "unconditional_steady_covariance",
]

PURITY_TOL = 1e-6
FEASIBILITY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class PurityCertificate(Certificate):
    purity: float = float("nan")

    @property
    def purity_verdict(self) -> bool:
        return abs(self.purity - 1.0) <= PURITY_TOL

    @property
    def agree(self) -> bool:
        """Identity residual and Tr[rho^2] reach the same verdict"""
        return self.verdict == self.purity_verdict


@dataclass(frozen=True)
class Lemma4Report:
    lhs: bool
    rhs: bool

    @property
    def agree(self) -> bool:
        return self.lhs == self.rhs


@dataclass(frozen=True, eq=False)
class ImperfectDetectionReport:
    eta: float
    q_v: Certificate
    q_y: Certificate

    @property
    def q_v_clear(self) -> bool:
        return not self.q_v.verdict

    @property
    def q_y_clear(self) -> bool:
        return not self.q_y.verdict

    @property
    def agree(self) -> bool:
        return self.q_v_clear == self.q_y_clear


@dataclass(frozen=True, eq=False)
class FeasibilityReport:
    feasible: bool
    null_dimension: int
    best_min_eigenvalue: float
    basis: List[np.ndarray]
    witness: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class SteadyStateReport:
    eta: float
    detectability: Certificate
    V: np.ndarray
    solution: RiccatiSolution
    heisenberg: Certificate
    purity: PurityCertificate
    closed_loop_spectrum: np.ndarray
    feedback_spectrum: Optional[np.ndarray]
    unconditional_conditions: Dict[str, float]
    V_unc: Optional[np.ndarray] = None
    ordering_margin: Optional[float] = None
    complex_path_error: Optional[float] = None

    @property
    def closed_loop_stable(self) -> bool:
        return bool(np.max(self.closed_loop_spectrum.real) < 0)

    @property
    def heisenberg_margin(self) -> float:
        return self.heisenberg.margin


def _spectral_axis_clear(mat: np.ndarray, tol_axis: float) -> bool:
    eigs = scipy.linalg.eigvals(mat)
    return bool(np.min(np.abs(eigs.real)) > pbh.axis_tolerance(mat, tol_axis))


def lemma4_equivalence_check(
    d: DerivedMatrices,
    tol_axis: float = pbh.DEFAULT_TOL_AXIS,
    tol_rank: float = pbh.DEFAULT_TOL_RANK,
) -> Lemma4Report:
    """Compare the two characterizations of imaginary-axis observability

    lhs: [C J^T, (A - MC)^T] has no unobservable imaginary-axis modes
    rhs: A - MC - (i/2) J C^T C has no imaginary-axis eigenvalues
    """
    AM = d.A_minus_MC
    lhs = not has_imaginary_unobservable_modes(d.C @ d.J.T, AM.T, tol_axis, tol_rank).verdict
    rhs = _spectral_axis_clear(AM - 0.5j * d.J @ d.C.T @ d.C, tol_axis)
    return Lemma4Report(lhs=lhs, rhs=rhs)


def heisenberg_certificate(V: np.ndarray, J: Optional[np.ndarray] = None) -> Certificate:
    V = np.asarray(V, dtype=float)
    if J is None:
        J = symplectic_form(V.shape[0] // 2)
    eigs, vecs = np.linalg.eigh(V + 0.5j * J)
    margin = float(eigs[0])
    verdict = margin >= -HEISENBERG_TOL
    witness = None if verdict else (complex(eigs[0]), vecs[:, 0])
    return Certificate(verdict=verdict, margin=margin, witness=witness)


def is_pure(V: np.ndarray, J: Optional[np.ndarray] = None, m: Optional[int] = None) -> PurityCertificate:
    """Pure-state identity J V J V = -I/4 together with Tr[rho^2]"""
    state = GaussianMoments(None, V)  # type: ignore[arg-type]
    m = state.m if m is None else m
    J = symplectic_form(m) if J is None else J
    cov = state.cov
    residual = float(np.linalg.norm(J @ cov @ J @ cov + 0.25 * np.eye(2 * m)))
    bound = 1e-8 * max(1.0, float(np.linalg.norm(cov)) ** 2)
    return PurityCertificate(verdict=residual <= bound, margin=residual, purity=purity(state))


def unconditional_pure_conditions(V_s: np.ndarray, d: DerivedMatrices, G: np.ndarray) -> Dict[str, float]:
    """Residuals of (V + (i/2)J) Lambda^T = 0 and J G V + V G J^T = 0"""
    V = np.asarray(V_s, dtype=float)
    G = np.asarray(G, dtype=float)
    eq1 = (V + 0.5j * d.J) @ d.Lambda.T
    eq2 = d.J @ G @ V + V @ G @ d.J.T
    return {"eq1_residual": float(np.linalg.norm(eq1)), "eq2_residual": float(np.linalg.norm(eq2))}


def _symmetric_basis(n: int) -> List[np.ndarray]:
    basis = []
    for i in range(n):
        for j in range(i, n):
            E = np.zeros((n, n))
            if i == j:
                E[i, i] = 1.0
            else:
                E[i, j] = E[j, i] = 1.0 / np.sqrt(2.0)
            basis.append(E)
    return basis


def unconditional_pure_feasibility(G: np.ndarray, tol: float = FEASIBILITY_TOL) -> FeasibilityReport:
    """Decide whether J G V + V G J^T = 0 admits a positive definite V

    The solution set is a linear subspace of symmetric matrices. Its basis is
    computed exactly; a one-dimensional subspace is feasible iff the basis
    element is definite, larger ones are decided by maximizing the smallest
    eigenvalue over the unit ball of coefficients.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    n = G.shape[0]
    J = symplectic_form(n // 2)
    JG = J @ G
    sym_basis = _symmetric_basis(n)
    operator = np.column_stack([(JG @ E + E @ JG.T).ravel() for E in sym_basis])
    coeffs = scipy.linalg.null_space(operator)
    null_basis = [sum(c * E for c, E in zip(col, sym_basis)) for col in coeffs.T]
    dim = len(null_basis)

    if dim == 0:
        return FeasibilityReport(feasible=False, null_dimension=0, best_min_eigenvalue=0.0, basis=[])

    def combine(x: np.ndarray) -> np.ndarray:
        return sum(xi * B for xi, B in zip(x, null_basis))

    def min_eig(x: np.ndarray) -> float:
        return float(np.linalg.eigvalsh(combine(x))[0])

    if dim == 1:
        candidates = [np.array([1.0]), np.array([-1.0])]
        best_x = max(candidates, key=min_eig)
    else:
        identity_coords = np.array([np.trace(B) for B in null_basis])
        starts = [np.eye(dim)[k] * s for k in range(dim) for s in (1.0, -1.0)]
        if np.linalg.norm(identity_coords) > 0:
            starts.insert(0, identity_coords / np.linalg.norm(identity_coords))
        best_x = starts[0]
        for x0 in starts:
            result = minimize(lambda x: -min_eig(x), x0, method="SLSQP",
                              constraints=[{"type": "ineq", "fun": lambda x: 1.0 - float(x @ x)}])
            x = result.x / max(1.0, float(np.linalg.norm(result.x)))
            if min_eig(x) > min_eig(best_x):
                best_x = x

    best = min_eig(best_x)
    feasible = best > tol
    return FeasibilityReport(
        feasible=feasible,
        null_dimension=dim,
        best_min_eigenvalue=best,
        basis=null_basis,
        witness=combine(best_x) if feasible else None,
    )


def unconditional_steady_covariance(d: DerivedMatrices) -> np.ndarray:
    """Stationary covariance of dV/dt = AV + VA^T + N; needs a stable drift"""
    return solve_lyapunov(d.A, d.N)


class SteadyStateAnalyzer:
    def __init__(self, settings: Optional[Settings] = None, solver: Optional[RiccatiSolver] = None) -> None:
        self.settings: Settings = settings or {}
        self.logger: logging.Logger = get_logger(self.settings)
        self.solver: RiccatiSolver = solver or RiccatiSolver(self.settings)
        self.tol_axis: float = self.settings.get("tol_axis", pbh.DEFAULT_TOL_AXIS)
        self.tol_rank: float = self.settings.get("tol_rank", pbh.DEFAULT_TOL_RANK)

    def output_injection(self, Cm: np.ndarray, Am: np.ndarray) -> np.ndarray:
        """Gain L with A + L C stable, from the dual Riccati equation

        A Y + Y A^dag - Y C^dag C Y + I = 0, L = -Y C^dag
        """
        A = np.atleast_2d(np.asarray(Am, dtype=complex))
        C = np.atleast_2d(np.asarray(Cm, dtype=complex))
        cert = is_detectable(C, A, self.tol_axis, self.tol_rank)
        if not cert.verdict:
            self.logger.error(f"No stabilizing output injection, unobservable mode at {cert.witness_eigenvalue}")
            raise NotDetectable("pair is not detectable", certificate=cert)

        prob = RiccatiProblem(F=A.conj().T, P=-C.conj().T @ C, Kc=np.eye(A.shape[0]))
        Y = self.solver.solve_are(prob).X
        L = -Y @ C.conj().T
        if np.isrealobj(Am) and np.isrealobj(Cm):
            L = L.real
        return L

    def solve_complex_covariance_riccati(self, d: DerivedMatrices, eta: float) -> RiccatiSolution:
        """Stabilizing solution Y = V - (i/2)J of the complex covariance equation"""
        drift = d.A - eta * d.M @ d.C - 0.5j * eta * d.J @ d.C.T @ d.C
        Z = np.sqrt(1.0 - eta) * d.Lambda.conj() @ d.J.T
        prob = RiccatiProblem(F=drift.conj().T, P=-eta * d.C.T @ d.C, Kc=Z.conj().T @ Z)
        solution = self.solver.solve_are(prob)
        if solution.min_eigenvalue < -1e-8:
            self.logger.warning(f"Complex covariance solution has negative eigenvalue {solution.min_eigenvalue:.3e}")
        return solution

    def imperfect_detection_certificates(self, d: DerivedMatrices, eta: float) -> ImperfectDetectionReport:
        """Imaginary-axis observability of the real and complex covariance equations at efficiency eta"""
        scale = np.sqrt(1.0 - eta)
        Q_V = np.vstack([d.R, scale * d.Im]) @ d.J.T
        Q_Y = scale * np.vstack([d.R, d.Im]) @ d.J.T
        drift = d.A - eta * d.M @ d.C
        drift_y = drift - 0.5j * eta * d.J @ d.C.T @ d.C
        report = ImperfectDetectionReport(
            eta=eta,
            q_v=has_imaginary_unobservable_modes(Q_V, drift.T, self.tol_axis, self.tol_rank),
            q_y=has_imaginary_unobservable_modes(Q_Y, drift_y.T, self.tol_axis, self.tol_rank),
        )
        if not report.agree:
            self.logger.warning(f"Imaginary-axis certificates disagree at eta={eta}")
        return report

    def steady_state_verdict(self, spec: SystemSpec) -> SteadyStateReport:
        eta = spec.eta
        self.logger.info(f"Analyzing {spec.m}-mode system at eta={eta}")
        d = derive_matrices(spec)

        detectability = is_detectable(d.C, d.A, self.tol_axis, self.tol_rank)
        if not detectability.verdict:
            self.logger.error(f"[C, A] is not detectable: unobservable mode at {detectability.witness_eigenvalue}")
            raise NotDetectable(
                f"[C, A] is not detectable (unobservable mode at {detectability.witness_eigenvalue})",
                certificate=detectability,
            )

        solution = self.solver.solve_are(RiccatiProblem.for_covariance(d, eta))
        V = np.real(solution.X)
        V = 0.5 * (V + V.T)

        heisenberg = heisenberg_certificate(V, d.J)
        purity_cert = is_pure(V, d.J, d.m)
        if not purity_cert.agree:
            self.logger.warning(f"Purity checks disagree: identity residual {purity_cert.margin:.3e}, "
                                f"purity {purity_cert.purity:.9f}")
        if eta == 1.0 and abs(purity_cert.purity - 1.0) > PURITY_TOL:
            self.logger.warning(f"Steady state at eta=1 should be pure, purity {purity_cert.purity:.9f}")
        if purity_cert.purity > 1.0 + 1e-8:
            self.logger.warning(f"Purity {purity_cert.purity:.9f} exceeds 1")

        closed = scipy.linalg.eigvals(d.A - eta * d.M @ d.C - eta * V @ d.C.T @ d.C)
        feedback = scipy.linalg.eigvals(d.A_minus_MC - V @ d.C.T @ d.C) if eta == 1.0 else None

        V_unc: Optional[np.ndarray] = None
        ordering: Optional[float] = None
        try:
            V_unc = unconditional_steady_covariance(d)
            ordering = float(np.linalg.eigvalsh(V_unc - V)[0])
        except UnstableDrift:
            self.logger.debug("Drift is not stable, no unconditional steady state")

        complex_error: Optional[float] = None
        try:
            Y = self.solve_complex_covariance_riccati(d, eta).X
            complex_error = float(np.linalg.norm(Y + 0.5j * d.J - V))
        except SolverError as e:
            self.logger.warning(f"Complex covariance path unavailable: {e}")
            self.logger.debug(traceback.format_exc())

        report = SteadyStateReport(
            eta=eta,
            detectability=detectability,
            V=V,
            solution=solution,
            heisenberg=heisenberg,
            purity=purity_cert,
            closed_loop_spectrum=closed,
            feedback_spectrum=feedback,
            unconditional_conditions=unconditional_pure_conditions(V, d, spec.G),
            V_unc=V_unc,
            ordering_margin=ordering,
            complex_path_error=complex_error,
        )
        self.logger.info(f"Steady state found: purity={purity_cert.purity:.9f}, "
                         f"heisenberg margin={heisenberg.margin:.3e}")
        return report
