"""Complex-domain algebraic Riccati and Lyapunov solvers.

The algebraic Riccati equation handled here is

    F^dag X + X F + X P X + Kc = 0

with Hermitian P (sign semidefinite) and Hermitian Kc. Its Hamiltonian
matrix H = [[F, P], [-Kc, -F^dag]] has a spectrum symmetric under
lambda -> -conj(lambda); when H has no imaginary eigenvalues and the basis
[X1; X2] of its stable invariant subspace has invertible X1, the stabilizing
solution is X = X2 X1^-1.
"""

import logging
import traceback
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np
import scipy.linalg
from scipy.integrate import solve_ivp

from gaussian_prep import pbh
from gaussian_prep.exceptions import (
    DimensionMismatch,
    IllConditionedSubspace,
    NonFiniteState,
    NotInDomRic,
    StepSizeTooLarge,
    UnstableDrift,
    ValidationError,
    VerificationFailed,
)
from gaussian_prep.logger import get_logger
from gaussian_prep.system_model import DerivedMatrices
from gaussian_prep.types import Settings

HERMITIAN_TOL = 1e-12
SIGN_TOL = 1e-10
BLOWUP_NORM = 1e12
SINGULAR_CONDITION = 1e15


@dataclass(frozen=True, eq=False)
class RiccatiProblem:
    F: np.ndarray
    P: np.ndarray
    Kc: np.ndarray

    def __post_init__(self) -> None:
        F = np.atleast_2d(np.asarray(self.F, dtype=complex))
        P = np.atleast_2d(np.asarray(self.P, dtype=complex))
        Kc = np.atleast_2d(np.asarray(self.Kc, dtype=complex))
        n = F.shape[0]
        for name, mat in (("F", F), ("P", P), ("Kc", Kc)):
            if mat.shape != (n, n):
                raise DimensionMismatch(f"{name} must be {n}x{n}, got {mat.shape}")
        for name, mat in (("P", P), ("Kc", Kc)):
            scale = max(1.0, float(np.linalg.norm(mat)))
            if float(np.linalg.norm(mat - mat.conj().T)) > HERMITIAN_TOL * scale:
                raise ValidationError(f"{name} must be Hermitian")
        P = 0.5 * (P + P.conj().T)
        Kc = 0.5 * (Kc + Kc.conj().T)

        eigs = np.linalg.eigvalsh(P)
        tol = SIGN_TOL * max(1.0, float(np.max(np.abs(eigs))))
        if eigs[0] < -tol and eigs[-1] > tol:
            raise ValidationError("P must be positive or negative semidefinite, got an indefinite matrix")

        object.__setattr__(self, "F", F)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "Kc", Kc)

    @property
    def n(self) -> int:
        return self.F.shape[0]

    @property
    def p_sign(self) -> str:
        eigs = np.linalg.eigvalsh(self.P)
        tol = SIGN_TOL * max(1.0, float(np.max(np.abs(eigs))))
        return "nsd" if eigs[-1] <= tol else "psd"

    @property
    def kc_is_psd(self) -> bool:
        eigs = np.linalg.eigvalsh(self.Kc)
        return bool(eigs[0] >= -SIGN_TOL * max(1.0, float(np.max(np.abs(eigs)))))

    @property
    def residual_bound(self) -> float:
        return 1e-8 * max(1.0, float(np.linalg.norm(self.F)) ** 2 + float(np.linalg.norm(self.Kc)))

    @classmethod
    def for_covariance(cls, d: DerivedMatrices, eta: float = 1.0) -> "RiccatiProblem":
        """Steady conditional covariance equation at detection efficiency eta

        (A - eta M C) V + V (A - eta M C)^T - eta V C^T C V + N - eta M M^T = 0
        """
        drift = d.A - eta * d.M @ d.C
        return cls(F=drift.T, P=-eta * d.C.T @ d.C, Kc=d.N - eta * d.M @ d.M.T)


@dataclass(frozen=True, eq=False)
class DomRicReport:
    imaginary_axis_free: bool
    complementary: bool
    detectable_P_Fdag: bool
    axis_margin: float
    subspace_condition: float

    @property
    def passed(self) -> bool:
        return self.imaginary_axis_free and self.complementary and self.detectable_P_Fdag

    def failed(self) -> List[str]:
        return [name for name in ("imaginary_axis_free", "complementary", "detectable_P_Fdag")
                if not getattr(self, name)]


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    X: np.ndarray
    closed_loop_spectrum: np.ndarray
    residual: float
    hamiltonian_spectrum: np.ndarray
    subspace_condition: float
    well_conditioned: bool = True
    refinement_steps: int = 0

    @property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.X)[0])

    @property
    def stability_margin(self) -> float:
        return float(-np.max(self.closed_loop_spectrum.real))

    def real_part(self) -> np.ndarray:
        return np.array(self.X.real)


@dataclass(frozen=True, eq=False)
class CovarianceSeries:
    times: np.ndarray
    covs: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.covs[-1]


def build_hamiltonian(prob: RiccatiProblem) -> np.ndarray:
    return np.block([[prob.F, prob.P], [-prob.Kc, -prob.F.conj().T]])


def riccati_residual(prob: RiccatiProblem, X: np.ndarray) -> float:
    F, P, Kc = prob.F, prob.P, prob.Kc
    return float(np.linalg.norm(F.conj().T @ X + X @ F + X @ P @ X + Kc))


def _stable_basis(H: np.ndarray) -> Tuple[np.ndarray, int]:
    # ordered complex Schur form, left-half-plane eigenvalues first
    _, Z, sdim = scipy.linalg.schur(H, output="complex", sort="lhp")
    return Z[:, :sdim], int(sdim)


def solve_lyapunov(Astab: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Solve A V + V A^T + Q = 0 for a stable drift A"""
    A = np.atleast_2d(np.asarray(Astab))
    Q = np.atleast_2d(np.asarray(Q))
    if A.shape != Q.shape or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"incompatible Lyapunov operands {A.shape} and {Q.shape}")
    eigs = scipy.linalg.eigvals(A)
    if np.max(eigs.real) >= -1e-12:
        raise UnstableDrift(f"drift has eigenvalue with real part {np.max(eigs.real):.3e}")
    V = scipy.linalg.solve_continuous_lyapunov(A, -Q)
    V = 0.5 * (V + V.conj().T)
    if np.isrealobj(A) and np.isrealobj(Q):
        V = np.real(V)
    return V


def newton_kleinman(
    prob: RiccatiProblem,
    X0: Optional[np.ndarray] = None,
    max_iter: int = 50,
    tol: float = 1e-13,
) -> Tuple[np.ndarray, int]:
    """Newton-Kleinman iteration from a stabilizing initial guess

    Each step solves the Lyapunov equation
    (F + P X_k)^dag X_{k+1} + X_{k+1} (F + P X_k) + Kc - X_k P X_k = 0.
    """
    n = prob.n
    X = np.zeros((n, n), dtype=complex) if X0 is None else np.asarray(X0, dtype=complex)
    closed = prob.F + prob.P @ X
    if np.max(scipy.linalg.eigvals(closed).real) >= 0:
        raise UnstableDrift("Newton-Kleinman needs a stabilizing initial guess")

    steps = 0
    for steps in range(1, max_iter + 1):
        closed = prob.F + prob.P @ X
        X_next = scipy.linalg.solve_continuous_lyapunov(closed.conj().T, -(prob.Kc - X @ prob.P @ X))
        X_next = 0.5 * (X_next + X_next.conj().T)
        change = float(np.linalg.norm(X_next - X))
        X = X_next
        if change <= tol * max(1.0, float(np.linalg.norm(X))):
            break
    return X, steps


class RiccatiSolver:
    def __init__(self, settings: Optional[Settings] = None) -> None:
        self.settings: Settings = settings or {}
        self.logger: logging.Logger = get_logger(self.settings)
        self.tol_axis: float = self.settings.get("tol_axis", 1e-8)
        self.tol_rank: float = self.settings.get("tol_rank", 1e-8)
        self.cond_max: float = self.settings.get("cond_max", 1e10)
        self.strict: bool = self.settings.get("strict", False)
        self.refine_iterations: int = self.settings.get("refine_iterations", 3)
        self.ode_rtol: float = self.settings.get("ode_rtol", 1e-10)
        self.ode_atol: float = self.settings.get("ode_atol", 1e-12)
        self.integrator: str = self.settings.get("integrator", "adaptive")
        self.logger.debug("Riccati solver initialized")

    def _inspect(self, prob: RiccatiProblem) -> Tuple[DomRicReport, np.ndarray, np.ndarray, Optional[np.ndarray]]:
        H = build_hamiltonian(prob)
        n = prob.n
        eigs = scipy.linalg.eigvals(H)
        axis_margin = float(np.min(np.abs(eigs.real)))
        axis_free = axis_margin > self.tol_axis * float(np.linalg.norm(H))

        detectable = pbh.is_detectable(prob.P, prob.F.conj().T, self.tol_axis, self.tol_rank).verdict

        condition = float("inf")
        basis: Optional[np.ndarray] = None
        if axis_free:
            basis, sdim = _stable_basis(H)
            if sdim == n:
                condition = float(np.linalg.cond(basis[:n, :]))
            else:
                self.logger.debug(f"Stable subspace has dimension {sdim}, expected {n}")
                basis = None

        report = DomRicReport(
            imaginary_axis_free=bool(axis_free),
            complementary=bool(condition < self.cond_max),
            detectable_P_Fdag=bool(detectable),
            axis_margin=axis_margin,
            subspace_condition=condition,
        )
        return report, H, eigs, basis

    def dom_ric_check(self, prob: RiccatiProblem) -> DomRicReport:
        report, _, _, _ = self._inspect(prob)
        self.logger.debug(f"dom(Ric) membership: axis_free={report.imaginary_axis_free}, "
                          f"complementary={report.complementary}, detectable={report.detectable_P_Fdag}")
        return report

    def solve_are(self, prob: RiccatiProblem) -> RiccatiSolution:
        n = prob.n
        report, H, eigs, basis = self._inspect(prob)

        ill_conditioned = False
        if not report.passed:
            usable = (report.imaginary_axis_free and report.detectable_P_Fdag
                      and basis is not None and report.subspace_condition < SINGULAR_CONDITION)
            if not usable:
                failed = report.failed()
                self.logger.error(f"Hamiltonian is not in dom(Ric): {', '.join(failed)} failed")
                raise NotInDomRic(f"Hamiltonian not in dom(Ric): {', '.join(failed)}", failed, report)
            if self.strict:
                self.logger.error(f"Stable subspace condition {report.subspace_condition:.3e} exceeds "
                                  f"{self.cond_max:.1e}")
                raise IllConditionedSubspace("stable invariant subspace is ill conditioned",
                                             report.subspace_condition)
            self.logger.warning(f"Ill-conditioned stable subspace (cond {report.subspace_condition:.3e}), "
                                "continuing because strict mode is off")
            ill_conditioned = True

        assert basis is not None
        X1, X2 = basis[:n, :], basis[n:, :]
        X = np.linalg.solve(X1.T, X2.T).T
        X = 0.5 * (X + X.conj().T)
        residual = riccati_residual(prob, X)

        steps = 0
        if residual > prob.residual_bound and self.refine_iterations > 0:
            self.logger.warning(f"Riccati residual {residual:.3e} above bound {prob.residual_bound:.3e}, "
                                "refining with Newton-Kleinman")
            try:
                refined, steps = newton_kleinman(prob, X, max_iter=self.refine_iterations)
                refined_residual = riccati_residual(prob, refined)
                if refined_residual < residual:
                    X, residual = refined, refined_residual
            except Exception as e:
                self.logger.warning(f"Refinement failed: {e}")
                self.logger.debug(traceback.format_exc())

        closed = scipy.linalg.eigvals(prob.F + prob.P @ X)
        if np.max(closed.real) >= -1e-10:
            self.logger.error(f"Closed loop not stable, max real part {np.max(closed.real):.3e}")
            raise VerificationFailed("Riccati solution is not stabilizing",
                                     {"max_real_part": float(np.max(closed.real)), "residual": residual})

        solution = RiccatiSolution(
            X=X,
            closed_loop_spectrum=closed,
            residual=residual,
            hamiltonian_spectrum=eigs,
            subspace_condition=report.subspace_condition,
            well_conditioned=not ill_conditioned,
            refinement_steps=steps,
        )

        if prob.p_sign == "nsd" and prob.kc_is_psd and solution.min_eigenvalue < -1e-8:
            self.logger.warning(f"Solution should be positive semidefinite, min eigenvalue "
                                f"{solution.min_eigenvalue:.3e}")

        self.logger.debug(f"Riccati solved: n={n}, residual={residual:.3e}, "
                          f"stability margin={solution.stability_margin:.3e}")
        return solution

    def integrate_riccati_ode(
        self,
        d: DerivedMatrices,
        eta: float,
        V0: np.ndarray,
        T: float,
        dt: float,
        method: Optional[str] = None,
    ) -> CovarianceSeries:
        """Conditional covariance flow dV/dt = AV + VA^T + N - eta (VC^T + M)(VC^T + M)^T"""
        A, C, M, N = d.A, d.C, d.M, d.N

        def rhs(V: np.ndarray) -> np.ndarray:
            gain = V @ C.T + M
            return A @ V + V @ A.T + N - eta * gain @ gain.T

        return self._integrate(rhs, V0, T, dt, method)

    def integrate_lyapunov_ode(
        self,
        d: DerivedMatrices,
        V0: np.ndarray,
        T: float,
        dt: float,
        method: Optional[str] = None,
    ) -> CovarianceSeries:
        """Unconditional covariance flow dV/dt = AV + VA^T + N"""
        A, N = d.A, d.N
        return self._integrate(lambda V: A @ V + V @ A.T + N, V0, T, dt, method)

    def _integrate(
        self,
        rhs: Callable[[np.ndarray], np.ndarray],
        V0: np.ndarray,
        T: float,
        dt: float,
        method: Optional[str],
    ) -> CovarianceSeries:
        V0 = np.asarray(V0, dtype=float)
        if dt <= 0 or T < dt:
            raise ValidationError(f"need 0 < dt <= T, got dt={dt}, T={T}")
        if float(np.linalg.norm(V0 - V0.T)) > 1e-10 * max(1.0, float(np.linalg.norm(V0))):
            raise ValidationError("initial covariance must be symmetric")
        V0 = 0.5 * (V0 + V0.T)

        n_steps = int(round(T / dt))
        times = np.arange(n_steps + 1) * dt
        method = method or self.integrator
        self.logger.debug(f"Integrating covariance flow with {method} over {n_steps} steps")

        if method == "rk4":
            covs = self._rk4(rhs, V0, dt, n_steps)
        elif method == "adaptive":
            covs = self._adaptive(rhs, V0, times)
        else:
            raise ValidationError(f"unknown integrator {method!r}")
        return CovarianceSeries(times=times, covs=covs)

    def _rk4(self, rhs: Callable[[np.ndarray], np.ndarray], V0: np.ndarray, dt: float, n_steps: int) -> np.ndarray:
        covs = np.empty((n_steps + 1,) + V0.shape)
        covs[0] = V0
        V = V0
        for k in range(n_steps):
            k1 = rhs(V)
            k2 = rhs(V + 0.5 * dt * k1)
            k3 = rhs(V + 0.5 * dt * k2)
            k4 = rhs(V + dt * k3)
            V = V + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            V = 0.5 * (V + V.T)
            if not np.all(np.isfinite(V)) or np.linalg.norm(V) > BLOWUP_NORM:
                self.logger.error(f"Covariance blew up at step {k + 1} (dt={dt})")
                raise StepSizeTooLarge(f"covariance diverged at t={(k + 1) * dt:.6g} with dt={dt}")
            covs[k + 1] = V
        return covs

    def _adaptive(self, rhs: Callable[[np.ndarray], np.ndarray], V0: np.ndarray, times: np.ndarray) -> np.ndarray:
        shape = V0.shape

        def fun(_t: float, y: np.ndarray) -> np.ndarray:
            V = y.reshape(shape)
            D = rhs(0.5 * (V + V.T))
            return (0.5 * (D + D.T)).ravel()

        def blowup(_t: float, y: np.ndarray) -> float:
            return BLOWUP_NORM - float(np.linalg.norm(y))

        blowup.terminal = True  # type: ignore[attr-defined]

        sol = solve_ivp(fun, (times[0], times[-1]), V0.ravel(), method="RK45", t_eval=times,
                        rtol=self.ode_rtol, atol=self.ode_atol, events=blowup)
        if sol.status == 1:
            self.logger.error(f"Covariance norm exceeded {BLOWUP_NORM:.0e} at t={sol.t_events[0][0]:.6g}")
            raise StepSizeTooLarge(f"covariance diverged at t={sol.t_events[0][0]:.6g}")
        if sol.status != 0 or not np.all(np.isfinite(sol.y)):
            self.logger.error(f"Adaptive integration failed: {sol.message}")
            raise NonFiniteState(f"covariance integration failed: {sol.message}")

        covs = sol.y.T.reshape((len(times),) + shape)
        return 0.5 * (covs + np.swapaxes(covs, 1, 2))
