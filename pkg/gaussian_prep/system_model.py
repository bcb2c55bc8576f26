"""Physical parameterization of an m-mode linear quadratic Gaussian system.

Quadratures are ordered (q_1..q_m, p_1..p_m) with q = (a + a^dag)/2 and
p = i(a^dag - a)/2, so the vacuum covariance is I/2.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from scipy.stats import multivariate_normal

from gaussian_prep.exceptions import (
    DimensionMismatch,
    ImaginaryResidue,
    InvalidEfficiency,
    NonSymmetricCovariance,
    NonSymmetricG,
    SingularCovariance,
    VerificationFailed,
)

SYMMETRY_TOL_G = 1e-12
SYMMETRY_TOL_COV = 1e-10
IMAG_RESIDUE_TOL = 1e-12
STRUCTURE_TOL = 1e-10
HEISENBERG_TOL = 1e-8


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def _symmetrized(name: str, mat: np.ndarray, rel_tol: float, error_cls: type) -> np.ndarray:
    scale = max(1.0, float(np.linalg.norm(mat)))
    asym = float(np.linalg.norm(mat - mat.T))
    if asym > rel_tol * scale:
        raise error_cls(f"{name} is not symmetric (asymmetry {asym:.3e})")
    return 0.5 * (mat + mat.T)


def symplectic_form(m: int) -> np.ndarray:
    if m < 1:
        raise DimensionMismatch(f"mode count must be positive, got {m}")
    eye = np.eye(m)
    zero = np.zeros((m, m))
    return np.block([[zero, eye], [-eye, zero]])


@dataclass(frozen=True, eq=False)
class SystemSpec:
    m: int
    G: np.ndarray
    Lambda: np.ndarray
    K: Optional[np.ndarray] = field(default=None)
    eta: float = 1.0

    def __post_init__(self) -> None:
        m = int(self.m)
        if m < 1:
            raise DimensionMismatch(f"mode count must be positive, got {self.m}")
        n = 2 * m

        G = np.asarray(self.G, dtype=float)
        Lam = np.asarray(self.Lambda, dtype=complex)
        K = np.zeros((n, m), dtype=complex) if self.K is None else np.asarray(self.K, dtype=complex)

        if G.shape != (n, n):
            raise DimensionMismatch(f"G must be {n}x{n}, got {G.shape}")
        if Lam.shape != (m, n):
            raise DimensionMismatch(f"Lambda must be {m}x{n}, got {Lam.shape}")
        if K.shape != (n, m):
            raise DimensionMismatch(f"K must be {n}x{m}, got {K.shape}")
        if not (0.0 < float(self.eta) <= 1.0):
            raise InvalidEfficiency(f"detection efficiency must lie in (0, 1], got {self.eta}")

        object.__setattr__(self, "m", m)
        object.__setattr__(self, "G", _frozen(_symmetrized("G", G, SYMMETRY_TOL_G, NonSymmetricG)))
        object.__setattr__(self, "Lambda", _frozen(Lam))
        object.__setattr__(self, "K", _frozen(K))
        object.__setattr__(self, "eta", float(self.eta))

    @property
    def n(self) -> int:
        return 2 * self.m

    def with_eta(self, eta: float) -> "SystemSpec":
        return SystemSpec(self.m, self.G, self.Lambda, self.K, eta)


@dataclass(frozen=True, eq=False)
class DerivedMatrices:
    m: int
    J: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    M: np.ndarray
    N: np.ndarray
    R: np.ndarray
    Im: np.ndarray

    @property
    def Lambda(self) -> np.ndarray:
        return self.R + 1j * self.Im

    @property
    def A_minus_MC(self) -> np.ndarray:
        return self.A - self.M @ self.C

    @property
    def scale(self) -> float:
        return max(1.0, float(np.linalg.norm(self.A)), float(np.linalg.norm(self.N)))


def _real_part(name: str, z: np.ndarray) -> np.ndarray:
    scale = max(1.0, float(np.max(np.abs(z))) if z.size else 1.0)
    residue = float(np.max(np.abs(z.imag))) if z.size else 0.0
    if residue > IMAG_RESIDUE_TOL * scale:
        raise ImaginaryResidue(f"{name} has imaginary residue {residue:.3e}")
    return np.array(z.real, dtype=float)


def derive_matrices(spec: SystemSpec) -> DerivedMatrices:
    """Real drift, input, measurement and noise matrices of the moment equations"""
    J = symplectic_form(spec.m)
    Lam = spec.Lambda
    Lam_dag = Lam.conj().T
    gram = Lam_dag @ Lam
    gram_t = Lam.T @ Lam.conj()

    A = _real_part("A", J @ (spec.G + (gram - gram_t) / 2j))
    B = _real_part("B", J @ (spec.K + spec.K.conj()))
    C = _real_part("C", Lam + Lam.conj())
    M = _real_part("M", 0.5j * J @ (Lam.T - Lam_dag))
    N = _real_part("N", 0.5 * J @ (gram + gram_t) @ J.T)
    N = 0.5 * (N + N.T)

    derived = DerivedMatrices(
        m=spec.m,
        J=_frozen(J),
        A=_frozen(A),
        B=_frozen(B),
        C=_frozen(C),
        M=_frozen(M),
        N=_frozen(N),
        R=_frozen(Lam.real),
        Im=_frozen(Lam.imag),
    )

    residuals = structure_residuals(derived)
    failing = {k: v for k, v in residuals.items() if v > STRUCTURE_TOL}
    if failing:
        raise VerificationFailed("derived matrices violate structural identities", diagnostics=failing)
    return derived


def structure_residuals(d: DerivedMatrices) -> Dict[str, float]:
    """Scaled residuals of the identities every derived system satisfies"""
    AM = d.A_minus_MC
    scale_a = max(1.0, float(np.linalg.norm(d.A)))
    scale_n = max(1.0, float(np.linalg.norm(d.N)))
    min_eig_n = float(np.linalg.eigvalsh(d.N)[0])
    n = 2 * d.m
    return {
        "J_squared": float(np.linalg.norm(d.J @ d.J + np.eye(n))),
        "drift_symmetry": float(np.linalg.norm(AM @ d.J.T - d.J @ AM.T)) / scale_a,
        "noise_split": float(np.linalg.norm(d.N - d.M @ d.M.T - 0.25 * d.J @ d.C.T @ d.C @ d.J.T)) / scale_n,
        "noise_negativity": max(0.0, -min_eig_n) / scale_n,
        "measurement": float(np.linalg.norm(d.C - 2.0 * d.R)),
    }


@dataclass(frozen=True, eq=False)
class GaussianMoments:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        cov = np.asarray(self.cov, dtype=float)
        n = cov.shape[0] if cov.ndim == 2 else 0
        if cov.ndim != 2 or cov.shape != (n, n) or n % 2 or n == 0:
            raise DimensionMismatch(f"covariance must be 2m x 2m, got {cov.shape}")
        mean = np.zeros(n) if self.mean is None else np.asarray(self.mean, dtype=float).reshape(-1)
        if mean.shape != (n,):
            raise DimensionMismatch(f"mean must have length {n}, got {mean.shape}")
        object.__setattr__(self, "cov", _frozen(_symmetrized("V", cov, SYMMETRY_TOL_COV, NonSymmetricCovariance)))
        object.__setattr__(self, "mean", _frozen(mean))

    @classmethod
    def vacuum(cls, m: int) -> "GaussianMoments":
        return cls(np.zeros(2 * m), 0.5 * np.eye(2 * m))

    @property
    def m(self) -> int:
        return self.cov.shape[0] // 2

    def heisenberg_margin(self) -> float:
        """Smallest eigenvalue of the Hermitian matrix V + (i/2)J"""
        J = symplectic_form(self.m)
        return float(np.linalg.eigvalsh(self.cov + 0.5j * J)[0])

    def is_physical(self, tol: float = HEISENBERG_TOL) -> bool:
        # V - (i/2)J is the complex conjugate of V + (i/2)J for real V, same spectrum
        return self.heisenberg_margin() >= -tol


def _require_positive_definite(cov: np.ndarray) -> None:
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as e:
        raise SingularCovariance("covariance matrix is not positive definite") from e
    if np.linalg.det(cov) < 1e-300:
        raise SingularCovariance("covariance determinant underflows")


def wigner_density(state: GaussianMoments, X: np.ndarray) -> float:
    _require_positive_definite(state.cov)
    return float(multivariate_normal(mean=state.mean, cov=state.cov).pdf(np.asarray(X, dtype=float)))


def purity(state: GaussianMoments) -> float:
    """Tr[rho^2] = 1 / (2^m sqrt(det V))"""
    _require_positive_definite(state.cov)
    _, logdet = np.linalg.slogdet(state.cov)
    return float(np.exp(-state.m * np.log(2.0) - 0.5 * logdet))
