"""Generators for random symplectic matrices, pure states, systems and Riccati problems."""

from typing import Optional

import numpy as np
import scipy.linalg

from gaussian_prep.exceptions import VerificationFailed
from gaussian_prep.pbh import is_detectable
from gaussian_prep.riccati import RiccatiProblem
from gaussian_prep.system_model import SystemSpec, derive_matrices, symplectic_form

SYMPLECTIC_TOL = 1e-10


def _random_symmetric(n: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    Y = rng.uniform(-scale, scale, size=(n, n))
    return np.triu(Y) + np.triu(Y, 1).T


def random_symplectic(m: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """S = exp(J Y) for a random symmetric Y, so S J S^T = J"""
    J = symplectic_form(m)
    S = scipy.linalg.expm(J @ _random_symmetric(2 * m, rng, scale))
    defect = float(np.linalg.norm(S @ J @ S.T - J))
    if defect > SYMPLECTIC_TOL * max(1.0, float(np.linalg.norm(S)) ** 2):
        raise VerificationFailed("generated matrix is not symplectic", {"defect": defect})
    return S


def random_pure_covariance(m: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    S = random_symplectic(m, rng, scale)
    V = 0.5 * S @ S.T
    return 0.5 * (V + V.T)


def squeezed_covariance(r: float) -> np.ndarray:
    return 0.5 * np.diag([np.exp(-2.0 * r), np.exp(2.0 * r)])


def example1_spec(kappa: float = 1.0, eta: float = 1.0) -> SystemSpec:
    """Single mode with G = diag(2 kappa, 0) and Lambda = sqrt(kappa) (1 - i, i)"""
    G = np.array([[2.0 * kappa, 0.0], [0.0, 0.0]])
    Lam = np.sqrt(kappa) * np.array([[1.0 - 1.0j, 1.0j]])
    return SystemSpec(1, G, Lam, None, eta)


def random_system_spec(m: int, rng: np.random.Generator, eta: float = 1.0) -> SystemSpec:
    n = 2 * m
    G = _random_symmetric(n, rng)
    Lam = rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))
    return SystemSpec(m, G, Lam / np.sqrt(2.0), None, eta)


def random_detectable_spec(
    m: int,
    rng: np.random.Generator,
    eta: float = 1.0,
    max_tries: int = 100,
) -> SystemSpec:
    for _ in range(max_tries):
        spec = random_system_spec(m, rng, eta)
        d = derive_matrices(spec)
        if is_detectable(d.C, d.A).verdict:
            return spec
    raise VerificationFailed(f"no detectable {m}-mode system after {max_tries} draws")


def random_riccati_problem(
    n: int,
    rng: np.random.Generator,
    stable: bool = False,
    rank_o: Optional[int] = None,
) -> RiccatiProblem:
    """Problem with P = -O O^dag and Kc = Z^dag Z; F is shifted stable on request"""
    F = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    if stable:
        shift = float(np.max(scipy.linalg.eigvals(F).real)) + 0.5
        F = F - max(shift, 0.0) * np.eye(n)
    k = n if rank_o is None else rank_o
    O = rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k))
    Z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return RiccatiProblem(F=F, P=-O @ O.conj().T, Kc=Z.conj().T @ Z)
