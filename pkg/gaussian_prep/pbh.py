"""Popov-Belevitch-Hautus rank tests on (possibly complex) pairs [C, A].

A pair [C, A] is detectable when every eigenvalue of A with nonnegative real
part is seen by C, i.e. the stacked pencil [A - lambda I; C] keeps full column
rank there. The tests below enumerate the eigenvalues of A and measure the
smallest singular value of that pencil.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
import scipy.linalg

from gaussian_prep.exceptions import DimensionMismatch

DEFAULT_TOL_AXIS = 1e-8
DEFAULT_TOL_RANK = 1e-8


@dataclass(frozen=True, eq=False)
class Certificate:
    verdict: bool
    margin: float
    witness: Optional[Tuple[complex, np.ndarray]] = None

    @property
    def witness_eigenvalue(self) -> Optional[complex]:
        return None if self.witness is None else complex(self.witness[0])

    def __bool__(self) -> bool:
        return self.verdict


def _as_pair(Cm: np.ndarray, Am: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    A = np.atleast_2d(np.asarray(Am, dtype=complex))
    C = np.atleast_2d(np.asarray(Cm, dtype=complex))
    n = A.shape[0]
    if A.shape != (n, n):
        raise DimensionMismatch(f"A must be square, got {A.shape}")
    if C.shape[1] != n:
        raise DimensionMismatch(f"C must have {n} columns, got {C.shape}")
    return C, A


def pair_scale(Cm: np.ndarray, Am: np.ndarray) -> float:
    C, A = _as_pair(Cm, Am)
    return max(1.0, float(np.linalg.norm(A, 2)), float(np.linalg.norm(C, 2)))


def axis_tolerance(Am: np.ndarray, tol_axis: float = DEFAULT_TOL_AXIS) -> float:
    return tol_axis * max(1.0, float(np.linalg.norm(np.atleast_2d(Am), 2)))


def imaginary_axis_margin(Am: np.ndarray) -> float:
    """Smallest distance of the spectrum of Am to the imaginary axis"""
    eigs = scipy.linalg.eigvals(np.atleast_2d(Am))
    return float(np.min(np.abs(eigs.real)))


def _scan(
    C: np.ndarray,
    A: np.ndarray,
    select: Callable[[complex], bool],
    tol_rank: float,
) -> Tuple[float, Optional[Tuple[complex, np.ndarray]]]:
    n = A.shape[0]
    threshold = tol_rank * pair_scale(C, A)
    eye = np.eye(n)
    margin = float("inf")
    witness: Optional[Tuple[complex, np.ndarray]] = None
    worst = float("inf")

    for lam in scipy.linalg.eigvals(A):
        if not select(lam):
            continue
        pencil = np.vstack([A - lam * eye, C])
        _, s, vh = np.linalg.svd(pencil, full_matrices=False)
        sigma = float(s[-1])
        margin = min(margin, sigma)
        if sigma <= threshold and sigma < worst:
            worst = sigma
            # right singular vector of the smallest singular value: A x ~ lam x and C x ~ 0
            witness = (complex(lam), vh[-1].conj())

    return margin, witness


def is_detectable(
    Cm: np.ndarray,
    Am: np.ndarray,
    tol_axis: float = DEFAULT_TOL_AXIS,
    tol_rank: float = DEFAULT_TOL_RANK,
) -> Certificate:
    C, A = _as_pair(Cm, Am)
    axis = axis_tolerance(A, tol_axis)
    margin, witness = _scan(C, A, lambda lam: lam.real >= -axis, tol_rank)
    return Certificate(verdict=witness is None, margin=margin, witness=witness)


def has_imaginary_unobservable_modes(
    Cm: np.ndarray,
    Am: np.ndarray,
    tol_axis: float = DEFAULT_TOL_AXIS,
    tol_rank: float = DEFAULT_TOL_RANK,
) -> Certificate:
    """Verdict is true when some eigenvalue on the imaginary axis is unobservable"""
    C, A = _as_pair(Cm, Am)
    axis = axis_tolerance(A, tol_axis)
    margin, witness = _scan(C, A, lambda lam: abs(lam.real) <= axis, tol_rank)
    return Certificate(verdict=witness is not None, margin=margin, witness=witness)


def has_stable_unobservable_modes(
    Cm: np.ndarray,
    Am: np.ndarray,
    tol_axis: float = DEFAULT_TOL_AXIS,
    tol_rank: float = DEFAULT_TOL_RANK,
) -> Certificate:
    C, A = _as_pair(Cm, Am)
    axis = axis_tolerance(A, tol_axis)
    margin, witness = _scan(C, A, lambda lam: lam.real < -axis, tol_rank)
    return Certificate(verdict=witness is not None, margin=margin, witness=witness)
