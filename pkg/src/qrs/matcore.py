"""Dense complex linear algebra for small, mostly Hermitian matrices.

Matrices are plain ``numpy`` arrays of complex dtype. Hermitian inputs take
the eigendecomposition path for exponentials and logarithms, which keeps
the results exactly Hermitian; general matrices fall back to scaling and
squaring of a truncated Taylor series.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError

TOL_HERM = 1e-10
TOL_PSD = 1e-10
TOL_SUPP_REL = 1e-12

# Pauli and ladder operators. The vacuum vector is the SECOND basis vector,
# so SIGMA_MINUS annihilates it.
IDENTITY = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)
SIGMA_PLUS = SIGMA_MINUS.conj().T.copy()
VACUUM = np.array([0, 1], dtype=complex)
PROJ_PLUS = 0.5 * np.array([[1, 1], [1, 1]], dtype=complex)
PROJ_MINUS = 0.5 * np.array([[1, -1], [-1, 1]], dtype=complex)


def as_matrix(a) -> np.ndarray:
    """Coerce ``a`` to a square complex matrix, rejecting non-finite entries."""
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise InvalidInputError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidInputError("matrix has non-finite entries")
    return m


def dagger(a: np.ndarray) -> np.ndarray:
    """Conjugate transpose over the last two axes."""
    return np.conj(np.swapaxes(a, -1, -2))


def is_hermitian(a, tol: float = TOL_HERM) -> bool:
    m = np.asarray(a, dtype=complex)
    return bool(np.max(np.abs(m - dagger(m)), initial=0.0) <= tol)


def is_psd(a, tol_herm: float = TOL_HERM, tol_psd: float = TOL_PSD) -> bool:
    if not is_hermitian(a, tol_herm):
        return False
    m = np.asarray(a, dtype=complex)
    return bool(np.min(np.linalg.eigvalsh(0.5 * (m + dagger(m)))) >= -tol_psd)


def eig_hermitian(a) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and unitary eigenvectors of a Hermitian matrix."""
    m = as_matrix(a)
    if not is_hermitian(m):
        raise InvalidInputError("eig_hermitian requires a Hermitian matrix")
    return np.linalg.eigh(0.5 * (m + dagger(m)))


def hermitian_function(a, func) -> np.ndarray:
    """Apply a scalar function to a Hermitian matrix through its spectrum."""
    w, v = eig_hermitian(a)
    return (v * func(w)) @ dagger(v)


def _expm_series(a: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(a, 1)
    s = max(0, int(np.ceil(np.log2(norm))) + 1) if norm > 0.5 else 0
    x = a / (2.0**s)
    result = np.eye(a.shape[0], dtype=complex)
    term = np.eye(a.shape[0], dtype=complex)
    for k in range(1, 30):
        term = term @ x / k
        result = result + term
        if np.max(np.abs(term)) < 1e-18 * max(1.0, np.max(np.abs(result))):
            break
    for _ in range(s):
        result = result @ result
    return result


def mat_exp(a) -> np.ndarray:
    """Matrix exponential e^A.

    Hermitian and anti-Hermitian inputs are exponentiated through the
    spectrum of a Hermitian matrix; anything else uses scaling and squaring.
    """
    m = as_matrix(a)
    if is_hermitian(m):
        return hermitian_function(m, np.exp)
    if is_hermitian(1j * m):
        # m = -i h with h Hermitian
        w, v = np.linalg.eigh(0.5 * (1j * m + dagger(1j * m)))
        return (v * np.exp(-1j * w)) @ dagger(v)
    return _expm_series(m)


def support_tolerance(eigenvalues: np.ndarray) -> float:
    """Eigenvalues at or below this are treated as outside the support."""
    return TOL_SUPP_REL * max(float(np.max(np.abs(eigenvalues), initial=0.0)), 0.0)


def mat_log_psd(a, tol_supp: float | None = None) -> np.ndarray:
    """Logarithm of a PSD matrix restricted to its support.

    Eigenvalues ``<= tol_supp`` are dropped (their eigenspace maps to 0);
    callers decide what a support mismatch means.
    """
    w, v = eig_hermitian(a)
    if np.min(w) < -TOL_PSD:
        raise InvalidInputError("mat_log_psd requires a positive semidefinite matrix")
    tol = support_tolerance(w) if tol_supp is None else tol_supp
    keep = w > tol
    logs = np.zeros_like(w)
    logs[keep] = np.log(w[keep])
    return (v * logs) @ dagger(v)


def trace(a) -> complex:
    return np.trace(np.asarray(a), axis1=-2, axis2=-1)


def kron(*mats) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for m in mats:
        out = np.kron(out, m)
    return out
