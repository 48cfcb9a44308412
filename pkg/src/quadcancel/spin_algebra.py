"""Angular-momentum operators and small dense Hermitian linear algebra.

All operators are plain ``numpy`` complex arrays in the descending-m basis
(``m = j, j-1, ..., -j``). Propagators use the ``exp(+i s M)`` sign
convention throughout; the physical ``exp(-i H t)`` corresponds to ``s = -t``.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

CONSTRUCTION_TOL = 1e-12
LINALG_TOL = 1e-10
MAX_JACOBI_SWEEPS = 60


class EigenConvergenceError(RuntimeError):
    """Raised when the Jacobi eigensolver exceeds its sweep cap."""


def is_hermitian(M: np.ndarray, tol: float = CONSTRUCTION_TOL) -> bool:
    M = np.asarray(M)
    return M.ndim == 2 and M.shape[0] == M.shape[1] and np.max(np.abs(M - M.conj().T), initial=0.0) <= tol


def is_unitary(U: np.ndarray, tol: float = LINALG_TOL) -> bool:
    U = np.asarray(U)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        return False
    return np.max(np.abs(U.conj().T @ U - np.eye(U.shape[0])), initial=0.0) <= tol


def _as_half_integer(j) -> Fraction:
    try:
        twice = Fraction(j) * 2
    except (TypeError, ValueError):
        raise ValueError(f"spin must be a half-integer, got {j!r}") from None
    if twice.denominator != 1 or twice <= 0:
        raise ValueError(f"spin must be a positive half-integer, got {j!r}")
    return twice / 2


@dataclass(frozen=True)
class SpinSystem:
    """Spin-j operators in the descending-m basis."""

    j: float
    dim: int
    jx: np.ndarray
    jy: np.ndarray
    jz: np.ndarray
    jsq: np.ndarray

    @property
    def m_values(self) -> np.ndarray:
        return np.real(np.diag(self.jz))

    def index_of(self, m: float) -> int:
        """Basis index of the |m> state."""
        idx = np.flatnonzero(np.abs(self.m_values - m) < 1e-9)
        if idx.size != 1:
            raise ValueError(f"m={m} is not a valid projection for j={self.j}")
        return int(idx[0])

    @property
    def identity(self) -> np.ndarray:
        return np.eye(self.dim, dtype=complex)


def make_spin_system(j) -> SpinSystem:
    """Build Jx, Jy, Jz, J^2 for spin ``j`` from the ladder operators.

    ``j`` may be a float, int, string or ``Fraction`` as long as ``2j`` is a
    positive integer, e.g. ``make_spin_system("5/2")``.
    """
    jj = _as_half_integer(j)
    jf = float(jj)
    dim = int(2 * jj + 1)
    m = jf - np.arange(dim)
    # <m+1|J+|m> sits one row above the diagonal in descending-m order
    jplus = np.zeros((dim, dim), dtype=complex)
    for k in range(1, dim):
        jplus[k - 1, k] = np.sqrt(jf * (jf + 1) - m[k] * (m[k] + 1))
    jminus = jplus.conj().T
    jx = (jplus + jminus) / 2
    jy = (jplus - jminus) / 2j
    jz = np.diag(m).astype(complex)
    jsq = jf * (jf + 1) * np.eye(dim, dtype=complex)
    for op in (jx, jy, jz, jsq):
        op.setflags(write=False)
    return SpinSystem(j=jf, dim=dim, jx=jx, jy=jy, jz=jz, jsq=jsq)


def _jacobi_rotate(A: np.ndarray, V: np.ndarray, p: int, q: int) -> None:
    apq = A[p, q]
    r = abs(apq)
    if r == 0.0:
        return
    phase = apq / r
    theta = 0.5 * np.arctan2(2.0 * r, A[q, q].real - A[p, p].real)
    c, s = np.cos(theta), np.sin(theta)
    # phase removal on column q followed by a real Givens rotation
    blk = np.array([[c, s], [-s * phase.conjugate(), c * phase.conjugate()]])
    idx = [p, q]
    A[:, idx] = A[:, idx] @ blk
    A[idx, :] = blk.conj().T @ A[idx, :]
    A[p, q] = A[q, p] = 0.0
    V[:, idx] = V[:, idx] @ blk


def hermitian_eigendecompose(M: np.ndarray, tol: float = LINALG_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decompose a Hermitian matrix by cyclic complex Jacobi rotations.

    Parameters
    ----------
    M : (n, n) array_like
        Hermitian matrix. Hermiticity is checked relative to ``max|M|``.
    tol : float
        Relative Hermiticity tolerance.

    Returns
    -------
    eigenvalues : (n,) ndarray
        Ascending real eigenvalues.
    eigenvectors : (n, n) ndarray
        Unitary matrix whose columns are the eigenvectors, so that
        ``M = U @ diag(w) @ U^H``.
    """
    A = np.array(M, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    scale = max(1.0, float(np.max(np.abs(A), initial=0.0)))
    if not is_hermitian(A, tol * scale):
        raise ValueError("matrix is not Hermitian")
    A = (A + A.conj().T) / 2
    n = A.shape[0]
    V = np.eye(n, dtype=complex)
    fro = np.linalg.norm(A)
    for _ in range(MAX_JACOBI_SWEEPS):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= np.finfo(float).eps * fro:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                _jacobi_rotate(A, V, p, q)
    else:
        raise EigenConvergenceError(f"Jacobi did not converge in {MAX_JACOBI_SWEEPS} sweeps")
    w = np.real(np.diag(A))
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


_PI_LONG = np.arccos(np.longdouble(-1))


def _phase_factors(M: np.ndarray, U: np.ndarray, s: float) -> np.ndarray:
    """exp(i s w) with the eigenvalues re-evaluated in extended precision.

    For long evolutions ``s * w`` runs to ~1e5 rad, where a double-precision
    eigenvalue error of a few ulp already shows up at 1e-10 in the phase.
    The Rayleigh quotient is second order in the eigenvector error, so
    evaluating it (and the angle reduction) in long double recovers the
    lost digits.
    """
    Ml = np.asarray(M, dtype=np.clongdouble)
    Ul = U.astype(np.clongdouble)
    num = np.einsum("ik,ij,jk->k", Ul.conj(), Ml, Ul).real
    den = np.einsum("ik,ik->k", Ul.conj(), Ul).real
    theta = np.longdouble(s) * (num / den)
    theta = np.fmod(theta, 2 * _PI_LONG)
    return (np.cos(theta) + 1j * np.sin(theta)).astype(complex)


def expm_i_hermitian(M: np.ndarray, s: float) -> np.ndarray:
    """Return ``exp(i s M)`` for Hermitian ``M`` via its spectral decomposition."""
    A = np.asarray(M, dtype=complex)
    _, U = hermitian_eigendecompose(A)
    return (U * _phase_factors((A + A.conj().T) / 2, U, s)) @ U.conj().T


def commutator(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return A @ B - B @ A
