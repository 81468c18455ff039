"""Dense symmetric and positive-definite matrix primitives.

Every other module works on plain ``numpy`` arrays for symmetric matrices and
on :class:`SpdMatrix` when positive definiteness has been verified and the
Cholesky factor / log-determinant are needed repeatedly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, lapack

__all__ = [
    "NotPositiveDefinite",
    "ReconstructionNotPd",
    "NoFeasibleStart",
    "SpdMatrix",
    "EigenDecomposition",
    "symmetrize",
    "try_spd",
    "as_spd",
    "is_spd",
    "eigh",
    "matrix_log",
    "matrix_exp",
    "spd_inverse",
    "trace_product",
    "random_spd",
]


class NotPositiveDefinite(ValueError):
    """Cholesky factorization failed or produced a pivot below tolerance.

    Attributes
    ----------
    index : int
        Zero-based index of the first failing pivot.
    """

    def __init__(self, index: int, message: str | None = None):
        self.index = int(index)
        super().__init__(message or f"matrix is not positive definite (pivot {self.index} failed)")


class ReconstructionNotPd(NotPositiveDefinite):
    """A dictionary reconstruction left the positive-definite cone."""


class NoFeasibleStart(RuntimeError):
    """No strictly feasible starting code could be constructed."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def symmetrize(M) -> np.ndarray:
    """Return ``(M + M.T) / 2`` as a read-only float array.

    Raises
    ------
    ValueError
        If ``M`` is not a non-empty square 2-D array.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {M.shape}")
    return _frozen((M + M.T) / 2.0)


@dataclass(frozen=True, eq=False)
class SpdMatrix:
    """A symmetric matrix verified positive definite, with cached factors.

    Build these through :func:`try_spd` (or :func:`as_spd`); the constructor
    does not validate.
    """

    matrix: np.ndarray
    chol: np.ndarray
    logdet: float

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.matrix
        return self.matrix.astype(dtype)

    def solve(self, B) -> np.ndarray:
        """Solve ``self @ X = B`` with the cached Cholesky factor."""
        return cho_solve((self.chol, True), np.asarray(B, dtype=float))

    def __repr__(self) -> str:
        return f"SpdMatrix(dim={self.dim}, logdet={self.logdet:.6g})"


def try_spd(A, pd_tolerance: float | None = None) -> SpdMatrix:
    """Verify positive definiteness by Cholesky and cache the factor.

    Parameters
    ----------
    A : array_like, shape (d, d)
        Symmetrized on entry.
    pd_tolerance : float, optional
        Every Cholesky pivot ``L[i, i]**2`` must exceed this value. Defaults
        to ``1e-10 * max(diag(A))``.

    Raises
    ------
    NotPositiveDefinite
        Carries the index of the first failing pivot.
    """
    S = symmetrize(A)
    diag = np.diag(S)
    if pd_tolerance is None:
        pd_tolerance = 1e-10 * float(diag.max())
    if not np.all(np.isfinite(S)):
        raise NotPositiveDefinite(0, "matrix has non-finite entries")
    if diag.max() <= 0.0:
        raise NotPositiveDefinite(int(np.argmax(diag <= 0.0)))
    L, info = lapack.dpotrf(S, lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefinite(info - 1)
    if info < 0:
        raise ValueError(f"dpotrf: illegal argument {-info}")
    pivots = np.diag(L) ** 2
    bad = np.flatnonzero(pivots <= pd_tolerance)
    if bad.size:
        raise NotPositiveDefinite(int(bad[0]))
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return SpdMatrix(S, _frozen(np.asarray(L)), logdet)


def as_spd(A) -> SpdMatrix:
    """Pass an :class:`SpdMatrix` through, otherwise call :func:`try_spd`."""
    if isinstance(A, SpdMatrix):
        return A
    return try_spd(A)


def is_spd(A, pd_tolerance: float | None = None) -> bool:
    try:
        try_spd(A, pd_tolerance)
    except NotPositiveDefinite:
        return False
    return True


@dataclass(frozen=True, eq=False)
class EigenDecomposition:
    """Eigenvalues in ascending order and orthonormal eigenvector columns."""

    eigvals: np.ndarray
    eigvecs: np.ndarray

    def reconstruct(self) -> np.ndarray:
        Q = self.eigvecs
        return (Q * self.eigvals) @ Q.T


def eigh(A) -> EigenDecomposition:
    """Symmetric eigendecomposition (LAPACK ``syevd`` via numpy).

    Raises
    ------
    numpy.linalg.LinAlgError
        If the iteration does not converge.
    """
    S = symmetrize(np.asarray(A))
    w, Q = np.linalg.eigh(S)
    return EigenDecomposition(_frozen(w), _frozen(Q))


def _sym_funm(A, func) -> np.ndarray:
    ed = eigh(A)
    Q = ed.eigvecs
    return symmetrize((Q * func(ed.eigvals)) @ Q.T)


def matrix_log(A) -> np.ndarray:
    """Principal logarithm ``Q diag(ln w) Q^T`` of a positive-definite matrix."""
    A = as_spd(A)
    return _sym_funm(A.matrix, np.log)


def matrix_exp(A) -> np.ndarray:
    return _sym_funm(A, np.exp)


def spd_inverse(A) -> SpdMatrix:
    """Inverse through the cached Cholesky factor; the result is re-verified."""
    A = as_spd(A)
    inv = A.solve(np.eye(A.dim))
    return try_spd(inv, pd_tolerance=0.0)


def trace_product(A, B) -> float:
    """``tr(A^T B)``, i.e. the elementwise sum of ``A * B``.

    The elementwise product is commutative in IEEE arithmetic and the
    summation order is fixed, so the result is exactly symmetric in its
    arguments.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise ValueError(f"dimension mismatch: {A.shape} vs {B.shape}")
    return float(np.sum(A * B))


def random_spd(d: int, rng, eps: float = 1e-3) -> np.ndarray:
    """Random SPD test matrix ``G G^T + eps I`` with ``G`` iid standard normal.

    ``rng`` is a :class:`numpy.random.Generator` or an integer seed.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    G = rng.standard_normal((d, d))
    return symmetrize(G @ G.T + eps * np.eye(d))
