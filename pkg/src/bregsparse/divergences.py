"""Bregman vector/matrix divergences and Gaussian KL divergences.

All matrix divergences take positive-definite operands (``SpdMatrix`` or
anything :func:`~bregsparse.spd_core.try_spd` accepts). Trace terms of the
form ``tr(A B^{-1})`` are evaluated as ``||L_B^{-1} L_A||_F^2`` from the
cached Cholesky factors; determinants are never formed.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .spd_core import SpdMatrix, as_spd, eigh, matrix_log, symmetrize

__all__ = [
    "DivergenceKind",
    "DivergenceValue",
    "DiscreteDistribution",
    "NonPositiveComponent",
    "squared_euclidean",
    "bregman_vector_kl",
    "discrete_kl",
    "frobenius_div",
    "von_neumann_div",
    "logdet_div",
    "logdet_div_eigen",
    "jeffreys_div",
    "gaussian_kl",
    "sym_gaussian_kl_equal_means",
    "divergence",
]

NUM_TOL = 1e-9


class DivergenceKind(enum.Enum):
    SquaredEuclidean = "squared-euclidean"
    GeneralizedKlVector = "generalized-kl"
    Frobenius = "frobenius"
    VonNeumann = "neumann"
    LogDet = "logdet"
    Jeffreys = "jeffreys"
    GaussianKl = "gkl"
    SymGaussianKl = "sym-gkl"


@dataclass(frozen=True)
class DivergenceValue:
    value: float
    kind: DivergenceKind

    def reported(self) -> float:
        """Value with round-off negatives (down to ``-1e-9``) clamped to zero."""
        if -NUM_TOL <= self.value < 0.0:
            return 0.0
        return self.value


class NonPositiveComponent(ValueError):
    pass


@dataclass(frozen=True)
class DiscreteDistribution:
    """Probability vector on the simplex."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("probabilities must be a non-empty vector")
        if np.any(p < 0):
            raise ValueError("probabilities must be non-negative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "probs", p)


def _vec(x) -> np.ndarray:
    if isinstance(x, DiscreteDistribution):
        return x.probs
    return np.asarray(x, dtype=float)


def squared_euclidean(x, y) -> float:
    x, y = _vec(x), _vec(y)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    diff = x - y
    return float(np.sum(diff * diff))


def bregman_vector_kl(x, y) -> float:
    """Generalized (unnormalized) KL: ``sum(x ln(x/y) - x + y)``.

    Reduces to the discrete KL divergence when both arguments lie on the
    simplex.
    """
    x, y = _vec(x), _vec(y)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if np.any(x <= 0) or np.any(y <= 0):
        raise NonPositiveComponent("all components must be strictly positive")
    return float(np.sum(x * np.log(x / y) - x + y))


def discrete_kl(p: DiscreteDistribution, q: DiscreteDistribution) -> float:
    """``sum p ln(p/q)`` with the convention ``0 ln 0 = 0``."""
    p, q = _vec(p), _vec(q)
    mask = p > 0
    if np.any(q[mask] <= 0):
        return float("inf")
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def frobenius_div(A, B) -> float:
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise ValueError(f"dimension mismatch: {A.shape} vs {B.shape}")
    diff = A - B
    return float(np.sum(diff * diff))


def _pair(A, B) -> tuple[SpdMatrix, SpdMatrix]:
    A, B = as_spd(A), as_spd(B)
    if A.dim != B.dim:
        raise ValueError(f"dimension mismatch: {A.dim} vs {B.dim}")
    return A, B


def _trace_ab_inv(A: SpdMatrix, B: SpdMatrix) -> float:
    # tr(A B^-1) = ||L_B^-1 L_A||_F^2
    X = solve_triangular(B.chol, A.chol, lower=True)
    return float(np.sum(X * X))


def von_neumann_div(A, B) -> float:
    """Quantum relative entropy ``tr(A ln A - A ln B - A + B)``."""
    A, B = _pair(A, B)
    a, b = A.matrix, B.matrix
    val = a @ matrix_log(A) - a @ matrix_log(B) - a + b
    return float(np.trace(val))


def logdet_div(A, B) -> float:
    """Burg / LogDet divergence ``tr(A B^{-1}) - ln det(A B^{-1}) - d``."""
    A, B = _pair(A, B)
    return _trace_ab_inv(A, B) - (A.logdet - B.logdet) - A.dim


def logdet_div_eigen(A, B) -> float:
    """LogDet divergence from the two eigendecompositions.

    ``sum_ij (lambda_i / psi_j) (q_i . v_j)^2 - sum_i ln(lambda_i / psi_i) - d``
    """
    A, B = _pair(A, B)
    ea, eb = eigh(A.matrix), eigh(B.matrix)
    lam, psi = ea.eigvals, eb.eigvals
    if lam[0] <= 0 or psi[0] <= 0:
        raise ValueError("non-positive eigenvalue in a positive-definite operand")
    overlap = (ea.eigvecs.T @ eb.eigvecs) ** 2
    cross = float(np.sum(np.outer(lam, 1.0 / psi) * overlap))
    return cross - float(np.sum(np.log(lam)) - np.sum(np.log(psi))) - A.dim


def jeffreys_div(A, B) -> float:
    """Symmetrized LogDet: ``tr(A B^{-1})/2 + tr(B A^{-1})/2 - d``."""
    A, B = _pair(A, B)
    return 0.5 * _trace_ab_inv(A, B) + 0.5 * _trace_ab_inv(B, A) - A.dim


def gaussian_kl(mu_a, sigma_a, mu_b, sigma_b) -> float:
    """``KL(N(mu_a, sigma_a) || N(mu_b, sigma_b))`` in nats."""
    A, B = _pair(sigma_a, sigma_b)
    mu_a = np.asarray(mu_a, dtype=float).reshape(-1)
    mu_b = np.asarray(mu_b, dtype=float).reshape(-1)
    if mu_a.shape != (A.dim,) or mu_b.shape != (A.dim,):
        raise ValueError("mean vectors must match the covariance dimension")
    z = solve_triangular(B.chol, mu_b - mu_a, lower=True)
    maha = float(z @ z)
    return 0.5 * ((B.logdet - A.logdet) - A.dim + _trace_ab_inv(A, B) + maha)


def sym_gaussian_kl_equal_means(sigma_a, sigma_b) -> float:
    """``tr(sigma_a^{-1} sigma_b + sigma_b^{-1} sigma_a - 2I) / 2``.

    Evaluated with explicit Cholesky solves rather than the factor-product
    trick used by :func:`jeffreys_div`.
    """
    A, B = _pair(sigma_a, sigma_b)
    M = A.solve(B.matrix) + B.solve(A.matrix) - 2.0 * np.eye(A.dim)
    return 0.5 * float(np.trace(M))


def divergence(kind, a, b, mu_a=None, mu_b=None) -> DivergenceValue:
    """Evaluate a divergence by kind.

    The vector kinds expect 1-D inputs; ``SquaredEuclidean`` also accepts
    matrices (flattened). ``GaussianKl`` uses zero means when none are given.
    """
    kind = DivergenceKind(kind) if not isinstance(kind, DivergenceKind) else kind
    if kind is DivergenceKind.SquaredEuclidean:
        v = squared_euclidean(np.ravel(_vec(a)), np.ravel(_vec(b)))
    elif kind is DivergenceKind.GeneralizedKlVector:
        v = bregman_vector_kl(a, b)
    elif kind is DivergenceKind.Frobenius:
        v = frobenius_div(symmetrize(np.asarray(a)), symmetrize(np.asarray(b)))
    elif kind is DivergenceKind.VonNeumann:
        v = von_neumann_div(a, b)
    elif kind is DivergenceKind.LogDet:
        v = logdet_div(a, b)
    elif kind is DivergenceKind.Jeffreys:
        v = jeffreys_div(a, b)
    elif kind is DivergenceKind.GaussianKl:
        A = as_spd(a)
        zeros = np.zeros(A.dim)
        v = gaussian_kl(zeros if mu_a is None else mu_a, A,
                        zeros if mu_b is None else mu_b, b)
    else:
        v = sym_gaussian_kl_equal_means(a, b)
    return DivergenceValue(float(v), kind)
