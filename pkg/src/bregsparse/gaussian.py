"""Multivariate normal densities, seeded sampling and ML fitting."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .spd_core import SpdMatrix, as_spd, spd_inverse, try_spd

__all__ = [
    "GaussianParams",
    "GmmModel",
    "SampleSet",
    "make_rng",
    "derive_seed",
    "log_density",
    "sample",
    "ml_moments",
    "ml_fit",
    "trace_identity_check",
    "gmm_avg_negloglik",
    "differential_entropy",
]

LOG_2PI = float(np.log(2.0 * np.pi))


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox generator; same seed gives the same stream everywhere."""
    return np.random.Generator(np.random.Philox(int(seed)))


def derive_seed(master: int, *keys: int) -> int:
    """Mix a master seed with integer keys into an independent 63-bit seed.

    Uses :class:`numpy.random.SeedSequence` hashing, so adding keys (e.g. new
    grid cells) never perturbs seeds already derived for other keys.
    """
    ss = np.random.SeedSequence(entropy=[int(master), *[int(k) for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True, eq=False)
class GaussianParams:
    """Mean plus covariance, with the precision and log-determinant cached.

    Use :meth:`from_moments` or :meth:`from_precision` rather than the raw
    constructor.
    """

    mean: np.ndarray
    covariance: SpdMatrix
    precision: SpdMatrix
    logdet_cov: float

    @classmethod
    def from_moments(cls, mean, covariance) -> "GaussianParams":
        cov = as_spd(covariance)
        mean = np.array(mean, dtype=float).reshape(-1)
        if mean.shape != (cov.dim,):
            raise ValueError(f"mean has shape {mean.shape}, covariance is {cov.dim}x{cov.dim}")
        mean.setflags(write=False)
        return cls(mean, cov, spd_inverse(cov), cov.logdet)

    @classmethod
    def from_precision(cls, mean, precision) -> "GaussianParams":
        """Build from a (possibly approximated) precision matrix."""
        prec = as_spd(precision)
        cov = spd_inverse(prec)
        mean = np.array(mean, dtype=float).reshape(-1)
        if mean.shape != (prec.dim,):
            raise ValueError(f"mean has shape {mean.shape}, precision is {prec.dim}x{prec.dim}")
        mean.setflags(write=False)
        return cls(mean, cov, prec, cov.logdet)

    @property
    def dim(self) -> int:
        return self.covariance.dim


@dataclass(frozen=True, eq=False)
class GmmModel:
    components: Sequence[GaussianParams]
    counts: Sequence[float]

    def __post_init__(self):
        if len(self.components) != len(self.counts) or not self.components:
            raise ValueError("need one positive count per component")
        if any(c <= 0 for c in self.counts):
            raise ValueError("component counts must be positive")
        if len({g.dim for g in self.components}) != 1:
            raise ValueError("all components must share one dimension")

    @property
    def dim(self) -> int:
        return self.components[0].dim


@dataclass(frozen=True, eq=False)
class SampleSet:
    rows: np.ndarray
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float)
        if rows.ndim == 1:
            rows = rows.reshape(-1, 1)
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise ValueError("a sample set needs at least one row")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __len__(self) -> int:
        return self.n


def log_density(g: GaussianParams, x):
    """Log-density in nats; ``x`` may be one point ``(d,)`` or rows ``(n, d)``."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x.reshape(1, -1) if single else x
    if X.shape[1] != g.dim:
        raise ValueError(f"point dimension {X.shape[1]} != model dimension {g.dim}")
    z = solve_triangular(g.covariance.chol, (X - g.mean).T, lower=True)
    quad = np.sum(z * z, axis=0)
    out = -0.5 * g.dim * LOG_2PI - 0.5 * g.logdet_cov - 0.5 * quad
    return float(out[0]) if single else out


def sample(g: GaussianParams, n: int, seed: int) -> SampleSet:
    """Draw ``mean + L z`` with ``z`` from a Philox stream keyed by ``seed``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    z = make_rng(seed).standard_normal((n, g.dim))
    rows = g.mean + z @ g.covariance.chol.T
    return SampleSet(rows, seed=int(seed))


def ml_moments(xs, bessel: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and outer-product covariance, with no definiteness check."""
    X = xs.rows if isinstance(xs, SampleSet) else np.atleast_2d(np.asarray(xs, dtype=float))
    n = X.shape[0]
    mean = X.mean(axis=0)
    C = X - mean
    denom = n - 1 if bessel else n
    if denom < 1:
        raise ValueError("need at least two rows for the Bessel-corrected estimate")
    cov = C.T @ C / denom
    return mean, (cov + cov.T) / 2.0


def ml_fit(xs, bessel: bool = False) -> GaussianParams:
    """Maximum-likelihood Gaussian fit (``1/n`` covariance unless ``bessel``).

    Raises
    ------
    NotPositiveDefinite
        When the sample covariance is singular (e.g. ``n <= d``).
    """
    mean, cov = ml_moments(xs, bessel)
    return GaussianParams.from_moments(mean, try_spd(cov))


def trace_identity_check(xs, P) -> tuple[float, float]:
    """Both sides of the sample-covariance trace identity.

    Returns ``(sum_i (x_i - m)^T P (x_i - m), n * tr(S P))`` with ``m`` the
    sample mean and ``S`` the ``1/n`` covariance.
    """
    X = xs.rows if isinstance(xs, SampleSet) else np.atleast_2d(np.asarray(xs, dtype=float))
    P = np.asarray(P, dtype=float)
    mean, cov = ml_moments(X)
    C = X - mean
    lhs = float(np.einsum("ij,jk,ik->", C, P, C))
    rhs = X.shape[0] * float(np.sum(cov * P.T))
    return lhs, rhs


def gmm_avg_negloglik(model: GmmModel, data: Sequence) -> float:
    """Average negative log-likelihood over all per-component samples.

    ``data[j]`` holds the samples assigned to component ``j``; the average is
    over the pooled sample count.
    """
    if len(data) != len(model.components):
        raise ValueError("need one sample set per component")
    total, count = 0.0, 0
    for g, xs in zip(model.components, data):
        rows = xs.rows if isinstance(xs, SampleSet) else np.atleast_2d(xs)
        total -= float(np.sum(log_density(g, rows)))
        count += rows.shape[0]
    return total / count


def differential_entropy(g: GaussianParams) -> float:
    return 0.5 * (g.dim * (1.0 + LOG_2PI) + g.logdet_cov)
