"""Monte-Carlo check that ML fitting drives KL(true || fit) to zero.

For each sample size ``n`` on a grid, repeated trials draw ``n`` points from
a known Gaussian, fit it by maximum likelihood and record

* ``kl``  = KL(p_true || p_fit) in closed form, and
* ``gap`` = |mean_i ln(p_true(x_i) / p_fit(x_i)) - kl|,

whose medians should both shrink as ``n`` grows.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .divergences import gaussian_kl
from .gaussian import GaussianParams, derive_seed, log_density, ml_fit, sample
from .report import Table
from .spd_core import NotPositiveDefinite

__all__ = ["ConvergenceRow", "ConvergenceReport", "kl_true_vs_fit", "run_convergence_experiment"]


def kl_true_vs_fit(truth: GaussianParams, n: int, seed: int, *, _fit=None) -> tuple[float, float]:
    """KL divergence of the ML fit from the truth, and the sample-average gap.

    ``_fit`` replaces the ML estimate (test hook).

    Raises
    ------
    NotPositiveDefinite
        If the sample covariance is singular.
    """
    if n <= truth.dim:
        raise ValueError(f"need n > d, got n={n}, d={truth.dim}")
    xs = sample(truth, n, seed)
    fit = ml_fit(xs) if _fit is None else _fit
    kl = gaussian_kl(truth.mean, truth.covariance, fit.mean, fit.covariance)
    avg_log_ratio = float(np.mean(log_density(truth, xs.rows) - log_density(fit, xs.rows)))
    return kl, abs(avg_log_ratio - kl)


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    trials_ok: int
    trials_failed: int
    kl_median: float
    kl_iqr: float
    gap_median: float
    kls: tuple[float, ...] = field(repr=False, default=())
    gaps: tuple[float, ...] = field(repr=False, default=())


@dataclass(frozen=True)
class ConvergenceReport:
    n_grid: tuple[int, ...]
    trials: int
    seed: int
    rows: tuple[ConvergenceRow, ...]

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ValueError("n_grid must be strictly increasing")

    def kl_medians(self) -> np.ndarray:
        return np.array([r.kl_median for r in self.rows])

    def gap_medians(self) -> np.ndarray:
        return np.array([r.gap_median for r in self.rows])

    def sections(self, truth: GaussianParams | None = None) -> list:
        summary = {"dim": truth.dim if truth is not None else "unknown",
                   "n_grid": list(self.n_grid), "trials": self.trials, "seed": self.seed}
        table = Table(["n", "trials_ok", "kl_median", "kl_iqr", "gap_median"],
                      [[r.n, r.trials_ok, r.kl_median, r.kl_iqr, r.gap_median] for r in self.rows])
        return [("experiment", summary), ("convergence", table)]


def _median_iqr(v: np.ndarray) -> tuple[float, float]:
    if v.size == 0:
        return float("nan"), float("nan")
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return float(med), float(q3 - q1)


def run_convergence_experiment(truth: GaussianParams, n_grid: Sequence[int], trials: int,
                               seed: int, threads: int = 1) -> ConvergenceReport:
    """Run ``trials`` fits per grid point; trial ``t`` at grid index ``k``
    uses ``derive_seed(seed, k, t)``.

    Trials whose ML fit is singular are skipped and counted.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    n_grid = tuple(int(n) for n in n_grid)

    def one(cell):
        k, t = cell
        try:
            return kl_true_vs_fit(truth, n_grid[k], derive_seed(seed, k, t))
        except NotPositiveDefinite:
            return None

    cells = [(k, t) for k in range(len(n_grid)) for t in range(trials)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, cells))
    else:
        results = [one(c) for c in cells]

    rows = []
    for k, n in enumerate(n_grid):
        cell = [r for r in results[k * trials:(k + 1) * trials] if r is not None]
        kls = np.array([r[0] for r in cell])
        gaps = np.array([r[1] for r in cell])
        med, iqr = _median_iqr(kls)
        gmed, _ = _median_iqr(gaps)
        rows.append(ConvergenceRow(n, len(cell), trials - len(cell), med, iqr, gmed,
                                   tuple(kls.tolist()), tuple(gaps.tolist())))
    return ConvergenceReport(n_grid, trials, int(seed), tuple(rows))
