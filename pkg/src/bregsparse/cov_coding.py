"""Nonnegative sparse coding of covariance descriptors over SPD atoms.

Minimizes ``D_B(x (x) A, S) + mu * sum(x)`` over ``x >= 0``, where
``x (x) A = sum_i x_i A_i`` and ``D_B`` is the LogDet divergence with the
reconstruction in the first argument. Optionally enforces ``x (x) A <= S``
in the Loewner order.

The solver is projected gradient with Barzilai-Borwein trial steps and
Armijo backtracking; trial points that leave the PD cone (or violate the
upper cone) are rejected by shrinking the step, so every accepted iterate is
strictly feasible and the objective trace is non-increasing.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .report import SolverReport, Termination
from .spd_core import (
    NoFeasibleStart,
    NotPositiveDefinite,
    ReconstructionNotPd,
    SpdMatrix,
    as_spd,
    try_spd,
)

__all__ = [
    "CovDictionary",
    "NonnegSparseCode",
    "CovCodingConfig",
    "reconstruct",
    "cov_objective",
    "cov_gradient",
    "code_covariance",
    "initial_code",
]


@dataclass(frozen=True, eq=False)
class CovDictionary:
    atoms: tuple[SpdMatrix, ...]

    def __post_init__(self):
        atoms = tuple(as_spd(a) for a in self.atoms)
        if not atoms:
            raise ValueError("dictionary needs at least one atom")
        if len({a.dim for a in atoms}) != 1:
            raise ValueError("all atoms must share one dimension")
        object.__setattr__(self, "atoms", atoms)
        stack = np.stack([a.matrix for a in atoms])
        stack.setflags(write=False)
        object.__setattr__(self, "_stack", stack)

    @property
    def stack(self) -> np.ndarray:
        return self._stack

    @property
    def size(self) -> int:
        return len(self.atoms)

    @property
    def dim(self) -> int:
        return self.atoms[0].dim

    def __len__(self) -> int:
        return len(self.atoms)


@dataclass(frozen=True, eq=False)
class NonnegSparseCode:
    weights: np.ndarray
    support_eps: float = 1e-6

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if np.any(w < 0):
            raise ValueError("nonnegative code has negative weights")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights > self.support_eps)

    @property
    def l1(self) -> float:
        return float(np.sum(self.weights))


@dataclass(frozen=True)
class CovCodingConfig:
    mu: float = 0.0
    enforce_upper_cone: bool = False
    max_iters: int = 5000
    step_init: float = 1.0
    backtrack_factor: float = 0.5
    grad_tol: float = 1e-10
    support_eps: float = 1e-6
    cone_tol: float = 1e-10
    armijo: float = 1e-4
    max_backtracks: int = 60

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be >= 0")
        if not 0.0 < self.backtrack_factor < 1.0:
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if min(self.grad_tol, self.support_eps, self.cone_tol, self.step_init) <= 0:
            raise ValueError("tolerances and step_init must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")


def _weights(x) -> np.ndarray:
    if isinstance(x, NonnegSparseCode):
        return x.weights
    return np.asarray(x, dtype=float).reshape(-1)


def reconstruct(code, dictionary: CovDictionary) -> np.ndarray:
    """``sum_i x_i A_i``."""
    x = _weights(code)
    if x.size != dictionary.size:
        raise ValueError(f"code has {x.size} weights, dictionary has {dictionary.size} atoms")
    return np.tensordot(x, dictionary.stack, axes=1)


def _recon_spd(x, dictionary) -> SpdMatrix:
    R = reconstruct(x, dictionary)
    try:
        return try_spd(R)
    except NotPositiveDefinite as exc:
        raise ReconstructionNotPd(exc.index, "reconstruction is not positive definite") from None


def cov_objective(code, dictionary: CovDictionary, S, mu: float) -> float:
    """``D_B(x (x) A, S) + mu * ||x||_1``."""
    S = as_spd(S)
    x = _weights(code)
    R = _recon_spd(x, dictionary)
    X = solve_triangular(S.chol, R.chol, lower=True)
    smooth = float(np.sum(X * X)) - (R.logdet - S.logdet) - S.dim
    return smooth + mu * float(np.sum(np.abs(x)))


def cov_gradient(code, dictionary: CovDictionary, S) -> np.ndarray:
    """Gradient of the smooth part: ``g_i = tr(A_i S^-1) - tr(S_hat^-1 A_i)``."""
    S = as_spd(S)
    R = _recon_spd(code, dictionary)
    d = S.dim
    W = S.solve(np.eye(d)) - R.solve(np.eye(d))
    return np.einsum("kij,ij->k", dictionary.stack, W)


def initial_code(S, dictionary: CovDictionary) -> np.ndarray:
    """``(eps / K) * 1`` with ``eps = 1e-2 * tr(S) / mean_i tr(A_i)``."""
    S = as_spd(S)
    traces = np.trace(dictionary.stack, axis1=1, axis2=2)
    eps = 1e-2 * np.trace(S.matrix) / traces.mean()
    return np.full(dictionary.size, eps / dictionary.size)


class _Problem:
    """Cached pieces of one coding problem."""

    def __init__(self, S: SpdMatrix, dictionary: CovDictionary, cfg: CovCodingConfig):
        self.S = S
        self.dictionary = dictionary
        self.cfg = cfg
        self.eye = np.eye(S.dim)
        Sinv = S.solve(self.eye)
        # linear part tr(A_i S^-1) shared by objective and gradient
        self.lin = np.einsum("kij,ij->k", dictionary.stack, Sinv)

    def feasible(self, x) -> SpdMatrix | None:
        if np.any(x < 0):
            return None
        R = reconstruct(x, self.dictionary)
        try:
            Rs = try_spd(R)
        except NotPositiveDefinite:
            return None
        if self.cfg.enforce_upper_cone:
            gap = np.linalg.eigvalsh(self.S.matrix - R)[0]
            if gap < -self.cfg.cone_tol:
                return None
        return Rs

    def value(self, x, R: SpdMatrix) -> float:
        # tr(R S^-1) is linear in x
        return float(self.lin @ x) - (R.logdet - self.S.logdet) - self.S.dim + self.cfg.mu * float(np.sum(x))

    def grad(self, R: SpdMatrix) -> np.ndarray:
        Rinv = cho_solve((R.chol, True), self.eye)
        return self.lin - np.einsum("kij,ij->k", self.dictionary.stack, Rinv) + self.cfg.mu


def code_covariance(
    S,
    dictionary: CovDictionary,
    cfg: CovCodingConfig | None = None,
    x0: Sequence[float] | None = None,
    callback: Callable[[np.ndarray, SpdMatrix], None] | None = None,
) -> tuple[NonnegSparseCode, SolverReport]:
    """Sparse-code ``S`` over ``dictionary``.

    Parameters
    ----------
    S : array_like or SpdMatrix
        Target covariance descriptor, strictly positive definite.
    dictionary : CovDictionary
    cfg : CovCodingConfig, optional
    x0 : sequence of float, optional
        Starting code. Must be strictly feasible. Defaults to
        :func:`initial_code`, halved until it satisfies the upper cone when
        that constraint is enforced.
    callback : callable, optional
        Called as ``callback(x, S_hat)`` on every accepted iterate, including
        the start.

    Returns
    -------
    code : NonnegSparseCode
        The final (and best) iterate.
    report : SolverReport
        ``termination`` is ``MaxIters`` when the iteration cap was hit.

    Raises
    ------
    NoFeasibleStart
        If no strictly feasible start is available.
    """
    t0 = time.perf_counter()
    cfg = cfg or CovCodingConfig()
    S = as_spd(S)
    if dictionary.dim != S.dim:
        raise ValueError(f"dictionary dimension {dictionary.dim} != target dimension {S.dim}")
    prob = _Problem(S, dictionary, cfg)
    report = SolverReport(config={"solver": "projected-gradient", **asdict(cfg)})

    if x0 is None:
        x = initial_code(S, dictionary)
        R = prob.feasible(x)
        halvings = 0
        while R is None and halvings < 60:
            x = x * 0.5
            halvings += 1
            R = prob.feasible(x)
        if halvings:
            report.events.append(f"start halved {halvings} times")
    else:
        x = np.array(x0, dtype=float).reshape(-1)
        if x.size != dictionary.size:
            raise ValueError("x0 length does not match the dictionary")
        R = prob.feasible(x)
    if R is None:
        raise NoFeasibleStart("no strictly feasible starting code")

    F = prob.value(x, R)
    g = prob.grad(R)
    report.objective_trace.append(F)
    if callback is not None:
        callback(x.copy(), R)

    step = cfg.step_init
    termination = Termination.MaxIters
    it = 0
    for it in range(1, cfg.max_iters + 1):
        pg = x - np.maximum(x - g, 0.0)
        if np.max(np.abs(pg)) <= cfg.grad_tol:
            termination = Termination.Converged
            it -= 1
            break
        t = step
        accepted = False
        for _ in range(cfg.max_backtracks):
            xn = np.maximum(x - t * g, 0.0)
            Rn = prob.feasible(xn)
            if Rn is not None:
                Fn = prob.value(xn, Rn)
                if Fn <= F + cfg.armijo * float(g @ (xn - x)):
                    accepted = True
                    break
            t *= cfg.backtrack_factor
        if not accepted:
            report.events.append(f"line search stalled at iteration {it}")
            termination = Termination.Converged
            it -= 1
            break
        gn = prob.grad(Rn)
        s, y = xn - x, gn - g
        sy = float(s @ y)
        step = float(np.clip(s @ s / sy, 1e-12, 1e12)) if sy > 0 else cfg.step_init
        stalled = Fn >= F
        x, R, F, g = xn, Rn, Fn, gn
        report.objective_trace.append(F)
        if callback is not None:
            callback(x.copy(), R)
        if stalled and np.max(np.abs(s)) <= 1e-15 * max(1.0, np.max(np.abs(x))):
            report.events.append(f"no progress at iteration {it}")
            termination = Termination.Converged
            break

    report.iterations = it
    report.termination = termination
    report.feasibility = {"nonnegative": bool(np.all(x >= 0)), "pd": True}
    if cfg.enforce_upper_cone:
        report.feasibility["upper_cone"] = bool(
            np.linalg.eigvalsh(S.matrix - R.matrix)[0] >= -cfg.cone_tol)
    report.wall_time = time.perf_counter() - t0
    return NonnegSparseCode(x, cfg.support_eps), report
