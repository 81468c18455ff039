"""Sparse representation of precision matrices over a symmetric dictionary.

A precision ``P_j`` of a Gaussian component with sample covariance ``C_j`` is
approximated as ``sum_k lam_k S_k`` with unit-Frobenius symmetric atoms
``S_k`` and signed codes ``lam``. Coding one component minimizes

    tr(C P_hat) - ln det P_hat + mu * ||lam||_1     s.t. P_hat > 0

by ISTA with an active-set strategy. :func:`learn` alternates coding of all
components with a projected-gradient dictionary step on the weighted total
``sum_j n_j (tr(C_j P_hat_j) - ln det P_hat_j) + mu * ||lam_j||_1``.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_solve

from .gaussian import make_rng
from .report import SolverReport, Termination
from .spd_core import (
    NoFeasibleStart,
    NotPositiveDefinite,
    ReconstructionNotPd,
    SpdMatrix,
    as_spd,
    symmetrize,
    try_spd,
)

log = logging.getLogger(__name__)

__all__ = [
    "SymDictionary",
    "PrecisionCode",
    "PrecCodingConfig",
    "LearnConfig",
    "LearnProblem",
    "DegenerateAtom",
    "reconstruct",
    "prec_objective",
    "prec_smooth",
    "prec_gradient",
    "soft_threshold",
    "code_precision",
    "total_objective",
    "dict_gradient",
    "dict_update",
    "init_dictionary",
    "learn",
]

ATOM_NORM_FLOOR = 1e-12


class DegenerateAtom(RuntimeWarning):
    pass


@dataclass(frozen=True, eq=False)
class SymDictionary:
    """Symmetric atoms of unit Frobenius norm.

    The constructor symmetrizes and normalizes its input, so any nonzero
    square matrices are accepted.
    """

    atoms: tuple[np.ndarray, ...]

    def __post_init__(self):
        atoms = []
        for a in self.atoms:
            a = np.array(symmetrize(a))
            nrm = np.linalg.norm(a)
            if nrm < ATOM_NORM_FLOOR:
                raise ValueError("dictionary atoms must be nonzero")
            a = a / nrm
            a.setflags(write=False)
            atoms.append(a)
        if not atoms:
            raise ValueError("dictionary needs at least one atom")
        if len({a.shape for a in atoms}) != 1:
            raise ValueError("all atoms must share one dimension")
        object.__setattr__(self, "atoms", tuple(atoms))
        stack = np.stack(atoms)
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
        return self.atoms[0].shape[0]

    def __len__(self) -> int:
        return len(self.atoms)


@dataclass(frozen=True, eq=False)
class PrecisionCode:
    weights: np.ndarray
    support_eps: float = 1e-6

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(np.abs(self.weights) > self.support_eps)

    @property
    def l1(self) -> float:
        return float(np.sum(np.abs(self.weights)))


@dataclass(frozen=True)
class PrecCodingConfig:
    mu: float = 0.0
    max_iters: int = 10000
    obj_tol: float = 1e-14
    step_tol: float = 1e-12
    backtrack_factor: float = 0.5
    max_backtracks: int = 60
    active_set: bool = True
    warm_sweeps: int = 3
    refresh_every: int = 10
    power_iters: int = 20
    support_eps: float = 1e-6
    spectral_step: bool = True

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be >= 0")
        if not 0.0 < self.backtrack_factor < 1.0:
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if self.refresh_every < 1 or self.warm_sweeps < 0:
            raise ValueError("refresh_every must be >= 1 and warm_sweeps >= 0")


@dataclass(frozen=True)
class LearnConfig:
    mu: float = 0.0
    outer_iters: int = 20
    outer_tol: float = 1e-9
    dict_step: float = 1e-2
    dict_backtracks: int = 30
    weight_penalty: bool = False
    coding: PrecCodingConfig = field(default_factory=PrecCodingConfig)


@dataclass(frozen=True, eq=False)
class LearnProblem:
    """Sample covariances ``C_j`` with their effective counts ``n_j``."""

    covariances: tuple[SpdMatrix, ...]
    counts: tuple[float, ...]

    def __post_init__(self):
        covs = tuple(as_spd(c) for c in self.covariances)
        counts = tuple(float(n) for n in self.counts)
        if not covs or len(covs) != len(counts):
            raise ValueError("need one count per covariance and at least one target")
        if any(n <= 0 for n in counts):
            raise ValueError("counts must be positive")
        if len({c.dim for c in covs}) != 1:
            raise ValueError("all targets must share one dimension")
        object.__setattr__(self, "covariances", covs)
        object.__setattr__(self, "counts", counts)

    @property
    def dim(self) -> int:
        return self.covariances[0].dim

    def __len__(self) -> int:
        return len(self.covariances)


def _weights(code) -> np.ndarray:
    if isinstance(code, PrecisionCode):
        return code.weights
    return np.asarray(code, dtype=float).reshape(-1)


def reconstruct(code, dictionary: SymDictionary) -> np.ndarray:
    lam = _weights(code)
    if lam.size != dictionary.size:
        raise ValueError(f"code has {lam.size} weights, dictionary has {dictionary.size} atoms")
    return np.tensordot(lam, dictionary.stack, axes=1)


def _recon_spd(lam, stack) -> SpdMatrix | None:
    try:
        return try_spd(np.tensordot(lam, stack, axes=1))
    except NotPositiveDefinite:
        return None


def _require_pd(lam, dictionary) -> SpdMatrix:
    P = _recon_spd(_weights(lam), dictionary.stack)
    if P is None:
        raise ReconstructionNotPd(0, "reconstructed precision is not positive definite")
    return P


def prec_smooth(code, dictionary: SymDictionary, sigma_bar) -> float:
    """``tr(C P_hat) - ln det P_hat``."""
    C = as_spd(sigma_bar)
    P = _require_pd(code, dictionary)
    return float(np.sum(C.matrix * P.matrix)) - P.logdet


def prec_objective(code, dictionary: SymDictionary, sigma_bar, mu: float) -> float:
    """``tr(C P_hat) - ln det P_hat + mu * ||lam||_1``.

    Adding ``-d - ln det C`` to the smooth part gives ``D_B(C, P_hat^{-1})``.
    """
    return prec_smooth(code, dictionary, sigma_bar) + mu * float(np.sum(np.abs(_weights(code))))


def prec_gradient(code, dictionary: SymDictionary, sigma_bar) -> np.ndarray:
    """``g_k = tr(C S_k) - tr(P_hat^{-1} S_k)``."""
    C = as_spd(sigma_bar)
    P = _require_pd(code, dictionary)
    W = C.matrix - cho_solve((P.chol, True), np.eye(C.dim))
    return np.einsum("kij,ij->k", dictionary.stack, W)


def soft_threshold(v, t):
    """``sign(v) * max(|v| - t, 0)``; works elementwise on arrays."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("threshold must be non-negative")
    out = np.sign(v) * np.maximum(np.abs(v) - t, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def _curvature(Pinv: np.ndarray, stack: np.ndarray, iters: int) -> float:
    """Power-iteration estimate of the top eigenvalue of the smooth Hessian.

    ``H_kl = tr(P^-1 S_k P^-1 S_l)``.
    """
    k = stack.shape[0]
    v = np.ones(k) / np.sqrt(k)
    lam = 0.0
    for _ in range(iters):
        M = np.tensordot(v, stack, axes=1)
        Hv = np.einsum("kij,ij->k", stack, Pinv @ M @ Pinv)
        nrm = np.linalg.norm(Hv)
        if nrm == 0.0:
            break
        lam_new = float(v @ Hv)
        v = Hv / nrm
        if abs(lam_new - lam) <= 1e-6 * abs(lam_new):
            lam = lam_new
            break
        lam = lam_new
    return max(lam, 1e-12)


def _initial_code(C: SpdMatrix, dictionary: SymDictionary) -> np.ndarray | None:
    """Feasible starting code, or None.

    Tries the least-squares projection of ``C^-1`` on the atoms, then the
    scaled atom best aligned with ``C^-1`` among those that are definite.
    """
    target = C.solve(np.eye(C.dim))
    stack = dictionary.stack
    A = stack.reshape(stack.shape[0], -1).T
    lam, *_ = np.linalg.lstsq(A, target.reshape(-1), rcond=None)
    if _recon_spd(lam, stack) is not None:
        return lam
    best = None
    for k, atom in enumerate(stack):
        for sign in (1.0, -1.0):
            if _recon_spd(np.array([sign]), atom[None]) is None:
                continue
            cand = np.zeros(stack.shape[0])
            cand[k] = sign * np.trace(target) / abs(np.trace(atom))
            align = sign * float(np.sum(atom * target))
            if best is None or align > best[0]:
                best = (align, cand)
    return None if best is None else best[1]


def code_precision(
    sigma_bar,
    dictionary: SymDictionary,
    cfg: PrecCodingConfig | None = None,
    lam0: Sequence[float] | None = None,
    callback: Callable[[np.ndarray, SpdMatrix], None] | None = None,
) -> tuple[PrecisionCode, SolverReport]:
    """Sparse-code the precision ``sigma_bar^{-1}`` over ``dictionary``.

    Each iteration takes a gradient step of size ``eta`` on the chosen
    coordinates followed by soft-thresholding at ``eta * mu``. ``eta`` starts
    at the inverse of a local curvature estimate and is halved until the
    reconstruction is positive definite and the quadratic upper-bound
    condition holds, which makes the objective trace non-increasing.

    After ``warm_sweeps`` full iterations only the current support is
    updated, except on every ``refresh_every``-th iteration, which uses the
    full gradient and may bring coordinates back. Convergence is only declared
    on a full iteration.

    Parameters
    ----------
    lam0 : sequence of float, optional
        Warm start; ignored (with an event) when it is infeasible.
    callback : callable, optional
        ``callback(lam, P_hat)`` on every accepted iterate.
    """
    t0 = time.perf_counter()
    cfg = cfg or PrecCodingConfig()
    C = as_spd(sigma_bar)
    if dictionary.dim != C.dim:
        raise ValueError(f"dictionary dimension {dictionary.dim} != target dimension {C.dim}")
    stack = dictionary.stack
    K = dictionary.size
    eye = np.eye(C.dim)
    report = SolverReport(config={"solver": "ista-active-set", **asdict(cfg)})

    lam = None
    if lam0 is not None:
        lam = np.array(lam0, dtype=float).reshape(-1)
        if lam.size != K:
            raise ValueError("lam0 length does not match the dictionary")
        if _recon_spd(lam, stack) is None:
            report.events.append("warm start infeasible, reinitialized")
            lam = None
    if lam is None:
        lam = _initial_code(C, dictionary)
    if lam is None:
        raise NoFeasibleStart("no positive-definite reconstruction found from the dictionary")
    P = _recon_spd(lam, stack)

    # tr(C S_k), constant over iterations
    lin = np.einsum("kij,ij->k", stack, C.matrix)

    def smooth(x, Px):
        return float(lin @ x) - Px.logdet

    f = smooth(lam, P)
    F = f + cfg.mu * float(np.sum(np.abs(lam)))
    report.objective_trace.append(F)
    if callback is not None:
        callback(lam.copy(), P)

    termination = Termination.MaxIters
    force_full = False
    prev = None
    it = 0
    for it in range(1, cfg.max_iters + 1):
        full = (not cfg.active_set or force_full or it <= cfg.warm_sweeps
                or (it - cfg.warm_sweeps) % cfg.refresh_every == 0)
        if full:
            coords = np.arange(K)
        else:
            coords = np.flatnonzero(lam != 0.0)
            if coords.size == 0:
                coords = np.arange(K)
                full = True
        Pinv = cho_solve((P.chol, True), eye)
        g = lin - np.einsum("kij,ij->k", stack, Pinv)
        eta = 1.0 / _curvature(Pinv, stack[coords], cfg.power_iters)
        if cfg.spectral_step and prev is not None:
            # Barzilai-Borwein trial step; backtracking below still enforces
            # the upper bound, so only the starting point changes
            s_, y_ = lam - prev[0], g - prev[1]
            sy = float(s_ @ y_)
            if sy > 0:
                eta = min(max(eta, float(s_ @ s_) / sy), 1e6 * eta)
        prev = (lam, g)
        gc = g[coords]
        accepted = False
        for _ in range(cfg.max_backtracks):
            cand = lam.copy()
            cand[coords] = soft_threshold(lam[coords] - eta * gc, eta * cfg.mu)
            Pc = _recon_spd(cand, stack)
            if Pc is not None:
                fc = smooth(cand, Pc)
                diff = cand[coords] - lam[coords]
                if fc <= f + float(gc @ diff) + float(diff @ diff) / (2.0 * eta):
                    accepted = True
                    break
            eta *= cfg.backtrack_factor
        if not accepted:
            if full:
                report.events.append(f"line search stalled at iteration {it}")
                termination = Termination.Converged
                it -= 1
                break
            force_full = True
            continue
        Fc = fc + cfg.mu * float(np.sum(np.abs(cand)))
        step = float(np.max(np.abs(cand - lam)))
        if Fc > F:
            # round-off only: the bound above implies Fc <= F in exact arithmetic
            if full:
                termination = Termination.Converged
                it -= 1
                break
            force_full = True
            continue
        small = (F - Fc) <= cfg.obj_tol * max(1.0, abs(F)) or step <= cfg.step_tol * max(1.0, np.max(np.abs(lam)))
        lam, P, f, F = cand, Pc, fc, Fc
        report.objective_trace.append(F)
        if callback is not None:
            callback(lam.copy(), P)
        if small:
            if full:
                termination = Termination.Converged
                break
            force_full = True
        else:
            force_full = False

    report.iterations = it
    report.termination = termination
    report.feasibility = {"pd": True}
    report.wall_time = time.perf_counter() - t0
    return PrecisionCode(lam, cfg.support_eps), report


def _component_mu(problem: LearnProblem, j: int, cfg: LearnConfig) -> float:
    # coding subproblem j is the j-th term of the total divided by n_j
    return cfg.mu if cfg.weight_penalty else cfg.mu / problem.counts[j]


def total_objective(problem: LearnProblem, codes, dictionary: SymDictionary,
                    mu: float, weight_penalty: bool = False) -> float:
    """``sum_j n_j (tr(C_j P_j) - ln det P_j) + mu * ||lam_j||_1``.

    The penalty is not multiplied by ``n_j`` unless ``weight_penalty``.

    Raises
    ------
    ReconstructionNotPd
        With ``index`` set to the offending component.
    """
    total = 0.0
    for j, (C, n, code) in enumerate(zip(problem.covariances, problem.counts, codes)):
        lam = _weights(code)
        P = _recon_spd(lam, dictionary.stack)
        if P is None:
            raise ReconstructionNotPd(j, f"component {j}: reconstructed precision is not positive definite")
        pen = mu * float(np.sum(np.abs(lam)))
        total += n * (float(np.sum(C.matrix * P.matrix)) - P.logdet) + (n * pen if weight_penalty else pen)
    return total


def dict_gradient(problem: LearnProblem, codes, dictionary: SymDictionary) -> np.ndarray:
    """``dL/dS_k = sum_j n_j lam_k^j (C_j - P_hat_j^{-1})``, shape ``(D, d, d)``."""
    G = np.zeros_like(dictionary.stack)
    eye = np.eye(dictionary.dim)
    for C, n, code in zip(problem.covariances, problem.counts, codes):
        lam = _weights(code)
        P = _require_pd(lam, dictionary)
        W = C.matrix - cho_solve((P.chol, True), eye)
        G += n * lam[:, None, None] * W[None]
    return G


def _renormalize(atoms: np.ndarray, codes: np.ndarray):
    norms = np.linalg.norm(atoms.reshape(atoms.shape[0], -1), axis=1)
    return atoms / norms[:, None, None], codes * norms[None, :], norms


def dict_update(problem: LearnProblem, codes, dictionary: SymDictionary, step: float,
                mu: float = 0.0, weight_penalty: bool = False, max_backtracks: int = 30,
                rng: np.random.Generator | None = None, events: list | None = None):
    """One backtracked gradient step on the atoms.

    After the step every atom is symmetrized and renormalized to unit
    Frobenius norm, and the codes using it are multiplied by the removed
    norm so each reconstruction is unchanged. The step is halved until the
    total objective (evaluated after renormalization) does not increase; if
    no step qualifies, the inputs are returned unchanged.

    An atom whose norm collapses below ``1e-12`` is replaced by a fresh random
    symmetric atom (drawn from ``rng``) and its codes are zeroed.

    Returns
    -------
    dictionary : SymDictionary
    codes : ndarray, shape (M, D)
    step : float
        The accepted step, or 0.0 when the dictionary was left unchanged.
    """
    codes = np.array([_weights(c) for c in codes], dtype=float)
    base = total_objective(problem, codes, dictionary, mu, weight_penalty)
    G = dict_gradient(problem, codes, dictionary)
    if not np.any(G):
        return dictionary, codes, 0.0
    for _ in range(max_backtracks):
        atoms = dictionary.stack - step * G
        atoms = (atoms + atoms.transpose(0, 2, 1)) / 2.0
        norms = np.linalg.norm(atoms.reshape(atoms.shape[0], -1), axis=1)
        new_codes = codes.copy()
        for k in np.flatnonzero(norms < ATOM_NORM_FLOOR):
            if rng is None:
                rng = make_rng(0)
            R = rng.standard_normal(atoms.shape[1:])
            atoms[k] = (R + R.T) / 2.0
            new_codes[:, k] = 0.0
            msg = f"atom {k} degenerated and was reinitialized"
            log.warning(msg)
            if events is not None:
                events.append(msg)
        atoms, new_codes, _ = _renormalize(atoms, new_codes)
        cand = SymDictionary(tuple(atoms))
        try:
            val = total_objective(problem, new_codes, cand, mu, weight_penalty)
        except ReconstructionNotPd:
            val = np.inf
        if val <= base:
            return cand, new_codes, step
        step *= 0.5
    return dictionary, codes, 0.0


def init_dictionary(dim: int, size: int, seed: int) -> SymDictionary:
    """Identity plus symmetrized Gaussian random matrices, all normalized."""
    rng = make_rng(seed)
    atoms = [np.eye(dim)]
    for _ in range(size - 1):
        G = rng.standard_normal((dim, dim))
        atoms.append((G + G.T) / 2.0)
    return SymDictionary(tuple(atoms))


def _code_all(problem, dictionary, codes, cfg: LearnConfig, threads: int):
    def one(j):
        ccfg = replace(cfg.coding, mu=_component_mu(problem, j, cfg))
        warm = None if codes is None else codes[j]
        return code_precision(problem.covariances[j], dictionary, ccfg, lam0=warm)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(len(problem))))
    else:
        results = [one(j) for j in range(len(problem))]
    return np.array([r[0].weights for r in results]), [r[1] for r in results]


def learn(problem: LearnProblem, init_dict: SymDictionary | None = None, seed: int = 0,
          cfg: LearnConfig | None = None, size: int | None = None, threads: int = 1):
    """Alternate sparse coding of every component with dictionary updates.

    Parameters
    ----------
    problem : LearnProblem
    init_dict : SymDictionary, optional
        Starting dictionary; :func:`init_dictionary` with ``size`` atoms and
        ``seed`` otherwise.
    threads : int
        Components are coded concurrently; results do not depend on it.

    Returns
    -------
    dictionary : SymDictionary
    codes : list of PrecisionCode
    report : SolverReport
        Outer-iteration trace of the total objective.
    """
    t0 = time.perf_counter()
    cfg = cfg or LearnConfig()
    if init_dict is None:
        if size is None:
            raise ValueError("pass init_dict or size")
        init_dict = init_dictionary(problem.dim, size, seed)
    dictionary = init_dict
    rng = make_rng(seed + 1)
    report = SolverReport(config={"solver": "alternating", "seed": seed,
                                  **{k: v for k, v in asdict(cfg).items() if k != "coding"}})

    codes, sub = _code_all(problem, dictionary, None, cfg, threads)
    F = total_objective(problem, codes, dictionary, cfg.mu, cfg.weight_penalty)
    report.objective_trace.append(F)
    step = cfg.dict_step
    termination = Termination.MaxIters
    it = 0
    for it in range(1, cfg.outer_iters + 1):
        dictionary, codes, used = dict_update(problem, codes, dictionary, step, cfg.mu,
                                              cfg.weight_penalty, cfg.dict_backtracks, rng,
                                              report.events)
        if used > 0:
            step = min(2.0 * used, cfg.dict_step)
        codes, sub = _code_all(problem, dictionary, codes, cfg, threads)
        Fn = total_objective(problem, codes, dictionary, cfg.mu, cfg.weight_penalty)
        rel = (F - Fn) / max(1.0, abs(F))
        F = Fn
        report.objective_trace.append(F)
        if rel <= cfg.outer_tol:
            termination = Termination.Converged
            break
    for j, r in enumerate(sub):
        if r.termination is not Termination.Converged:
            report.events.append(f"component {j} coding ended with {r.termination.value}")
    report.iterations = it
    report.termination = termination
    report.feasibility = {"pd": True}
    report.wall_time = time.perf_counter() - t0
    return dictionary, [PrecisionCode(c, cfg.coding.support_eps) for c in codes], report
