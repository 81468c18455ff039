"""Acceptance run: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are
printed even when output capture is on.
"""
import shutil
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from bregsparse.cov_coding import CovCodingConfig, CovDictionary, code_covariance, cov_gradient, cov_objective
from bregsparse.cov_coding import reconstruct as cov_reconstruct
from bregsparse.divergences import (
    DivergenceKind,
    divergence,
    gaussian_kl,
    jeffreys_div,
    logdet_div,
    logdet_div_eigen,
    sym_gaussian_kl_equal_means,
)
from bregsparse.fileio import write_dict_manifest, write_matrix, write_samples, write_vector
from bregsparse.gaussian import GaussianParams, SampleSet, trace_identity_check
from bregsparse.mdi_verify import run_convergence_experiment
from bregsparse.prec_coding import (
    LearnConfig,
    LearnProblem,
    PrecCodingConfig,
    SymDictionary,
    code_precision,
    dict_update,
    learn,
    prec_gradient,
    prec_smooth,
    total_objective,
)
from bregsparse.prec_coding import reconstruct as prec_reconstruct

from instances import feasible_precision_instance, planted_precision, small_cov_instance
from oracles import best_small_support, central_diff, cov_grid_min, golden_section, random_spd, spd_pairs

SUITE_SEED = 2024
SUITE_SIZE = 1000


def verdict(capsys, number, title, ok, detail):
    with capsys.disabled():
        print(f"\n[acceptance {number:2d}] {'PASS' if ok else 'FAIL'}  {title} :: {detail}")
    assert ok, f"criterion {number} ({title}): {detail}"


@pytest.fixture(scope="module")
def suite():
    return list(spd_pairs(SUITE_SIZE, SUITE_SEED))


def test_01_divergence_axioms(capsys, suite):
    t0 = time.perf_counter()
    worst_neg, worst_self = 0.0, 0.0
    for A, B in suite:
        ea, eb = np.linalg.eigvalsh(A), np.linalg.eigvalsh(B)
        for kind in DivergenceKind:
            if kind is DivergenceKind.GeneralizedKlVector:
                # the vector kind is exercised on the eigenvalue spectra
                v = divergence(kind, ea, eb).value
                s = divergence(kind, ea, ea).value
            else:
                v = divergence(kind, A, B).value
                s = divergence(kind, A, A).value
            worst_neg = min(worst_neg, v)
            worst_self = max(worst_self, abs(s))
    elapsed = time.perf_counter() - t0
    ok = worst_neg >= -1e-9 and worst_self <= 1e-10 and elapsed < 10.0
    verdict(capsys, 1, "divergence axioms", ok,
            f"{len(suite)} pairs x {len(DivergenceKind)} kinds, min value {worst_neg:.3g}, "
            f"max |D(A,A)| {worst_self:.3g}, {elapsed:.2f}s")


def test_02_eigen_form_matches_cholesky_form(capsys, suite):
    worst = 0.0
    for A, B in suite:
        a, b = logdet_div_eigen(A, B), logdet_div(A, B)
        worst = max(worst, abs(a - b) / abs(b))
    verdict(capsys, 2, "LogDet eigen form == Cholesky form", worst <= 1e-8, f"max relative error {worst:.3g}")


def test_03_kl_logdet_bridge(capsys, suite):
    kl_err, jef_err = 0.0, 0.0
    for A, B in suite:
        z = np.zeros(A.shape[0])
        kl_err = max(kl_err, abs(gaussian_kl(z, A, z, B) - 0.5 * logdet_div(A, B)))
        jef_err = max(jef_err, abs(jeffreys_div(A, B) - sym_gaussian_kl_equal_means(A, B)))
    ok = kl_err <= 1e-10 and jef_err <= 1e-10
    verdict(capsys, 3, "KL-LogDet bridge", ok, f"max |KL - LogDet/2| {kl_err:.3g}, max |J - symKL| {jef_err:.3g}")


def _fd_error(grad, f, x):
    h = 1e-6 * max(1.0, float(np.max(np.abs(x))))
    fd = central_diff(f, x, h)
    return float(np.linalg.norm(grad - fd) / max(np.linalg.norm(grad), 1e-12))


def test_04_gradients(capsys):
    cov_worst, prec_worst = 0.0, 0.0
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        d, K = 2 + seed % 4, 2 + seed % 5
        D = CovDictionary([random_spd(d, rng, eps=0.1) for _ in range(K)])
        S = random_spd(d, rng, eps=0.1)
        x = rng.uniform(0.2, 1.0, K)
        cov_worst = max(cov_worst, _fd_error(cov_gradient(x, D, S), lambda v: cov_objective(v, D, S, 0.0), x))

        atoms, C = feasible_precision_instance(2000 + seed, d=d, D=K)
        Dict = SymDictionary(atoms)
        lam = np.concatenate([[rng.uniform(1.0, 2.0)], rng.uniform(-0.03, 0.03, K - 1)])
        prec_worst = max(prec_worst, _fd_error(prec_gradient(lam, Dict, C), lambda v: prec_smooth(v, Dict, C), lam))
    ok = cov_worst <= 1e-5 and prec_worst <= 1e-5
    verdict(capsys, 4, "gradients vs central differences", ok,
            f"50+50 instances, max relative error cov {cov_worst:.3g}, prec {prec_worst:.3g}")


def test_05_cov_coding_grid_oracle(capsys):
    t0 = time.perf_counter()
    margins = []
    for seed in range(20):
        atoms, S = small_cov_instance(seed)
        mu = [1e-3, 0.05, 0.3, 1.0][seed % 4]
        _, rep = code_covariance(S, CovDictionary(atoms), CovCodingConfig(mu=mu))
        margins.append(rep.objective_trace[-1] - cov_grid_min(atoms, S, mu, hi=3.0, step=1e-2))
    elapsed = time.perf_counter() - t0
    ok = max(margins) <= 1e-3 and elapsed < 30.0
    verdict(capsys, 5, "covariance coding vs grid oracle", ok,
            f"20 instances (K<=3, d<=2), max(final - grid min) {max(margins):.3g}, {elapsed:.2f}s")


def test_06_precision_closed_form(capsys):
    D = SymDictionary([np.eye(2)])
    errs = []
    for mu in (0.0, 0.1):
        code, _ = code_precision(np.eye(2), D, PrecCodingConfig(mu=mu))
        closed = 2.0 / (2.0 / np.sqrt(2.0) + mu)
        oracle = golden_section(lambda t: t * 2 / np.sqrt(2.0) - 2 * np.log(t / np.sqrt(2.0)) + mu * t, 0.1, 5.0)
        errs.append(max(abs(code.weights[0] - closed), abs(code.weights[0] - oracle)))
    ok = max(errs) <= 1e-6
    verdict(capsys, 6, "closed-form precision coding", ok,
            f"|lam - sqrt2| {errs[0]:.3g} (mu=0), |lam - 2/(2/sqrt2+0.1)| {errs[1]:.3g} (mu=0.1)")


def test_07_planted_support(capsys):
    t0 = time.perf_counter()
    mu = 1e-3
    failures, worst = [], -np.inf
    for seed in range(10):
        atoms, _, P = planted_precision(seed)
        C = np.linalg.inv(P)
        Dict = SymDictionary(atoms)
        code, rep = code_precision(C, Dict, PrecCodingConfig(mu=mu))
        best, _, _ = best_small_support(Dict.stack, C, mu)
        gap = rep.objective_trace[-1] - best
        worst = max(worst, gap)
        if not {0, 2} <= set(code.support.tolist()) or gap > 1e-4:
            failures.append(seed)
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 60.0
    verdict(capsys, 7, "planted support recovery", ok,
            f"10 seeds, failures {failures}, max(final - oracle) {worst:.3g}, {elapsed:.2f}s")


def test_08_ml_kl_convergence(capsys):
    t0 = time.perf_counter()
    truth = GaussianParams.from_moments(np.zeros(2), np.eye(2))
    rep = run_convergence_experiment(truth, [100, 1000, 10_000], trials=50, seed=42)
    elapsed = time.perf_counter() - t0
    kl, gap = rep.kl_medians(), rep.gap_medians()
    factor = kl[0] / kl[-1]
    ok = factor >= 5 and gap[-1] < gap[0] and elapsed < 60.0
    verdict(capsys, 8, "ML -> KL convergence", ok,
            f"median KL {kl[0]:.3g} -> {kl[-1]:.3g} (factor {factor:.1f}), "
            f"median gap {gap[0]:.3g} -> {gap[-1]:.3g}, {elapsed:.2f}s")


def test_09_trace_identity(capsys):
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(3000 + seed)
        n, d = 10 + seed, 1 + seed % 6
        xs = SampleSet(rng.standard_normal((n, d)) * rng.uniform(0.1, 10) + rng.standard_normal(d), seed=seed)
        lhs, rhs = trace_identity_check(xs, random_spd(d, rng))
        worst = max(worst, abs(lhs - rhs) / abs(rhs))
    verdict(capsys, 9, "trace identity", worst <= 1e-9, f"100 sample sets, max relative error {worst:.3g}")


def _check_chol(M):
    try:
        np.linalg.cholesky(M)
        return True
    except np.linalg.LinAlgError:
        return False


def test_10_monotone_and_feasible(capsys):
    problems = []
    runs = 0

    def monotone(trace):
        return bool(np.all(np.diff(trace) <= 0))

    # covariance coding, both cone modes
    cov_cases = [small_cov_instance(s) for s in range(20)]
    for seed in range(10):
        rng = np.random.default_rng(4000 + seed)
        cov_cases.append(([random_spd(4, rng, eps=0.1) for _ in range(6)], random_spd(4, rng, eps=0.1)))
    for i, (atoms, S) in enumerate(cov_cases):
        D = CovDictionary(atoms)
        for cone in (False, True):
            cfg = CovCodingConfig(mu=0.01, enforce_upper_cone=cone, max_iters=1000)
            bad = []

            def cb(x, R):
                Sh = cov_reconstruct(x, D)
                if np.any(x < 0) or not _check_chol(Sh):
                    bad.append("pd")
                if cone and np.linalg.eigvalsh(S - Sh)[0] < -cfg.cone_tol:
                    bad.append("cone")

            _, rep = code_covariance(S, D, cfg, callback=cb)
            runs += 1
            if bad or not monotone(rep.objective_trace):
                problems.append(f"cov[{i}, cone={cone}]")

    # precision coding, with and without the active set
    prec_cases = [feasible_precision_instance(5000 + s, d=2 + s % 3, D=4 + s % 5) for s in range(20)]
    for s in range(10):
        atoms, _, P = planted_precision(s)
        prec_cases.append((atoms, np.linalg.inv(P)))
    for i, (atoms, C) in enumerate(prec_cases):
        Dict = SymDictionary(atoms)
        for active in (True, False):
            bad = []

            def cb(lam, P):
                if not _check_chol(prec_reconstruct(lam, Dict)):
                    bad.append("pd")

            _, rep = code_precision(C, Dict, PrecCodingConfig(mu=0.01, active_set=active), callback=cb)
            runs += 1
            if bad or not monotone(rep.objective_trace):
                problems.append(f"prec[{i}, active={active}]")

    # dictionary learning: outer trace, dictionary steps and final feasibility
    for seed in range(3):
        rng = np.random.default_rng(6000 + seed)
        prob = LearnProblem([random_spd(3, rng, eps=0.3) for _ in range(4)], rng.uniform(20, 100, 4))
        Dict, codes, rep = learn(prob, seed=seed, cfg=LearnConfig(mu=0.2, outer_iters=5), size=5)
        runs += 1
        if not monotone(rep.objective_trace) or not all(_check_chol(prec_reconstruct(c, Dict)) for c in codes):
            problems.append(f"learn[{seed}]")
        before = total_objective(prob, codes, Dict, 0.2)
        new, new_codes, _ = dict_update(prob, codes, Dict, 1e-2, mu=0.2)
        if total_objective(prob, new_codes, new, 0.2) > before:
            problems.append(f"dict_update[{seed}]")

    verdict(capsys, 10, "monotone descent and feasibility", not problems,
            f"{runs} instrumented solver runs, violations {problems or 'none'}")


# ---------------------------------------------------------------- criterion 11

def _cli(*args, cwd):
    proc = subprocess.run([sys.executable, "-m", "bregsparse", *args], cwd=cwd, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return proc


def _snapshot(path: Path) -> dict:
    if path.is_dir():
        return {p.name: p.read_bytes() for p in sorted(path.iterdir()) if p.suffix != ".meta"}
    return {path.name: path.read_bytes()}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("repro")
    rng = np.random.default_rng(77)
    for i in range(4):
        write_matrix(root / f"atom{i}.mtx", random_spd(3, rng, eps=0.2))
    write_dict_manifest(root / "dict.txt", [root / f"atom{i}.mtx" for i in range(4)])
    write_matrix(root / "target.mtx", random_spd(3, rng, eps=0.2))
    lines = []
    for j in range(4):
        write_vector(root / f"mean{j}.vec", rng.standard_normal(3))
        write_matrix(root / f"cov{j}.mtx", random_spd(3, rng, eps=0.3))
        lines.append(f"{40 + 20 * j} mean{j}.vec cov{j}.mtx")
    (root / "gmm.txt").write_text("\n".join(lines) + "\n")
    write_samples(root / "samples.txt", SampleSet(rng.standard_normal((50, 3)), seed=77))
    return root


def test_11_reproducibility(capsys, workdir):
    commands = {
        "code-cov": (["code-cov", "--dict", "dict.txt", "--target", "target.mtx", "--mu", "0.05",
                      "--out", "out.txt"], "out.txt"),
        "code-prec": (["code-prec", "--dict", "dict.txt", "--target", "target.mtx", "--mu", "0.05",
                       "--out", "out.txt"], "out.txt"),
        "verify-mdi": (["verify-mdi", "--dim", "2", "--n-grid", "50,500", "--trials", "10", "--seed", "42",
                        "--threads", "4", "--out", "out.txt"], "out.txt"),
        "fit-gaussian": (["fit-gaussian", "--samples", "samples.txt", "--out", "out.txt"], "out.txt"),
        "gen-spd": (["gen-spd", "--dim", "3", "--seed", "5", "--out", "out.txt"], "out.txt"),
        "learn-dict --threads 4": (["learn-dict", "--gmm", "gmm.txt", "--atoms", "4", "--mu", "0.5",
                                    "--outer-iters", "4", "--seed", "11", "--threads", "4", "--out-dir", "learned"],
                                   "learned"),
        "learn-dict --threads 1": (["learn-dict", "--gmm", "gmm.txt", "--atoms", "4", "--mu", "0.5",
                                    "--outer-iters", "4", "--seed", "11", "--threads", "1", "--out-dir", "learned"],
                                   "learned"),
    }
    mismatched, snaps = [], {}
    for name, (args, target) in commands.items():
        runs = []
        for _ in range(2):
            _cli(*args, cwd=workdir)
            runs.append(_snapshot(workdir / target))
            shutil.rmtree(workdir / target) if (workdir / target).is_dir() else (workdir / target).unlink()
        if runs[0] != runs[1] or not runs[0]:
            mismatched.append(name)
        snaps[name] = runs[0]
    # thread count is excluded from the config echo, so the outputs must match across thread counts too
    if snaps["learn-dict --threads 4"] != snaps["learn-dict --threads 1"]:
        mismatched.append("learn-dict threads 1 vs 4")
    n_files = sum(len(s) for s in snaps.values())
    verdict(capsys, 11, "byte-identical reruns", not mismatched,
            f"{len(commands)} commands x 2 runs ({n_files} files, .meta excluded), mismatches {mismatched or 'none'}")
