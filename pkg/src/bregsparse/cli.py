"""Command-line interface.

Exit codes: 0 success, 1 usage or input-format error, 2 numerical or
feasibility error. Reports are structured text (see :mod:`bregsparse.report`);
wall-clock times go to a ``<report>.meta`` sidecar so the reports themselves
are byte-reproducible.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cov_coding import CovCodingConfig, CovDictionary, code_covariance
from .divergences import (
    gaussian_kl,
    jeffreys_div,
    logdet_div,
    logdet_div_eigen,
    frobenius_div,
    sym_gaussian_kl_equal_means,
    von_neumann_div,
)
from .fileio import (
    MatrixFormatError,
    read_dict_manifest,
    read_gmm_manifest,
    read_matrix,
    read_samples,
    read_vector,
    write_dict_manifest,
    write_matrix,
    write_vector,
)
from .gaussian import GaussianParams, ml_fit
from .mdi_verify import run_convergence_experiment
from .prec_coding import (
    LearnConfig,
    LearnProblem,
    PrecCodingConfig,
    SymDictionary,
    code_precision,
    learn,
    prec_objective,
)
from .report import FORMAT_VERSION, Table, format_report, write_report
from .spd_core import NoFeasibleStart, NotPositiveDefinite, random_spd, try_spd

log = logging.getLogger("bregsparse")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2

DIV_KINDS = ("frobenius", "neumann", "logdet", "logdet-eigen", "jeffreys", "gkl", "sym-gkl")


class UsageError(Exception):
    pass


class NumericalError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _spd_file(path: str):
    M = read_matrix(path)
    try:
        return try_spd(M)
    except NotPositiveDefinite as exc:
        raise NumericalError(f"{path}: NotPositiveDefinite (pivot {exc.index})") from None


def _config_echo(args) -> dict:
    skip = {"func", "threads"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _emit(args, sections, wall_time: float, out=None) -> None:
    sections = [("run", {"format": FORMAT_VERSION, "version": __version__}),
                ("config", _config_echo(args))] + sections
    out = out or getattr(args, "out", None)
    if out:
        write_report(out, sections)
        Path(str(out) + ".meta").write_text(f"wall_time_s = {wall_time:.6f}\n", encoding="utf-8")
    else:
        sys.stdout.write(format_report(sections))


def cmd_div(args) -> int:
    A, B = _spd_file(args.a), _spd_file(args.b)
    if A.dim != B.dim:
        raise UsageError(f"dimension mismatch: {args.a} is {A.dim}x{A.dim}, {args.b} is {B.dim}x{B.dim}")
    kind = args.kind
    if kind == "gkl":
        mu_a = read_vector(args.mu_a) if args.mu_a else np.zeros(A.dim)
        mu_b = read_vector(args.mu_b) if args.mu_b else np.zeros(A.dim)
        value = gaussian_kl(mu_a, A, mu_b, B)
    else:
        if args.mu_a or args.mu_b:
            raise UsageError("--mu-a/--mu-b are only valid with --kind gkl")
        value = {
            "frobenius": lambda: frobenius_div(A.matrix, B.matrix),
            "neumann": lambda: von_neumann_div(A, B),
            "logdet": lambda: logdet_div(A, B),
            "logdet-eigen": lambda: logdet_div_eigen(A, B),
            "jeffreys": lambda: jeffreys_div(A, B),
            "sym-gkl": lambda: sym_gaussian_kl_equal_means(A, B),
        }[kind]()
    print(format(value, ".12g"))
    return EXIT_OK


def cmd_code_cov(args) -> int:
    t0 = time.perf_counter()
    atoms = [_spd_file(str(p)) for p in read_dict_manifest(args.dict)]
    S = _spd_file(args.target)
    cfg = CovCodingConfig(mu=args.mu, enforce_upper_cone=args.upper_cone, max_iters=args.max_iters)
    try:
        code, rep = code_covariance(S, CovDictionary(tuple(atoms)), cfg)
    except NoFeasibleStart as exc:
        raise NumericalError(f"NoFeasibleStart: {exc}") from None
    sections = [
        ("solver_config", rep.config),
        ("code", {"atoms": len(atoms), "l1": code.l1, "support": list(code.support),
                  "support_size": len(code.support)}),
        ("weights", Table(["index", "weight"], [[i, w] for i, w in enumerate(code.weights)])),
    ] + rep.sections()
    _emit(args, sections, time.perf_counter() - t0)
    return EXIT_OK


def _read_sym_dictionary(path) -> SymDictionary:
    return SymDictionary(tuple(read_matrix(p) for p in read_dict_manifest(path)))


def cmd_code_prec(args) -> int:
    t0 = time.perf_counter()
    dictionary = _read_sym_dictionary(args.dict)
    C = _spd_file(args.target)
    cfg = PrecCodingConfig(mu=args.mu, max_iters=args.max_iters, active_set=not args.no_active_set)
    try:
        code, rep = code_precision(C, dictionary, cfg)
    except NoFeasibleStart as exc:
        raise NumericalError(f"NoFeasibleStart: {exc}") from None
    sections = [
        ("solver_config", rep.config),
        ("code", {"atoms": dictionary.size, "l1": code.l1, "support": list(code.support),
                  "support_size": len(code.support),
                  "objective": prec_objective(code, dictionary, C, args.mu)}),
        ("weights", Table(["index", "weight"], [[i, w] for i, w in enumerate(code.weights)])),
    ] + rep.sections()
    _emit(args, sections, time.perf_counter() - t0)
    return EXIT_OK


def cmd_learn_dict(args) -> int:
    t0 = time.perf_counter()
    covs, counts = [], []
    for n, mean_path, cov_path in read_gmm_manifest(args.gmm):
        read_vector(mean_path)
        try:
            covs.append(try_spd(read_matrix(cov_path)))
        except NotPositiveDefinite:
            raise NumericalError(
                f"{cov_path}: covariance is not positive definite; add a ridge eps*I before learning"
            ) from None
        counts.append(n)
    problem = LearnProblem(tuple(covs), tuple(counts))
    cfg = LearnConfig(mu=args.mu, outer_iters=args.outer_iters, dict_step=args.dict_step,
                      weight_penalty=args.weight_penalty)
    try:
        dictionary, codes, rep = learn(problem, seed=args.seed, cfg=cfg, size=args.atoms,
                                       threads=args.threads)
    except NoFeasibleStart as exc:
        raise NumericalError(f"NoFeasibleStart: {exc}") from None

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atom_paths = []
    for k, atom in enumerate(dictionary.atoms):
        p = out / f"atom_{k:03d}.mtx"
        write_matrix(p, atom)
        atom_paths.append(p)
    write_dict_manifest(out / "dictionary.txt", atom_paths)
    echo = _config_echo(args)
    for j, code in enumerate(codes):
        write_report(out / f"code_{j:03d}.txt", [
            ("run", {"format": FORMAT_VERSION, "version": __version__}),
            ("config", echo),
            ("code", {"component": j, "count": problem.counts[j], "l1": code.l1,
                      "support": list(code.support), "support_size": len(code.support)}),
            ("weights", Table(["index", "weight"], [[i, w] for i, w in enumerate(code.weights)])),
        ])
    _emit(args, [("learn", {"components": len(problem), "atoms": dictionary.size})] + rep.sections(),
          time.perf_counter() - t0, out=out / "learn_report.txt")
    return EXIT_OK


def cmd_verify_mdi(args) -> int:
    t0 = time.perf_counter()
    try:
        n_grid = [int(v) for v in args.n_grid.split(",")]
    except ValueError:
        raise UsageError(f"--n-grid: expected comma-separated integers, got {args.n_grid!r}") from None
    if args.truth:
        comps = read_gmm_manifest(args.truth)
        if not 0 <= args.component < len(comps):
            raise UsageError(f"--component {args.component} out of range (manifest has {len(comps)})")
        _, mean_path, cov_path = comps[args.component]
        truth = GaussianParams.from_moments(read_vector(mean_path), _spd_file(str(cov_path)))
    else:
        truth = GaussianParams.from_moments(np.zeros(args.dim), np.eye(args.dim))
    if any(n <= truth.dim for n in n_grid):
        raise UsageError("every grid size must exceed the dimension")
    rep = run_convergence_experiment(truth, n_grid, args.trials, args.seed, threads=args.threads)
    _emit(args, rep.sections(truth), time.perf_counter() - t0)
    return EXIT_OK


def cmd_fit_gaussian(args) -> int:
    t0 = time.perf_counter()
    xs = read_samples(args.samples)
    try:
        g = ml_fit(xs, bessel=args.bessel)
    except NotPositiveDefinite:
        raise NumericalError(f"{args.samples}: sample covariance is singular (n={xs.n}, d={xs.dim})") from None
    if args.out_mean:
        write_vector(args.out_mean, g.mean)
    if args.out_cov:
        write_matrix(args.out_cov, g.covariance.matrix)
    sections = [
        ("fit", {"n": xs.n, "dim": xs.dim, "sample_seed": xs.seed, "logdet_cov": g.logdet_cov}),
        ("mean", Table(["index", "value"], [[i, v] for i, v in enumerate(g.mean)])),
        ("covariance", Table([f"c{j}" for j in range(g.dim)], g.covariance.matrix.tolist())),
    ]
    _emit(args, sections, time.perf_counter() - t0)
    return EXIT_OK


def cmd_gen_spd(args) -> int:
    rng = np.random.Generator(np.random.Philox(args.seed))
    out = Path(args.out)
    if args.count == 1:
        write_matrix(out, random_spd(args.dim, rng, args.eps))
        return EXIT_OK
    for i in range(args.count):
        write_matrix(out.with_name(f"{out.stem}_{i:03d}{out.suffix}"), random_spd(args.dim, rng, args.eps))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bregsparse", description="LogDet sparse coding of covariance and precision matrices")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("div", help="divergence between two SPD matrix files")
    s.add_argument("--kind", required=True, choices=DIV_KINDS)
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--mu-a")
    s.add_argument("--mu-b")
    s.set_defaults(func=cmd_div)

    s = sub.add_parser("code-cov", help="nonnegative sparse code of a covariance descriptor")
    s.add_argument("--dict", required=True, help="dictionary manifest")
    s.add_argument("--target", required=True)
    s.add_argument("--mu", type=float, required=True)
    s.add_argument("--upper-cone", action="store_true")
    s.add_argument("--max-iters", type=int, default=5000)
    s.add_argument("--out")
    s.set_defaults(func=cmd_code_cov)

    s = sub.add_parser("code-prec", help="sparse code of a precision matrix")
    s.add_argument("--dict", required=True, help="dictionary manifest")
    s.add_argument("--target", required=True, help="covariance matrix file")
    s.add_argument("--mu", type=float, required=True)
    s.add_argument("--max-iters", type=int, default=10000)
    s.add_argument("--no-active-set", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_code_prec)

    s = sub.add_parser("learn-dict", help="learn a precision dictionary from a GMM")
    s.add_argument("--gmm", required=True, help="GMM manifest")
    s.add_argument("--atoms", type=int, required=True)
    s.add_argument("--mu", type=float, required=True)
    s.add_argument("--outer-iters", type=int, default=20)
    s.add_argument("--dict-step", type=float, default=1e-2)
    s.add_argument("--weight-penalty", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_learn_dict)

    s = sub.add_parser("verify-mdi", help="ML vs KL convergence experiment")
    s.add_argument("--dim", type=int, default=2)
    s.add_argument("--n-grid", default="100,1000,10000")
    s.add_argument("--trials", type=int, default=50)
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--truth", help="GMM manifest; its --component is the true distribution")
    s.add_argument("--component", type=int, default=0)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--out")
    s.set_defaults(func=cmd_verify_mdi)

    s = sub.add_parser("fit-gaussian", help="ML Gaussian fit of a sample-set file")
    s.add_argument("--samples", required=True)
    s.add_argument("--bessel", action="store_true", help="use 1/(n-1) instead of 1/n")
    s.add_argument("--out-mean")
    s.add_argument("--out-cov")
    s.add_argument("--out")
    s.set_defaults(func=cmd_fit_gaussian)

    s = sub.add_parser("gen-spd", help="write random SPD test matrices G G^T + eps I")
    s.add_argument("--dim", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--eps", type=float, default=1e-3)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_spd)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    if getattr(args, "threads", 1) < 1:
        print("bregsparse: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, MatrixFormatError, OSError) as exc:
        print(f"bregsparse: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, NotPositiveDefinite, NoFeasibleStart) as exc:
        print(f"bregsparse: error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
