"""Flat text formats for matrices, vectors, sample sets and manifests.

Matrix file::

    d
    a11 a12 ... a1d
    ...
    ad1 ad2 ... add

Vector file: ``d`` on the first line, the ``d`` values on the second.

Sample set: ``n d seed`` then ``n`` rows of ``d`` values.

Dictionary manifest: one matrix path per line. GMM manifest: one component
per line as ``n_j mean_path covariance_path``. Relative paths resolve against
the manifest's directory; blank lines and ``#`` comments are ignored.
"""
from __future__ import annotations

import os
import warnings
from pathlib import Path

import numpy as np

from .gaussian import SampleSet
from .spd_core import symmetrize

__all__ = [
    "MatrixFormatError",
    "AsymmetricInputWarning",
    "fmt_float",
    "read_matrix",
    "write_matrix",
    "read_vector",
    "write_vector",
    "read_samples",
    "write_samples",
    "read_dict_manifest",
    "write_dict_manifest",
    "read_gmm_manifest",
]


class MatrixFormatError(ValueError):
    pass


class AsymmetricInputWarning(UserWarning):
    pass


def fmt_float(x: float) -> str:
    return format(float(x), ".17g")


def _lines(path) -> list[tuple[int, list[str]]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                out.append((lineno, line.split()))
    return out


def _floats(fields, path, lineno) -> list[float]:
    try:
        return [float(v) for v in fields]
    except ValueError:
        raise MatrixFormatError(f"{path}: line {lineno}: non-numeric value") from None


def read_matrix(path, warn_asymmetric: bool = True) -> np.ndarray:
    """Read a matrix file and return its symmetrization.

    Raises
    ------
    MatrixFormatError
        On a malformed header or a row of the wrong length (line numbers are
        1-based file lines).
    """
    lines = _lines(path)
    if not lines:
        raise MatrixFormatError(f"{path}: empty file")
    lineno, head = lines[0]
    if len(head) != 1 or not head[0].isdigit() or int(head[0]) < 1:
        raise MatrixFormatError(f"{path}: line {lineno}: expected a positive dimension header")
    d = int(head[0])
    rows = lines[1:]
    for lineno, fields in rows[:d]:
        if len(fields) != d:
            raise MatrixFormatError(f"{path}: line {lineno}: expected {d} columns, found {len(fields)}")
    if len(rows) != d:
        raise MatrixFormatError(f"{path}: expected {d} rows, found {len(rows)}")
    M = np.array([_floats(f, path, n) for n, f in rows], dtype=float)
    if warn_asymmetric and not np.array_equal(M, M.T):
        warnings.warn(f"{path}: asymmetric input was symmetrized", AsymmetricInputWarning, stacklevel=2)
    return symmetrize(M)


def write_matrix(path, M) -> None:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("write_matrix expects a square matrix")
    text = [str(M.shape[0])] + [" ".join(fmt_float(v) for v in row) for row in M]
    Path(path).write_text("\n".join(text) + "\n", encoding="utf-8")


def read_vector(path) -> np.ndarray:
    lines = _lines(path)
    if not lines or len(lines[0][1]) != 1 or not lines[0][1][0].isdigit():
        raise MatrixFormatError(f"{path}: expected a dimension header")
    d = int(lines[0][1][0])
    values = [v for n, f in lines[1:] for v in _floats(f, path, n)]
    if len(values) != d:
        raise MatrixFormatError(f"{path}: expected {d} values, found {len(values)}")
    return np.array(values)


def write_vector(path, v) -> None:
    v = np.asarray(v, dtype=float).reshape(-1)
    Path(path).write_text(f"{v.size}\n" + " ".join(fmt_float(x) for x in v) + "\n", encoding="utf-8")


def read_samples(path) -> SampleSet:
    lines = _lines(path)
    if not lines or len(lines[0][1]) != 3:
        raise MatrixFormatError(f"{path}: line 1: expected 'n d seed'")
    lineno, (n, d, seed) = lines[0]
    try:
        n, d, seed = int(n), int(d), int(seed)
    except ValueError:
        raise MatrixFormatError(f"{path}: line {lineno}: expected integers 'n d seed'") from None
    rows = lines[1:]
    if len(rows) != n:
        raise MatrixFormatError(f"{path}: expected {n} rows, found {len(rows)}")
    for lineno, fields in rows:
        if len(fields) != d:
            raise MatrixFormatError(f"{path}: line {lineno}: expected {d} columns, found {len(fields)}")
    return SampleSet(np.array([_floats(f, path, k) for k, f in rows]), seed=seed)


def write_samples(path, xs: SampleSet) -> None:
    seed = 0 if xs.seed is None else xs.seed
    text = [f"{xs.n} {xs.dim} {seed}"] + [" ".join(fmt_float(v) for v in row) for row in xs.rows]
    Path(path).write_text("\n".join(text) + "\n", encoding="utf-8")


def _resolve(base: Path, entry: str) -> Path:
    p = Path(entry)
    return p if p.is_absolute() else base / p


def read_dict_manifest(path) -> list[Path]:
    base = Path(path).parent
    out = []
    for lineno, fields in _lines(path):
        if len(fields) != 1:
            raise MatrixFormatError(f"{path}: line {lineno}: expected one path per line")
        out.append(_resolve(base, fields[0]))
    if not out:
        raise MatrixFormatError(f"{path}: manifest lists no atoms")
    return out


def write_dict_manifest(path, entries) -> None:
    base = Path(path).parent
    rel = [os.path.relpath(e, base) for e in entries]
    Path(path).write_text("\n".join(rel) + "\n", encoding="utf-8")


def read_gmm_manifest(path) -> list[tuple[float, Path, Path]]:
    """Return ``(n_j, mean_path, covariance_path)`` per component."""
    base = Path(path).parent
    out = []
    for lineno, fields in _lines(path):
        if len(fields) != 3:
            raise MatrixFormatError(f"{path}: line {lineno}: expected 'n_j mean_path covariance_path'")
        try:
            n = float(fields[0])
        except ValueError:
            raise MatrixFormatError(f"{path}: line {lineno}: bad count {fields[0]!r}") from None
        out.append((n, _resolve(base, fields[1]), _resolve(base, fields[2])))
    if not out:
        raise MatrixFormatError(f"{path}: manifest lists no components")
    return out
