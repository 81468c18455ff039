"""Bregman matrix divergences and LogDet sparse coding of SPD matrices."""

__version__ = "0.1.0"

from .spd_core import (  # noqa: E402
    NoFeasibleStart,
    NotPositiveDefinite,
    ReconstructionNotPd,
    SpdMatrix,
    eigh,
    matrix_log,
    spd_inverse,
    symmetrize,
    trace_product,
    try_spd,
)
from .divergences import (  # noqa: E402
    DivergenceKind,
    gaussian_kl,
    jeffreys_div,
    logdet_div,
    logdet_div_eigen,
    sym_gaussian_kl_equal_means,
    von_neumann_div,
)

__all__ = [
    "__version__",
    "NoFeasibleStart",
    "NotPositiveDefinite",
    "ReconstructionNotPd",
    "SpdMatrix",
    "eigh",
    "matrix_log",
    "spd_inverse",
    "symmetrize",
    "trace_product",
    "try_spd",
    "DivergenceKind",
    "gaussian_kl",
    "jeffreys_div",
    "logdet_div",
    "logdet_div_eigen",
    "sym_gaussian_kl_equal_means",
    "von_neumann_div",
]
