from __future__ import annotations

import logging
from typing import Dict, Hashable, Tuple

import numpy as np
import numpy.typing as npt
from scipy.linalg import lu_factor, lu_solve

from tdbem.assembly import BlockSystem, Solution
from tdbem.constants import RCOND_THRESHOLD
from tdbem.exceptions import SingularBlockError

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
Factorization = Tuple[FloatArray, npt.NDArray[np.int32]]


def _factorize(block: FloatArray, index: int) -> Factorization:
    with np.errstate(divide="ignore"):
        rcond = 1.0 / np.linalg.cond(block, 1)
    if not np.isfinite(rcond) or rcond < RCOND_THRESHOLD:
        raise SingularBlockError(
            f"diagonal block {index} is singular to working precision "
            f"(rcond={rcond:.3e})",
            block_index=index,
        )
    return lu_factor(block, check_finite=False)


def block_forward_solve(system: BlockSystem, use_toeplitz: bool = True) -> Solution:
    """
    Solve E alpha = beta one block row at a time.

    Diagonal factorizations are cached by block identity: a single one on
    Toeplitz systems, one per row and refinement epoch otherwise. With
    ``use_toeplitz=False`` the generic path is taken on every system.

    This function raises a SingularBlockError carrying the row index when a
    diagonal block is singular to working precision.
    """
    n_t, m = system.n_intervals, system.n_dofs
    alpha = np.zeros((n_t, m))
    factorizations: Dict[Hashable, Factorization] = dict()
    toeplitz = system.toeplitz and use_toeplitz

    for it in range(n_t):
        rhs = system.rhs[it].copy()
        for i in range(it):
            rhs -= system.block(it, i) @ alpha[i]
        key = 0 if toeplitz else (it, int(system.row_epoch[it]))
        if key not in factorizations:
            factorizations[key] = _factorize(system.block(it, it), it)
        alpha[it] = lu_solve(factorizations[key], rhs, check_finite=False)

    logger.debug(
        f"Forward substitution over {n_t} block rows used "
        f"{len(factorizations)} factorizations"
    )
    return Solution(alpha, system.space, system.time)


def discrete_energy(system: BlockSystem, solution: Solution) -> float:
    return float(np.dot(solution.coefficients.ravel(), system.rhs.ravel()))


def squared_energy_error(energy: float, reference: float) -> float:
    return abs(reference - energy)


def block_residual(system: BlockSystem, solution: Solution) -> float:
    """Largest block-row residual of E alpha = beta relative to the norm of beta."""
    alpha = solution.coefficients
    worst = 0.0
    for it in range(system.n_intervals):
        row = sum(system.block(it, i) @ alpha[i] for i in range(it + 1))
        worst = max(worst, float(np.linalg.norm(row - system.rhs[it])))
    scale = float(np.linalg.norm(system.rhs))
    return worst / scale if scale > 0.0 else worst
