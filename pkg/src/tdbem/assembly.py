from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import numpy.typing as npt

from tdbem.constants import TERM_CACHE_SIZE
from tdbem.datum import NeumannDatum
from tdbem.exceptions import BlockIndexError, StaleProvenanceError
from tdbem.kernel import HYPERSINGULAR
from tdbem.mesh import SpatialMesh, SpatialProvenance, TimeMesh, TimeProvenance
from tdbem.quadrature import (
    QuadratureConfig,
    finite_part_inner,
    integrate_lightcone,
    outer_rule_far,
    outer_rule_near,
)
from tdbem.utils import SizeLimitOrderedDict, map_indexed

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
BlockKey = Tuple[int, int]

COINCIDENT, TOUCHING, FAR = "coincident", "touching", "far"


@dataclass
class ReuseStats:
    recomputed: int = 0
    reused: int = 0


@dataclass(eq=False)
class BlockSystem:
    """
    Block lower-triangular Galerkin system E alpha = beta.

    ``blocks`` holds E_{it,i} for i <= it; on uniform time meshes the blocks
    of one diagonal share a single array. Blocks are never modified in
    place, updates build new arrays.
    """

    space: SpatialMesh
    time: TimeMesh
    datum: NeumannDatum
    blocks: Dict[BlockKey, FloatArray]
    rhs: FloatArray
    toeplitz: bool
    row_epoch: npt.NDArray[np.int64]
    col_epoch: npt.NDArray[np.int64]
    space_epoch: int = 0
    stats: ReuseStats = field(default_factory=ReuseStats)

    @property
    def n_intervals(self) -> int:
        return self.time.n_intervals

    @property
    def n_dofs(self) -> int:
        return self.space.n_dofs

    def block(self, it: int, i: int) -> FloatArray:
        if not (0 <= it < self.n_intervals and 0 <= i < self.n_intervals):
            raise BlockIndexError(f"block ({it}, {i}) outside {self.n_intervals} rows")
        if it < i:
            return np.zeros((self.n_dofs, self.n_dofs))
        return self.blocks[(it, i)]

    def dense(self) -> FloatArray:
        m, n_t = self.n_dofs, self.n_intervals
        matrix = np.zeros((m * n_t, m * n_t))
        for (it, i), block in self.blocks.items():
            matrix[it * m : (it + 1) * m, i * m : (i + 1) * m] = block
        return matrix


@dataclass(frozen=True, eq=False)
class Solution:
    """Coefficients alpha[i, j] of the ramp nu_i times the hat phi_j."""

    coefficients: FloatArray
    space: SpatialMesh
    time: TimeMesh

    def __post_init__(self):
        expected = (self.time.n_intervals, self.space.n_dofs)
        if self.coefficients.shape != expected:
            raise ValueError(
                f"coefficients of shape {self.coefficients.shape}, expected {expected}"
            )

    def scaled(self, factor: float) -> Solution:
        return Solution(factor * self.coefficients, self.space, self.time)


def _lag_key(lag: float) -> float:
    # lags equal to 13 significant digits share one term integral
    return float(f"{lag:.12e}")


def _point_segment_distance(p, q0, q1) -> float:
    d = q1 - q0
    s = np.clip((p - q0) @ d / (d @ d), 0.0, 1.0)
    return float(np.hypot(*(p - q0 - s * d)))


def _segment_distance(p0, p1, q0, q1) -> float:
    return min(
        _point_segment_distance(p0, q0, q1),
        _point_segment_distance(p1, q0, q1),
        _point_segment_distance(q0, p0, p1),
        _point_segment_distance(q1, p0, p1),
    )


def time_terms(time: TimeMesh, it: int, i: int) -> List[Tuple[float, float]]:
    """
    Signed lags of the four time-integration terms of block (it, i), keeping
    only those with a positive lag.

    The sign is -(-1)^(gamma + delta): the system realizes the pairing of the
    residual operator with phi_j d/dt nu_it, which makes the diagonal blocks
    positive definite.
    """
    knots = time.knots
    terms = []
    for gamma in (0, 1):
        for delta in (0, 1):
            lag = float(knots[it + gamma] - knots[i + delta])
            if lag > 0.0:
                terms.append((-((-1.0) ** (gamma + delta)), lag))
    return terms


class Assembler:
    """
    Galerkin blocks and right-hand sides of the hypersingular space-time
    system, with a bounded cache of element-pair term integrals shared by
    all blocks and refinement levels.
    """

    def __init__(
        self,
        cfg: QuadratureConfig | None = None,
        threads: int | None = 1,
        cache_size: int = TERM_CACHE_SIZE,
    ) -> None:
        self.cfg = cfg or QuadratureConfig()
        self.threads = threads
        self._terms: SizeLimitOrderedDict = SizeLimitOrderedDict(max_size=cache_size)

    @property
    def cached_terms(self) -> int:
        return len(self._terms)

    @staticmethod
    def relation(space: SpatialMesh, ex: int, ey: int) -> str:
        if ex == ey:
            return COINCIDENT
        if set(space.elements[ex]) & set(space.elements[ey]):
            return TOUCHING
        return FAR

    def term(self, space: SpatialMesh, ex: int, ey: int, lag: float) -> FloatArray:
        """
        Integral of N_a(x) G(x, y, lag) N_b(y) over Gamma_ex x Gamma_ey, with
        G the assembly kernel bracket (no 1/(2 pi dt dt) prefactor).

        :returns: 2x2 array indexed by the local nodes (a, b)
        """
        if lag <= 0.0:
            return np.zeros((2, 2))
        p0, p1 = space.endpoints(ex)
        q0, q1 = space.endpoints(ey)
        relation = self.relation(space, ex, ey)
        lag = _lag_key(lag)
        key = (
            np.concatenate([p0, p1, q0, q1, space.normals[ex], space.normals[ey]])
            .round(15)
            .tobytes(),
            relation,
            lag,
        )
        return self._terms.get_or_compute(
            key, lambda: self._compute_term(space, ex, ey, relation, lag)
        )

    def _compute_term(
        self, space: SpatialMesh, ex: int, ey: int, relation: str, lag: float
    ) -> FloatArray:
        cfg = self.cfg
        p0, p1 = space.endpoints(ex)
        q0, q1 = space.endpoints(ey)
        if relation == FAR and _segment_distance(p0, p1, q0, q1) >= lag:
            return np.zeros((2, 2))

        length = space.lengths[ex]
        if relation == FAR:
            s, w = outer_rule_far(p0, p1, q0, q1, lag, cfg.outer_order)
        else:
            s, w = outer_rule_near(
                length, lag, cfg.outer_order, cfg.outer_grading_levels
            )

        if relation == COINCIDENT:
            inner = finite_part_inner(p0, p1, s, lag, HYPERSINGULAR, cfg)
        else:
            points = p0 + np.outer(s, p1 - p0)
            inner = integrate_lightcone(
                q0,
                q1,
                space.normals[ey],
                points,
                space.normals[ex],
                lag,
                HYPERSINGULAR,
                cfg,
                graded=True if relation == TOUCHING else None,
            )
        outer = length * np.stack([(1.0 - s) * w, s * w])
        return outer @ inner

    def block(
        self,
        it: int,
        i: int,
        space: SpatialMesh,
        time: TimeMesh,
        rows: Optional[npt.NDArray[np.bool_]] = None,
        cols: Optional[npt.NDArray[np.bool_]] = None,
    ) -> FloatArray:
        """
        Block E_{it,i}. With ``rows``/``cols`` masks only the entries in a
        selected row or column are computed, the others are left at 0.
        """
        dt = time.steps
        prefactor = 1.0 / (2.0 * math.pi * dt[it] * dt[i])
        terms = time_terms(time, it, i)
        m = space.n_dofs
        matrix = np.zeros((m, m))
        if not terms:
            return matrix
        select_all = rows is None and cols is None
        rows = np.zeros(m, dtype=bool) if rows is None else rows
        cols = np.zeros(m, dtype=bool) if cols is None else cols

        dofs = space.element_dofs
        for ex in range(space.n_elements):
            for ey in range(space.n_elements):
                targets = [
                    (a, b, dofs[ex, a], dofs[ey, b])
                    for a in (0, 1)
                    for b in (0, 1)
                    if dofs[ex, a] >= 0
                    and dofs[ey, b] >= 0
                    and (select_all or rows[dofs[ex, a]] or cols[dofs[ey, b]])
                ]
                if not targets:
                    continue
                local = np.zeros((2, 2))
                for sign, lag in terms:
                    local += sign * self.term(space, ex, ey, lag)
                for a, b, row, col in targets:
                    matrix[row, col] += prefactor * local[a, b]
        return matrix

    def assemble_block(
        self,
        it: int,
        i: int,
        space: SpatialMesh,
        time: TimeMesh,
        allow_upper: bool = False,
    ) -> FloatArray:
        """
        This function raises a BlockIndexError when the indices are out of
        range or, unless ``allow_upper``, when it < i.
        """
        n_t = time.n_intervals
        if not (0 <= it < n_t and 0 <= i < n_t):
            raise BlockIndexError(f"block ({it}, {i}) outside {n_t} time intervals")
        if it < i and not allow_upper:
            raise BlockIndexError(f"block ({it}, {i}) lies above the diagonal")
        return self.block(it, i, space, time)

    def assemble_rhs(
        self, space: SpatialMesh, time: TimeMesh, datum: NeumannDatum
    ) -> FloatArray:
        moments = datum.spatial_moments(space, self.cfg.inner_order)
        averages = np.array(
            [
                datum.time_average(time.knots[it], time.knots[it + 1])
                for it in range(time.n_intervals)
            ]
        )
        return np.outer(averages, moments)

    def assemble_system(
        self, space: SpatialMesh, time: TimeMesh, datum: NeumannDatum
    ) -> BlockSystem:
        n_t = time.n_intervals
        toeplitz = time.is_uniform()
        if toeplitz:
            keys = [(lag, 0) for lag in range(n_t)]
        else:
            keys = [(it, i) for it in range(n_t) for i in range(it + 1)]
        computed = map_indexed(
            lambda key: self.block(key[0], key[1], space, time), keys, self.threads
        )
        if toeplitz:
            blocks = {
                (it, i): computed[it - i] for it in range(n_t) for i in range(it + 1)
            }
        else:
            blocks = dict(zip(keys, computed))

        logger.debug(
            f"Assembled {len(keys)} distinct blocks of size {space.n_dofs} "
            f"(toeplitz={toeplitz})"
        )
        return BlockSystem(
            space=space,
            time=time,
            datum=datum,
            blocks=blocks,
            rhs=self.assemble_rhs(space, time, datum),
            toeplitz=toeplitz,
            row_epoch=np.zeros(n_t, dtype=int),
            col_epoch=np.zeros(n_t, dtype=int),
            stats=ReuseStats(recomputed=len(keys) * space.n_dofs**2),
        )

    def update_after_space_refinement(
        self, system: BlockSystem, provenance: SpatialProvenance, space: SpatialMesh
    ) -> BlockSystem:
        """
        System on the bisected spatial mesh: entries between unchanged DoFs
        are copied, rows and columns of new or modified DoFs recomputed.

        This function raises a StaleProvenanceError when the provenance does
        not connect the system's mesh to ``space``.
        """
        if provenance.n_old_dofs != system.n_dofs or len(provenance.status) != (
            space.n_dofs
        ):
            raise StaleProvenanceError(
                f"provenance maps {provenance.n_old_dofs} -> {len(provenance.status)} "
                f"DoFs, system has {system.n_dofs} and mesh {space.n_dofs}"
            )
        if provenance.is_identity:
            return system

        time = system.time
        old_idx, new_idx = provenance.unchanged_pairs()
        changed = np.zeros(space.n_dofs, dtype=bool)
        changed[provenance.changed_dofs] = True
        kept_old, kept_new = np.ix_(old_idx, old_idx), np.ix_(new_idx, new_idx)

        def refresh(key: BlockKey) -> FloatArray:
            fresh = self.block(key[0], key[1], space, time, rows=changed, cols=changed)
            fresh[kept_new] = system.block(*key)[kept_old]
            return fresh

        if system.toeplitz:
            keys = [(lag, 0) for lag in range(system.n_intervals)]
        else:
            keys = list(system.blocks)
        refreshed = dict(zip(keys, map_indexed(refresh, keys, self.threads)))
        if system.toeplitz:
            blocks = {key: refreshed[(key[0] - key[1], 0)] for key in system.blocks}
        else:
            blocks = refreshed

        n_changed = int(changed.sum())
        recomputed = len(keys) * (space.n_dofs**2 - (space.n_dofs - n_changed) ** 2)
        logger.debug(
            f"Space update: {n_changed} of {space.n_dofs} DoFs recomputed "
            f"in {len(keys)} blocks"
        )
        return BlockSystem(
            space=space,
            time=time,
            datum=system.datum,
            blocks=blocks,
            rhs=self.assemble_rhs(space, time, system.datum),
            toeplitz=system.toeplitz,
            row_epoch=system.row_epoch + 1,
            col_epoch=system.col_epoch + 1,
            space_epoch=system.space_epoch + 1,
            stats=ReuseStats(
                recomputed=recomputed,
                reused=len(keys) * len(new_idx) ** 2,
            ),
        )

    def update_after_time_refinement(
        self, system: BlockSystem, provenance: TimeProvenance, time: TimeMesh
    ) -> BlockSystem:
        """
        System on the bisected time mesh: blocks between unsplit intervals
        are reused, the block rows and columns of split intervals computed.
        The result never has Toeplitz structure.

        This function raises a StaleProvenanceError when the provenance does
        not connect the system's mesh to ``time``.
        """
        if len(provenance.interval_children) != system.n_intervals or len(
            provenance.status
        ) != (time.n_intervals):
            raise StaleProvenanceError(
                f"provenance maps {len(provenance.interval_children)} -> "
                f"{len(provenance.status)} intervals, system has "
                f"{system.n_intervals} and mesh {time.n_intervals}"
            )
        if provenance.is_identity:
            return system

        space = system.space
        new_to_old = np.full(time.n_intervals, -1)
        unsplit = np.flatnonzero(provenance.old_to_new >= 0)
        new_to_old[provenance.old_to_new[unsplit]] = unsplit

        blocks: Dict[BlockKey, FloatArray] = dict()
        missing = []
        for it in range(time.n_intervals):
            for i in range(it + 1):
                old_it, old_i = new_to_old[it], new_to_old[i]
                if old_it >= 0 and old_i >= 0:
                    blocks[(it, i)] = system.block(old_it, old_i)
                else:
                    missing.append((it, i))
        computed = map_indexed(
            lambda key: self.block(key[0], key[1], space, time), missing, self.threads
        )
        blocks.update(zip(missing, computed))

        rhs = np.empty((time.n_intervals, space.n_dofs))
        moments = None
        for it in range(time.n_intervals):
            if new_to_old[it] >= 0:
                rhs[it] = system.rhs[new_to_old[it]]
                continue
            if moments is None:
                moments = system.datum.spatial_moments(space, self.cfg.inner_order)
            rhs[it] = moments * system.datum.time_average(
                time.knots[it], time.knots[it + 1]
            )

        epoch = np.zeros(time.n_intervals, dtype=int)
        epoch[new_to_old >= 0] = system.row_epoch[new_to_old[new_to_old >= 0]]
        epoch[new_to_old < 0] = system.row_epoch.max() + 1
        logger.debug(
            f"Time update: {len(missing)} of {len(blocks)} blocks computed, "
            f"{len(blocks) - len(missing)} reused"
        )
        return BlockSystem(
            space=space,
            time=time,
            datum=system.datum,
            blocks=blocks,
            rhs=rhs,
            toeplitz=False,
            row_epoch=epoch,
            col_epoch=epoch.copy(),
            space_epoch=system.space_epoch,
            stats=ReuseStats(
                recomputed=len(missing) * space.n_dofs**2,
                reused=(len(blocks) - len(missing)) * space.n_dofs**2,
            ),
        )


def assemble_block(
    it: int,
    i: int,
    space: SpatialMesh,
    time: TimeMesh,
    cfg: QuadratureConfig | None = None,
) -> FloatArray:
    return Assembler(cfg).assemble_block(it, i, space, time)


def assemble_system(
    space: SpatialMesh,
    time: TimeMesh,
    datum: NeumannDatum,
    cfg: QuadratureConfig | None = None,
    threads: int | None = 1,
) -> BlockSystem:
    return Assembler(cfg, threads).assemble_system(space, time, datum)


def update_after_space_refinement(
    system: BlockSystem,
    provenance: SpatialProvenance,
    space: SpatialMesh,
    cfg: QuadratureConfig | None = None,
) -> BlockSystem:
    return Assembler(cfg).update_after_space_refinement(system, provenance, space)


def update_after_time_refinement(
    system: BlockSystem,
    provenance: TimeProvenance,
    time: TimeMesh,
    cfg: QuadratureConfig | None = None,
) -> BlockSystem:
    return Assembler(cfg).update_after_time_refinement(system, provenance, time)
