# ===========================================
# SET-LSTM - Topology
# Erdos-Renyi initialization, evolutionary rewiring, topology analytics
# ===========================================

import logging
import math
from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import numpy as np

from .errors import ConfigError, ShapeMismatchError
from .sparse import ConnectionSet, SparseMatrix

logger = logging.getLogger(__name__)

__all__ = [
    "ConnectionSet",
    "RewireReport",
    "SparsityHyper",
    "DegreeStats",
    "er_connection_count",
    "er_init",
    "init_values",
    "rewire",
    "similarity",
    "similarity_matrix",
    "chance_similarity",
    "degree_stats",
]

# Guards floor(zeta * n) against products such as 0.29 * 100 = 28.999...
_FLOOR_SLACK = 1e-9


@dataclass(frozen=True)
class SparsityHyper:
    """Sparsity level epsilon and rewire rate zeta"""

    epsilon: float
    zeta: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive", field="epsilon")
        if not 0.0 <= self.zeta <= 1.0:
            raise ConfigError("zeta must lie in [0, 1]", field="zeta")


@dataclass(frozen=True)
class RewireReport:
    """What one rewiring step removed from and added to a layer"""

    layer: str
    shape: Tuple[int, int]
    removed_positive: ConnectionSet
    removed_negative: ConnectionSet
    removed_zero: ConnectionSet
    added: ConnectionSet
    nnz_before: int
    nnz_after: int

    @property
    def n_removed(self) -> int:
        return (
            len(self.removed_positive)
            + len(self.removed_negative)
            + len(self.removed_zero)
        )

    def removed_keys(self) -> np.ndarray:
        return np.sort(
            np.concatenate(
                [
                    self.removed_positive.keys,
                    self.removed_negative.keys,
                    self.removed_zero.keys,
                ]
            )
        )

    def is_empty(self) -> bool:
        return self.n_removed == 0 and len(self.added) == 0

    def summary(self) -> Dict[str, int]:
        return {
            "removed_positive": len(self.removed_positive),
            "removed_negative": len(self.removed_negative),
            "removed_zero": len(self.removed_zero),
            "added": len(self.added),
            "nnz_before": self.nnz_before,
            "nnz_after": self.nnz_after,
        }


# ===========================================
# Initialization
# ===========================================


def er_connection_count(n_in: int, n_out: int, epsilon: float) -> int:
    """n_W = round(epsilon * (n_in + n_out)), clamped to the dense count"""
    n_w = int(math.floor(epsilon * (n_in + n_out) + 0.5))
    return min(n_w, n_in * n_out)


def er_init(
    n_in: int, n_out: int, epsilon: float, rng: np.random.Generator
) -> ConnectionSet:
    """
    Draw an Erdos-Renyi sparse topology with an exact connection count.

    Args:
        n_in: rows of the weight matrix
        n_out: columns of the weight matrix
        epsilon: sparsity level, larger means denser
        rng: seeded generator

    Returns:
        ConnectionSet with exactly er_connection_count(n_in, n_out, epsilon)
        distinct positions, drawn uniformly without replacement
    """
    if n_in < 1 or n_out < 1:
        raise ShapeMismatchError(
            "layer needs positive dimensions", actual=[n_in, n_out]
        )
    SparsityHyper(epsilon=epsilon, zeta=0.0)
    n_w = er_connection_count(n_in, n_out, epsilon)
    size = n_in * n_out
    if n_w == size:
        return ConnectionSet.full(n_in, n_out)
    keys = np.sort(rng.choice(size, size=n_w, replace=False).astype(np.int64))
    return ConnectionSet(n_in, n_out, keys)


def glorot_limit(n_in: int, n_out: int) -> float:
    return math.sqrt(6.0 / (n_in + n_out))


def _uniform_nonzero(n: int, limit: float, rng: np.random.Generator) -> np.ndarray:
    values = rng.uniform(-limit, limit, size=n)
    zero = values == 0.0
    while zero.any():
        values[zero] = rng.uniform(-limit, limit, size=int(zero.sum()))
        zero = values == 0.0
    return values


def init_values(mask: ConnectionSet, rng: np.random.Generator) -> SparseMatrix:
    """Uniform values on [-L, L], L = sqrt(6 / (n_in + n_out)), never exactly 0"""
    limit = glorot_limit(mask.n_rows, mask.n_cols)
    return SparseMatrix.from_mask(mask, _uniform_nonzero(len(mask), limit, rng))


# ===========================================
# Rewiring
# ===========================================


def _sample_free(
    occupied: np.ndarray, size: int, n: int, rng: np.random.Generator
) -> np.ndarray:
    """
    Draw n distinct keys uniformly from [0, size) minus the sorted occupied keys.

    A rank j among the free keys maps to key j + #{occupied keys at or below it},
    found by a search over occupied - arange.
    """
    free = size - occupied.size
    if n > free:
        raise ShapeMismatchError(
            "not enough free positions to regrow", expected=n, actual=free
        )
    ranks = np.sort(rng.choice(free, size=n, replace=False).astype(np.int64))
    adjusted = occupied - np.arange(occupied.size, dtype=np.int64)
    return ranks + np.searchsorted(adjusted, ranks, side="right")


def rewire(
    w: SparseMatrix,
    zeta: float,
    regrow: bool,
    rng: np.random.Generator,
    layer: str = "",
) -> Tuple[SparseMatrix, RewireReport]:
    """
    One evolutionary step: prune the weakest connections, then regrow.

    Removes floor(zeta * |P|) smallest positive values, floor(zeta * |N|)
    negative values closest to zero and every exact zero; ties go to the lower
    (row, col) position. With regrow the same number of positions is added
    uniformly among positions not held by survivors, with fresh values from
    the init_values law. Nothing to remove means no randomness is consumed.
    """
    if not 0.0 <= zeta <= 1.0:
        raise ConfigError("zeta must lie in [0, 1]", field="zeta")
    keys, values = w.keys, w.values
    shape = w.shape

    pos_idx = np.flatnonzero(values > 0)
    neg_idx = np.flatnonzero(values < 0)
    zero_idx = np.flatnonzero(values == 0)
    k_p = int(math.floor(zeta * pos_idx.size + _FLOOR_SLACK))
    k_n = int(math.floor(zeta * neg_idx.size + _FLOOR_SLACK))

    # lexsort orders by the last key first
    pos_order = np.lexsort((keys[pos_idx], values[pos_idx]))
    neg_order = np.lexsort((keys[neg_idx], -values[neg_idx]))
    rm_pos = pos_idx[pos_order[:k_p]]
    rm_neg = neg_idx[neg_order[:k_n]]

    def as_set(idx: np.ndarray) -> ConnectionSet:
        return ConnectionSet(shape[0], shape[1], np.sort(keys[idx]))

    removed = np.concatenate([rm_pos, rm_neg, zero_idx])
    keep = np.ones(keys.size, dtype=bool)
    keep[removed] = False
    kept_keys = keys[keep]
    kept_values = values[keep]

    n_add = int(removed.size) if regrow else 0
    if n_add > 0:
        added_keys = _sample_free(kept_keys, shape[0] * shape[1], n_add, rng)
        added_values = _uniform_nonzero(n_add, glorot_limit(*shape), rng)
        all_keys = np.concatenate([kept_keys, added_keys])
        all_values = np.concatenate([kept_values, added_values])
        order = np.argsort(all_keys, kind="stable")
        new_w = SparseMatrix(shape[0], shape[1], all_keys[order], all_values[order])
    else:
        added_keys = np.zeros(0, dtype=np.int64)
        new_w = SparseMatrix(shape[0], shape[1], kept_keys.copy(), kept_values.copy())

    report = RewireReport(
        layer=layer,
        shape=shape,
        removed_positive=as_set(rm_pos),
        removed_negative=as_set(rm_neg),
        removed_zero=as_set(zero_idx),
        added=ConnectionSet(shape[0], shape[1], added_keys),
        nnz_before=w.nnz(),
        nnz_after=new_w.nnz(),
    )
    logger.debug(f"rewired {layer or 'layer'}: {report.summary()}")
    return new_w, report


# ===========================================
# Analytics
# ===========================================


def similarity(a: ConnectionSet, b: ConnectionSet) -> float:
    """S_ab = |a & b| / |a|, and 0 when a is empty"""
    if a.shape != b.shape:
        raise ShapeMismatchError(
            "topologies differ in shape", expected=list(a.shape), actual=list(b.shape)
        )
    if len(a) == 0:
        return 0.0
    common = np.intersect1d(a.keys, b.keys, assume_unique=True).size
    return common / len(a)


def similarity_matrix(topologies: Sequence[ConnectionSet]) -> np.ndarray:
    """Pairwise similarity; M[a][b] = similarity(a, b), unit diagonal"""
    if len(topologies) == 0:
        raise ShapeMismatchError("similarity matrix needs at least one topology")
    shape = topologies[0].shape
    for t in topologies:
        if t.shape != shape:
            raise ShapeMismatchError(
                "topologies differ in shape", expected=list(shape), actual=list(t.shape)
            )
    n = len(topologies)
    matrix = np.eye(n)
    for i in range(n):
        for j in range(n):
            if i != j:
                matrix[i, j] = similarity(topologies[i], topologies[j])
    return matrix


def chance_similarity(n_rows: int, n_cols: int, n_w: int) -> float:
    """Expected overlap n_W / S of two independent uniform topologies"""
    return n_w / (n_rows * n_cols)


@dataclass(frozen=True)
class DegreeStats:
    """Per-node connection counts on both sides of a bipartite layer"""

    row_degrees: np.ndarray
    col_degrees: np.ndarray

    @property
    def row_histogram(self) -> np.ndarray:
        """row_histogram[k] = number of rows with exactly k connections"""
        return np.bincount(self.row_degrees)

    @property
    def col_histogram(self) -> np.ndarray:
        return np.bincount(self.col_degrees)

    def summary(self) -> Dict[str, float]:
        out: Dict[str, float] = {}
        for side, deg in (("row", self.row_degrees), ("col", self.col_degrees)):
            mean = float(deg.mean())
            std = float(deg.std())
            out[f"{side}_mean"] = mean
            out[f"{side}_std"] = std
            out[f"{side}_max"] = float(deg.max())
            # coefficient of variation grows as hubs form
            out[f"{side}_cv"] = std / mean if mean > 0 else 0.0
        return out


def degree_stats(c: ConnectionSet) -> DegreeStats:
    return DegreeStats(
        row_degrees=np.bincount(c.rows, minlength=c.n_rows),
        col_degrees=np.bincount(c.cols, minlength=c.n_cols),
    )
