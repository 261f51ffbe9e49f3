# ===========================================
# SET-LSTM - Sparse Core
# Triplet-stored sparse weights and their kernels
# ===========================================

from typing import Iterable, List, Sequence, Tuple

import numpy as np
import scipy.sparse as scisp

from .errors import DuplicatePositionError, OutOfBoundsError, ShapeMismatchError

# Dense activations, gradients and biases are plain float64 arrays.
DenseMatrix = np.ndarray

# Above this many dense cells masked_grad gathers per connection instead of
# forming the full X^T dY product.
DENSE_GRAD_LIMIT = 1 << 22
GATHER_CHUNK = 1 << 16


def _check_positions(
    rows: np.ndarray, cols: np.ndarray, n_rows: int, n_cols: int
) -> np.ndarray:
    """Validate positions and return their linear keys in input order"""
    bad = (rows < 0) | (rows >= n_rows) | (cols < 0) | (cols >= n_cols)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise OutOfBoundsError(int(rows[k]), int(cols[k]), (n_rows, n_cols))
    return rows * n_cols + cols


def _first_duplicate(sorted_keys: np.ndarray) -> int:
    dup = np.flatnonzero(sorted_keys[1:] == sorted_keys[:-1])
    return -1 if dup.size == 0 else int(dup[0])


class ConnectionSet:
    """
    Positions only: the topology of a sparse layer.

    Positions are held as sorted linear keys ``row * n_cols + col``; key order
    is (row, col) order.
    """

    __slots__ = ("n_rows", "n_cols", "keys")

    def __init__(self, n_rows: int, n_cols: int, keys: np.ndarray):
        if n_rows < 1 or n_cols < 1:
            raise ShapeMismatchError(
                "connection set needs positive dimensions", actual=[n_rows, n_cols]
            )
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        self.keys = np.asarray(keys, dtype=np.int64)

    @classmethod
    def from_positions(
        cls, n_rows: int, n_cols: int, positions: Iterable[Tuple[int, int]]
    ) -> "ConnectionSet":
        pairs = np.asarray(list(positions), dtype=np.int64).reshape(-1, 2)
        keys = _check_positions(pairs[:, 0], pairs[:, 1], n_rows, n_cols)
        keys = np.sort(keys, kind="stable")
        dup = _first_duplicate(keys)
        if dup >= 0:
            raise DuplicatePositionError(*divmod(int(keys[dup]), n_cols))
        return cls(n_rows, n_cols, keys)

    @classmethod
    def full(cls, n_rows: int, n_cols: int) -> "ConnectionSet":
        return cls(n_rows, n_cols, np.arange(n_rows * n_cols, dtype=np.int64))

    @classmethod
    def empty(cls, n_rows: int, n_cols: int) -> "ConnectionSet":
        return cls(n_rows, n_cols, np.zeros(0, dtype=np.int64))

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def size(self) -> int:
        """Number of possible positions"""
        return self.n_rows * self.n_cols

    @property
    def rows(self) -> np.ndarray:
        return self.keys // self.n_cols

    @property
    def cols(self) -> np.ndarray:
        return self.keys % self.n_cols

    def positions(self) -> List[Tuple[int, int]]:
        return [(int(r), int(c)) for r, c in zip(self.rows, self.cols)]

    def __len__(self) -> int:
        return int(self.keys.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ConnectionSet):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.keys, other.keys)

    def __repr__(self) -> str:
        return f"ConnectionSet(shape={self.shape}, nnz={len(self)})"


class SparseMatrix:
    """
    A 2-D weight matrix stored as canonical (row, col, value) triplets.

    Entries are sorted by (row, col), positions are unique and in bounds, and
    ``nnz()`` always equals the number of stored entries. Positions never
    change after construction; only the optimizer writes into ``values``.
    """

    __slots__ = ("n_rows", "n_cols", "keys", "values")

    def __init__(self, n_rows: int, n_cols: int, keys: np.ndarray, values: np.ndarray):
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        self.keys = np.asarray(keys, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.float64)
        if self.keys.shape != self.values.shape:
            raise ShapeMismatchError(
                "keys and values differ in length",
                expected=list(self.keys.shape),
                actual=list(self.values.shape),
            )

    @classmethod
    def from_mask(cls, mask: ConnectionSet, values: np.ndarray) -> "SparseMatrix":
        return cls(mask.n_rows, mask.n_cols, mask.keys.copy(), values)

    @classmethod
    def zeros_like_mask(cls, mask: ConnectionSet) -> "SparseMatrix":
        return cls.from_mask(mask, np.zeros(len(mask)))

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def rows(self) -> np.ndarray:
        return self.keys // self.n_cols

    @property
    def cols(self) -> np.ndarray:
        return self.keys % self.n_cols

    def nnz(self) -> int:
        return int(self.keys.size)

    def mask(self) -> ConnectionSet:
        return ConnectionSet(self.n_rows, self.n_cols, self.keys.copy())

    def entries(self) -> List[Tuple[int, int, float]]:
        return [
            (int(r), int(c), float(v))
            for r, c, v in zip(self.rows, self.cols, self.values)
        ]

    def with_values(self, values: np.ndarray) -> "SparseMatrix":
        return SparseMatrix(self.n_rows, self.n_cols, self.keys.copy(), values)

    def copy(self) -> "SparseMatrix":
        return SparseMatrix(
            self.n_rows, self.n_cols, self.keys.copy(), self.values.copy()
        )

    def to_scipy(self) -> scisp.csr_matrix:
        """CSR view; canonical order is already row-major so no sort is needed"""
        rows = self.rows
        indptr = np.searchsorted(rows, np.arange(self.n_rows + 1), side="left")
        return scisp.csr_matrix(
            (self.values, self.cols, indptr), shape=self.shape, copy=False
        )

    def __repr__(self) -> str:
        return f"SparseMatrix(shape={self.shape}, nnz={self.nnz()})"


# ===========================================
# Construction
# ===========================================


def from_triplets(
    n_rows: int, n_cols: int, triplets: Sequence[Tuple[int, int, float]]
) -> SparseMatrix:
    """
    Build a canonical SparseMatrix from (row, col, value) triplets.

    Raises:
        OutOfBoundsError: a position lies outside n_rows x n_cols
        DuplicatePositionError: a position appears twice
    """
    if n_rows < 1 or n_cols < 1:
        raise ShapeMismatchError(
            "sparse matrix needs positive dimensions", actual=[n_rows, n_cols]
        )
    if len(triplets) == 0:
        return SparseMatrix(n_rows, n_cols, np.zeros(0, np.int64), np.zeros(0))

    rows = np.fromiter((t[0] for t in triplets), dtype=np.int64, count=len(triplets))
    cols = np.fromiter((t[1] for t in triplets), dtype=np.int64, count=len(triplets))
    values = np.fromiter(
        (t[2] for t in triplets), dtype=np.float64, count=len(triplets)
    )
    keys = _check_positions(rows, cols, n_rows, n_cols)
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    dup = _first_duplicate(keys)
    if dup >= 0:
        raise DuplicatePositionError(*divmod(int(keys[dup]), n_cols))
    return SparseMatrix(n_rows, n_cols, keys, values[order])


def densify(w: SparseMatrix) -> DenseMatrix:
    """Dense copy: zeros everywhere except stored entries"""
    dense = np.zeros(w.n_rows * w.n_cols)
    dense[w.keys] = w.values
    return dense.reshape(w.n_rows, w.n_cols)


def hstack(matrices: Sequence[SparseMatrix]) -> SparseMatrix:
    """Concatenate matrices with equal row counts side by side"""
    if not matrices:
        raise ShapeMismatchError("hstack needs at least one matrix")
    n_rows = matrices[0].n_rows
    if any(m.n_rows != n_rows for m in matrices):
        raise ShapeMismatchError(
            "hstack operands differ in row count",
            actual=[m.n_rows for m in matrices],
        )
    n_cols = sum(m.n_cols for m in matrices)
    rows, cols, values = [], [], []
    offset = 0
    for m in matrices:
        rows.append(m.rows)
        cols.append(m.cols + offset)
        values.append(m.values)
        offset += m.n_cols
    all_rows = np.concatenate(rows)
    all_cols = np.concatenate(cols)
    keys = all_rows * n_cols + all_cols
    order = np.argsort(keys, kind="stable")
    return SparseMatrix(n_rows, n_cols, keys[order], np.concatenate(values)[order])


# ===========================================
# Kernels
# ===========================================


def _as_batch(x: DenseMatrix, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatchError(f"{name} must be 2-D", actual=list(x.shape))
    return x


def dense_times_sparse(x: DenseMatrix, w: SparseMatrix) -> DenseMatrix:
    """Y = X . W for X of shape B x n_in and W of shape n_in x n_out"""
    x = _as_batch(x, "X")
    if x.shape[1] != w.n_rows:
        raise ShapeMismatchError(
            "inner dimensions differ", expected=w.n_rows, actual=x.shape[1]
        )
    if w.nnz() == 0:
        return np.zeros((x.shape[0], w.n_cols))
    # (W^T X^T)^T keeps the product sparse-times-dense on the scipy side
    return np.ascontiguousarray(np.asarray(w.to_scipy().T @ x.T).T)


def dense_times_sparse_transposed(dy: DenseMatrix, w: SparseMatrix) -> DenseMatrix:
    """dX = dY . W^T for dY of shape B x n_out and W of shape n_in x n_out"""
    dy = _as_batch(dy, "dY")
    if dy.shape[1] != w.n_cols:
        raise ShapeMismatchError(
            "outer dimensions differ", expected=w.n_cols, actual=dy.shape[1]
        )
    if w.nnz() == 0:
        return np.zeros((dy.shape[0], w.n_rows))
    return np.ascontiguousarray(np.asarray(w.to_scipy() @ dy.T).T)


def masked_grad(x: DenseMatrix, dy: DenseMatrix, mask: ConnectionSet) -> SparseMatrix:
    """
    Gradient of a sparse weight restricted to its connections.

    For each (i, j) in mask the value is sum_b X[b, i] * dY[b, j]; the result
    has exactly the positions of mask.
    """
    x = _as_batch(x, "X")
    dy = _as_batch(dy, "dY")
    if x.shape[0] != dy.shape[0]:
        raise ShapeMismatchError(
            "batch sizes differ", expected=x.shape[0], actual=dy.shape[0]
        )
    if x.shape[1] != mask.n_rows or dy.shape[1] != mask.n_cols:
        raise ShapeMismatchError(
            "operands do not match mask shape",
            expected=list(mask.shape),
            actual=[x.shape[1], dy.shape[1]],
        )
    n = len(mask)
    if n == 0:
        return SparseMatrix.zeros_like_mask(mask)
    rows, cols = mask.rows, mask.cols
    if mask.size <= DENSE_GRAD_LIMIT:
        full = x.T @ dy
        return SparseMatrix.from_mask(mask, full[rows, cols])

    values = np.empty(n)
    for start in range(0, n, GATHER_CHUNK):
        stop = min(start + GATHER_CHUNK, n)
        r, c = rows[start:stop], cols[start:stop]
        values[start:stop] = np.einsum("bk,bk->k", x[:, r], dy[:, c])
    return SparseMatrix.from_mask(mask, values)
