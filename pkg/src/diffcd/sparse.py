"""Sparse matrices and the sparse-dense product used by graph propagation."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .autodiff import Tensor
from .errors import ContractError, ShapeError


class SparseMatrix:
    """Immutable COO-style sparse matrix with duplicate/range validation.

    Internally backed by a scipy CSR matrix for products; the entry list
    remains the canonical representation (deterministic iteration order).
    """

    __slots__ = ("rows", "cols", "entries", "_csr")

    def __init__(self, rows: int, cols: int, entries):
        entries = [(int(r), int(c), float(v)) for r, c, v in entries]
        seen = set()
        for r, c, v in entries:
            if not (0 <= r < rows and 0 <= c < cols):
                raise ContractError(f"entry ({r},{c}) outside {rows}x{cols}")
            if (r, c) in seen:
                raise ContractError(f"duplicate entry at ({r},{c})")
            seen.add((r, c))
        self.rows = rows
        self.cols = cols
        self.entries = sorted(entries)
        if self.entries:
            rr, cc, vv = zip(*self.entries)
            coo = sp.coo_matrix((vv, (rr, cc)), shape=(rows, cols))
        else:
            coo = sp.coo_matrix((rows, cols))
        self._csr = coo.tocsr()

    @property
    def nnz(self) -> int:
        return len(self.entries)

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix(self.cols, self.rows, [(c, r, v) for r, c, v in self.entries])

    def edge_set(self):
        return {(r, c) for r, c, _ in self.entries}

    def row_degrees(self) -> np.ndarray:
        """Number of stored entries per row (structural degree)."""
        deg = np.zeros(self.rows, dtype=np.int64)
        for r, _, _ in self.entries:
            deg[r] += 1
        return deg

    def row_sums(self) -> np.ndarray:
        return np.asarray(self._csr.sum(axis=1)).ravel()


def spmm(s: SparseMatrix, d: Tensor) -> Tensor:
    """Sparse-dense matrix product, differentiable in the dense operand."""
    d = Tensor._lift(d)
    if d.data.ndim != 2 or s.cols != d.data.shape[0]:
        raise ShapeError(f"spmm: {s.rows}x{s.cols} against dense {d.shape}")
    out_data = s._csr @ d.data
    csr_t = s._csr.T.tocsr()
    return Tensor(out_data, _parents=(d,), _vjp=lambda g: (csr_t @ g,))
