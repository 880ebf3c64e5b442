"""Bipartite response graph: correctness decomposition, low-degree student
edge augmentation, symmetric normalization, and LightGCN propagation.

Node indexing over V = students + exercises: student i is node i, exercise j
is node N + j, for an (N+M) x (N+M) symmetric adjacency.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .data import ResponseDataset
from .errors import ContractError, ShapeError
from .optim import named_stream
from .sparse import SparseMatrix, spmm


@dataclass
class SubgraphPair:
    a_cor: SparseMatrix
    a_incor: SparseMatrix
    a_cor_aug: SparseMatrix | None = None
    a_incor_aug: SparseMatrix | None = None
    num_students: int = 0


def decompose(ds: ResponseDataset, log_indices=None) -> SubgraphPair:
    """Split the response graph by correctness into two symmetric adjacencies.

    `log_indices` restricts edges to a subset of logs (training split).
    """
    n, m = ds.num_students, ds.num_exercises
    size = n + m
    idx = range(len(ds.logs)) if log_indices is None else log_indices
    cor, incor = [], []
    for i in idx:
        s, e, r = ds.logs[i]
        target = cor if r == 1 else incor
        target.append((s, n + e, 1.0))
        target.append((n + e, s, 1.0))
    return SubgraphPair(
        a_cor=SparseMatrix(size, size, cor),
        a_incor=SparseMatrix(size, size, incor),
        num_students=n,
    )


def augment(sub: SparseMatrix, num_students: int, seed: int,
            stream_name: str = "augment") -> SparseMatrix:
    """Add one student-student edge for each of the floor(N/2) lowest-degree
    students of this subgraph.

    Degrees are per-subgraph; ties break by ascending student id. Partners
    are uniform over the other students; a collision with an existing
    augmented edge is resampled up to 10 times, then the student is skipped.
    """
    if num_students < 2:
        raise ContractError(f"augmentation needs >= 2 students, got {num_students}")
    rng = named_stream(seed, stream_name)
    deg = sub.row_degrees()[:num_students]
    order = sorted(range(num_students), key=lambda i: (deg[i], i))
    low = order[: num_students // 2]

    edges = set(sub.edge_set())
    new_entries = list(sub.entries)
    for s_i in low:
        for _ in range(10):
            s_j = int(rng.integers(0, num_students - 1))
            if s_j >= s_i:
                s_j += 1  # uniform over students other than s_i
            if (s_i, s_j) not in edges:
                edges.add((s_i, s_j))
                edges.add((s_j, s_i))
                new_entries.append((s_i, s_j, 1.0))
                new_entries.append((s_j, s_i, 1.0))
                break
    return SparseMatrix(sub.rows, sub.cols, new_entries)


def sym_normalize(a: SparseMatrix) -> SparseMatrix:
    """D^{-1/2} A D^{-1/2} with the convention d^{-1/2} = 0 for zero degree."""
    deg = a.row_sums()
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    entries = [(r, c, v * inv_sqrt[r] * inv_sqrt[c]) for r, c, v in a.entries]
    return SparseMatrix(a.rows, a.cols, entries)


def lightgcn(a_hat: SparseMatrix, h0: Tensor, layers: int = 3) -> Tensor:
    """Average of propagated layer outputs: (1/(L+1)) sum_{l=0..L} A_hat^l H0."""
    if a_hat.rows != a_hat.cols:
        raise ShapeError(f"adjacency must be square, got {a_hat.rows}x{a_hat.cols}")
    h0 = Tensor._lift(h0)
    if h0.data.shape[0] != a_hat.rows:
        raise ShapeError(f"h0 rows {h0.data.shape[0]} != node count {a_hat.rows}")
    acc = h0
    h = h0
    for _ in range(layers):
        h = spmm(a_hat, h)
        acc = acc + h
    return acc * (1.0 / (layers + 1))
