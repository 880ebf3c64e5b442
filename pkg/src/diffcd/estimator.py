"""Scikit-learn style facade over the training pipeline.

X is an integer array of (student_id, exercise_id) pairs and y the binary
correctness labels, so the model slots into sklearn tooling
(cross-validation, pipelines, metric helpers) unchanged.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .data import ResponseDataset, split as make_split
from .errors import ContractError, DataError
from .training import RunConfig, train


def check_pairs(X) -> np.ndarray:
    """Validate and coerce an (n, 2) integer id-pair array."""
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] != 2:
        raise DataError(f"expected (n, 2) id pairs, got shape {X.shape}")
    if not np.issubdtype(X.dtype, np.integer):
        if not np.all(X == X.astype(np.int64)):
            raise DataError("id pairs must be integers")
        X = X.astype(np.int64)
    if np.any(X < 0):
        raise DataError("ids must be non-negative")
    return X


class NoiseRobustDiagnoser(BaseEstimator, ClassifierMixin):
    """Graph-plus-diffusion cognitive diagnosis as a binary classifier.

    Parameters mirror :class:`diffcd.training.RunConfig`; the Q-matrix is a
    constructor argument because it is per-problem metadata rather than a
    training example.
    """

    def __init__(self, q_matrix=None, head="ncdm", latent_dim=None, lam=1e-3,
                 rho=0.1, temperature=0.5, epochs=200, patience=10, lr=0.04,
                 batch_size=4096, seed=0, plain=False, raa=True, ddm_u=True,
                 ddm_c=True, semantic=True, t_star=5, T=50, hidden=(512, 256)):
        self.q_matrix = q_matrix
        self.head = head
        self.latent_dim = latent_dim
        self.lam = lam
        self.rho = rho
        self.temperature = temperature
        self.epochs = epochs
        self.patience = patience
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed
        self.plain = plain
        self.raa = raa
        self.ddm_u = ddm_u
        self.ddm_c = ddm_c
        self.semantic = semantic
        self.t_star = t_star
        self.T = T
        self.hidden = hidden

    def _config(self) -> RunConfig:
        fields = {f.name for f in dataclasses.fields(RunConfig)}
        kwargs = {k: v for k, v in self.get_params().items() if k in fields}
        return RunConfig(**kwargs)

    def fit(self, X, y):
        if self.q_matrix is None:
            raise ContractError("q_matrix is required to fit")
        X = check_pairs(X)
        y = np.asarray(y).ravel().astype(np.int64)
        if y.shape[0] != X.shape[0]:
            raise DataError(f"{X.shape[0]} pairs but {y.shape[0]} labels")
        q = np.asarray(self.q_matrix, dtype=np.int64)
        n = int(X[:, 0].max()) + 1
        m = int(X[:, 1].max()) + 1
        if m > q.shape[0]:
            raise DataError(f"exercise id {m - 1} outside q_matrix ({q.shape[0]} rows)")
        logs = [(int(s), int(e), int(r)) for (s, e), r in zip(X, y)]
        ds = ResponseDataset(n, q.shape[0], q.shape[1], logs, q)
        self.result_ = train(self._config(), ds, split_spec=make_split(ds, self.seed))
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X):
        X = check_pairs(X)
        pipe = self.result_.pipeline
        if np.any(X[:, 0] >= pipe.N) or np.any(X[:, 1] >= pipe.M):
            raise DataError("id pair outside the fitted student/exercise range")
        ds = pipe.ds
        base = len(ds.logs)
        ds.logs.extend((int(s), int(e), 0) for s, e in X)  # labels unused here
        try:
            p = pipe.predict_logs(range(base, base + len(X)), "eval-refine/predict")
        finally:
            del ds.logs[base:]
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)

    def mastery_(self) -> np.ndarray:
        return self.result_.pipeline.mastery_report("eval-refine/predict")
