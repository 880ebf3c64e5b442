"""Contrastive alignment losses and the two-view fusion network."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, ShapeError


@dataclass
class AlignmentConfig:
    temperature: float = 0.5
    negative_policy: str = "full"  # "full" | "in-batch"

    def __post_init__(self):
        if self.temperature <= 0:
            raise ContractError(f"temperature must be positive, got {self.temperature}")
        if self.negative_policy not in ("full", "in-batch"):
            raise ContractError(f"unknown negative policy {self.negative_policy!r}")


# norm floor keeps cosine defined when an activation zeroes out a row
_NORM_EPS = 1e-12


def _row_normalize(x: Tensor) -> Tensor:
    sq = (x * x).sum(axis=1, keepdims=True)
    return x / ad.sqrt(sq + _NORM_EPS)


def info_nce(anchors: Tensor, positives: Tensor, cfg: AlignmentConfig | None = None) -> Tensor:
    """InfoNCE over cosine similarities: row i's positive is row i of
    `positives`, negatives are the other positive rows."""
    cfg = cfg or AlignmentConfig()
    anchors, positives = Tensor._lift(anchors), Tensor._lift(positives)
    if anchors.data.shape != positives.data.shape:
        raise ShapeError(f"anchor/positive shapes differ: {anchors.shape} vs {positives.shape}")
    n = anchors.data.shape[0]
    a = _row_normalize(anchors)
    p = _row_normalize(positives)
    sims = ad.matmul(a, p.T) * (1.0 / cfg.temperature)
    diag = (sims * Tensor(np.eye(n))).sum(axis=1, keepdims=True)
    lse = ad.row_logsumexp(sims)
    return (lse - diag).sum()


@dataclass
class FusionNet:
    weight: Tensor  # (2d, d)
    bias: Tensor  # (1, d)
    activation: str = "relu"  # "relu" | "linear"

    @property
    def params(self):
        return [self.weight, self.bias]


def fuse(h_cor: Tensor, h_incor: Tensor, net: FusionNet) -> Tensor:
    """Combine the two correctness views: activation([cor ++ incor] W + b)."""
    h_cor, h_incor = Tensor._lift(h_cor), Tensor._lift(h_incor)
    if h_cor.data.shape != h_incor.data.shape:
        raise ShapeError(f"view shapes differ: {h_cor.shape} vs {h_incor.shape}")
    z = ad.matmul(ad.concat([h_cor, h_incor], axis=1), net.weight) + net.bias
    if net.activation == "relu":
        return ad.relu(z)
    if net.activation == "linear":
        return z
    raise ContractError(f"unknown activation {net.activation!r}")


def relation_loss(ori_views, aug_views, num_students: int,
                  cfg: AlignmentConfig | None = None) -> Tensor:
    """Student plus exercise InfoNCE terms, summed over both subgraphs.

    `ori_views` and `aug_views` each hold the (correct, incorrect) propagated
    node matrices; anchors are the original side, positives the augmented.
    """
    cfg = cfg or AlignmentConfig()
    total = None
    for ori, aug in zip(ori_views, aug_views):
        n_nodes = ori.data.shape[0]
        s_idx = np.arange(num_students)
        e_idx = np.arange(num_students, n_nodes)
        term = info_nce(ad.take_rows(ori, s_idx), ad.take_rows(aug, s_idx), cfg)
        term = term + info_nce(ad.take_rows(ori, e_idx), ad.take_rows(aug, e_idx), cfg)
        total = term if total is None else total + term
    return total


def semantic_loss(fused_students: Tensor, sem_students: Tensor,
                  fused_exercises: Tensor, sem_exercises: Tensor,
                  cfg: AlignmentConfig | None = None) -> Tensor:
    """Fused-vs-semantic InfoNCE for students plus exercises."""
    cfg = cfg or AlignmentConfig()
    return (info_nce(fused_students, sem_students, cfg)
            + info_nce(fused_exercises, sem_exercises, cfg))
