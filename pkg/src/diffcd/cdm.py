"""Prediction heads (IRT, MIRT, NCDM, CDMFKC), the dimension-alignment
transform layer, and the binary cross-entropy task loss.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, ShapeError
from .optim import param


class TransformLayer:
    """Affine map from the latent dimension d to the concept dimension Z,
    with one scalar bias per node broadcast across output columns."""

    def __init__(self, d: int, num_concepts: int, num_nodes: int, seed: int,
                 name: str = "transform"):
        self.d = d
        self.num_concepts = num_concepts
        self.weight = param(f"{name}/w", (d, num_concepts), seed)
        self.bias = param(f"{name}/b", (num_nodes, 1), seed, scheme="zeros")

    @property
    def params(self):
        return [self.weight, self.bias]


def transform(h: Tensor, layer: TransformLayer | None) -> Tensor:
    """Map node rows to concept dimension; identity when no layer is needed
    (latent dimension already equals the concept count)."""
    h = Tensor._lift(h)
    if layer is None:
        return h
    if h.data.shape != (layer.bias.data.shape[0], layer.d):
        raise ShapeError(f"transform input {h.shape}, expected "
                         f"({layer.bias.data.shape[0]}, {layer.d})")
    return ad.matmul(h, layer.weight) + layer.bias


def _clip_prob(p: Tensor) -> Tensor:
    """Keep probabilities strictly inside (0, 1); straight-through gradient
    in the unclipped region."""
    lo, hi = 1e-12, 1.0 - 1e-12
    mask = ((p.data > lo) & (p.data < hi)).astype(p.data.dtype)
    clipped = np.clip(p.data, lo, hi)
    return Tensor(clipped, _parents=(p,), _vjp=lambda g: (g * mask,))


class CdmHead:
    """Common surface for the four interaction functions.

    `dim` is the per-node input dimension the head consumes: the latent d
    for IRT/MIRT, the concept count Z for NCDM/CDMFKC.
    """

    VARIANTS = ("irt", "mirt", "ncdm", "cdmfkc")

    def __init__(self, variant: str, dim: int, num_exercises: int, num_concepts: int,
                 seed: int, hidden=(512, 256), name: str = "head"):
        variant = variant.lower()
        if variant not in self.VARIANTS:
            raise ContractError(f"unknown head variant {variant!r}")
        self.variant = variant
        self.dim = dim
        self.num_concepts = num_concepts
        self.params: list[Tensor] = []
        self.nonneg_params: list[Tensor] = []

        def p(pname, shape, scheme="xavier", nonneg=False):
            t = param(f"{name}/{variant}/{pname}", shape, seed, scheme=scheme)
            self.params.append(t)
            if nonneg:
                self.nonneg_params.append(t)
            return t

        if variant == "irt":
            self.w_theta = p("w_theta", (dim, 1))
            self.w_b = p("w_b", (dim, 1))
            self.disc = p("disc", (num_exercises, 1), scheme="zeros")
        elif variant == "mirt":
            self.b_table = p("b", (num_exercises, 1), scheme="zeros")
        else:
            if dim != num_concepts:
                raise ContractError(f"{variant} needs dim == num_concepts, "
                                    f"got {dim} != {num_concepts}")
            self.disc = p("disc", (num_exercises, 1), scheme="zeros")
            h1, h2 = hidden
            self.w1 = p("w1", (num_concepts, h1), scheme="nonneg", nonneg=True)
            self.b1 = p("b1", (1, h1), scheme="zeros")
            self.w2 = p("w2", (h1, h2), scheme="nonneg", nonneg=True)
            self.b2 = p("b2", (1, h2), scheme="zeros")
            self.w3 = p("w3", (h2, 1), scheme="nonneg", nonneg=True)
            self.b3 = p("b3", (1, 1), scheme="zeros")
            if variant == "cdmfkc":
                self.concept_diff = p("concept_diff", (1, num_concepts), scheme="zeros")
                self.concept_disc = p("concept_disc", (1, num_concepts), scheme="zeros")
            # positive-only weights shift every pre-activation upward; center
            # the sigmoid layers at init assuming mean inputs of 0.5 so the
            # hiddens start live instead of saturated
            self.b2.data[:] = -0.5 * self.w2.data.sum(axis=0, keepdims=True)
            self.b3.data[:] = -0.5 * self.w3.data.sum(axis=0, keepdims=True)

        self.project_nonneg()

    def set_output_bias(self, logit_value: float) -> None:
        """Shift the interaction-net output bias, typically to the train
        base-rate logit so the initial downward pull cannot clamp the
        positive-only output weights to zero."""
        if self.variant in ("ncdm", "cdmfkc"):
            self.b3.data += float(logit_value)

    def project_nonneg(self) -> None:
        """Clamp interaction-net weights at zero (monotonicity projection)."""
        for t in self.nonneg_params:
            t.assign_(np.maximum(t.data, 0.0))

    def _interaction_net(self, x: Tensor) -> Tensor:
        h = ad.sigmoid(ad.matmul(x, self.w1) + self.b1)
        h = ad.sigmoid(ad.matmul(h, self.w2) + self.b2)
        return ad.matmul(h, self.w3) + self.b3

    def predict(self, h_s: Tensor, h_e: Tensor, h_k: Tensor | None,
                q_rows: np.ndarray, e_ids: np.ndarray) -> Tensor:
        """Response probability per (student, exercise) row, in (0, 1).

        h_s/h_e are transformed per-row representations; q_rows the matching
        Q-matrix rows; e_ids index per-exercise scalar parameters.
        """
        h_s, h_e = Tensor._lift(h_s), Tensor._lift(h_e)
        if h_s.data.shape[1] != self.dim or h_e.data.shape[1] != self.dim:
            raise ShapeError(f"head dim {self.dim}, inputs {h_s.shape}/{h_e.shape}")
        e_ids = np.asarray(e_ids, dtype=np.int64)

        if self.variant == "irt":
            theta = ad.matmul(h_s, self.w_theta)
            b = ad.matmul(h_e, self.w_b)
            a = ad.softplus(ad.take_rows(self.disc, e_ids))
            z = a * (theta - b)
        elif self.variant == "mirt":
            b = ad.take_rows(self.b_table, e_ids)
            z = (h_s * h_e).sum(axis=1, keepdims=True) - b
        else:
            q = Tensor(np.asarray(q_rows, dtype=np.float64))
            disc = ad.sigmoid(ad.take_rows(self.disc, e_ids))
            mastery = ad.sigmoid(h_s)
            diff = ad.sigmoid(h_e)
            if self.variant == "cdmfkc":
                g = ad.sigmoid(self.concept_diff)
                lam = ad.softplus(self.concept_disc)
                x = q * (mastery - diff - g) * lam * disc
            else:
                x = q * (mastery - diff) * disc
            z = self._interaction_net(x)
        return _clip_prob(ad.sigmoid(z))

    def mastery(self, h_s_all) -> np.ndarray:
        """Per-concept mastery probabilities for every student row."""
        if self.variant in ("irt", "mirt"):
            raise ContractError(f"mastery report not applicable to {self.variant}")
        data = np.asarray(getattr(h_s_all, "data", h_s_all))
        return 1.0 / (1.0 + np.exp(-data))


def bce(y_hat: Tensor, labels, reduction: str = "mean") -> Tensor:
    """Negative log-likelihood of binary responses.

    Default is the sum normalized by batch size (mean); `reduction="sum"`
    gives the plain summed form.
    """
    y_hat = Tensor._lift(y_hat)
    flat = y_hat if y_hat.data.ndim == 1 else y_hat.reshape(-1)
    r = np.asarray(labels, dtype=np.float64).ravel()
    if flat.data.shape != r.shape:
        raise ShapeError(f"predictions {flat.shape} vs labels {r.shape}")
    if np.any(flat.data <= 0.0) or np.any(flat.data >= 1.0):
        raise ContractError("predicted probabilities must lie strictly in (0, 1)")
    rt = Tensor(r)
    loss = -(rt * ad.log(flat) + (1.0 - rt) * ad.log(1.0 - flat)).sum()
    if reduction == "mean":
        return loss * (1.0 / r.size)
    if reduction == "sum":
        return loss
    raise ContractError(f"unknown reduction {reduction!r}")
