"""Two-stage latent denoising diffusion: fixed forward process, noise
predictors (plain and feature-wise modulated), reverse sampling, training
losses, and the noise-then-denoise refinement applied before alignment.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, ShapeError
from .optim import param


class DiffusionSchedule:
    """Linear beta schedule; `alpha_bar` is indexable by step t with
    alpha_bar[0] == 1."""

    def __init__(self, T: int = 50, beta_start: float = 1e-4, beta_end: float = 0.02):
        if T < 1:
            raise ContractError(f"T must be >= 1, got {T}")
        self.T = T
        self.beta = np.linspace(beta_start, beta_end, T)  # beta[t-1] is step t
        self.alpha = 1.0 - self.beta
        self.alpha_bar = np.concatenate([[1.0], np.cumprod(self.alpha)])

    def check_step(self, t: int) -> None:
        if not (1 <= t <= self.T):
            raise ContractError(f"step {t} outside [1, {self.T}]")


def time_embedding(t, d: int) -> np.ndarray:
    """Sinusoidal step embedding, frequencies geometric from 1 to 1e4.

    `t` may be a scalar or a per-row integer array; output is (n, d).
    """
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = max(d // 2, 1)
    if half > 1:
        freqs = 10000.0 ** (np.arange(half) / (half - 1))
    else:
        freqs = np.ones(1)
    angles = t[:, None] / freqs[None, :]
    emb = np.concatenate([np.sin(angles), np.cos(angles)], axis=1)
    return emb[:, :d] if emb.shape[1] >= d else np.pad(emb, ((0, 0), (0, d - emb.shape[1])))


class Denoiser:
    """Noise predictor: input projection plus step embedding, then two
    hidden layers of width 2d."""

    def __init__(self, d: int, seed: int, name: str = "denoiser"):
        self.d = d
        self.w_in = param(f"{name}/w_in", (d, d), seed)
        self.b_in = param(f"{name}/b_in", (1, d), seed, scheme="zeros")
        self.w1 = param(f"{name}/w1", (d, 2 * d), seed)
        self.b1 = param(f"{name}/b1", (1, 2 * d), seed, scheme="zeros")
        self.w2 = param(f"{name}/w2", (2 * d, 2 * d), seed)
        self.b2 = param(f"{name}/b2", (1, 2 * d), seed, scheme="zeros")
        # zero-init output: an untrained predictor then outputs eps = 0, so
        # refinement starts as a near-identity instead of injecting garbage
        self.w_out = param(f"{name}/w_out", (2 * d, d), seed, scheme="zeros")
        self.b_out = param(f"{name}/b_out", (1, d), seed, scheme="zeros")

    @property
    def params(self):
        return [self.w_in, self.b_in, self.w1, self.b1,
                self.w2, self.b2, self.w_out, self.b_out]

    def predict(self, x_t: Tensor, t) -> Tensor:
        x_t = Tensor._lift(x_t)
        if x_t.data.shape[1] != self.d:
            raise ShapeError(f"denoiser dim {self.d}, input {x_t.shape}")
        temb = Tensor(time_embedding(t, self.d))
        u = ad.matmul(x_t, self.w_in) + self.b_in + temb
        h = ad.relu(ad.matmul(u, self.w1) + self.b1)
        h = ad.relu(ad.matmul(h, self.w2) + self.b2)
        return ad.matmul(h, self.w_out) + self.b_out


class ConditionalDenoiser:
    """Wraps a Denoiser with feature-wise linear modulation by a condition
    vector: eps(x, t, c) = eps(x, t) * (1 + c Wg) + c Wb.

    Modulation weights start at zero, so the wrapped predictor is recovered
    exactly until they train away from zero.
    """

    def __init__(self, base: Denoiser, seed: int, name: str = "cond_denoiser"):
        self.base = base
        d = base.d
        self.w_gamma = param(f"{name}/w_gamma", (d, d), seed, scheme="zeros")
        self.w_beta = param(f"{name}/w_beta", (d, d), seed, scheme="zeros")

    @property
    def params(self):
        return [self.w_gamma, self.w_beta]

    @property
    def all_params(self):
        return self.base.params + self.params

    def predict(self, x_t: Tensor, t, c) -> Tensor:
        c = Tensor._lift(c)
        if c.data.shape != Tensor._lift(x_t).data.shape:
            raise ShapeError(f"condition shape {c.shape} != input {Tensor._lift(x_t).shape}")
        eps = self.base.predict(x_t, t)
        gamma = ad.matmul(c, self.w_gamma)
        beta = ad.matmul(c, self.w_beta)
        return eps * (gamma + 1.0) + beta


# ---------------------------------------------------------------------------
# forward / reverse processes
# ---------------------------------------------------------------------------

def forward_sample(x0, t: int, eps, sched: DiffusionSchedule):
    """Closed-form noisy sample x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps."""
    sched.check_step(t)
    ab = sched.alpha_bar[t]
    x0 = Tensor._lift(x0)
    eps = Tensor._lift(eps)
    return x0 * np.sqrt(ab) + eps * np.sqrt(1.0 - ab)


def reverse_step(x_t, t: int, eps_hat, sched: DiffusionSchedule, z=None):
    """One ancestral sampling step; z is forced to zero at t = 1."""
    sched.check_step(t)
    a = sched.alpha[t - 1]
    ab = sched.alpha_bar[t]
    x_t = Tensor._lift(x_t)
    eps_hat = Tensor._lift(eps_hat)
    mean = (x_t - eps_hat * ((1.0 - a) / np.sqrt(1.0 - ab))) * (1.0 / np.sqrt(a))
    if t == 1 or z is None:
        return mean
    return mean + Tensor._lift(z) * np.sqrt(sched.beta[t - 1])


def uncond_loss(x0: np.ndarray, denoiser: Denoiser, sched: DiffusionSchedule,
                rng: np.random.Generator) -> Tensor:
    """Per-row noise-prediction MSE with one uniform step and one noise draw
    per row. `x0` is a constant target (no gradient into the embeddings)."""
    x0 = np.asarray(getattr(x0, "data", x0))
    n, d = x0.shape
    t = rng.integers(1, sched.T + 1, size=n)
    eps = rng.standard_normal((n, d))
    ab = sched.alpha_bar[t][:, None]
    x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    eps_hat = denoiser.predict(Tensor(x_t), t)
    return ad.mse(eps_hat, Tensor(eps))


def cond_loss(x0: np.ndarray, c: np.ndarray, cdenoiser: ConditionalDenoiser,
              sched: DiffusionSchedule, rng: np.random.Generator) -> Tensor:
    """Conditional variant of `uncond_loss`; c rows are graph-propagated node
    representations aligned with x0 rows, also held constant."""
    x0 = np.asarray(getattr(x0, "data", x0))
    c = np.asarray(getattr(c, "data", c))
    if c.shape != x0.shape:
        raise ShapeError(f"condition shape {c.shape} != x0 {x0.shape}")
    n, d = x0.shape
    t = rng.integers(1, sched.T + 1, size=n)
    eps = rng.standard_normal((n, d))
    ab = sched.alpha_bar[t][:, None]
    x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    eps_hat = cdenoiser.predict(Tensor(x_t), t, Tensor(c))
    return ad.mse(eps_hat, Tensor(eps))


def _reverse_from(x: Tensor, t_star: int, predict, sched: DiffusionSchedule,
                  rng: np.random.Generator) -> Tensor:
    for t in range(t_star, 0, -1):
        eps_hat = predict(x, t)
        z = rng.standard_normal(x.data.shape) if t > 1 else None
        x = reverse_step(x, t, eps_hat, sched, z)
    return x


def noise_then_denoise(x: Tensor, t_star: int, predict, sched: DiffusionSchedule,
                       rng: np.random.Generator) -> Tensor:
    """Diffuse forward to t_star, then reverse back to 0 with `predict`."""
    if t_star == 0:
        return Tensor._lift(x)
    if t_star > sched.T:
        raise ContractError(f"t_star {t_star} > T {sched.T}")
    x = Tensor._lift(x)
    x_t = forward_sample(x, t_star, rng.standard_normal(x.data.shape), sched)
    return _reverse_from(x_t, t_star, predict, sched, rng)


def refine(x: Tensor, c: Tensor, stage1: Denoiser, stage2: ConditionalDenoiser,
           sched: DiffusionSchedule, t_star: int = 5,
           rng: np.random.Generator | None = None) -> Tensor:
    """Two-stage representation cleanup.

    Noise-then-denoise with the plain predictor, then again with the
    modulated predictor guided by c. t_star = 0 is the identity.
    Differentiable in x, c, and both predictors' parameters.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    c = Tensor._lift(c)
    x = noise_then_denoise(x, t_star, stage1.predict, sched, rng)
    return noise_then_denoise(x, t_star, lambda xx, tt: stage2.predict(xx, tt, c),
                              sched, rng)


def sample_chain(predict, sched: DiffusionSchedule, shape,
                 rng: np.random.Generator) -> np.ndarray:
    """Full T-step generation from pure noise (diagnostic use)."""
    x = Tensor(rng.standard_normal(shape))
    return _reverse_from(x, sched.T, predict, sched, rng).data
