"""Seeded RNG streams, Xavier initialization, and the Adam optimizer."""

from __future__ import annotations

import hashlib

import numpy as np

from .autodiff import Tensor
from .errors import ContractError, TrainingError


def named_stream(seed: int, name: str) -> np.random.Generator:
    """Counter-based Philox generator keyed by (seed, name).

    Streams for distinct names are independent, so adding or removing a
    consumer never shifts another component's draws. Philox is stable
    across platforms and numpy versions per the numpy BitGenerator docs.
    """
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    key = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


def xavier_init(shape, rng) -> Tensor:
    """Uniform Xavier/Glorot initialization for a weight matrix.

    `rng` is either an integer seed or a Generator. Bound is
    sqrt(6 / (fan_in + fan_out)) with fan_in/fan_out the first two dims.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) < 2:
        raise ContractError(f"xavier_init expects >= 2 dims, got {shape}")
    if isinstance(rng, (int, np.integer)):
        rng = named_stream(int(rng), "xavier")
    bound = np.sqrt(6.0 / (shape[0] + shape[1]))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def param(name: str, shape, seed: int, scheme: str = "xavier") -> Tensor:
    """Create a named trainable tensor from its own derived stream.

    Each parameter draws from a stream keyed by its name, so the presence
    of unrelated parameters cannot perturb its initial values.
    """
    stream = named_stream(seed, f"init/{name}")
    shape = tuple(int(s) for s in shape)
    if scheme == "xavier":
        t = xavier_init(shape, stream)
    elif scheme == "nonneg":
        # non-negative start for weight-clamped layers, so the projection
        # step does not zero out half the layer immediately
        t = xavier_init(shape, stream)
        t.data = np.abs(t.data)
    elif scheme == "zeros":
        t = Tensor(np.zeros(shape), requires_grad=True)
    elif scheme == "normal":
        t = Tensor(0.01 * stream.standard_normal(shape), requires_grad=True)
    else:
        raise ContractError(f"unknown init scheme {scheme!r}")
    t.name = name
    return t


class Adam:
    """Adam with bias correction over a fixed parameter list."""

    def __init__(self, params, lr=0.04, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self, grads=None):
        """One update from explicit `grads` or each parameter's ``.grad``."""
        if grads is None:
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if not np.all(np.isfinite(g)):
                raise TrainingError(
                    f"non-finite gradient for parameter {p.name or i} at step {self.t}"
                )
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / b1t
            v_hat = self.v[i] / b2t
            p.assign_(p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))

    def state_arrays(self) -> dict:
        """Flat view of optimizer state for checkpointing."""
        out = {"adam/t": np.asarray([self.t], dtype=np.int64)}
        for i in range(len(self.params)):
            out[f"adam/m/{i}"] = self.m[i]
            out[f"adam/v/{i}"] = self.v[i]
        return out

    def load_state_arrays(self, arrays: dict) -> None:
        self.t = int(arrays["adam/t"][0])
        for i in range(len(self.params)):
            self.m[i] = np.array(arrays[f"adam/m/{i}"])
            self.v[i] = np.array(arrays[f"adam/v/{i}"])
