"""Multi-instance modulation block.

A squeeze-excite channel gate whose output is multiplied by a second gate
computed from the instance selector, so one set of convolution filters can
serve every selector value::

    s = mean_{p,q} X[:, p, q, :]                     # squeeze
    e = sigmoid(W2 relu(W1 s + b1) + b2)             # excite
    v = sigmoid(W2' relu(W1' sel + b1') + b2')       # selector embedding
    X'[..., c] = (v_c * e_c) * X[..., c]

All functions take batched NHWC tensors; ``sel`` is ``(B, N)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn_core as nn
from .nn_core import ParameterStore, ShapeError, Tensor
from .target_assignment import as_selector


@dataclass(frozen=True)
class MimbConfig:
    channels: int
    reduction: int = 4
    n_slots: int = 2

    def __post_init__(self):
        if self.channels < self.reduction:
            raise ValueError(f"channels ({self.channels}) must be >= reduction ({self.reduction})")
        if self.n_slots < 1:
            raise ValueError(f"n_slots must be >= 1, got {self.n_slots}")

    @property
    def hidden(self) -> int:
        return self.channels // self.reduction

    def param_count(self) -> int:
        C, h, N = self.channels, self.hidden, self.n_slots
        excite = C * h * 2 + h + C
        embed = N * h + h * C + h + C
        return excite + embed


@dataclass
class MimbParams:
    config: MimbConfig
    ex_w1: Tensor
    ex_b1: Tensor
    ex_w2: Tensor
    ex_b2: Tensor
    em_w1: Tensor
    em_b1: Tensor
    em_w2: Tensor
    em_b2: Tensor

    def tensors(self) -> dict[str, Tensor]:
        return {k: getattr(self, k) for k in
                ("ex_w1", "ex_b1", "ex_w2", "ex_b2", "em_w1", "em_b1", "em_w2", "em_b2")}

    def count(self) -> int:
        return sum(t.size for t in self.tensors().values())

    @classmethod
    def create(cls, store: ParameterStore, prefix: str, config: MimbConfig,
               rng: np.random.Generator | None = None) -> "MimbParams":
        """Register the block's weights; He-uniform weights and zero biases, or all zeros without ``rng``."""
        C, h, N = config.channels, config.hidden, config.n_slots

        def w(shape, fan_in):
            return nn.he_uniform(rng, shape, fan_in) if rng is not None else np.zeros(shape)

        return cls(
            config,
            store.add(f"{prefix}.excite.fc1.weight", w((C, h), C)),
            store.add(f"{prefix}.excite.fc1.bias", np.zeros(h)),
            store.add(f"{prefix}.excite.fc2.weight", w((h, C), h)),
            store.add(f"{prefix}.excite.fc2.bias", np.zeros(C)),
            store.add(f"{prefix}.embed.fc1.weight", w((N, h), N)),
            store.add(f"{prefix}.embed.fc1.bias", np.zeros(h)),
            store.add(f"{prefix}.embed.fc2.weight", w((h, C), h)),
            store.add(f"{prefix}.embed.fc2.bias", np.zeros(C)),
        )


def squeeze(X: Tensor) -> Tensor:
    return nn.global_avg_pool(X)


def excite(s: Tensor, params: MimbParams) -> Tensor:
    hidden = nn.relu(nn.fully_connected(s, params.ex_w1, params.ex_b1))
    return nn.sigmoid(nn.fully_connected(hidden, params.ex_w2, params.ex_b2))


def selector_matrix(selector, batch: int, n_slots: int, dtype=np.float64) -> np.ndarray:
    """Stack selector weights into ``(batch, n_slots)``.

    Accepts an int, an ``InstanceSelector``, a length-N weight vector
    (shared by the batch) or a ``(batch, N)`` array of per-sample weights.
    """
    if isinstance(selector, np.ndarray) and selector.ndim == 2:
        if selector.shape != (batch, n_slots):
            raise ShapeError(f"selector matrix {selector.shape} != ({batch}, {n_slots})")
        if (selector < 0).any() or not np.allclose(selector.sum(axis=1), 1.0, rtol=0.0, atol=1e-9):
            raise ValueError("selector rows must be >= 0 and sum to 1")
        return selector.astype(dtype, copy=False)
    sel = as_selector(selector, n_slots)
    return np.broadcast_to(sel.weights.astype(dtype), (batch, n_slots))


def embed(selector, params: MimbParams, batch: int = 1, dtype=None) -> Tensor:
    dtype = dtype if dtype is not None else params.em_w1.dtype
    sel = Tensor(selector_matrix(selector, batch, params.config.n_slots, dtype))
    hidden = nn.relu(nn.fully_connected(sel, params.em_w1, params.em_b1))
    return nn.sigmoid(nn.fully_connected(hidden, params.em_w2, params.em_b2))


def modulate(X: Tensor, e: Tensor, v: Tensor) -> Tensor:
    """Scale channel ``c`` of ``X`` by ``v_c * e_c``."""
    X, e, v = nn.as_tensor(X), nn.as_tensor(e), nn.as_tensor(v)
    if X.ndim != 4 or e.shape != (X.shape[0], X.shape[3]) or e.shape != v.shape:
        raise ShapeError(f"modulate: features {X.shape}, excite {e.shape}, embed {v.shape}")
    return nn.mul(X, nn.mul(v, e))


def mimb_forward(X: Tensor, selector, params: MimbParams, bypass_gates: bool = False) -> Tensor:
    """Full block. ``bypass_gates`` replaces both gates by ones (a diagnostic control)."""
    X = nn.as_tensor(X)
    if X.ndim != 4 or X.shape[3] != params.config.channels:
        raise ShapeError(f"mimb: expected (B,P,Q,{params.config.channels}) features, got {X.shape}")
    if bypass_gates:
        return X
    e = excite(squeeze(X), params)
    v = embed(selector, params, batch=X.shape[0], dtype=X.dtype)
    return modulate(X, e, v)
