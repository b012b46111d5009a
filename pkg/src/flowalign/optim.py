"""Gradient post-processing and parameter updates.

Functional cores (`clip_global_norm`, `adam_update`) plus a thin `Adam`
wrapper that owns per-parameter state for a named parameter dict.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


def global_grad_norm(grads) -> float:
    """L2 norm of all gradients stacked into one vector."""
    total = 0.0
    for g in grads:
        arr = g.data if isinstance(g, Tensor) else np.asarray(g)
        total += float(np.dot(arr.reshape(-1), arr.reshape(-1)))
    return float(np.sqrt(total))


def clip_global_norm(grads, max_norm: float):
    """Scale every gradient by max_norm/g when the global L2 norm g exceeds max_norm.

    Returns new arrays (inputs untouched); below the threshold the inputs are
    returned as-is.
    """
    if max_norm <= 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    arrays = [g.data if isinstance(g, Tensor) else np.asarray(g) for g in grads]
    norm = global_grad_norm(arrays)
    if norm <= max_norm or norm == 0.0:
        return list(arrays)
    scale = max_norm / norm
    return [(a * scale).astype(a.dtype, copy=False) for a in arrays]


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @staticmethod
    def zeros_like(param: np.ndarray) -> "AdamState":
        return AdamState(m=np.zeros_like(param), v=np.zeros_like(param), step=0)


def adam_update(param, grad, state: AdamState, lr: float = 1e-4,
                beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam step; returns (new_param, new_state)."""
    p = param.data if isinstance(param, Tensor) else np.asarray(param)
    g = grad.data if isinstance(grad, Tensor) else np.asarray(grad)
    step = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * (g * g)
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    new_p = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_p.astype(p.dtype, copy=False), AdamState(m=m, v=v, step=step)


@dataclass
class Adam:
    """Adam over a dict of named parameter Tensors, with optional clipping.

    ``lr_scale`` maps parameter-name prefixes to learning-rate multipliers
    (longest matching prefix wins), e.g. to slow an adversarial branch.
    """

    params: dict
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_scale: dict = field(default_factory=dict)
    _state: dict = field(default_factory=dict)

    def _lr_for(self, name: str) -> float:
        best = ""
        for prefix in self.lr_scale:
            if name.startswith(prefix) and len(prefix) > len(best):
                best = prefix
        return self.lr * self.lr_scale.get(best, 1.0) if best else self.lr

    def step(self, clip_norm: float | None = None) -> float:
        """Apply one update from the accumulated grads; returns the post-clip norm."""
        names = [n for n, p in self.params.items() if p.grad is not None]
        grads = [self.params[n].grad for n in names]
        if clip_norm is not None:
            grads = clip_global_norm(grads, clip_norm)
        applied_norm = global_grad_norm(grads)
        for name, g in zip(names, grads):
            p = self.params[name]
            st = self._state.get(name)
            if st is None:
                st = AdamState.zeros_like(p.data)
            new_data, st = adam_update(p.data, g, st, self._lr_for(name),
                                       self.beta1, self.beta2, self.eps)
            p.data = new_data
            self._state[name] = st
        return applied_norm

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
