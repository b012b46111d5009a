"""Displacement transport along a straight path from the zero field.

The alignment trajectory runs from x_0 = 0 (zero displacement, the identity
grid) to x_1 = w_gt. The path is linear, x_t = t * w_gt, so its velocity is
constant and equal to w_gt at every t; a learned velocity net is integrated
with a plain Euler stepper to recover the displacement.

Everything here is generic over plain numpy arrays and autodiff Tensors, so
the same solver serves both oracle tests and the unrolled training forward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import DomainError, NumericError, ShapeError, Tensor


@dataclass(frozen=True)
class SolverConfig:
    """Number of Euler steps; the step size is derived as 1/n_steps."""

    n_steps: int = 4

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return 1.0 / self.n_steps


@dataclass
class FlowState:
    """Intermediate displacement x plus the scalar time t in [0, 1]."""

    x: object
    t: float

    def __post_init__(self):
        if not 0.0 <= self.t <= 1.0:
            raise DomainError(f"flow time must lie in [0, 1], got {self.t}")


def _values(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def interpolate_state(w_gt, t: float) -> FlowState:
    """Path point x_t = t * w_gt (zero-field start, linear ramp to w_gt)."""
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"interpolation time must lie in [0, 1], got {t}")
    if t == 0.0:
        x = w_gt * 0.0 if isinstance(w_gt, Tensor) else np.zeros_like(_values(w_gt))
    elif t == 1.0:
        x = w_gt if isinstance(w_gt, Tensor) else np.array(_values(w_gt), copy=True)
    else:
        x = w_gt * float(t)
    return FlowState(x=x, t=float(t))


def target_velocity(w_gt):
    """Regression target for the velocity net: the constant path velocity w_gt."""
    return w_gt


def euler_solve(velocity_fn, config: SolverConfig, context=None, x0=None):
    """Integrate dx/dt = velocity_fn(state, context) from t=0 to t=1.

    ``x0`` supplies the zero displacement field that seeds the solve (the
    solver cannot infer grid shape or array kind on its own); it must be
    exactly zero. The velocity is evaluated at times t_{n-1} = (n-1)/N and
    the state advances by velocity * dt each step.
    """
    if x0 is None:
        raise ValueError("euler_solve needs an explicit zero field x0")
    if np.any(_values(x0) != 0.0):
        raise ValueError("x0 must be the zero displacement field")
    n = config.n_steps
    dt = config.dt
    x = x0
    for step in range(1, n + 1):
        t_prev = (step - 1) / n
        v = velocity_fn(FlowState(x=x, t=t_prev), context)
        vals = _values(v)
        if vals.shape != _values(x).shape:
            raise ShapeError(f"velocity shape {vals.shape} != state shape {_values(x).shape}")
        if not np.isfinite(vals).all():
            raise NumericError(f"non-finite velocity at solver step {step} (t={t_prev:g})")
        x = x + v * dt
    return x


def flow_matching_loss(w_n, w_gt, cost: str = "l2",
                       charbonnier_eps: float = 1e-3,
                       channel_axis: int = -1):
    """Mean over grid points of rho(||w_n - w_gt||_2).

    cost "l2" uses rho = identity (mean endpoint norm); "charbonnier" uses
    the smooth rho(r) = sqrt(r^2 + eps^2) - eps. Accepts Tensors (returns a
    scalar Tensor on the graph) or plain arrays (returns a float).
    """
    tensor_in = isinstance(w_n, Tensor) or isinstance(w_gt, Tensor)
    a = w_n if isinstance(w_n, Tensor) else Tensor(_values(w_n))
    b = w_gt if isinstance(w_gt, Tensor) else Tensor(_values(w_gt))
    if a.shape != b.shape:
        raise ShapeError(f"displacement shapes differ: {a.shape} vs {b.shape}")
    axis = channel_axis % a.data.ndim
    residual = T.sub(a, b)
    if cost == "l2":
        per_point = T.l2_norm(residual, axis=axis)
    elif cost == "charbonnier":
        per_point = T.sub(T.l2_norm(residual, axis=axis, eps=charbonnier_eps),
                          charbonnier_eps)
    else:
        raise ValueError(f"unknown cost {cost!r} (expected 'l2' or 'charbonnier')")
    loss = T.mean(per_point)
    return loss if tensor_in else float(loss.data)
