"""Central finite-difference verification of every differentiable op.

Each named check builds a small float64 scenario, computes analytic
gradients via backward, and compares them elementwise against central
differences (h = 1e-5). Inputs are drawn away from kinks (relu at 0,
bilinear sampling at integer coordinates) where the derivative is not
defined. The gradient-reversal op is checked exactly rather than by FD:
by construction its backward is -alpha times the true derivative.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import model as M
from . import tensor as T
from .flow import SolverConfig, euler_solve, flow_matching_loss
from .tensor import Tensor

FD_STEP = 1e-5
DEFAULT_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    max_err: float
    tol: float
    passed: bool
    seconds: float


def numeric_gradient(loss_fn, inputs: dict, name: str, h: float = FD_STEP) -> np.ndarray:
    """Central-difference d loss / d inputs[name], elementwise."""
    base = {k: v.copy() for k, v in inputs.items()}
    x = base[name]
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    with T.no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = loss_fn({k: Tensor(v) for k, v in base.items()})
            flat[i] = orig - h
            f_minus = loss_fn({k: Tensor(v) for k, v in base.items()})
            flat[i] = orig
            gflat[i] = (float(f_plus.data) - float(f_minus.data)) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.abs(analytic), np.abs(numeric)) + 1e-7
    return float((np.abs(analytic - numeric) / denom).max())


def check_gradients(loss_fn, inputs: dict, h: float = FD_STEP) -> float:
    """Max relative error over all inputs of analytic vs numeric gradients."""
    tensors = {k: Tensor(v.copy(), requires_grad=True) for k, v in inputs.items()}
    loss = loss_fn(tensors)
    loss.backward()
    worst = 0.0
    for name, t in tensors.items():
        if t.grad is None:
            raise AssertionError(f"no gradient accumulated for input {name!r}")
        num = numeric_gradient(loss_fn, inputs, name, h)
        worst = max(worst, relative_error(t.grad, num))
    return worst


def _rng():
    return np.random.default_rng(20240817)


def _weighted(out: Tensor, rng) -> Tensor:
    """Reduce an op output to a scalar with a fixed random weighting."""
    w = Tensor(rng.normal(size=out.shape))
    return T.sum_(T.mul(out, w))


# -- individual checks --------------------------------------------------------------


def _check_elementwise_binary():
    rng = _rng()
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4,))  # broadcasts over the leading axis
    wsum = rng.normal(size=(3, 4))

    def loss(ts):
        w = Tensor(wsum)
        out = T.add(ts["a"], ts["b"])
        out = T.mul(out, T.sub(ts["a"], 0.5))
        return T.sum_(T.mul(out, w))

    return check_gradients(loss, {"a": a, "b": b})


def _check_unary_suite():
    rng = _rng()
    x = rng.uniform(0.5, 2.0, size=(3, 3))  # positive: valid for log
    y = rng.normal(size=(3, 3))
    y = np.where(np.abs(y) < 0.1, 0.3, y)  # keep relu away from its kink

    def loss(ts):
        pieces = [
            T.sum_(T.log(ts["x"])),
            T.sum_(T.exp(T.mul(ts["x"], 0.3))),
            T.sum_(T.relu(ts["y"])),
            T.sum_(T.sigmoid(ts["y"])),
        ]
        return T.add(T.add(pieces[0], pieces[1]), T.add(pieces[2], pieces[3]))

    return check_gradients(loss, {"x": x, "y": y})


def _check_reductions():
    rng = _rng()
    x = rng.normal(size=(2, 3, 4)) + 0.2

    def loss(ts):
        a = T.mean(ts["x"], axis=(0, 2))
        b = T.sum_(ts["x"], axis=1, keepdims=True)
        c = T.l2_norm(ts["x"], axis=1)
        d = T.l2_norm(ts["x"], axis=2, eps=1e-3)
        return T.add(T.add(T.sum_(a), T.mean(b)), T.add(T.sum_(c), T.sum_(d)))

    return check_gradients(loss, {"x": x})


def _check_concat_reshape():
    rng = _rng()
    a = rng.normal(size=(2, 3))
    b = rng.normal(size=(2, 2))
    w = rng.normal(size=(10,))

    def loss(ts):
        cat = T.concat([ts["a"], ts["b"]], axis=1)
        return T.sum_(T.mul(T.reshape(cat, (10,)), Tensor(w)))

    return check_gradients(loss, {"a": a, "b": b})


def _check_matmul():
    rng = _rng()
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    w = rng.normal(size=(3, 2))

    def loss(ts):
        return T.sum_(T.mul(T.matmul(ts["a"], ts["b"]), Tensor(w)))

    return check_gradients(loss, {"a": a, "b": b})


def _check_conv2d_stride1():
    rng = _rng()
    x = rng.normal(size=(2, 2, 5, 5))
    k = rng.normal(size=(3, 2, 3, 3))
    w = rng.normal(size=(2, 3, 5, 5))

    def loss(ts):
        return T.sum_(T.mul(T.conv2d(ts["x"], ts["k"], stride=1, pad=1), Tensor(w)))

    return check_gradients(loss, {"x": x, "k": k})


def _check_conv2d_stride2():
    rng = _rng()
    x = rng.normal(size=(1, 2, 6, 6))
    k = rng.normal(size=(2, 2, 3, 3))
    w = rng.normal(size=(1, 2, 3, 3))

    def loss(ts):
        return T.sum_(T.mul(T.conv2d(ts["x"], ts["k"], stride=2, pad=1), Tensor(w)))

    return check_gradients(loss, {"x": x, "k": k})


def _check_upsample2x():
    rng = _rng()
    x = rng.normal(size=(1, 2, 3, 3))
    w = rng.normal(size=(1, 2, 6, 6))

    def loss(ts):
        return T.sum_(T.mul(T.upsample2x(ts["x"]), Tensor(w)))

    return check_gradients(loss, {"x": x})


def _check_bilinear_sample():
    rng = _rng()
    img = rng.normal(size=(2, 5, 5))
    # Coordinates strictly between lattice points, some outside the image.
    coords = rng.uniform(-0.6, 4.6, size=(3, 3, 2))
    coords = np.floor(coords) + rng.uniform(0.25, 0.75, size=coords.shape)
    w = rng.normal(size=(2, 3, 3))

    def loss(ts):
        return T.sum_(T.mul(T.bilinear_sample(ts["img"], ts["coords"]), Tensor(w)))

    return check_gradients(loss, {"img": img, "coords": coords})


def _check_grad_reverse_exact():
    """Forward bit-identity and backward == -alpha * upstream, to machine precision."""
    rng = _rng()
    x = rng.normal(size=(4, 3))
    w = rng.normal(size=(4, 3))
    worst = 0.0
    for alpha in (0.0, 0.25, 1.0):
        xt = Tensor(x.copy(), requires_grad=True)
        out = T.grad_reverse(xt, alpha)
        if not np.array_equal(out.data, x):
            return np.inf
        T.sum_(T.mul(out, Tensor(w))).backward()
        expected = -alpha * w
        worst = max(worst, float(np.abs(xt.grad - expected).max()))
    return worst


def _check_euler_unrolled():
    """2-step Euler on a 4x4 grid through a conv velocity net, loss included."""
    rng = _rng()
    ctx = rng.normal(size=(1, 3, 4, 4))
    kernel = rng.normal(size=(2, 5, 3, 3)) * 0.4
    target = rng.normal(size=(1, 2, 4, 4))

    def loss(ts):
        def v_fn(state, context):
            stacked = T.concat([state.x, context], axis=1)
            return T.conv2d(stacked, ts["kernel"], stride=1, pad=1)

        w_n = euler_solve(v_fn, SolverConfig(2), ts["ctx"],
                          x0=Tensor(np.zeros((1, 2, 4, 4))))
        return flow_matching_loss(w_n, Tensor(target), channel_axis=1)

    return check_gradients(loss, {"ctx": ctx, "kernel": kernel})


def _check_film_block():
    """One FiLM-modulated residual block on a 4x4 grid."""
    rng = _rng()
    h0 = rng.normal(size=(1, 3, 4, 4))
    k1 = rng.normal(size=(3, 3, 3, 3)) * 0.5
    k2 = rng.normal(size=(3, 3, 3, 3)) * 0.5
    emb = rng.normal(size=(1, 4))
    wg = rng.normal(size=(4, 3))
    wb = rng.normal(size=(4, 3))
    wsum = rng.normal(size=(1, 3, 4, 4))

    def loss(ts):
        y = T.conv2d(ts["h0"], ts["k1"], stride=1, pad=1)
        gamma = T.reshape(T.matmul(ts["emb"], ts["wg"]), (1, 3, 1, 1))
        beta = T.reshape(T.matmul(ts["emb"], ts["wb"]), (1, 3, 1, 1))
        y = T.relu(T.add(T.mul(y, gamma), beta))
        y = T.conv2d(y, ts["k2"], stride=1, pad=1)
        out = T.add(ts["h0"], y)
        return T.sum_(T.mul(out, Tensor(wsum)))

    return check_gradients(loss, {"h0": h0, "k1": k1, "k2": k2,
                                  "emb": emb, "wg": wg, "wb": wb})


def _check_discriminator_branch():
    """Pool + MLP + sigmoid + clamped BCE; true gradients (alpha=0 path)."""
    rng = _rng()
    feat_s = rng.normal(size=(2, 3, 4, 4))
    feat_t = rng.normal(size=(2, 3, 4, 4))
    w1 = rng.normal(size=(3, 4)) * 0.6
    b1 = rng.normal(size=(4,)) * 0.1
    w2 = rng.normal(size=(4, 1)) * 0.6

    def loss(ts):
        def head(feat):
            pooled = T.mean(feat, axis=(2, 3))
            h = T.relu(T.add(T.matmul(pooled, ts["w1"]), ts["b1"]))
            return T.reshape(T.sigmoid(T.matmul(h, ts["w2"])), (feat.shape[0],))

        return M.domain_loss(head(ts["feat_s"]), head(ts["feat_t"]))

    return check_gradients(loss, {"feat_s": feat_s, "feat_t": feat_t,
                                  "w1": w1, "b1": b1, "w2": w2})


def _check_end_to_end_miniature():
    """Full pipeline gradients on a 16x16 config (tolerance 1e-3)."""
    cfg = M.ModelConfig(
        encoder=M.EncoderConfig(base_channels=4),
        head=M.VelocityHeadConfig(hidden_channels=6, n_residual_blocks=1, time_embed_dim=4),
        discriminator=M.DomainDiscriminatorConfig(hidden_dim=4),
        in_channels=1,
    )
    params = M.init_params(cfg, seed=3, dtype=np.float64)
    rng = _rng()
    i_s = rng.uniform(0.0, 1.0, size=(1, 1, 16, 16))
    i_t = rng.uniform(0.0, 1.0, size=(1, 1, 16, 16))
    target = rng.normal(size=(1, 2, 4, 4)) * 0.5
    arrays = {k: p.data for k, p in params.items()}

    def loss(ts):
        w_n, fine_s, fine_t = M.solve_displacement(
            Tensor(i_s), Tensor(i_t), ts, cfg, SolverConfig(2))
        l_fm = flow_matching_loss(w_n, Tensor(target), channel_axis=1)
        p_s = M.discriminate_domain(fine_s, ts, 0.0)
        p_t = M.discriminate_domain(fine_t, ts, 0.0)
        return T.add(l_fm, T.mul(M.domain_loss(p_s, p_t), 0.01))

    return check_gradients(loss, arrays)


CHECKS = [
    ("elementwise_binary", _check_elementwise_binary, DEFAULT_TOL),
    ("unary_suite", _check_unary_suite, DEFAULT_TOL),
    ("reductions", _check_reductions, DEFAULT_TOL),
    ("concat_reshape", _check_concat_reshape, DEFAULT_TOL),
    ("matmul", _check_matmul, DEFAULT_TOL),
    ("conv2d_stride1", _check_conv2d_stride1, DEFAULT_TOL),
    ("conv2d_stride2", _check_conv2d_stride2, DEFAULT_TOL),
    ("upsample2x", _check_upsample2x, DEFAULT_TOL),
    ("bilinear_sample", _check_bilinear_sample, DEFAULT_TOL),
    ("grad_reverse_exact", _check_grad_reverse_exact, 1e-12),
    ("euler_unrolled_2step", _check_euler_unrolled, DEFAULT_TOL),
    ("film_residual_block", _check_film_block, DEFAULT_TOL),
    ("discriminator_branch", _check_discriminator_branch, DEFAULT_TOL),
    ("end_to_end_miniature", _check_end_to_end_miniature, 1e-3),
]


def run_all(names=None) -> list[CheckResult]:
    results = []
    for name, fn, tol in CHECKS:
        if names and name not in names:
            continue
        start = time.perf_counter()
        err = float(fn())
        dt = time.perf_counter() - start
        results.append(CheckResult(name=name, max_err=err, tol=tol,
                                   passed=err < tol, seconds=dt))
    return results
