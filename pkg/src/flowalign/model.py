"""Trainable networks: feature encoder, velocity head, domain discriminator.

The encoder is a small conv pyramid producing stride-4 (fused) and stride-8
features. The velocity head runs on the stride-4 grid: the current
displacement state and the concatenated source/target features pass through
residual conv blocks whose activations are FiLM-modulated by a sinusoidal
time embedding. A discriminator behind a gradient-reversal op classifies
feature origin (source=0, target=1); it is a training-only branch.

The final velocity conv is zero-initialized, so an untrained model predicts
the zero field, i.e. the identity homography.

Displacement unit convention: the head's native fields are in stride-4 grid
cells; public outputs (forward_align) are converted to pixels (x4).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from . import geometry
from . import tensor as T
from .flow import SolverConfig, euler_solve
from .tensor import DomainError, FormatError, ShapeError, Tensor

FEATURE_STRIDE = 4


class CheckpointError(ValueError):
    """Checkpoint file malformed or incompatible with the model config."""


@dataclass(frozen=True)
class EncoderConfig:
    base_channels: int = 16
    levels: int = 2  # strides 4 and 8 relative to the input
    activation: str = "relu"

    @property
    def fine_channels(self) -> int:
        return 2 * self.base_channels


@dataclass(frozen=True)
class VelocityHeadConfig:
    hidden_channels: int = 64
    n_residual_blocks: int = 4
    time_embed_dim: int = 32


@dataclass(frozen=True)
class DomainDiscriminatorConfig:
    hidden_dim: int = 64
    alpha_mode: str = "ramp"  # "ramp" (0 -> alpha_max after warm-up) or "constant"
    alpha_max: float = 1.0


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = EncoderConfig()
    head: VelocityHeadConfig = VelocityHeadConfig()
    discriminator: DomainDiscriminatorConfig = DomainDiscriminatorConfig()
    in_channels: int = 3
    head_mode: str = "flow"  # "flow" (solver-unrolled velocity head) or "direct"

    @property
    def context_channels(self) -> int:
        return 2 * self.encoder.fine_channels


def config_hash(cfg: ModelConfig) -> str:
    return hashlib.sha256(repr(cfg).encode()).hexdigest()[:16]


def _head_param_count(ctx_channels: int, hidden: int, n_blocks: int,
                      time_dim: int, mode: str) -> int:
    """Analytic parameter count of the displacement head (plus time MLP)."""
    conv = lambda cin, cout, k: cout * cin * k * k + cout
    if mode == "flow":
        total = conv(ctx_channels + 2, hidden, 3)
        total += n_blocks * (2 * conv(hidden, hidden, 3) + 2 * (time_dim * hidden + hidden))
        total += conv(hidden, 2, 3)
        total += 2 * (time_dim * time_dim + time_dim)
        return total
    total = conv(ctx_channels, hidden, 3)
    total += n_blocks * 2 * conv(hidden, hidden, 3)
    total += conv(hidden, 2, 3)
    return total


def direct_hidden_channels(cfg: ModelConfig) -> int:
    """Hidden width for the one-shot regression head, budget-matched +-10%.

    The direct head has no FiLM or time-embedding parameters, so it widens
    until its count is closest to the flow head's (the capacity-controlled
    ablation baseline).
    """
    target = _head_param_count(cfg.context_channels, cfg.head.hidden_channels,
                               cfg.head.n_residual_blocks, cfg.head.time_embed_dim,
                               "flow")
    best, best_gap = cfg.head.hidden_channels, float("inf")
    for h in range(cfg.head.hidden_channels, 2 * cfg.head.hidden_channels + 1):
        count = _head_param_count(cfg.context_channels, h,
                                  cfg.head.n_residual_blocks, 0, "direct")
        gap = abs(count / target - 1.0)
        if gap < best_gap:
            best, best_gap = h, gap
    if best_gap > 0.1:
        raise ValueError(f"cannot budget-match the direct head (gap {best_gap:.2%})")
    return best


# -- parameter construction ------------------------------------------------------


def _kaiming(rng, shape, fan_in, dtype):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype)


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> dict:
    """Deterministic named parameter dict for the given config and seed."""
    rng = np.random.default_rng(seed)
    bc = cfg.encoder.base_channels
    cf = cfg.encoder.fine_channels
    hid = cfg.head.hidden_channels if cfg.head_mode == "flow" else direct_hidden_channels(cfg)
    d = cfg.head.time_embed_dim
    if d % 2:
        raise ValueError(f"time_embed_dim must be even, got {d}")
    params: dict[str, Tensor] = {}

    def conv(name, out_ch, in_ch, k, zero=False):
        w = (np.zeros((out_ch, in_ch, k, k), dtype) if zero
             else _kaiming(rng, (out_ch, in_ch, k, k), in_ch * k * k, dtype))
        params[f"{name}/w"] = Tensor(w, requires_grad=True)
        params[f"{name}/b"] = Tensor(np.zeros(out_ch, dtype), requires_grad=True)

    def linear(name, in_dim, out_dim, zero=False, bias_value=0.0):
        w = np.zeros((in_dim, out_dim), dtype) if zero else _kaiming(rng, (in_dim, out_dim), in_dim, dtype)
        params[f"{name}/w"] = Tensor(w, requires_grad=True)
        params[f"{name}/b"] = Tensor(np.full(out_dim, bias_value, dtype), requires_grad=True)

    conv("enc/conv1", bc, cfg.in_channels, 3)
    conv("enc/conv2", cf, bc, 3)
    conv("enc/conv3", cf, cf, 3)
    conv("enc/fuse", cf, 2 * cf, 1)

    head_in = cfg.context_channels + (2 if cfg.head_mode == "flow" else 0)
    conv("head/in", hid, head_in, 3)
    for i in range(cfg.head.n_residual_blocks):
        conv(f"head/block{i}/conv1", hid, hid, 3)
        conv(f"head/block{i}/conv2", hid, hid, 3)
        if cfg.head_mode == "flow":
            linear(f"head/block{i}/film_g", d, hid, bias_value=1.0)
            linear(f"head/block{i}/film_b", d, hid)
    # Zero-init final layer: the untrained model predicts the zero field,
    # i.e. the identity homography.
    conv("head/out", 2, hid, 3, zero=True)

    if cfg.head_mode == "flow":
        linear("time/fc1", d, d)
        linear("time/fc2", d, d)

    linear("disc/fc1", 5 * cf, cfg.discriminator.hidden_dim)
    linear("disc/fc2", cfg.discriminator.hidden_dim, 1, zero=True)
    return params


def count_params(params: dict) -> int:
    return int(sum(p.data.size for p in params.values()))


def _bias(params, name):
    b = params[f"{name}/b"]
    return T.reshape(b, (1, b.shape[0], 1, 1))


def _conv_block(x, params, name, stride=1, pad=1):
    return T.add(T.conv2d(x, params[f"{name}/w"], stride=stride, pad=pad), _bias(params, name))


# -- forward pieces --------------------------------------------------------------


def encode_features(img, params: dict, cfg: ModelConfig) -> dict:
    """Two-level feature pyramid: {"fine": stride-4 fused map, "coarse": stride-8 map}."""
    if img.data.ndim != 4:
        raise ShapeError(f"encoder expects (B, C, H, W), got {img.shape}")
    _, c, h, w = img.shape
    if c != cfg.in_channels:
        raise ShapeError(f"encoder expects {cfg.in_channels} input channels, got {c}")
    if h % 8 or w % 8:
        raise ShapeError(f"input extents must be divisible by 8, got {(h, w)}")
    c1 = T.relu(_conv_block(img, params, "enc/conv1", stride=2))
    c2 = T.relu(_conv_block(c1, params, "enc/conv2", stride=2))
    c3 = T.relu(_conv_block(c2, params, "enc/conv3", stride=2))
    up = T.upsample2x(c3)
    fused = T.relu(_conv_block(T.concat([c2, up], axis=1), params, "enc/fuse", pad=0))
    return {"fine": fused, "coarse": c3}


def build_context(f_s, f_t) -> Tensor:
    """Channel-wise concatenation [source features ; target features]."""
    if f_s.shape[2:] != f_t.shape[2:]:
        raise ShapeError(f"feature extents differ: {f_s.shape} vs {f_t.shape}")
    return T.concat([f_s, f_t], axis=1)


def time_embed(t: float, params: dict, cfg: ModelConfig) -> Tensor:
    """Sinusoidal features of t at geometric frequencies, refined by a small MLP."""
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"time must lie in [0, 1], got {t}")
    d = cfg.head.time_embed_dim
    k = d // 2
    dtype = params["time/fc1/w"].dtype
    freqs = np.geomspace(1.0, 100.0, k) if k > 1 else np.array([1.0])
    feats = np.concatenate([np.sin(t * freqs), np.cos(t * freqs)]).astype(dtype)
    e = Tensor(feats.reshape(1, d))
    e = T.relu(T.add(T.matmul(e, params["time/fc1/w"]), params["time/fc1/b"]))
    return T.add(T.matmul(e, params["time/fc2/w"]), params["time/fc2/b"])


def _film(y, emb, params, name):
    gamma = T.add(T.matmul(emb, params[f"{name}/film_g/w"]), params[f"{name}/film_g/b"])
    beta = T.add(T.matmul(emb, params[f"{name}/film_b/w"]), params[f"{name}/film_b/b"])
    c = gamma.shape[1]
    return T.add(T.mul(y, T.reshape(gamma, (1, c, 1, 1))), T.reshape(beta, (1, c, 1, 1)))


def predict_velocity(x_t, t: float, context, params: dict, cfg: ModelConfig) -> Tensor:
    """Velocity field on the stride-4 grid, conditioned on state, time and context."""
    if cfg.head_mode != "flow":
        raise ValueError("predict_velocity requires head_mode='flow'")
    if x_t.shape[2:] != context.shape[2:]:
        raise ShapeError(f"state grid {x_t.shape} does not match context {context.shape}")
    emb = time_embed(t, params, cfg)
    h = T.relu(_conv_block(T.concat([x_t, context], axis=1), params, "head/in"))
    for i in range(cfg.head.n_residual_blocks):
        y = _conv_block(h, params, f"head/block{i}/conv1")
        y = T.relu(_film(y, emb, params, f"head/block{i}"))
        y = _conv_block(y, params, f"head/block{i}/conv2")
        h = T.add(h, y)
    return _conv_block(h, params, "head/out")


def predict_direct(context, params: dict, cfg: ModelConfig) -> Tensor:
    """One-shot displacement regression head (capacity-matched ablation baseline)."""
    if cfg.head_mode != "direct":
        raise ValueError("predict_direct requires head_mode='direct'")
    h = T.relu(_conv_block(context, params, "head/in"))
    for i in range(cfg.head.n_residual_blocks):
        y = T.relu(_conv_block(h, params, f"head/block{i}/conv1"))
        y = _conv_block(y, params, f"head/block{i}/conv2")
        h = T.add(h, y)
    return _conv_block(h, params, "head/out")


def pooled_feature_stats(feat) -> Tensor:
    """Spatially pooled summary of a feature map: quadrant means + channel spreads.

    Returns (B, 5C): means over the four spatial quadrants plus a per-channel
    spread (L2 norm of the centered map). Both the domain discriminator and
    the domain-invariance probe consume exactly this view, so the adversarial
    game suppresses precisely the statistics the probe measures.
    """
    b, c, h, w = feat.shape
    if h % 2 or w % 2:
        raise ShapeError(f"pooled stats need even feature extents, got {(h, w)}")
    quads = T.mean(T.reshape(feat, (b, c, 2, h // 2, 2, w // 2)), axis=(3, 5))
    centered = T.sub(feat, T.mean(feat, axis=(2, 3), keepdims=True))
    spread = T.l2_norm(centered, axis=(2, 3), eps=1e-6)
    return T.concat([T.reshape(quads, (b, 4 * c)), spread], axis=1)


def discriminate_domain(feat, params: dict, alpha: float) -> Tensor:
    """Probability that a feature map came from the source domain.

    The input passes through grad_reverse(alpha), then spatial pooling to a
    global statistics vector and a 2-layer MLP with a sigmoid output;
    returns shape (B,).
    """
    r = T.grad_reverse(feat, alpha)
    pooled = pooled_feature_stats(r)
    h = T.relu(T.add(T.matmul(pooled, params["disc/fc1/w"]), params["disc/fc1/b"]))
    logits = T.add(T.matmul(h, params["disc/fc2/w"]), params["disc/fc2/b"])
    return T.reshape(T.sigmoid(logits), (logits.shape[0],))


def _clamp_unit(p, lo=1e-7):
    # lo + relu(p-lo) - relu(p-hi) == clip(p, lo, hi), differentiable a.e.
    hi = 1.0 - lo
    return T.add(T.sub(T.relu(T.sub(p, lo)), T.relu(T.sub(p, hi))), lo)


def domain_loss(p_s, p_t):
    """Binary cross-entropy -[log D(F_S) + log(1 - D(F_T))], batch-averaged."""
    ps = _clamp_unit(p_s if isinstance(p_s, Tensor) else Tensor(np.asarray(p_s)))
    pt = _clamp_unit(p_t if isinstance(p_t, Tensor) else Tensor(np.asarray(p_t)))
    return T.mul(T.add(T.mean(T.log(ps)), T.mean(T.log(T.sub(1.0, pt)))), -1.0)


# -- full forward ------------------------------------------------------------------


def solve_displacement(i_s, i_t, params: dict, cfg: ModelConfig,
                       solver: SolverConfig):
    """Batched forward: encode both images, build context, integrate the flow.

    Returns (w_n, fine_s, fine_t) where w_n is the final displacement in
    stride-4 grid units, shape (B, 2, H/4, W/4).
    """
    f_s = encode_features(i_s, params, cfg)
    f_t = encode_features(i_t, params, cfg)
    ctx = build_context(f_s["fine"], f_t["fine"])
    if cfg.head_mode == "direct":
        w_n = predict_direct(ctx, params, cfg)
    else:
        b, _, gh, gw = ctx.shape
        x0 = Tensor(np.zeros((b, 2, gh, gw), dtype=ctx.dtype))

        def v_fn(state, context):
            return predict_velocity(state.x, state.t, context, params, cfg)

        w_n = euler_solve(v_fn, solver, ctx, x0=x0)
    return w_n, f_s["fine"], f_t["fine"]


def grid_sample_points(side: int, stride: int = FEATURE_STRIDE) -> np.ndarray:
    """Pixel coordinates of the strided grid's sample points (block centers)."""
    n = side // stride
    axis = stride * np.arange(n, dtype=np.float64) + (stride - 1) / 2.0
    xs, ys = np.meshgrid(axis, axis)
    return np.stack([xs, ys], axis=-1)


def upscale_field(w_grid: np.ndarray, out_hw, stride: int = FEATURE_STRIDE) -> np.ndarray:
    """Bilinearly resize a (h, w, 2) grid-unit field to (H, W, 2) pixel units.

    Sample locations follow grid_sample_points; edge values are replicated
    outside the strided lattice.
    """
    gh, gw, _ = w_grid.shape
    oh, ow = out_hw
    ys = (np.arange(oh) - (stride - 1) / 2.0) / stride
    xs = (np.arange(ow) - (stride - 1) / 2.0) / stride
    ys = np.clip(ys, 0, gh - 1)
    xs = np.clip(xs, 0, gw - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    v00 = w_grid[np.ix_(y0, x0)]
    v01 = w_grid[np.ix_(y0, x1)]
    v10 = w_grid[np.ix_(y1, x0)]
    v11 = w_grid[np.ix_(y1, x1)]
    out = (v00 * (1 - fy) * (1 - fx) + v01 * (1 - fy) * fx
           + v10 * fy * (1 - fx) + v11 * fy * fx)
    return out * stride


def forward_align(i_s, i_t, params: dict, cfg: ModelConfig,
                  solver: SolverConfig):
    """Align one image pair: returns (displacement field, homography).

    The field is (H/4, W/4, 2) in pixels at the stride-4 sample points; the
    homography comes from a least-squares fit over the field upscaled to full
    resolution.
    """
    a = i_s if isinstance(i_s, Tensor) else Tensor(np.asarray(i_s, dtype=np.float32))
    b = i_t if isinstance(i_t, Tensor) else Tensor(np.asarray(i_t, dtype=np.float32))
    if a.data.ndim != 3 or b.data.ndim != 3:
        raise ShapeError("forward_align expects single (C, H, W) images")
    if a.shape != b.shape:
        raise ShapeError(f"image extents differ: {a.shape} vs {b.shape}")
    _, h, w = a.shape
    with T.no_grad():
        w_n, _, _ = solve_displacement(
            T.reshape(a, (1,) + tuple(a.shape)), T.reshape(b, (1,) + tuple(b.shape)),
            params, cfg, solver)
    w_grid = np.ascontiguousarray(np.transpose(w_n.data[0], (1, 2, 0)), dtype=np.float64)
    field_px = upscale_field(w_grid, (h, w))
    h_pred = geometry.fit_homography_from_displacement(field_px)
    return w_grid * FEATURE_STRIDE, h_pred


# -- config text form ---------------------------------------------------------------


def model_cfg_to_kv(cfg: ModelConfig) -> str:
    """Flat key=value text form of a model config (checkpoint sidecar)."""
    return (f"base_channels={cfg.encoder.base_channels}\n"
            f"hidden_channels={cfg.head.hidden_channels}\n"
            f"n_residual_blocks={cfg.head.n_residual_blocks}\n"
            f"time_embed_dim={cfg.head.time_embed_dim}\n"
            f"disc_hidden_dim={cfg.discriminator.hidden_dim}\n"
            f"alpha_mode={cfg.discriminator.alpha_mode}\n"
            f"alpha_max={cfg.discriminator.alpha_max}\n"
            f"in_channels={cfg.in_channels}\n"
            f"head_mode={cfg.head_mode}\n")


def model_cfg_from_kv(kv: dict) -> ModelConfig:
    enc = EncoderConfig(base_channels=int(kv.get("base_channels", 16)))
    head = VelocityHeadConfig(
        hidden_channels=int(kv.get("hidden_channels", 64)),
        n_residual_blocks=int(kv.get("n_residual_blocks", 4)),
        time_embed_dim=int(kv.get("time_embed_dim", 32)))
    disc = DomainDiscriminatorConfig(
        hidden_dim=int(kv.get("disc_hidden_dim", 64)),
        alpha_mode=kv.get("alpha_mode", "ramp"),
        alpha_max=float(kv.get("alpha_max", 1.0)))
    return ModelConfig(encoder=enc, head=head, discriminator=disc,
                       in_channels=int(kv.get("in_channels", 3)),
                       head_mode=kv.get("head_mode", "flow"))


# -- checkpoints -------------------------------------------------------------------

CHECKPOINT_MAGIC = b"HFMC"


def save_checkpoint(path, params: dict, cfg: ModelConfig, step: int) -> None:
    """Manifest (config hash, step, parameter index) + tensor records."""
    with open(path, "wb") as fp:
        fp.write(CHECKPOINT_MAGIC)
        fp.write(struct.pack("<BQ", 1, step))
        h = config_hash(cfg).encode()
        fp.write(struct.pack("<B", len(h)))
        fp.write(h)
        fp.write(struct.pack("<I", len(params)))
        for name in params:
            nb = name.encode()
            fp.write(struct.pack("<H", len(nb)))
            fp.write(nb)
        for name in params:
            T.write_array(fp, params[name].data)


def load_checkpoint(path, cfg: ModelConfig | None = None):
    """Load (params, step). With ``cfg`` given, verify the stored config hash."""
    with open(path, "rb") as fp:
        magic = fp.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad checkpoint magic: {magic!r}")
        version, step = struct.unpack("<BQ", fp.read(9))
        if version != 1:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<B", fp.read(1))
        stored_hash = fp.read(hlen).decode()
        (n,) = struct.unpack("<I", fp.read(4))
        names = []
        for _ in range(n):
            (ln,) = struct.unpack("<H", fp.read(2))
            names.append(fp.read(ln).decode())
        try:
            params = {name: Tensor(T.read_array(fp), requires_grad=True) for name in names}
        except FormatError as exc:
            raise CheckpointError(f"corrupt checkpoint payload: {exc}") from exc
    if cfg is not None and stored_hash != config_hash(cfg):
        raise CheckpointError(
            f"checkpoint config hash {stored_hash} != model config hash {config_hash(cfg)}")
    return params, step
