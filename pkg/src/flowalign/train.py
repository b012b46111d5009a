"""Training loop, evaluation, ablation sweeps, and the domain-invariance probe.

One iteration: sample a batch of pairs, encode both images, unroll the Euler
solver through the velocity head, take the displacement loss at the fine grid
plus a 2x-downsampled coarse grid, add the weighted domain-adversarial loss
(disabled during the warm-up window), backprop, clip the global gradient
norm, and apply Adam.

All displacement targets inside the loop are in stride-4 grid units
(pixels / 4); metrics are always in pixels.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import model as M
from . import tensor as T
from .datagen import GenConfig, PairSample, make_dataset
from .flow import SolverConfig, flow_matching_loss
from .geometry import (average_corner_error, fit_homography_from_displacement,
                       image_corners)
from .metrics import MetricError, MetricsReport, compute_report
from .optim import Adam
from .tensor import NumericError, Tensor


@dataclass(frozen=True)
class TrainConfig:
    total_iters: int = 2000
    batch_size: int = 8
    lr: float = 1e-3
    lambda_dom: float = 0.01
    clip_norm: float = 1.0
    n_steps: int = 4
    grl_warmup_frac: float = 0.05
    rho_cost: str = "l2"  # "l2" | "charbonnier"
    multiscale_weights: tuple[float, float] = (1.0, 0.5)
    seed: int = 0
    pool_size: int = 512
    log_every: int = 50
    checkpoint_every: int = 0  # 0: only the final checkpoint
    grl_enabled: bool = True
    disc_lr_scale: float = 1.0  # relative learning rate of the discriminator
    train_mode: str = "unrolled"  # "unrolled" | "velocity_regression"

    def __post_init__(self):
        if not 0.0 <= self.grl_warmup_frac < 1.0:
            raise ValueError(f"grl_warmup_frac must be in [0, 1), got {self.grl_warmup_frac}")
        if self.clip_norm <= 0:
            raise ValueError(f"clip_norm must be positive, got {self.clip_norm}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.train_mode not in ("unrolled", "velocity_regression"):
            raise ValueError(f"unknown train_mode {self.train_mode!r}")


def warmup_iters(cfg: TrainConfig) -> int:
    return math.ceil(cfg.grl_warmup_frac * cfg.total_iters)


def effective_lambda(cfg: TrainConfig, iteration: int) -> float:
    """Domain-loss weight: zero inside the warm-up window, lambda_dom after."""
    if not cfg.grl_enabled:
        return 0.0
    return 0.0 if iteration < warmup_iters(cfg) else cfg.lambda_dom


def grl_alpha(cfg: TrainConfig, disc_cfg: M.DomainDiscriminatorConfig, iteration: int) -> float:
    """Reversal strength: 0 during warm-up, then constant or a linear ramp to alpha_max."""
    if not cfg.grl_enabled:
        return 0.0
    w = warmup_iters(cfg)
    if iteration < w:
        return 0.0
    if disc_cfg.alpha_mode == "constant":
        return disc_cfg.alpha_max
    span = max(1, cfg.total_iters - w)
    return disc_cfg.alpha_max * min(1.0, (iteration - w) / span)


def total_loss(l_fm_fine, l_fm_coarse, l_dom, cfg: TrainConfig, iteration: int):
    """w_f * fine + w_c * coarse + lambda_eff * domain, generic over Tensor/float."""
    w_f, w_c = cfg.multiscale_weights
    lam = effective_lambda(cfg, iteration)
    out = w_f * l_fm_fine + w_c * l_fm_coarse
    if lam != 0.0:
        out = out + lam * l_dom
    return out


def _halve_grid(x: Tensor) -> Tensor:
    """2x2 average pooling of a (B, C, H, W) tensor via reshape + mean."""
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"grid extents must be even to halve, got {(h, w)}")
    return T.mean(T.reshape(x, (b, c, h // 2, 2, w // 2, 2)), axis=(3, 5))


def _batch_arrays(samples: list[PairSample]):
    i_s = np.stack([s.i_s for s in samples])
    i_t = np.stack([s.i_t for s in samples])
    w = np.stack([s.w_gt for s in samples]).transpose(0, 3, 1, 2) / M.FEATURE_STRIDE
    return i_s, i_t, w.astype(np.float32)


@dataclass
class TrainResult:
    params: dict
    model_cfg: M.ModelConfig
    log: list[dict] = field(default_factory=list)
    checkpoint_path: str | None = None

    def log_lines(self) -> list[str]:
        return [
            "iter={iter} l_fm={l_fm:.6f} l_dom={l_dom:.6f} gnorm={gnorm:.6f}".format(**row)
            for row in self.log
        ]


def train_run(train_cfg: TrainConfig, gen_cfg: GenConfig, out_dir: str | None = None,
              model_cfg: M.ModelConfig | None = None, pool: list[PairSample] | None = None,
              progress_fn=None) -> TrainResult:
    """Run the full training protocol; returns parameters and the iteration log.

    On a non-finite loss the run aborts with NumericError, keeping the most
    recent snapshot as ``last_good.ckpt`` when ``out_dir`` is given.
    """
    if model_cfg is None:
        model_cfg = M.ModelConfig()
    solver = SolverConfig(train_cfg.n_steps)
    params = M.init_params(model_cfg, seed=train_cfg.seed)
    opt = Adam(params, lr=train_cfg.lr,
               lr_scale={"disc/": train_cfg.disc_lr_scale})
    rng = np.random.default_rng(train_cfg.seed)
    if pool is None:
        pool = make_dataset(gen_cfg, train_cfg.pool_size)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        # sidecar lets `flowalign eval/infer/probe` rebuild the architecture
        with open(os.path.join(out_dir, "model.cfg"), "w", encoding="utf-8") as fp:
            fp.write(M.model_cfg_to_kv(model_cfg))

    result = TrainResult(params=params, model_cfg=model_cfg)
    snapshot = {k: p.data.copy() for k, p in params.items()}
    snapshot_step = 0

    def write_ckpt(name, step):
        if not out_dir:
            return None
        path = os.path.join(out_dir, name)
        M.save_checkpoint(path, params, model_cfg, step)
        return path

    for it in range(train_cfg.total_iters):
        idx = rng.integers(0, len(pool), size=train_cfg.batch_size)
        i_s_np, i_t_np, w_np = _batch_arrays([pool[i] for i in idx])
        i_s = Tensor(i_s_np)
        i_t = Tensor(i_t_np)
        target = Tensor(w_np)

        alpha = grl_alpha(train_cfg, model_cfg.discriminator, it)
        lam = effective_lambda(train_cfg, it)

        if train_cfg.train_mode == "velocity_regression" and model_cfg.head_mode == "flow":
            # Standard conditional velocity regression at a random time; the
            # target velocity is constant along the path, so the regression
            # target is the full displacement at every t.
            f_s = M.encode_features(i_s, params, model_cfg)
            f_t = M.encode_features(i_t, params, model_cfg)
            ctx = M.build_context(f_s["fine"], f_t["fine"])
            t_draw = float(rng.uniform(0.0, 1.0))
            x_t = Tensor(t_draw * w_np)
            w_n = M.predict_velocity(x_t, t_draw, ctx, params, model_cfg)
            fine_s, fine_t = f_s["fine"], f_t["fine"]
        else:
            w_n, fine_s, fine_t = M.solve_displacement(i_s, i_t, params, model_cfg, solver)

        l_fine = flow_matching_loss(w_n, target, cost=train_cfg.rho_cost, channel_axis=1)
        l_coarse = flow_matching_loss(_halve_grid(w_n), _halve_grid(target),
                                      cost=train_cfg.rho_cost, channel_axis=1)

        if lam != 0.0:
            p_s = M.discriminate_domain(fine_s, params, alpha)
            p_t = M.discriminate_domain(fine_t, params, alpha)
            l_dom = M.domain_loss(p_s, p_t)
            l_dom_val = float(l_dom.data)
        else:
            with T.no_grad():
                p_s = M.discriminate_domain(fine_s.detach(), params, 0.0)
                p_t = M.discriminate_domain(fine_t.detach(), params, 0.0)
                l_dom_val = float(M.domain_loss(p_s, p_t).data)
            l_dom = None

        loss = total_loss(l_fine, l_coarse, l_dom, train_cfg, it)
        loss_val = float(loss.data)
        l_fm_val = float(train_cfg.multiscale_weights[0] * l_fine.data
                         + train_cfg.multiscale_weights[1] * l_coarse.data)
        if not np.isfinite(loss_val):
            path = None
            if out_dir:
                for k, p in params.items():
                    p.data = snapshot[k]
                path = write_ckpt("last_good.ckpt", snapshot_step)
            raise NumericError(
                f"non-finite loss at iteration {it}"
                + (f"; last good checkpoint (step {snapshot_step}) at {path}" if path else ""))

        opt.zero_grad()
        loss.backward()
        gnorm = opt.step(clip_norm=train_cfg.clip_norm)

        if it % train_cfg.log_every == 0 or it == train_cfg.total_iters - 1:
            result.log.append({"iter": it, "l_fm": l_fm_val, "l_dom": l_dom_val,
                               "l_fine": float(l_fine.data), "l_coarse": float(l_coarse.data),
                               "loss": loss_val, "gnorm": gnorm,
                               "alpha": alpha, "lambda": lam})
            snapshot = {k: p.data.copy() for k, p in params.items()}
            snapshot_step = it + 1
            if progress_fn:
                progress_fn(result.log[-1])
        if train_cfg.checkpoint_every and (it + 1) % train_cfg.checkpoint_every == 0:
            write_ckpt(f"ckpt_{it + 1:06d}.ckpt", it + 1)

    result.checkpoint_path = write_ckpt("final.ckpt", train_cfg.total_iters)
    if out_dir:
        with open(os.path.join(out_dir, "train_log.txt"), "w", encoding="utf-8") as fp:
            fp.write("\n".join(result.log_lines()) + "\n")
    return result


# -- evaluation ------------------------------------------------------------------


def evaluate(params: dict, model_cfg: M.ModelConfig, dataset: list[PairSample],
             n_steps: int = 4, batch_size: int = 16, config_echo: str = "") -> MetricsReport:
    """Frozen-parameter evaluation: ACE per sample, MACE and AUC aggregates."""
    if not dataset:
        raise MetricError("empty evaluation dataset")
    solver = SolverConfig(n_steps)
    side = dataset[0].i_s.shape[-1]
    corners = image_corners(side)
    ace = []
    with T.no_grad():
        for lo in range(0, len(dataset), batch_size):
            chunk = dataset[lo:lo + batch_size]
            i_s_np, i_t_np, _ = _batch_arrays(chunk)
            w_n, _, _ = M.solve_displacement(Tensor(i_s_np), Tensor(i_t_np),
                                             params, model_cfg, solver)
            for j, sample in enumerate(chunk):
                w_grid = np.transpose(w_n.data[j], (1, 2, 0)).astype(np.float64)
                field_px = M.upscale_field(w_grid, (side, side))
                h_pred = fit_homography_from_displacement(field_px)
                ace.append(average_corner_error(h_pred, sample.h_gt, corners))
    return compute_report(ace, config_echo=config_echo)


def evaluate_checkpoint(ckpt_path: str, model_cfg: M.ModelConfig,
                        dataset: list[PairSample], n_steps: int = 4,
                        config_echo: str = "") -> MetricsReport:
    params, _ = M.load_checkpoint(ckpt_path, model_cfg)
    return evaluate(params, model_cfg, dataset, n_steps=n_steps, config_echo=config_echo)


# -- ablation sweep ----------------------------------------------------------------

ABLATION_VARIANTS = ("fm_n4", "fm_n1", "direct_regression")


def _variant_setup(variant: str, base_model: M.ModelConfig, base_train: TrainConfig):
    if variant == "fm_n4":
        return replace(base_model, head_mode="flow"), replace(base_train, n_steps=4)
    if variant == "fm_n1":
        return replace(base_model, head_mode="flow"), replace(base_train, n_steps=1)
    if variant == "direct_regression":
        return replace(base_model, head_mode="direct"), base_train
    if variant == "grl_on":
        return base_model, replace(base_train, grl_enabled=True)
    if variant == "grl_off":
        return base_model, replace(base_train, grl_enabled=False)
    raise ValueError(f"unknown ablation variant {variant!r}")


def ablation_run(base_train: TrainConfig, gen_cfg: GenConfig,
                 variants=ABLATION_VARIANTS, seeds=(0, 1, 2),
                 val_size: int = 64, model_cfg: M.ModelConfig | None = None,
                 progress_fn=None) -> list[dict]:
    """Train every (variant, seed) pair on identical data and compare metrics.

    Data pools and validation sets depend only on (gen_cfg, seed), never on
    the variant, so rows are directly comparable. Per-variant failures are
    recorded without aborting the sweep. Returns rows plus per-variant mean
    rows; budget ratios of head parameter counts are included for the
    capacity-matched regression baseline.
    """
    base_model = model_cfg if model_cfg is not None else M.ModelConfig()
    rows: list[dict] = []
    for seed in seeds:
        seed_gen = replace(gen_cfg, seed=gen_cfg.seed + 9001 * seed)
        val_gen = replace(seed_gen, seed=seed_gen.seed + 131071)
        pool = make_dataset(seed_gen, base_train.pool_size)
        val = make_dataset(val_gen, val_size)
        for variant in variants:
            mcfg, tcfg = _variant_setup(variant, base_model, replace(base_train, seed=seed))
            row = {"variant": variant, "seed": seed}
            try:
                res = train_run(tcfg, seed_gen, model_cfg=mcfg, pool=pool)
                report = evaluate(res.params, mcfg, val, n_steps=tcfg.n_steps)
                row.update(mace=report.mace,
                           **{f"auc@{t:g}": v for t, v in sorted(report.auc.items())},
                           params=M.count_params(res.params))
            except Exception as exc:  # keep sweeping; the row records the failure
                row.update(error=f"{type(exc).__name__}: {exc}")
            rows.append(row)
            if progress_fn:
                progress_fn(row)
    for variant in variants:
        vals = [r["mace"] for r in rows if r.get("variant") == variant and "mace" in r]
        if vals:
            rows.append({"variant": variant, "seed": "mean", "mace": float(np.mean(vals))})
    return rows


def write_ablation_csv(path: str, rows: list[dict]) -> None:
    keys: list[str] = []
    for row in rows:
        for k in row:
            if k not in keys:
                keys.append(k)
    with open(path, "w", encoding="utf-8") as fp:
        fp.write(",".join(keys) + "\n")
        for row in rows:
            fp.write(",".join(str(row.get(k, "")) for k in keys) + "\n")


# -- domain-invariance probe ---------------------------------------------------------


def probe_items_from_pairs(samples: list[PairSample]) -> list[tuple[np.ndarray, int]]:
    items: list[tuple[np.ndarray, int]] = []
    for s in samples:
        items.append((s.i_s, s.domain_s))
        items.append((s.i_t, s.domain_t))
    return items


def domain_probe(params: dict, model_cfg: M.ModelConfig, items,
                 seed: int = 0, budget: int = 400, holdout_frac: float = 0.3,
                 batch_size: int = 32, probe_hidden: int = 32,
                 groups=None) -> float:
    """Held-out accuracy (percent) of a fresh probe on frozen pooled features.

    The adversarial discriminator is trained to lose, so domain invariance is
    measured with an independent classifier instead: quadrant-pooled fine
    features (means over the 2x2 spatial quadrants plus per-channel stds),
    frozen encoder, and a small one-hidden-layer classifier trained for a
    fixed budget. 50% is perfect invariance; 100% is perfectly
    domain-separable features.

    The train/holdout split is grouped so both items of a pair land on the
    same side (default grouping: consecutive items, matching
    probe_items_from_pairs); splitting a pair would leak shared content
    across the split. ``groups`` overrides with an explicit id per item.
    """
    labels = np.array([lab for _, lab in items])
    n_pos = int((labels == 1).sum())
    if n_pos * 2 != len(labels) or len(labels) < 8:
        raise MetricError(
            f"probe needs a balanced two-domain dataset, got {n_pos}/{len(labels)} positives")
    feats = []
    with T.no_grad():
        for lo in range(0, len(items), batch_size):
            imgs = np.stack([img for img, _ in items[lo:lo + batch_size]])
            f = M.encode_features(Tensor(imgs), params, model_cfg)["fine"]
            feats.append(M.pooled_feature_stats(f).data)
    x = np.concatenate(feats).astype(np.float64)
    x = (x - x.mean(axis=0)) / (x.std(axis=0) + 1e-8)

    rng = np.random.default_rng(seed)
    groups = np.arange(len(items)) // 2 if groups is None else np.asarray(groups)
    unique = rng.permutation(np.unique(groups))
    n_hold = max(1, int(round(len(unique) * holdout_frac)))
    hold_groups = set(unique[:n_hold].tolist())
    hold = np.array([i for i, g in enumerate(groups) if g in hold_groups])
    train = np.array([i for i, g in enumerate(groups) if g not in hold_groups])

    dim = x.shape[1]
    w1 = Tensor(rng.normal(0.0, np.sqrt(2.0 / dim), (dim, probe_hidden)), requires_grad=True)
    b1 = Tensor(np.zeros(probe_hidden), requires_grad=True)
    w2 = Tensor(np.zeros((probe_hidden, 1)), requires_grad=True)
    b2 = Tensor(np.zeros(1), requires_grad=True)

    def forward(xx):
        h = T.relu(T.add(T.matmul(xx, w1), b1))
        return T.sigmoid(T.add(T.matmul(h, w2), b2))

    xt = Tensor(x[train])
    yt = Tensor(labels[train].astype(np.float64).reshape(-1, 1))
    y_inv = Tensor(1.0 - yt.data)
    opt = Adam({"w1": w1, "b1": b1, "w2": w2, "b2": b2}, lr=0.05)
    for _ in range(budget):
        p = M._clamp_unit(forward(xt))
        bce = T.mul(T.mean(T.add(T.mul(yt, T.log(p)),
                                 T.mul(y_inv, T.log(T.sub(1.0, p))))), -1.0)
        opt.zero_grad()
        bce.backward()
        opt.step()
    with T.no_grad():
        ph = forward(Tensor(x[hold])).data.reshape(-1)
    pred = (ph > 0.5).astype(int)
    return float((pred == labels[hold]).mean() * 100.0)
