"""Command-line interface.

Subcommands: gen, train, eval, infer, ablate, gradcheck, probe. Config files
are flat key=value text (one per line, # comments); every option can also be
given as a flag. Exit codes: 0 success, 2 usage error, 1 runtime failure
with a one-line diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import model as M
from . import train as TR
from .datagen import (GenConfig, make_dataset, read_dataset, read_raster,
                      write_dataset, write_raster)
from .geometry import Homography, apply_homography, image_corners
from .gradcheck import run_all
from .metrics import write_report
from .train import TrainConfig


def load_kv(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fp:
        for raw in fp:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"bad config line (want key=value): {raw.rstrip()}")
            key, val = line.split("=", 1)
            out[key.strip()] = val.strip()
    return out


def _coerce_dataclass(cls, kv: dict[str, str], aliases=None):
    """Build a dataclass from string key-values, converting per field type."""
    aliases = aliases or {}
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, val in kv.items():
        name = aliases.get(key, key)
        if name not in fields:
            raise ValueError(f"unknown {cls.__name__} key: {key}")
        f = fields[name]
        if f.type in ("int", int):
            kwargs[name] = int(val)
        elif f.type in ("float", float):
            kwargs[name] = float(val)
        elif f.type in ("bool", bool):
            kwargs[name] = val.lower() in ("1", "true", "yes", "on")
        elif "tuple" in str(f.type):
            kwargs[name] = tuple(float(v) for v in val.split(","))
        else:
            kwargs[name] = val
    return cls(**kwargs)


model_cfg_from_kv = M.model_cfg_from_kv
model_cfg_to_kv = M.model_cfg_to_kv


def _gen_cfg_from_args(args) -> GenConfig:
    kv = load_kv(args.gen_config) if getattr(args, "gen_config", None) else {}
    if getattr(args, "side", None) is not None:
        kv["image_side"] = str(args.side)
    if getattr(args, "rho", None) is not None:
        kv["rho"] = str(args.rho)
    if getattr(args, "shift", None) is not None:
        kv["shift_mode"] = args.shift
    if getattr(args, "pattern", None) is not None:
        kv["pattern"] = args.pattern
    if getattr(args, "data_seed", None) is not None:
        kv["seed"] = str(args.data_seed)
    return _coerce_dataclass(GenConfig, kv)


def _train_cfg_from_args(args) -> TrainConfig:
    kv = load_kv(args.train_config) if getattr(args, "train_config", None) else {}
    for flag, key in (("iters", "total_iters"), ("batch", "batch_size"), ("lr", "lr"),
                      ("lambda_dom", "lambda_dom"), ("clip", "clip_norm"),
                      ("steps", "n_steps"), ("warmup", "grl_warmup_frac"),
                      ("seed", "seed"), ("pool", "pool_size"),
                      ("rho_cost", "rho_cost")):
        val = getattr(args, flag, None)
        if val is not None:
            kv[key] = str(val)
    if getattr(args, "no_grl", False):
        kv["grl_enabled"] = "false"
    return _coerce_dataclass(TrainConfig, kv)


def _model_cfg_from_args(args) -> M.ModelConfig:
    kv = load_kv(args.model_config) if getattr(args, "model_config", None) else {}
    for flag in ("base_channels", "hidden_channels", "n_residual_blocks"):
        val = getattr(args, flag, None)
        if val is not None:
            kv[flag] = str(val)
    return model_cfg_from_kv(kv)


def _add_gen_flags(p):
    p.add_argument("--gen-config", help="key=value file with generation settings")
    p.add_argument("--side", type=int, help="image side in px (divisible by 8)")
    p.add_argument("--rho", type=float, help="max corner perturbation in px")
    p.add_argument("--shift", help="domain shift: none|invert|gamma:<g>|channel_mix|pseudo_ir")
    p.add_argument("--pattern", help="pattern family: checker|blobs|gradients|mixed")
    p.add_argument("--data-seed", type=int, help="dataset seed")


def _add_model_flags(p):
    p.add_argument("--model-config", help="key=value file with model settings")
    p.add_argument("--base-channels", dest="base_channels", type=int)
    p.add_argument("--hidden-channels", dest="hidden_channels", type=int)
    p.add_argument("--blocks", dest="n_residual_blocks", type=int)


def _locate_model_cfg(args) -> M.ModelConfig:
    if getattr(args, "model_config", None):
        return model_cfg_from_kv(load_kv(args.model_config))
    sidecar = os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)), "model.cfg")
    if os.path.exists(sidecar):
        return model_cfg_from_kv(load_kv(sidecar))
    return M.ModelConfig()


def _load_images_for_infer(path_a: str, path_b: str, channels: int):
    imgs = []
    for path in (path_a, path_b):
        img = read_raster(path)
        if img.shape[0] == 1 and channels == 3:
            img = np.repeat(img, 3, axis=0)
        if img.shape[0] != channels:
            raise ValueError(f"{path}: expected {channels} channels, got {img.shape[0]}")
        if img.shape[1] % 8 or img.shape[2] % 8:
            raise ValueError(f"{path}: extents {img.shape[1:]} not divisible by 8")
        imgs.append(img)
    if imgs[0].shape != imgs[1].shape:
        raise ValueError(f"image extents differ: {imgs[0].shape} vs {imgs[1].shape}")
    return imgs


def _draw_quad(canvas: np.ndarray, channel: int, quad: np.ndarray) -> None:
    _, h, w = canvas.shape
    for i in range(4):
        a, b = quad[i], quad[(i + 1) % 4]
        n = int(max(abs(b[0] - a[0]), abs(b[1] - a[1])) * 2) + 2
        ts = np.linspace(0.0, 1.0, n)
        xs = np.clip(np.rint(a[0] + ts * (b[0] - a[0])), 0, w - 1).astype(int)
        ys = np.clip(np.rint(a[1] + ts * (b[1] - a[1])), 0, h - 1).astype(int)
        canvas[channel, ys, xs] = 1.0


def _cmd_gen(args) -> int:
    cfg = _gen_cfg_from_args(args)
    if args.from_raster:
        from .datagen import dataset_from_image
        samples = dataset_from_image(read_raster(args.from_raster), cfg, args.count)
    else:
        samples = make_dataset(cfg, args.count)
    write_dataset(args.out, samples, cfg)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def _cmd_train(args) -> int:
    gen_cfg = _gen_cfg_from_args(args)
    train_cfg = _train_cfg_from_args(args)
    model_cfg = _model_cfg_from_args(args)

    def progress(row):
        print("iter={iter} l_fm={l_fm:.6f} l_dom={l_dom:.6f} gnorm={gnorm:.6f}".format(**row),
              flush=True)

    result = TR.train_run(train_cfg, gen_cfg, out_dir=args.out,
                          model_cfg=model_cfg, progress_fn=progress)
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def _cmd_eval(args) -> int:
    model_cfg = _locate_model_cfg(args)
    if args.data:
        dataset, gen_cfg = read_dataset(args.data)
        echo = f"data={args.data} shift={gen_cfg.shift_mode} pattern={gen_cfg.pattern} seed={gen_cfg.seed}"
    else:
        gen_cfg = _gen_cfg_from_args(args)
        dataset = make_dataset(gen_cfg, args.count)
        echo = f"generated shift={gen_cfg.shift_mode} pattern={gen_cfg.pattern} seed={gen_cfg.seed}"
    report = TR.evaluate_checkpoint(args.checkpoint, model_cfg, dataset,
                                    n_steps=args.steps, config_echo=echo)
    print(report)
    if args.out:
        write_report(args.out, report)
        print(f"report written to {args.out}")
    return 0


def _cmd_infer(args) -> int:
    model_cfg = _locate_model_cfg(args)
    params, _ = M.load_checkpoint(args.checkpoint, model_cfg)
    img_a, img_b = _load_images_for_infer(args.source, args.target, model_cfg.in_channels)
    from .flow import SolverConfig
    _, h_pred = M.forward_align(img_a, img_b, params, model_cfg, SolverConfig(args.steps))
    print(h_pred.to_text())
    if args.overlay:
        _, h, w = img_b.shape
        canvas = np.repeat(img_b.mean(axis=0, keepdims=True) * 0.5, 3, axis=0)
        corners = image_corners(w, h)
        _draw_quad(canvas, 0, apply_homography(h_pred, corners))
        if args.gt:
            _draw_quad(canvas, 1, apply_homography(Homography.from_text(args.gt), corners))
        write_raster(args.overlay, canvas)
        print(f"overlay written to {args.overlay}")
    return 0


def _cmd_ablate(args) -> int:
    gen_cfg = _gen_cfg_from_args(args)
    train_cfg = _train_cfg_from_args(args)
    model_cfg = _model_cfg_from_args(args)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    variants = tuple(args.variants.split(","))

    def progress(row):
        print(" ".join(f"{k}={v}" for k, v in row.items()), flush=True)

    rows = TR.ablation_run(train_cfg, gen_cfg, variants=variants, seeds=seeds,
                           val_size=args.val_size, model_cfg=model_cfg,
                           progress_fn=progress)
    TR.write_ablation_csv(args.out, rows)
    print(f"ablation table written to {args.out}")
    return 0


def _cmd_gradcheck(args) -> int:
    results = run_all()
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:28s} {status}  max_rel_err={r.max_err:.3e}  tol={r.tol:.0e}  ({r.seconds:.2f}s)")
        failed += 0 if r.passed else 1
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 1


def _cmd_probe(args) -> int:
    model_cfg = _locate_model_cfg(args)
    params, _ = M.load_checkpoint(args.checkpoint, model_cfg)
    if args.data:
        dataset, _ = read_dataset(args.data)
    else:
        dataset = make_dataset(_gen_cfg_from_args(args), args.count)
    acc = TR.domain_probe(params, model_cfg, TR.probe_items_from_pairs(dataset),
                          seed=args.seed)
    print(f"domain probe held-out accuracy: {acc:.2f}% (50% = domain-invariant)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowalign",
        description="Planar alignment via flow-matched displacement fields")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic pair dataset")
    _add_gen_flags(p)
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--from-raster", dest="from_raster",
                   help="carve canvases out of this PGM/PPM image instead of "
                        "synthesizing patterns")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_gen)

    p = sub.add_parser("train", help="train a model")
    _add_gen_flags(p)
    _add_model_flags(p)
    p.add_argument("--train-config", help="key=value file with training settings")
    p.add_argument("--iters", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lambda-dom", dest="lambda_dom", type=float)
    p.add_argument("--clip", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--warmup", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--pool", type=int)
    p.add_argument("--rho-cost", dest="rho_cost", choices=("l2", "charbonnier"))
    p.add_argument("--no-grl", action="store_true")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint, print and write a report")
    p.add_argument("checkpoint")
    p.add_argument("--model-config")
    p.add_argument("--data", help="dataset file (otherwise generate with the gen flags)")
    _add_gen_flags(p)
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--steps", type=int, default=4)
    p.add_argument("--out", help="machine-readable report path")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("infer", help="align two raster images (PGM/PPM)")
    p.add_argument("source")
    p.add_argument("target")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--model-config")
    p.add_argument("--steps", type=int, default=4)
    p.add_argument("--overlay", help="write an overlay raster with the aligned quads")
    p.add_argument("--gt", help="ground-truth homography, 9 whitespace-separated values")
    p.set_defaults(fn=_cmd_infer)

    p = sub.add_parser("ablate", help="run the ablation sweep")
    _add_gen_flags(p)
    _add_model_flags(p)
    p.add_argument("--train-config")
    p.add_argument("--iters", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--pool", type=int)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--variants", default=",".join(TR.ABLATION_VARIANTS))
    p.add_argument("--val-size", type=int, default=64)
    p.add_argument("--out", required=True, help="CSV output path")
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("probe", help="domain-invariance probe on frozen features")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--model-config")
    p.add_argument("--data")
    _add_gen_flags(p)
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_probe)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
