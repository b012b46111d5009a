"""Synthetic homography pair generation with controllable domain shift.

Each sample starts from a procedurally generated base canvas slightly larger
than the working patch. Four corner offsets drawn uniformly from
[-rho, rho]^2 define the ground-truth homography in patch coordinates; the
source image is the canvas center crop and the target is the canvas sampled
through the inverse homography, then pushed through an optional photometric
domain shift (the stand-in for a modality gap). Sampling from the oversized
canvas keeps the target fully textured: there is no empty warp border that
would leak the sample's domain through a geometric artifact. Ground-truth
displacement is stored in pixels at the stride-4 feature sample points.

Reproducibility: the per-sample generator is Philox (counter-based,
splittable), keyed as key=[dataset_seed, sample_index], so any sample can be
regenerated independently and datasets are byte-identical across runs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from . import tensor as T
from .geometry import (Homography, apply_homography, displacement_from_homography,
                       four_point_to_homography, grid_points, image_corners)
from .model import FEATURE_STRIDE, grid_sample_points
from .tensor import FormatError, bilinear_forward

PATTERN_KINDS = ("checker", "blobs", "gradients", "spots")
# "mixed" draws from the aperiodic families; a borderless periodic checker
# makes the displacement ambiguous modulo its period, so it stays a
# standalone family for targeted tests.
MIXED_KINDS = ("blobs", "gradients")
SHIFT_MODES = ("none", "invert", "gamma", "channel_mix", "pseudo_ir")

# Fixed invertible channel-mixing matrix (det ~ 0.21).
CHANNEL_MIX = np.array([[0.6, 0.3, 0.1],
                        [0.1, 0.7, 0.2],
                        [0.2, 0.2, 0.6]], dtype=np.float64)


class GenerationError(RuntimeError):
    """Sampling could not produce a valid (convex, non-degenerate) quad."""


class ConfigError(ValueError):
    """Unknown generation option."""


@dataclass(frozen=True)
class GenConfig:
    image_side: int = 64
    rho: float = 8.0
    shift_mode: str = "none"  # none | invert | gamma:<g> | channel_mix | pseudo_ir
    seed: int = 0
    pattern: str = "mixed"  # checker | blobs | gradients | mixed

    def __post_init__(self):
        if self.image_side % 8:
            raise ConfigError(f"image_side must be divisible by 8, got {self.image_side}")
        if not 0 <= self.rho < self.image_side / 4:
            raise ConfigError(f"rho must lie in [0, side/4), got {self.rho}")
        base_mode = self.shift_mode.split(":")[0]
        if base_mode not in SHIFT_MODES:
            raise ConfigError(f"unknown shift_mode {self.shift_mode!r}")
        if self.pattern not in PATTERN_KINDS + ("mixed",):
            raise ConfigError(f"unknown pattern {self.pattern!r}")


@dataclass
class PairSample:
    """One training/eval pair: images, ground truth, and domain labels."""

    i_s: np.ndarray  # (3, S, S) float32 in [0, 1]
    i_t: np.ndarray
    h_gt: Homography
    w_gt: np.ndarray  # (S/4, S/4, 2) float32, pixels, at stride-4 block centers
    domain_s: int = 0
    domain_t: int = 1


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Philox generator keyed by (dataset seed, sample index)."""
    return np.random.Generator(np.random.Philox(key=np.array([seed, index], dtype=np.uint64)))


def perturb_corners(side: int, rho: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Corner set of the side x side image plus uniform offsets in [-rho, rho]^2.

    Resamples (at most 100 times) until the perturbed quad is convex and not
    near-degenerate; persistent failure signals rho is too large.
    """
    if rho < 0:
        raise ConfigError(f"rho must be >= 0, got {rho}")
    corners = image_corners(side)
    area_floor = 1e-3 * side * side
    for _ in range(100):
        offsets = rng.uniform(-rho, rho, size=(4, 2))
        quad = corners + offsets
        edges = np.roll(quad, -1, axis=0) - quad
        cross = edges[:, 0] * np.roll(edges, -1, axis=0)[:, 1] \
            - edges[:, 1] * np.roll(edges, -1, axis=0)[:, 0]
        if np.all(cross > area_floor):
            return corners, offsets
    raise GenerationError(f"no convex quad after 100 draws (side={side}, rho={rho})")


def _normalize01(img: np.ndarray) -> np.ndarray:
    lo, hi = img.min(), img.max()
    if hi - lo < 1e-12:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


def synth_pattern(side: int, kind: str, rng, cell: int = 8) -> np.ndarray:
    """A (3, side, side) float32 pattern in [0, 1] with multi-scale texture.

    "blobs" is full-contrast aperiodic smoothed noise (the workhorse for
    alignment); "spots" is its dark-biased cousin (bright spots on a dark
    field), whose luminance statistics are asymmetric under photometric
    shifts like inversion, making it the domain-shift test family.
    """
    if kind == "mixed":
        kind = MIXED_KINDS[rng.integers(len(MIXED_KINDS))]
    yy, xx = np.mgrid[0:side, 0:side]
    if kind == "checker":
        px, py = rng.integers(0, 2 * cell, size=2)
        plane = (((xx + px) // cell + (yy + py) // cell) % 2).astype(np.float64)
        img = np.stack([plane, plane, plane])
    elif kind in ("blobs", "spots"):
        # Coarse-dominant spectrum: structures much finer than ~side/6 are
        # not matchable by the stride-4 features, so the finest octave only
        # decorates the texture.
        img = np.empty((3, side, side))
        base = gaussian_filter(rng.standard_normal((side, side)), side / 6.0)
        mid = gaussian_filter(rng.standard_normal((side, side)), side / 12.0)
        for c in range(3):
            fine = gaussian_filter(rng.standard_normal((side, side)), side / 32.0)
            img[c] = _normalize01(base + 0.5 * mid + 0.25 * fine)
            if kind == "spots":
                img[c] = img[c] ** 2.0
    elif kind == "gradients":
        img = np.empty((3, side, side))
        for c in range(3):
            theta = rng.uniform(0, 2 * np.pi)
            freq = rng.uniform(1.0, 3.0)
            phase = rng.uniform(0, 2 * np.pi)
            ramp = (np.cos(theta) * xx + np.sin(theta) * yy) / side
            img[c] = 0.5 + 0.25 * np.sin(2 * np.pi * freq * ramp + phase) + 0.5 * ramp
            img[c] = _normalize01(img[c])
    else:
        raise ConfigError(f"unknown pattern kind {kind!r}")
    return img.astype(np.float32)


def apply_domain_shift(img: np.ndarray, mode: str) -> np.ndarray:
    """Deterministic photometric shift simulating a modality change."""
    base, _, param = mode.partition(":")
    if base == "none":
        return img
    if base == "invert":
        return (1.0 - img).astype(img.dtype)
    if base == "gamma":
        g = float(param) if param else 2.2
        if g <= 0:
            raise ConfigError(f"gamma must be positive, got {g}")
        return np.power(np.clip(img, 0.0, 1.0), g).astype(img.dtype)
    if base == "channel_mix":
        if img.shape[0] != 3:
            raise ConfigError("channel_mix needs a 3-channel image")
        mixed = np.einsum("ij,jhw->ihw", CHANNEL_MIX, img.astype(np.float64))
        return np.clip(mixed, 0.0, 1.0).astype(img.dtype)
    if base == "pseudo_ir":
        if img.shape[0] != 3:
            raise ConfigError("pseudo_ir needs a 3-channel image")
        lum = np.clip(0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2], 0.0, 1.0)
        out = np.stack([lum ** 0.5, lum, lum ** 2.0])
        return out.astype(img.dtype)
    raise ConfigError(f"unknown shift_mode {mode!r}")


def patch_margin(rho: float) -> int:
    """Canvas margin around the patch; covers the inverse-warp excursion."""
    return int(np.ceil(rho)) + 4


def generate_pair(canvas: np.ndarray, cfg: GenConfig, rng) -> PairSample:
    """Build one pair from an oversized canvas (side + 2 * patch_margin(rho)).

    The source is the canvas center crop; the target samples the canvas
    through the inverse homography so every target pixel carries real
    texture. In patch coordinates, content at source point p appears at
    H(p) in the target.
    """
    side = cfg.image_side
    margin = patch_margin(cfg.rho)
    full = side + 2 * margin
    if canvas.shape != (3, full, full):
        raise ConfigError(f"canvas must be (3, {full}, {full}) for side {side} "
                          f"and rho {cfg.rho}, got {canvas.shape}")
    corners, offsets = perturb_corners(side, cfg.rho, rng)
    h_gt = four_point_to_homography(corners, offsets)
    i_s = canvas[:, margin:margin + side, margin:margin + side]
    pts = grid_points((side, side)).reshape(-1, 2)
    src = apply_homography(h_gt.inverse(), pts).reshape(side, side, 2) + margin
    i_t_geo = bilinear_forward(canvas, src)
    i_t = apply_domain_shift(i_t_geo, cfg.shift_mode)
    n = side // FEATURE_STRIDE
    w_gt = displacement_from_homography(h_gt, (n, n), points=grid_sample_points(side))
    return PairSample(i_s=np.ascontiguousarray(i_s, dtype=np.float32),
                      i_t=i_t.astype(np.float32),
                      h_gt=h_gt, w_gt=w_gt.astype(np.float32))


def make_dataset(cfg: GenConfig, count: int, start_index: int = 0) -> list[PairSample]:
    """Generate ``count`` pairs; sample i is fully determined by (cfg.seed, i)."""
    samples = []
    full = cfg.image_side + 2 * patch_margin(cfg.rho)
    for i in range(start_index, start_index + count):
        rng = sample_rng(cfg.seed, i)
        canvas = synth_pattern(full, cfg.pattern, rng)
        samples.append(generate_pair(canvas, cfg, rng))
    return samples


def dataset_from_image(img: np.ndarray, cfg: GenConfig, count: int,
                       start_index: int = 0) -> list[PairSample]:
    """Photo-based generation: carve random canvases out of a user image.

    The image (e.g. loaded with read_raster) must be at least
    image_side + 2 * patch_margin(rho) on both axes; each sample crops a
    random canvas window and runs the usual pair protocol.
    """
    if img.ndim != 3:
        raise ConfigError(f"expected a (C, H, W) image, got {img.shape}")
    if img.shape[0] == 1:
        img = np.repeat(img, 3, axis=0)
    if img.shape[0] != 3:
        raise ConfigError(f"expected 1 or 3 channels, got {img.shape[0]}")
    full = cfg.image_side + 2 * patch_margin(cfg.rho)
    _, h, w = img.shape
    if h < full or w < full:
        raise ConfigError(f"image {h}x{w} smaller than the {full}px canvas "
                          f"(side {cfg.image_side} + margins)")
    samples = []
    for i in range(start_index, start_index + count):
        rng = sample_rng(cfg.seed, i)
        y0 = int(rng.integers(0, h - full + 1))
        x0 = int(rng.integers(0, w - full + 1))
        canvas = np.ascontiguousarray(img[:, y0:y0 + full, x0:x0 + full],
                                      dtype=np.float32)
        samples.append(generate_pair(canvas, cfg, rng))
    return samples


# -- dataset container --------------------------------------------------------------

DATASET_MAGIC = b"HFMD"


def write_dataset(path, samples: list[PairSample], cfg: GenConfig) -> None:
    """Single-file container: header (magic, count, config echo) + tensor records."""
    if not samples:
        raise ValueError("refusing to write an empty dataset")
    header = (f"image_side={cfg.image_side}\nrho={cfg.rho!r}\nshift_mode={cfg.shift_mode}\n"
              f"seed={cfg.seed}\npattern={cfg.pattern}\n").encode()
    with open(path, "wb") as fp:
        fp.write(DATASET_MAGIC)
        fp.write(struct.pack("<I", len(samples)))
        fp.write(struct.pack("<I", len(header)))
        fp.write(header)
        for s in samples:
            T.write_array(fp, s.i_s)
            T.write_array(fp, s.i_t)
            T.write_array(fp, s.h_gt.m)
            T.write_array(fp, s.w_gt)


def read_dataset(path) -> tuple[list[PairSample], GenConfig]:
    """Inverse of write_dataset; bit-exact round trip, FormatError on damage."""
    with open(path, "rb") as fp:
        magic = fp.read(4)
        if magic != DATASET_MAGIC:
            raise FormatError(f"bad dataset magic at byte 0: {magic!r}")
        head = fp.read(8)
        if len(head) != 8:
            raise FormatError(f"truncated dataset header at byte {fp.tell()}")
        count, hlen = struct.unpack("<II", head)
        raw = fp.read(hlen)
        if len(raw) != hlen:
            raise FormatError(f"truncated config echo at byte {fp.tell()}")
        kv = dict(line.split("=", 1) for line in raw.decode().strip().splitlines())
        cfg = GenConfig(image_side=int(kv["image_side"]), rho=float(kv["rho"]),
                        shift_mode=kv["shift_mode"], seed=int(kv["seed"]),
                        pattern=kv["pattern"])
        samples = []
        for _ in range(count):
            i_s = T.read_array(fp)
            i_t = T.read_array(fp)
            h_m = T.read_array(fp)
            w_gt = T.read_array(fp)
            samples.append(PairSample(i_s=i_s, i_t=i_t, h_gt=Homography(h_m), w_gt=w_gt))
    return samples, cfg


# -- simple uncompressed rasters (8-bit PGM/PPM) --------------------------------------


def write_raster(path, img: np.ndarray) -> None:
    """Write a (1|3, H, W) image in [0, 1] as binary PGM (P5) or PPM (P6)."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ValueError(f"raster image must be (1|3, H, W), got {img.shape}")
    c, h, w = img.shape
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fp:
        fp.write((f"P{5 if c == 1 else 6}\n{w} {h}\n255\n").encode())
        fp.write(np.ascontiguousarray(data.transpose(1, 2, 0)).tobytes())


def read_raster(path) -> np.ndarray:
    """Read binary PGM/PPM into a (1|3, H, W) float32 image in [0, 1]."""
    with open(path, "rb") as fp:
        blob = fp.read()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported raster magic {magic!r}")
    if maxval != 255:
        raise FormatError(f"only 8-bit rasters supported, maxval={maxval}")
    c = 1 if magic == b"P5" else 3
    need = w * h * c
    raw = blob[pos:pos + need]
    if len(raw) != need:
        raise FormatError(f"truncated raster payload at byte {pos + len(raw)}")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, c).transpose(2, 0, 1)
    return (arr.astype(np.float32) / 255.0)
