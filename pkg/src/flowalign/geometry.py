"""Projective geometry: homographies, DLT solving, dense displacement fields.

Conventions, fixed once and applied everywhere:
  * coordinates are (x, y) with x to the right and y down;
  * pixel centers sit at integer coordinates;
  * homographies are stored in canonical form (unit Frobenius norm,
    bottom-right entry non-negative) so matrix comparisons are well defined;
  * image warping uses inverse mapping: each output pixel pulls its value
    from the source through H^-1, which leaves no holes.
"""

from __future__ import annotations

import numpy as np

from . import tensor
from .tensor import Tensor

DEGENERACY_EPS = 1e-12


class GeometryError(ValueError):
    """Base class for projective-geometry failures."""


class DegeneratePointError(GeometryError):
    """A point maps through a vanishing homogeneous denominator."""


class DegenerateConfigurationError(GeometryError):
    """The correspondence system is rank-deficient (no unique homography)."""


def _canonicalize(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        raise GeometryError(f"homography must be 3x3, got {m.shape}")
    norm = np.linalg.norm(m)
    if not np.isfinite(norm) or norm == 0.0:
        raise GeometryError("homography matrix is zero or non-finite")
    if abs(norm - 1.0) > 1e-12:  # idempotent: reloading a canonical matrix is exact
        m = m / norm
    if m[2, 2] < 0:
        m = -m
    elif m[2, 2] == 0:
        flat = m.reshape(-1)
        lead = flat[np.nonzero(flat)[0][0]]
        if lead < 0:
            m = -m
    return m


class Homography:
    """A 3x3 projective transform, canonical representative of its scale class."""

    __slots__ = ("m",)

    def __init__(self, m):
        m = _canonicalize(m)
        if abs(np.linalg.det(m)) <= DEGENERACY_EPS:
            raise GeometryError("homography is singular after normalization")
        self.m = m
        self.m.setflags(write=False)

    @staticmethod
    def identity() -> "Homography":
        return Homography(np.eye(3))

    @staticmethod
    def translation(tx: float, ty: float) -> "Homography":
        m = np.eye(3)
        m[0, 2] = tx
        m[1, 2] = ty
        return Homography(m)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.m))

    def compose(self, other: "Homography") -> "Homography":
        """Return self @ other: apply ``other`` first, then ``self``."""
        return Homography(self.m @ other.m)

    def apply(self, pts):
        return apply_homography(self, pts)

    def to_text(self) -> str:
        """Nine whitespace-separated decimals, row-major."""
        return " ".join(f"{v:.17g}" for v in self.m.reshape(-1))

    @staticmethod
    def from_text(text: str) -> "Homography":
        vals = [float(v) for v in text.split()]
        if len(vals) != 9:
            raise GeometryError(f"expected 9 values, got {len(vals)}")
        return Homography(np.array(vals).reshape(3, 3))

    def __repr__(self):
        return f"Homography({np.array2string(self.m, precision=5, suppress_small=True)})"


def frobenius_gap(a: Homography, b: Homography) -> float:
    """Relative Frobenius distance between canonical forms (sign-insensitive)."""
    d = min(np.linalg.norm(a.m - b.m), np.linalg.norm(a.m + b.m))
    return float(d / np.linalg.norm(b.m))


def apply_homography(h: Homography, pts):
    """Map points through ``h`` with perspective division.

    Accepts one (2,) point or an (N,2) array; returns the same arrangement.
    """
    pts_arr = np.asarray(pts, dtype=np.float64)
    single = pts_arr.ndim == 1
    pts2 = pts_arr.reshape(-1, 2)
    hom = np.concatenate([pts2, np.ones((len(pts2), 1))], axis=1)
    mapped = hom @ h.m.T
    den = mapped[:, 2]
    bad = np.abs(den) <= DEGENERACY_EPS
    if bad.any():
        i = int(np.argmax(bad))
        raise DegeneratePointError(
            f"point ({pts2[i, 0]}, {pts2[i, 1]}) maps to the line at infinity")
    out = mapped[:, :2] / den[:, None]
    return out[0] if single else out


def _hartley_normalization(pts: np.ndarray):
    """Similarity T sending the centroid to the origin with mean distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    dist = np.sqrt(((pts - centroid) ** 2).sum(axis=1)).mean()
    if dist <= DEGENERACY_EPS:
        raise DegenerateConfigurationError("all correspondence points coincide")
    s = np.sqrt(2.0) / dist
    t = np.array([[s, 0.0, -s * centroid[0]],
                  [0.0, s, -s * centroid[1]],
                  [0.0, 0.0, 1.0]])
    normalized = (pts - centroid) * s
    return normalized, t


def dlt_from_correspondences(src, dst) -> Homography:
    """Least-squares homography from >=4 correspondences (SVD of the 2n x 9 system).

    Both point sets are Hartley-normalized first; exact for noiseless
    projective data, algebraic-error minimizer otherwise.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if len(src) != len(dst):
        raise GeometryError(f"correspondence count mismatch: {len(src)} vs {len(dst)}")
    if len(src) < 4:
        raise GeometryError(f"need at least 4 correspondences, got {len(src)}")
    sn, ts = _hartley_normalization(src)
    dn, td = _hartley_normalization(dst)
    n = len(sn)
    x, y = sn[:, 0], sn[:, 1]
    u, v = dn[:, 0], dn[:, 1]
    a = np.zeros((2 * n, 9))
    a[0::2, 0] = -x
    a[0::2, 1] = -y
    a[0::2, 2] = -1.0
    a[0::2, 6] = u * x
    a[0::2, 7] = u * y
    a[0::2, 8] = u
    a[1::2, 3] = -x
    a[1::2, 4] = -y
    a[1::2, 5] = -1.0
    a[1::2, 6] = v * x
    a[1::2, 7] = v * y
    a[1::2, 8] = v
    # With exactly 4 points the system is 8x9; the null vector is only
    # present when all 9 right singular vectors are computed.
    _, s, vt = np.linalg.svd(a, full_matrices=a.shape[0] < 9)
    rank = int((s > s[0] * 1e-9).sum()) if s[0] > 0 else 0
    if rank < 8:
        raise DegenerateConfigurationError(
            f"correspondences are degenerate (system rank {rank} < 8)")
    h_norm = vt[-1].reshape(3, 3)
    h = np.linalg.inv(td) @ h_norm @ ts
    return Homography(h)


def image_corners(width: int, height: int | None = None) -> np.ndarray:
    """Corner set (TL, TR, BR, BL) of a width x height pixel grid, float64."""
    if height is None:
        height = width
    w, h = float(width - 1), float(height - 1)
    return np.array([[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]])


def four_point_to_homography(corners, offsets) -> Homography:
    """Homography mapping each corner to corner + offset."""
    corners = np.asarray(corners, dtype=np.float64).reshape(4, 2)
    offsets = np.asarray(offsets, dtype=np.float64).reshape(4, 2)
    return dlt_from_correspondences(corners, corners + offsets)


def grid_points(grid_shape) -> np.ndarray:
    """Integer lattice of sample points, (H, W, 2) in (x, y) order."""
    gh, gw = grid_shape
    xs, ys = np.meshgrid(np.arange(gw, dtype=np.float64),
                         np.arange(gh, dtype=np.float64))
    return np.stack([xs, ys], axis=-1)


def displacement_from_homography(h: Homography, grid_shape, points=None) -> np.ndarray:
    """Dense displacement w[y, x] = H(p) - p over the grid, (H, W, 2) pixels.

    ``points`` overrides the default integer lattice with explicit sample
    locations of the same (H, W, 2) layout (e.g. a strided sub-grid).
    """
    pts = grid_points(grid_shape) if points is None else np.asarray(points, dtype=np.float64)
    flat = pts.reshape(-1, 2)
    mapped = apply_homography(h, flat)
    return (mapped - flat).reshape(pts.shape)


def fit_homography_from_displacement(w, points=None) -> Homography:
    """DLT fit over all grid correspondences p -> p + w[p].

    On a field exactly generated from some H this recovers H; with noise it
    is the unweighted algebraic least-squares fit.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 3 or w.shape[-1] != 2 or w.shape[0] < 2 or w.shape[1] < 2:
        raise GeometryError(f"displacement field must be (H>=2, W>=2, 2), got {w.shape}")
    pts = grid_points(w.shape[:2]) if points is None else np.asarray(points, dtype=np.float64)
    if pts.shape != w.shape:
        raise GeometryError(f"sample points {pts.shape} do not match field {w.shape}")
    src = pts.reshape(-1, 2)
    dst = src + w.reshape(-1, 2)
    return dlt_from_correspondences(src, dst)


def warp_image(img, h: Homography):
    """Warp so that content at source point p appears at H(p) in the output.

    Output pixel (x, y) pulls from the source at H^-1(x, y) via bilinear
    interpolation; reads outside the source are zero. Accepts a (C, H, W)
    array or Tensor and returns the same kind.
    """
    is_tensor = isinstance(img, Tensor)
    data = img.data if is_tensor else np.asarray(img)
    if data.ndim != 3:
        raise GeometryError(f"warp_image expects (C, H, W), got {data.shape}")
    _, height, width = data.shape
    pts = grid_points((height, width))
    src = apply_homography(h.inverse(), pts.reshape(-1, 2)).reshape(height, width, 2)
    out = tensor.bilinear_forward(data, src.astype(data.dtype, copy=False))
    return Tensor(out) if is_tensor else out


def average_corner_error(h_pred: Homography, h_gt: Homography, corners) -> float:
    """Mean Euclidean distance between corner images under the two homographies."""
    corners = np.asarray(corners, dtype=np.float64).reshape(-1, 2)
    a = apply_homography(h_pred, corners)
    b = apply_homography(h_gt, corners)
    return float(np.sqrt(((a - b) ** 2).sum(axis=1)).mean())
