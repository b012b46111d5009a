"""Dense tensors with reverse-mode automatic differentiation.

numpy-backed, CPU only. float32 is the training dtype; verification and
finite-difference oracles run in float64. The op set is deliberately small:
exactly what the alignment model needs, including a gradient-reversal op and
differentiable bilinear grid sampling.

Tensors are immutable values after creation. The computation graph doubles as
the gradient tape: each op node remembers its parents and a backward rule, and
``Tensor.backward`` walks the graph once in reverse topological order,
summing contributions when a tensor feeds several consumers.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested op."""


class DomainError(ValueError):
    """An input lies outside the mathematical domain of the op."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values."""


class FormatError(ValueError):
    """A serialized tensor stream is malformed; message carries the byte offset."""


_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (inference / data paths)."""
    global _GRAD_ENABLED
    saved = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = saved


def _as_array(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype == np.float64 or arr.dtype == np.float32:
        return arr
    return arr.astype(np.float32)


class Tensor:
    """A dense n-d array plus an optional gradient slot.

    ``requires_grad=True`` marks a leaf whose gradient should be accumulated
    by ``backward``. Ops propagate the flag; results of ops over constants are
    plain constants with no graph attached.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward_fn = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}{flag})"

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    # -- autodiff ------------------------------------------------------------

    def backward(self, grad=None, free_graph: bool = True):
        """Accumulate gradients of ``self`` into every reachable grad leaf.

        Without an explicit seed ``grad`` the tensor must be scalar-sized.
        Each node's rule runs exactly once, after all of its consumers, so a
        tensor used twice receives the sum of both contributions.
        """
        if not self.requires_grad:
            raise ValueError("backward on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward without a seed gradient needs a scalar tensor")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise ShapeError(f"seed gradient shape {grad.shape} != tensor shape {self.data.shape}")

        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(topo):
            fn = node._backward_fn
            if fn is not None and node.grad is not None:
                fn(node.grad)
                if free_graph:
                    # Interior op node: release the graph and its gradient;
                    # leaves (fn is None) keep their accumulated grads.
                    node._parents = ()
                    node._backward_fn = None
                    node.grad = None

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def _ensure_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _coerce_pair(a, b):
    """Wrap plain values so both operands are Tensors of a common dtype."""
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        raise TypeError("at least one operand must be a Tensor")
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return a, b


def _make(data, parents, backward_fn) -> Tensor:
    """Build an op result; skip the graph when grads are off or unneeded."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray):
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(sa, sb):
    try:
        return np.broadcast_shapes(sa, sb)
    except ValueError as exc:
        raise ShapeError(f"shapes {sa} and {sb} do not broadcast") from exc


# -- elementwise suite ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_broadcast(a.shape, b.shape)
    out_data = a.data + b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(out_data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_broadcast(a.shape, b.shape)
    out_data = a.data - b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_broadcast(a.shape, b.shape)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), backward)


def relu(x) -> Tensor:
    x = _ensure_tensor(x)
    out_data = np.maximum(x.data, 0)

    def backward(g):
        _accumulate(x, g * (x.data > 0))

    return _make(out_data, (x,), backward)


def sigmoid(x) -> Tensor:
    x = _ensure_tensor(x)
    d = x.data
    out_data = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                        np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    out_data = out_data.astype(d.dtype, copy=False)

    def backward(g):
        _accumulate(x, g * out_data * (1.0 - out_data))

    return _make(out_data, (x,), backward)


def log(x) -> Tensor:
    x = _ensure_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log of a non-positive value")
    out_data = np.log(x.data)

    def backward(g):
        _accumulate(x, g / x.data)

    return _make(out_data, (x,), backward)


def exp(x) -> Tensor:
    x = _ensure_tensor(x)
    out_data = np.exp(x.data)

    def backward(g):
        _accumulate(x, g * out_data)

    return _make(out_data, (x,), backward)


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _respread(g, axis_n, keepdims, ndim):
    """Reshape a reduced gradient so it broadcasts back over the input."""
    if keepdims:
        return g
    if axis_n is None:
        return np.asarray(g).reshape((1,) * ndim)
    return np.expand_dims(g, axis_n)


def sum_(x, axis=None, keepdims=False) -> Tensor:
    x = _ensure_tensor(x)
    axis_n = _norm_axis(axis, x.data.ndim)
    out_data = x.data.sum(axis=axis_n, keepdims=keepdims)

    def backward(g):
        gg = _respread(g, axis_n, keepdims, x.data.ndim)
        _accumulate(x, np.broadcast_to(gg, x.shape).astype(x.dtype, copy=True))

    return _make(out_data, (x,), backward)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = _ensure_tensor(x)
    axis_n = _norm_axis(axis, x.data.ndim)
    out_data = x.data.mean(axis=axis_n, keepdims=keepdims)
    count = x.data.size if axis_n is None else int(np.prod([x.shape[a] for a in axis_n]))

    def backward(g):
        gg = _respread(g, axis_n, keepdims, x.data.ndim)
        _accumulate(x, (np.broadcast_to(gg, x.shape) / count).astype(x.dtype, copy=False))

    return _make(out_data, (x,), backward)


def l2_norm(x, axis=None, keepdims=False, eps: float = 0.0) -> Tensor:
    """sqrt(sum(x^2) + eps^2) along ``axis``.

    With eps=0 this is the plain L2 norm; the backward pass guards the
    division so the (sub)gradient at an exactly-zero vector is zero. A
    positive eps gives the smooth generalized-Charbonnier core.
    """
    x = _ensure_tensor(x)
    axis_n = _norm_axis(axis, x.data.ndim)
    sq = (x.data * x.data).sum(axis=axis_n, keepdims=True)
    norm_keep = np.sqrt(sq + eps * eps)
    if keepdims:
        out_data = norm_keep
    elif axis_n is None:
        out_data = norm_keep.reshape(())
    else:
        out_data = np.squeeze(norm_keep, axis=axis_n)

    def backward(g):
        gg = _respread(g, axis_n, keepdims, x.data.ndim)
        denom = np.where(norm_keep == 0.0, 1.0, norm_keep) if eps == 0.0 else norm_keep
        _accumulate(x, (gg * x.data / denom).astype(x.dtype, copy=False))

    return _make(out_data, (x,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_ensure_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty list")
    axis = axis % tensors[0].data.ndim
    ref = list(tensors[0].shape)
    for t in tensors[1:]:
        s = list(t.shape)
        if len(s) != len(ref) or any(i != axis and a != b for i, (a, b) in enumerate(zip(ref, s))):
            raise ShapeError(f"concat shapes {ref} vs {s} differ off axis {axis}")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accumulate(t, piece)

    return _make(out_data, tuple(tensors), backward)


def reshape(x, shape) -> Tensor:
    x = _ensure_tensor(x)
    try:
        out_data = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}") from exc

    def backward(g):
        _accumulate(x, g.reshape(x.shape))

    return _make(out_data, (x,), backward)


# -- linear algebra / structured ops -------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} x {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _make(out_data, (a, b), backward)


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    """Column matrix (B*Ho*Wo, kh*kw*C): channels-last windows feed the GEMM.

    The channels-last intermediate keeps the window gather's inner runs
    contiguous, which is several times faster than gathering NCHW windows.
    """
    B, C, H, W = x.shape
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    if Ho <= 0 or Wo <= 0:
        raise ShapeError(f"conv2d output extent non-positive for input {x.shape}, "
                         f"kernel {(kh, kw)}, stride {stride}, pad {pad}")
    xt = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
    if pad:
        xt = np.pad(xt, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xt, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]  # (B, Ho, Wo, C, kh, kw)
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(
        B * Ho * Wo, kh * kw * C)
    return cols, Ho, Wo


def _kernel_matrix(w: np.ndarray) -> np.ndarray:
    """Kernel as (kh*kw*C, O), matching the _im2col column order."""
    O, C, kh, kw = w.shape
    return np.ascontiguousarray(w.transpose(2, 3, 1, 0)).reshape(kh * kw * C, O)


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: int, pad: int):
    O = w.shape[0]
    cols, Ho, Wo = _im2col(x, w.shape[2], w.shape[3], stride, pad)
    out = cols @ _kernel_matrix(w)
    B = x.shape[0]
    # The buffer stays channels-last; the logical NCHW view transposes for
    # free in the next conv's channels-last gather.
    out = out.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)
    return out, cols, Ho, Wo


def conv2d(x, w, stride: int = 1, pad: int = 0) -> Tensor:
    """2-d cross-correlation, zero padding, NCHW input and OIHW kernel."""
    x, w = _coerce_pair(x, w)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input/kernel, got {x.shape}, {w.shape}")
    O, C, kh, kw = w.shape
    if stride < 1:
        raise ShapeError(f"conv2d stride must be >= 1, got {stride}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d kernel extents must be odd, got {(kh, kw)}")
    if x.shape[1] != C:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape[1]} vs kernel {C}")
    if pad > kh - 1 or pad > kw - 1:
        raise ShapeError("conv2d pad must be <= kernel-1")
    out_data, cols, Ho, Wo = _conv_forward(x.data, w.data, stride, pad)
    B, _, H, W = x.shape

    def backward(g):
        gc = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(B * Ho * Wo, O)
        if w.requires_grad:
            dk = (cols.T @ gc).reshape(kh, kw, C, O)
            _accumulate(w, np.ascontiguousarray(dk.transpose(3, 2, 0, 1)))
        if x.requires_grad:
            # dX is itself a stride-1 correlation of the (dilated) output
            # gradient with the flipped, channel-transposed kernel.
            if stride > 1:
                gd = np.zeros((B, O, (Ho - 1) * stride + 1, (Wo - 1) * stride + 1), dtype=g.dtype)
                gd[:, :, ::stride, ::stride] = g
            else:
                gd = g
            rh = (H + 2 * pad - kh) - (Ho - 1) * stride
            rw = (W + 2 * pad - kw) - (Wo - 1) * stride
            gd = np.pad(gd, ((0, 0), (0, 0),
                             (kh - 1 - pad, kh - 1 - pad + rh),
                             (kw - 1 - pad, kw - 1 - pad + rw)))
            wt = np.ascontiguousarray(w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
            dx, _, _, _ = _conv_forward(gd, wt, 1, 0)
            _accumulate(x, dx)

    return _make(out_data, (x, w), backward)


def upsample2x(x) -> Tensor:
    """Nearest-neighbour 2x spatial upsampling of an NCHW tensor."""
    x = _ensure_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError(f"upsample2x expects a 4-d tensor, got {x.shape}")
    out_data = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    B, C, H, W = x.shape

    def backward(g):
        _accumulate(x, g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)))

    return _make(out_data, (x,), backward)


def _bilinear_terms(img: np.ndarray, coords: np.ndarray):
    """Corner indices, weights and in-bounds masks for bilinear sampling."""
    _, H, W = img.shape
    cx = coords[..., 0]
    cy = coords[..., 1]
    x0 = np.floor(cx)
    y0 = np.floor(cy)
    fx = cx - x0
    fy = cy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    terms = []
    for dx, dy, wgt, dwx, dwy in (
        (0, 0, (1 - fx) * (1 - fy), -(1 - fy), -(1 - fx)),
        (1, 0, fx * (1 - fy), (1 - fy), -fx),
        (0, 1, (1 - fx) * fy, -fy, (1 - fx)),
        (1, 1, fx * fy, fy, fx),
    ):
        xi = x0 + dx
        yi = y0 + dy
        inb = (xi >= 0) & (xi < W) & (yi >= 0) & (yi < H)
        xic = np.clip(xi, 0, W - 1)
        yic = np.clip(yi, 0, H - 1)
        vals = img[:, yic, xic] * inb  # (C, h, w), zero outside
        terms.append((xic, yic, inb, wgt, dwx, dwy, vals))
    return terms


def bilinear_forward(img: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Plain-array bilinear sampling; out-of-bounds reads are zero."""
    out = None
    for _, _, _, wgt, _, _, vals in _bilinear_terms(img, coords):
        piece = wgt * vals
        out = piece if out is None else out + piece
    return out.astype(img.dtype, copy=False)


def bilinear_sample(image, coords) -> Tensor:
    """Sample ``image`` (C,H,W) at ``coords`` (h,w,2) in (x, y) pixel order.

    Pixel centers sit at integer coordinates; reads outside the image return
    zero. Differentiable in both the image values and the coordinates.
    """
    image, coords = _ensure_tensor(image), _ensure_tensor(coords)
    if image.data.ndim != 3:
        raise ShapeError(f"bilinear_sample expects a (C,H,W) image, got {image.shape}")
    if coords.data.ndim != 3 or coords.shape[-1] != 2:
        raise ShapeError(f"bilinear_sample expects (h,w,2) coords, got {coords.shape}")
    C, H, W = image.shape
    terms = _bilinear_terms(image.data, coords.data)
    out_data = None
    for _, _, _, wgt, _, _, vals in terms:
        piece = wgt * vals
        out_data = piece if out_data is None else out_data + piece
    out_data = out_data.astype(image.dtype, copy=False)

    def backward(g):
        if image.requires_grad:
            dimg = np.zeros_like(image.data)
            flat = dimg.reshape(C, H * W)
            for xic, yic, inb, wgt, _, _, _ in terms:
                contrib = (wgt * g).reshape(C, -1)
                idx = (yic * W + xic).reshape(-1)
                m = inb.reshape(-1)
                if m.any():
                    for c in range(C):
                        flat[c] += np.bincount(idx[m], weights=contrib[c][m],
                                               minlength=H * W)
            _accumulate(image, dimg)
        if coords.requires_grad:
            dx = np.zeros(coords.shape[:-1], dtype=coords.dtype)
            dy = np.zeros_like(dx)
            for _, _, _, _, dwx, dwy, vals in terms:
                gv = (g * vals).sum(axis=0)
                dx += dwx * gv
                dy += dwy * gv
            _accumulate(coords, np.stack([dx, dy], axis=-1))

    return _make(out_data, (image, coords), backward)


def grad_reverse(x, alpha: float) -> Tensor:
    """Identity in the forward pass; backward multiplies the gradient by -alpha."""
    x = _ensure_tensor(x)
    if alpha < 0:
        raise DomainError(f"grad_reverse alpha must be >= 0, got {alpha}")

    def backward(g):
        _accumulate(x, (-alpha) * g)

    return _make(x.data, (x,), backward)


# -- serialization ---------------------------------------------------------------

TENSOR_MAGIC = b"HFM1"
_DTYPE_CODE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def write_array(fp, arr: np.ndarray) -> None:
    """Write one array record: magic, dtype code, rank, u32 extents, raw LE values."""
    arr = np.asarray(arr)
    if arr.dtype not in _DTYPE_CODE:
        raise FormatError(f"unsupported dtype {arr.dtype}")
    fp.write(TENSOR_MAGIC)
    fp.write(struct.pack("<BB", _DTYPE_CODE[arr.dtype], arr.ndim))
    fp.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fp.write(np.ascontiguousarray(arr, dtype="<f4" if arr.dtype == np.float32 else "<f8").tobytes())


def read_array(fp) -> np.ndarray:
    """Read one array record; raises FormatError with the bad byte offset."""
    start = fp.tell()
    magic = fp.read(4)
    if magic != TENSOR_MAGIC:
        raise FormatError(f"bad tensor magic at byte {start}: {magic!r}")
    head = fp.read(2)
    if len(head) != 2:
        raise FormatError(f"truncated tensor header at byte {fp.tell()}")
    code, rank = struct.unpack("<BB", head)
    if code not in _CODE_DTYPE:
        raise FormatError(f"unknown dtype code {code} at byte {start + 4}")
    ext = fp.read(4 * rank)
    if len(ext) != 4 * rank:
        raise FormatError(f"truncated extents at byte {fp.tell()}")
    shape = struct.unpack(f"<{rank}I", ext) if rank else ()
    dtype = _CODE_DTYPE[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if shape else dtype.itemsize
    raw = fp.read(nbytes)
    if len(raw) != nbytes:
        raise FormatError(f"truncated tensor payload at byte {fp.tell()}")
    arr = np.frombuffer(raw, dtype=dtype).reshape(shape)
    return arr.astype(np.float32 if code == 0 else np.float64, copy=True)


def save_tensor(path, t) -> None:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    with open(path, "wb") as fp:
        write_array(fp, arr)


def load_tensor(path, requires_grad: bool = False) -> Tensor:
    with open(path, "rb") as fp:
        return Tensor(read_array(fp), requires_grad=requires_grad)
