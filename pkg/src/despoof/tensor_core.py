"""Minimal reverse-mode autodiff engine on numpy arrays.

Every primitive the de-spoofing networks and losses need lives here: 3x3
convolution, batch norm, ELU, pooling, bilinear resize, channel concat,
fully-connected / dropout / softmax cross-entropy, a radix-2 2D FFT with
shift and magnitude, and L1 reduction. Arithmetic is deterministic: the same
inputs and seed give bitwise-identical outputs and gradients.

Layout convention for images is channels-last: [batch, height, width, channels].
"""

from __future__ import annotations

import functools
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "ShapeError", "no_grad", "grad_enabled", "backward", "zero_grads",
    "add", "sub", "mul", "mul_const", "scale", "abs_", "mean_all", "sum_all",
    "l1_norm", "dot_const", "take_batch", "reshape", "permute",
    "conv2d", "elu", "batch_norm", "BatchNormState", "max_pool2", "avg_pool",
    "resize_bilinear", "concat_channels", "fully_connected", "dropout",
    "softmax_ce", "fft2d", "fftshift", "magnitude", "fft2_complex",
    "to_complex", "max_per_sample", "grad_check", "is_pow2",
]

FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


def is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


# --------------------------------------------------------------------------
# Tensor and tape
# --------------------------------------------------------------------------

class Tensor:
    """N-dimensional float array with optional gradient accumulation.

    ``data`` is always a float32 or float64 ndarray. ``grad`` (same shape)
    appears after a backward pass when ``requires_grad`` is set. Non-leaf
    tensors remember their parents and a backward closure; recording order is
    creation order, and backward visits closures in exact reverse order.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__


_grad_enabled = True


class no_grad:
    """Context manager suspending tape recording (inference / fixed nets)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


def _node(data: np.ndarray, parents: Sequence[Tensor],
          backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(loss: Tensor) -> None:
    """Accumulate gradients of a scalar ``loss`` into the recorded graph."""
    if loss.data.ndim != 0:
        raise ShapeError(f"backward needs a scalar, got shape {loss.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and (p._parents or p.requires_grad):
                stack.append((p, False))
    loss._accumulate(np.ones((), dtype=loss.data.dtype))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


# --------------------------------------------------------------------------
# Elementwise arithmetic and reductions
# --------------------------------------------------------------------------

def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")

    def back(g):
        a._accumulate(g)
        b._accumulate(g)
    return _node(a.data + b.data, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")

    def back(g):
        a._accumulate(g)
        b._accumulate(-g)
    return _node(a.data - b.data, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")

    def back(g):
        a._accumulate(g * b.data)
        b._accumulate(g * a.data)
    return _node(a.data * b.data, (a, b), back)


def mul_const(a: Tensor, c: np.ndarray) -> Tensor:
    """Multiply by a constant array (broadcasting allowed, no gradient to c)."""
    c = np.asarray(c, dtype=a.data.dtype)

    def back(g):
        ga = g * c
        if ga.shape != a.shape:  # broadcast reduction back onto a
            extra = ga.ndim - a.data.ndim
            ga = ga.sum(axis=tuple(range(extra)))
        a._accumulate(ga)
    return _node(a.data * c, (a,), back)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def back(g):
        a._accumulate(g * s)
    return _node(a.data * s, (a,), back)


def abs_(a: Tensor) -> Tensor:
    # subgradient at 0 is 0 (np.sign(0) == 0)
    def back(g):
        a._accumulate(g * np.sign(a.data))
    return _node(np.abs(a.data), (a,), back)


def sum_all(a: Tensor) -> Tensor:
    def back(g):
        a._accumulate(np.full_like(a.data, g))
    return _node(a.data.sum(), (a,), back)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def back(g):
        a._accumulate(np.full_like(a.data, g / n))
    return _node(a.data.mean(), (a,), back)


def l1_norm(a: Tensor) -> Tensor:
    """Mean absolute value (sum of |x| divided by element count)."""
    return mean_all(abs_(a))


def dot_const(a: Tensor, w: np.ndarray) -> Tensor:
    """Weighted sum of a 1-D tensor with constant weights."""
    w = np.asarray(w, dtype=a.data.dtype)
    if a.data.shape != w.shape:
        raise ShapeError(f"dot_const: shapes {a.shape} and {w.shape} differ")

    def back(g):
        a._accumulate(g * w)
    return _node((a.data * w).sum(), (a,), back)


def take_batch(a: Tensor, idx: Sequence[int]) -> Tensor:
    """Select samples along axis 0; gradients scatter back."""
    idx = tuple(int(i) for i in idx)
    if not idx:
        raise ShapeError("take_batch: empty index list")

    def back(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, list(idx), g)
        a._accumulate(ga)
    return _node(a.data[list(idx)], (a,), back)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)

    def back(g):
        a._accumulate(g.reshape(a.data.shape))
    return _node(a.data.reshape(shape), (a,), back)


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = np.argsort(axes)

    def back(g):
        a._accumulate(g.transpose(inv))
    return _node(a.data.transpose(axes), (a,), back)


# --------------------------------------------------------------------------
# Convolution, activation, normalization, pooling, resize
# --------------------------------------------------------------------------

def _conv_slices(xp: np.ndarray, ho: int, wo: int, stride: int):
    """Yield the 9 shifted views of the zero-padded input for a 3x3 kernel."""
    for i in range(3):
        for j in range(3):
            yield i, j, xp[:, i:i + stride * (ho - 1) + 1:stride,
                           j:j + stride * (wo - 1) + 1:stride, :]


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """3x3 'same' convolution (zero padding 1) with integer stride.

    x: [B,H,W,Cin], w: [3,3,Cin,Cout], b: [Cout] -> [B,H/stride,W/stride,Cout].
    """
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d: input must be 4-D, got {x.shape}")
    if w.data.ndim != 4 or w.shape[0] != 3 or w.shape[1] != 3:
        raise ShapeError(f"conv2d: weight must be [3,3,Cin,Cout], got {w.shape}")
    if x.shape[3] != w.shape[2]:
        raise ShapeError(
            f"conv2d: input channels {x.shape} do not match weight Cin {w.shape}")
    if b.shape != (w.shape[3],):
        raise ShapeError(f"conv2d: bias {b.shape} must be [{w.shape[3]}]")
    bsz, h, wd, cin = x.shape
    if stride < 1 or h % stride or wd % stride:
        raise ShapeError(f"conv2d: spatial size {(h, wd)} not divisible by stride {stride}")
    ho, wo = h // stride, wd // stride
    cout = w.shape[3]

    xp = np.pad(x.data, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((bsz, ho, wo, 9, cin), dtype=x.data.dtype)
    for i, j, view in _conv_slices(xp, ho, wo, stride):
        cols[:, :, :, 3 * i + j, :] = view
    wmat = w.data.reshape(9 * cin, cout)
    y = cols.reshape(-1, 9 * cin) @ wmat + b.data
    y = y.reshape(bsz, ho, wo, cout)

    def back(g):
        gmat = g.reshape(-1, cout)
        if w.requires_grad:
            w._accumulate((cols.reshape(-1, 9 * cin).T @ gmat).reshape(w.data.shape))
        if b.requires_grad:
            b._accumulate(gmat.sum(axis=0))
        if x.requires_grad or x._parents:
            dcols = (gmat @ wmat.T).reshape(bsz, ho, wo, 3, 3, cin)
            dxp = np.zeros_like(xp)
            for i in range(3):
                for j in range(3):
                    dxp[:, i:i + stride * (ho - 1) + 1:stride,
                        j:j + stride * (wo - 1) + 1:stride, :] += dcols[:, :, :, i, j, :]
            x._accumulate(dxp[:, 1:1 + h, 1:1 + wd, :])
    return _node(y, (x, w, b), back)


def elu(x: Tensor) -> Tensor:
    """Exponential linear unit, alpha = 1; derivative at 0 defined as 1."""
    pos = x.data > 0
    ex = np.exp(np.minimum(x.data, 0.0))
    y = np.where(pos, x.data, ex - 1.0)

    def back(g):
        x._accumulate(g * np.where(pos, 1.0, ex))
    return _node(y, (x,), back)


class BatchNormState:
    """Running statistics for one batch-norm layer (eval-mode normalizers)."""

    def __init__(self, mean: Tensor, var: Tensor):
        self.mean = mean
        self.var = var


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
               mode: str, eps: float = 1e-5, momentum: float = 0.99) -> Tensor:
    """Per-channel batch normalization over all axes but the last.

    Train mode normalizes by batch statistics and updates the running ones;
    eval mode uses the running statistics. Batch size must be >= 2 in train
    mode (variance normalization is undefined for a single sample).
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"batch_norm: unknown mode {mode!r}")
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: gamma/beta must be [{c}]")
    axes = tuple(range(x.data.ndim - 1))
    if mode == "train":
        if x.shape[0] < 2:
            raise ShapeError("batch_norm: train mode requires batch size >= 2")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        state.mean.data[...] = momentum * state.mean.data + (1 - momentum) * mu
        state.var.data[...] = momentum * state.var.data + (1 - momentum) * var
    else:
        mu = state.mean.data
        var = state.var.data
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * ivar
    y = gamma.data * xhat + beta.data

    n = x.data.size // c

    def back(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=axes))
        if not (x.requires_grad or x._parents):
            return
        gx = g * gamma.data
        if mode == "eval":
            x._accumulate(gx * ivar)
            return
        # standard train-mode gradient through batch statistics
        xc = x.data - mu
        dvar = (gx * xc).sum(axis=axes) * (-0.5) * ivar ** 3
        dmu = -(gx.sum(axis=axes)) * ivar + dvar * (-2.0 / n) * xc.sum(axis=axes)
        x._accumulate(gx * ivar + dvar * 2.0 * xc / n + dmu / n)
    return _node(y, (x, gamma, beta), back)


def max_pool2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; ties route to the first window element."""
    if x.data.ndim != 4:
        raise ShapeError(f"max_pool2: input must be 4-D, got {x.shape}")
    bsz, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2: spatial size {(h, w)} must be even")
    win = x.data.reshape(bsz, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 2, 4, 5)
    win = win.reshape(bsz, h // 2, w // 2, 4, c)
    idx = win.argmax(axis=3)  # first occurrence in row-major window order
    y = np.take_along_axis(win, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]

    def back(g):
        dwin = np.zeros_like(win)
        np.put_along_axis(dwin, idx[:, :, :, None, :], g[:, :, :, None, :], axis=3)
        dx = dwin.reshape(bsz, h // 2, w // 2, 2, 2, c).transpose(0, 1, 3, 2, 4, 5)
        x._accumulate(dx.reshape(bsz, h, w, c))
    return _node(y, (x,), back)


def avg_pool(x: Tensor, factor: int) -> Tensor:
    """Area-average pooling by an integer factor."""
    if x.data.ndim != 4:
        raise ShapeError(f"avg_pool: input must be 4-D, got {x.shape}")
    bsz, h, w, c = x.shape
    if factor < 1 or h % factor or w % factor:
        raise ShapeError(f"avg_pool: size {(h, w)} not divisible by factor {factor}")
    if factor == 1:
        return reshape(x, x.shape)
    ho, wo = h // factor, w // factor
    y = x.data.reshape(bsz, ho, factor, wo, factor, c).mean(axis=(2, 4))
    inv = 1.0 / (factor * factor)

    def back(g):
        gx = np.broadcast_to(g[:, :, None, :, None, :] * inv,
                             (bsz, ho, factor, wo, factor, c))
        x._accumulate(gx.reshape(bsz, h, w, c))
    return _node(y, (x,), back)


@functools.lru_cache(maxsize=64)
def _interp_matrix(src: int, dst: int, dtype_name: str) -> np.ndarray:
    """Corner-aligned bilinear interpolation matrix [dst, src]."""
    m = np.zeros((dst, src), dtype=np.float64)
    if dst == 1 or src == 1:
        m[:, 0] = 1.0
    else:
        pos = np.arange(dst) * (src - 1) / (dst - 1)
        lo = np.minimum(pos.astype(int), src - 2)
        frac = pos - lo
        m[np.arange(dst), lo] = 1.0 - frac
        m[np.arange(dst), lo + 1] += frac
    return m.astype(dtype_name)


def _apply_interp(x: np.ndarray, ry: np.ndarray, rx: np.ndarray) -> np.ndarray:
    bsz, h, w, c = x.shape
    y = np.matmul(ry[None], x.reshape(bsz, h, w * c)).reshape(bsz, -1, w, c)
    ho = y.shape[1]
    y = np.matmul(rx[None], y.transpose(0, 1, 3, 2).reshape(bsz * ho, c, w).transpose(0, 2, 1))
    return y.reshape(bsz, ho, rx.shape[0], c)


def resize_bilinear(x: Tensor, target: tuple[int, int]) -> Tensor:
    """Corner-aligned bilinear upsampling to ``target`` = (H, W)."""
    if x.data.ndim != 4:
        raise ShapeError(f"resize_bilinear: input must be 4-D, got {x.shape}")
    th, tw = target
    _, h, w, _ = x.shape
    if th < h or tw < w:
        raise ShapeError(f"resize_bilinear: target {target} smaller than source {(h, w)}")
    ry = _interp_matrix(h, th, str(x.data.dtype))
    rx = _interp_matrix(w, tw, str(x.data.dtype))
    y = _apply_interp(x.data, ry, rx)

    def back(g):
        x._accumulate(_apply_interp(g, ry.T.copy(), rx.T.copy()))
    return _node(y, (x,), back)


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    """Concatenate along the channel axis; batch/spatial dims must agree."""
    if not xs:
        raise ShapeError("concat_channels: empty input list")
    lead = xs[0].shape[:-1]
    for t in xs[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError(
                f"concat_channels: leading dims differ: {lead} vs {t.shape[:-1]}")
    splits = np.cumsum([t.shape[-1] for t in xs])[:-1]
    parents = tuple(xs)

    def back(g):
        for t, gpart in zip(parents, np.split(g, splits, axis=-1)):
            t._accumulate(gpart)
    return _node(np.concatenate([t.data for t in xs], axis=-1), parents, back)


# --------------------------------------------------------------------------
# Fully-connected head pieces
# --------------------------------------------------------------------------

def fully_connected(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map: x [B,D] @ w [D,K] + b [K]."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"fully_connected: {x.shape} @ {w.shape} mismatch")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"fully_connected: bias {b.shape} must be [{w.shape[1]}]")
    y = x.data @ w.data + b.data

    def back(g):
        if w.requires_grad:
            w._accumulate(x.data.T @ g)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0))
        if x.requires_grad or x._parents:
            x._accumulate(g @ w.data.T)
    return _node(y, (x, w, b), back)


def dropout(x: Tensor, p: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Zero each element with probability p in train mode, scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout: p must be in [0,1), got {p}")
    if mode == "eval" or p == 0.0:
        return reshape(x, x.shape)
    if rng is None:
        raise ValueError("dropout: train mode needs an explicit rng")
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)

    def back(g):
        x._accumulate(g * keep)
    return _node(x.data * keep, (x,), back)


def softmax_ce(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-probability of the true class (log-sum-exp stabilized)."""
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax_ce: logits must be [B,K], got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    bsz, k = logits.shape
    if labels.shape != (bsz,):
        raise ShapeError(f"softmax_ce: labels {labels.shape} must be [{bsz}]")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError("softmax_ce: label out of range")
    zmax = logits.data.max(axis=1, keepdims=True)
    ez = np.exp(logits.data - zmax)
    lse = np.log(ez.sum(axis=1)) + zmax[:, 0]
    loss = (lse - logits.data[np.arange(bsz), labels]).mean()
    probs = ez / ez.sum(axis=1, keepdims=True)

    def back(g):
        d = probs.copy()
        d[np.arange(bsz), labels] -= 1.0
        logits._accumulate(g * d / bsz)
    return _node(np.asarray(loss, dtype=logits.data.dtype), (logits,), back)


# --------------------------------------------------------------------------
# Radix-2 FFT, shift, magnitude
# --------------------------------------------------------------------------

@functools.lru_cache(maxsize=32)
def _bitrev_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


@functools.lru_cache(maxsize=64)
def _twiddles(span: int, dtype_name: str) -> np.ndarray:
    return np.exp(-1j * np.pi * np.arange(span) / span).astype(dtype_name)


def _fft1d_last(a: np.ndarray) -> np.ndarray:
    """Iterative radix-2 Cooley-Tukey DFT along the last axis (complex in/out)."""
    n = a.shape[-1]
    a = a[..., _bitrev_indices(n)]
    span = 1
    while span < n:
        w = _twiddles(span, str(a.dtype))
        a = a.reshape(*a.shape[:-1], n // (2 * span), 2, span)
        odd = a[..., 1, :] * w
        even = a[..., 0, :]
        a = np.stack((even + odd, even - odd), axis=-2).reshape(*a.shape[:-3], n)
        span *= 2
    return a


def fft2_complex(x: np.ndarray) -> np.ndarray:
    """Unnormalized forward 2-D DFT over the last two axes (radix-2 sizes only)."""
    h, w = x.shape[-2:]
    if not (is_pow2(h) and is_pow2(w)):
        raise ShapeError(f"fft2: spatial size {(h, w)} must be powers of two")
    cplx = np.complex64 if x.dtype == np.float32 else np.complex128
    a = _fft1d_last(x.astype(cplx, copy=False))
    a = _fft1d_last(a.swapaxes(-1, -2))
    return a.swapaxes(-1, -2)


def to_complex(spec: np.ndarray) -> np.ndarray:
    """View an [..., H, W, 2] real/imag stack as a complex array."""
    return spec[..., 0] + 1j * spec[..., 1]


def fft2d(x: Tensor) -> Tensor:
    """2-D DFT of a real image stack [..., H, W] -> spectrum [..., H, W, 2].

    The trailing axis holds (real, imaginary). H and W must be powers of two.
    The DFT is linear; the backward pass applies the transposed transform.
    """
    if x.data.ndim < 2:
        raise ShapeError(f"fft2d: input must have >= 2 dims, got {x.shape}")
    spec = fft2_complex(x.data)
    out = np.stack((spec.real, spec.imag), axis=-1)

    def back(g):
        # 2-D DFT matrix is symmetric: dL/dx = Re(F @ conj(g))
        gc = g[..., 0] - 1j * g[..., 1]
        x._accumulate(np.ascontiguousarray(fft2_complex(gc).real, dtype=x.data.dtype))
    return _node(out, (x,), back)


def fftshift(spec: Tensor) -> Tensor:
    """Move DC to the center; for even sizes that is index (H/2, W/2)."""
    if spec.data.ndim < 3 or spec.shape[-1] != 2:
        raise ShapeError(f"fftshift: expected [..., H, W, 2], got {spec.shape}")
    h, w = spec.shape[-3], spec.shape[-2]
    sh = (h // 2, w // 2)

    def back(g):
        spec._accumulate(np.roll(g, (-sh[0], -sh[1]), axis=(-3, -2)))
    return _node(np.roll(spec.data, sh, axis=(-3, -2)), (spec,), back)


def magnitude(spec: Tensor) -> Tensor:
    """Elementwise |z| of an [..., H, W, 2] spectrum; subgradient 0 at z = 0."""
    if spec.shape[-1] != 2:
        raise ShapeError(f"magnitude: expected [..., 2] spectrum, got {spec.shape}")
    re, im = spec.data[..., 0], spec.data[..., 1]
    mag = np.hypot(re, im)

    def back(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            f = np.where(mag > 0, g / mag, 0.0)
        spec._accumulate(np.stack((f * re, f * im), axis=-1))
    return _node(mag, (spec,), back)


def max_per_sample(x: Tensor) -> Tensor:
    """Per-row maximum of a [B, M] tensor; subgradient to the lowest flat index."""
    if x.data.ndim != 2:
        raise ShapeError(f"max_per_sample: input must be 2-D, got {x.shape}")
    idx = x.data.argmax(axis=1)
    y = x.data[np.arange(x.shape[0]), idx]

    def back(g):
        gx = np.zeros_like(x.data)
        gx[np.arange(x.data.shape[0]), idx] = g
        x._accumulate(gx)
    return _node(y, (x,), back)


# --------------------------------------------------------------------------
# Gradient checking
# --------------------------------------------------------------------------

def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor],
               step: float = 1e-5, max_entries_per_param: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Compare tape gradients of the scalar graph ``f()`` to central differences.

    Returns the worst relative error over all checked parameter entries. All
    entries are probed unless ``max_entries_per_param`` caps them (entries are
    then drawn with ``rng``). Requires 64-bit parameters; ``f`` must rebuild
    the graph on every call.
    """
    params = list(params)
    for p in params:
        if p.data.dtype != np.float64:
            raise ValueError("grad_check requires 64-bit parameters")
    zero_grads(params)
    out = f()
    if out.data.ndim != 0:
        raise ShapeError(f"grad_check: f() must be scalar, got shape {out.shape}")
    backward(out)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]
    worst = 0.0
    for p, ga in zip(params, analytic):
        n = p.data.size
        if max_entries_per_param is not None and n > max_entries_per_param:
            if rng is None:
                rng = np.random.default_rng(0)
            entries = rng.choice(n, size=max_entries_per_param, replace=False)
        else:
            entries = range(n)
        flat = p.data.reshape(-1)
        for i in entries:
            orig = flat[i]
            flat[i] = orig + step
            fp = float(f().data)
            flat[i] = orig - step
            fm = float(f().data)
            flat[i] = orig
            num = (fp - fm) / (2.0 * step)
            ana = float(ga.reshape(-1)[i])
            diff = abs(num - ana)
            if diff < 1e-8:
                continue  # below the finite-difference noise floor: agreement
            worst = max(worst, diff / max(abs(num), abs(ana), 1e-6))
    zero_grads(params)
    return worst
