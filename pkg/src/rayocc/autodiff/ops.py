"""Differentiable operations over :class:`Tensor`.

Broadcasting is deliberately limited: elementwise ops need equal shapes or a
python scalar operand; per-channel scale/shift goes through :func:`affine` and
:func:`normalize`.
"""

from __future__ import annotations

from collections import Counter
from typing import Optional, Sequence

import numpy as np

from .tensor import Node, NonFiniteError, Tensor, TensorError, current_tape, grad_enabled

# multiply-accumulate counts per op kind; see reset_counters()
counters: Counter = Counter()


def reset_counters() -> None:
    counters.clear()


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _out(kind: str, inputs: tuple, data: np.ndarray, backward) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{kind}: non-finite output")
    out = Tensor(data, dtype=data.dtype)
    if grad_enabled() and any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        out.requires_grad = True
        node = Node(kind, inputs, out, backward)
        out._node = node
        current_tape().record(node)
    return out


def _need(t) -> bool:
    return isinstance(t, Tensor) and t.requires_grad


def _same_shape(kind: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise TensorError(f"{kind}: shape mismatch {a.shape} vs {b.shape}")


# elementwise -----------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return _out("add", (a,), a.data + a.data.dtype.type(c), lambda g: (g,))
    _same_shape("add", a, b)
    return _out("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return _out("sub", (a,), a.data - a.data.dtype.type(c), lambda g: (g,))
    _same_shape("sub", a, b)
    return _out("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = a.data.dtype.type(float(b))
        return _out("mul", (a,), a.data * c, lambda g: (g * c,))
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _out("mul", (a, b), ad * bd, lambda g: (g * bd if _need(a) else None, g * ad if _need(b) else None))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _out("relu", (x,), np.maximum(x.data, x.data.dtype.type(0)), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return _out("sigmoid", (x,), y, lambda g: (g * y * (1 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _out("tanh", (x,), y, lambda g: (g * (1 - y * y),))


def _sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# shape ops ---------------------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise TensorError(f"reshape: cannot reshape {x.shape} to {shape}") from None
    src = x.shape
    return _out("reshape", (x,), np.ascontiguousarray(y), lambda g: (g.reshape(src),))


def flatten(x: Tensor) -> Tensor:
    """(N, ...) -> (N, prod(...))."""
    if x.ndim < 1:
        raise TensorError("flatten: needs at least one axis")
    return reshape(x, (x.shape[0], -1))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = list(xs)
    if not xs:
        raise TensorError("concat: empty input list")
    nd = xs[0].ndim
    ax = axis % nd
    for t in xs[1:]:
        if t.ndim != nd or any(t.shape[i] != xs[0].shape[i] for i in range(nd) if i != ax):
            raise TensorError(f"concat(axis={axis}): shape mismatch {xs[0].shape} vs {t.shape}")
    sizes = [t.shape[ax] for t in xs]
    bounds = np.cumsum([0] + sizes)
    data = np.concatenate([t.data for t in xs], axis=ax)

    def bw(g):
        sl = [slice(None)] * nd
        res = []
        for t, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            if _need(t):
                sl[ax] = slice(lo, hi)
                res.append(np.ascontiguousarray(g[tuple(sl)]))
            else:
                res.append(None)
        return res

    return _out("concat", tuple(xs), data, bw)


def scatter_rows(n: int, idx: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """``out[idx[i]] += vals[i]`` for an (n, ...) output, in a fixed summation order."""
    out = np.zeros((n,) + vals.shape[1:], dtype=vals.dtype)
    if not len(idx):
        return out
    order = np.argsort(idx, kind="stable")
    sidx = idx[order]
    starts = np.flatnonzero(np.r_[True, sidx[1:] != sidx[:-1]])
    out[sidx[starts]] = np.add.reduceat(vals[order], starts, axis=0)
    return out


def take_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows ``x[idx]`` along axis 0."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise TensorError(f"take_rows: index out of range for {x.shape[0]} rows")
    n = x.shape[0]

    def bw(g):
        return (scatter_rows(n, idx, g),)

    return _out("take_rows", (x,), x.data[idx], bw)


def zeros_like(x: Tensor) -> Tensor:
    return Tensor(np.zeros_like(x.data), dtype=x.dtype)


# reductions ----------------------------------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    shp = x.shape
    return _out("sum", (x,), np.asarray(x.data.sum(), dtype=x.dtype).reshape(()),
                lambda g: (np.full(shp, g, dtype=x.dtype),))


def mean_all(x: Tensor) -> Tensor:
    shp, n = x.shape, x.size
    return _out("mean", (x,), np.asarray(x.data.mean(), dtype=x.dtype).reshape(()),
                lambda g: (np.full(shp, g / n, dtype=x.dtype),))


def mean_batch(x: Tensor) -> Tensor:
    """Mean over axis 0 of a (B, C) tensor -> (C,)."""
    if x.ndim != 2:
        raise TensorError(f"mean_batch: expected (B, C), got {x.shape}")
    b = x.shape[0]
    return _out("mean_batch", (x,), x.data.mean(axis=0),
                lambda g: (np.broadcast_to(g / b, x.shape).astype(x.dtype),))


def var_batch(x: Tensor) -> Tensor:
    """Biased variance over axis 0 of a (B, C) tensor -> (C,)."""
    if x.ndim != 2:
        raise TensorError(f"var_batch: expected (B, C), got {x.shape}")
    b = x.shape[0]
    centered = x.data - x.data.mean(axis=0)
    return _out("var_batch", (x,), (centered * centered).mean(axis=0),
                lambda g: (2.0 / b * centered * g,))


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C)."""
    if x.ndim != 4:
        raise TensorError(f"global_avg_pool: expected (N, C, H, W), got {x.shape}")
    n, c, h, w = x.shape
    return _out("global_avg_pool", (x,), x.data.mean(axis=(2, 3)),
                lambda g: (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).astype(x.dtype),))


# per-channel affine and normalization ----------------------------------------------

def _channel_view(kind: str, x: Tensor, v: Tensor):
    c = x.shape[1] if x.ndim > 1 else x.shape[0]
    if v.shape != (c,):
        raise TensorError(f"{kind}: per-channel parameter shape {v.shape} does not match {x.shape}")
    return (1, c) + (1,) * (x.ndim - 2)


def _reduce_channel(g: np.ndarray) -> np.ndarray:
    axes = (0,) + tuple(range(2, g.ndim))
    return g.sum(axis=axes)


def affine(x: Tensor, scale: Tensor, shift: Tensor) -> Tensor:
    """``scale * x + shift`` with per-channel (axis 1) parameters."""
    view = _channel_view("affine", x, scale)
    _channel_view("affine", x, shift)
    sv, tv = scale.data.reshape(view), shift.data.reshape(view)

    def bw(g):
        return (g * sv if _need(x) else None,
                _reduce_channel(g * x.data) if _need(scale) else None,
                _reduce_channel(g) if _need(shift) else None)

    return _out("affine", (x, scale, shift), x.data * sv + tv, bw)


def normalize(x: Tensor, mean: Tensor, var: Tensor, eps: float = 1e-5) -> Tensor:
    """``(x - mean) / sqrt(var + eps)`` per column of a (B, C) tensor."""
    if x.ndim != 2:
        raise TensorError(f"normalize: expected (B, C), got {x.shape}")
    _channel_view("normalize", x, mean)
    _channel_view("normalize", x, var)
    inv = 1.0 / np.sqrt(var.data + eps)
    xc = x.data - mean.data
    y = xc * inv

    def bw(g):
        gx = g * inv if _need(x) else None
        gm = -(g * inv).sum(axis=0) if _need(mean) else None
        gv = (g * xc).sum(axis=0) * (-0.5) * inv ** 3 if _need(var) else None
        return gx, gm, gv

    return _out("normalize", (x, mean, var), y, bw)


# linear algebra ----------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise TensorError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    counters["macs"] += a.shape[0] * a.shape[1] * b.shape[1]
    ad, bd = a.data, b.data
    return _out("matmul", (a, b), ad @ bd,
                lambda g: (g @ bd.T if _need(a) else None, ad.T @ g if _need(b) else None))


def fully_connected(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, tag: str | None = None) -> Tensor:
    """``x @ weight + bias`` for x of shape (B, in), weight (in, out), bias (out,)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise TensorError(f"fully_connected: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise TensorError(f"fully_connected: bias {bias.shape} does not match weight {weight.shape}")
    macs = x.shape[0] * x.shape[1] * weight.shape[1]
    counters["macs"] += macs
    if tag:
        counters[f"macs:{tag}"] += macs
    xd, wd = x.data, weight.data
    y = xd @ wd
    if bias is not None:
        y += bias.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        res = [g @ wd.T if _need(x) else None, xd.T @ g if _need(weight) else None]
        if bias is not None:
            res.append(g.sum(axis=0) if _need(bias) else None)
        return res

    return _out("fully_connected", inputs, y, bw)


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Direct 2D convolution, NCHW input, weight (O, C, k, k).

    The sum runs over kernel taps; each tap is one strided slice times a
    (C, O) matrix, which keeps memory at the size of the output.
    """
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1] or weight.shape[2] != weight.shape[3]:
        raise TensorError(f"conv2d: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise TensorError(f"conv2d: bias {bias.shape} does not match weight {weight.shape}")
    n, c, h, w = x.shape
    o, _, k, _ = weight.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    if ho <= 0 or wo <= 0:
        raise TensorError(f"conv2d: kernel {k} with pad {pad} too large for input {x.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    wd = weight.data
    counters["macs"] += n * ho * wo * c * o * k * k
    # output kept channels-last during accumulation for contiguous matmuls
    acc = np.zeros((n, ho, wo, o), dtype=x.dtype)
    hs, ws = (ho - 1) * stride + 1, (wo - 1) * stride + 1
    for i in range(k):
        for j in range(k):
            patch = xp[:, :, i:i + hs:stride, j:j + ws:stride]  # (n, c, ho, wo)
            acc += np.einsum("nchw,oc->nhwo", patch, wd[:, :, i, j], optimize=True)
    if bias is not None:
        acc += bias.data
    y = np.ascontiguousarray(acc.transpose(0, 3, 1, 2))

    def bw(g):
        gt = g.transpose(0, 2, 3, 1)  # (n, ho, wo, o)
        gx = np.zeros_like(xp) if _need(x) else None
        gw = np.zeros_like(wd) if _need(weight) else None
        for i in range(k):
            for j in range(k):
                if gw is not None:
                    patch = xp[:, :, i:i + hs:stride, j:j + ws:stride]
                    gw[:, :, i, j] = np.einsum("nhwo,nchw->oc", gt, patch, optimize=True)
                if gx is not None:
                    gx[:, :, i:i + hs:stride, j:j + ws:stride] += np.einsum("nhwo,oc->nchw", gt, wd[:, :, i, j], optimize=True)
        if gx is not None and pad:
            gx = np.ascontiguousarray(gx[:, :, pad:pad + h, pad:pad + w])
        res = [gx, gw]
        if bias is not None:
            res.append(g.sum(axis=(0, 2, 3)) if _need(bias) else None)
        return res

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _out("conv2d", inputs, y, bw)


# interpolation ---------------------------------------------------------------------------

def _interp_matrix(n_out: int, n_in: int, align_corners: bool, dtype) -> np.ndarray:
    """Row i holds the linear interpolation weights of output sample i."""
    if align_corners:
        pos = np.zeros(n_out) if n_out == 1 else np.arange(n_out) * (n_in - 1) / (n_out - 1)
    else:
        pos = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    pos = np.clip(pos, 0, n_in - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    m = np.zeros((n_out, n_in), dtype=dtype)
    np.add.at(m, (np.arange(n_out), lo), 1 - frac)
    np.add.at(m, (np.arange(n_out), hi), frac)
    return m


def bilinear_upsample(x: Tensor, factor: int | None = None, size: tuple[int, int] | None = None,
                      align_corners: bool = False) -> Tensor:
    """Resize an NCHW map by ``factor`` or to ``size`` with bilinear weights."""
    if x.ndim != 4:
        raise TensorError(f"bilinear_upsample: expected (N, C, H, W), got {x.shape}")
    n, c, h, w = x.shape
    if size is None:
        if factor is None or factor < 1:
            raise TensorError("bilinear_upsample: need factor >= 1 or size")
        size = (h * factor, w * factor)
    oh, ow = size
    ay = _interp_matrix(oh, h, align_corners, x.dtype)
    ax = _interp_matrix(ow, w, align_corners, x.dtype)
    y = np.einsum("ih,nchw,jw->ncij", ay, x.data, ax, optimize=True)
    return _out("bilinear_upsample", (x,), y,
                lambda g: (np.einsum("ih,ncij,jw->nchw", ay, g, ax, optimize=True),))


def bilinear_sample(fmap: Tensor, batch_idx: np.ndarray, coords: np.ndarray) -> Tensor:
    """Sample an NCHW feature map at continuous pixel coordinates.

    ``coords`` is (T, 2) as (x, y) in feature-map pixels, cell (i, j) centred at
    (i + 0.5, j + 0.5). Edge cells are clamped. Returns (T, C).
    """
    if fmap.ndim != 4:
        raise TensorError(f"bilinear_sample: expected (N, C, H, W), got {fmap.shape}")
    coords = np.asarray(coords, dtype=np.float64)
    batch_idx = np.asarray(batch_idx, dtype=np.int64)
    if coords.ndim != 2 or coords.shape[1] != 2 or batch_idx.shape != (coords.shape[0],):
        raise TensorError(f"bilinear_sample: coords {coords.shape} / batch_idx {batch_idx.shape} malformed")
    n, c, h, w = fmap.shape
    fx = np.clip(coords[:, 0] - 0.5, 0, w - 1)
    fy = np.clip(coords[:, 1] - 0.5, 0, h - 1)
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax = (fx - x0).astype(fmap.dtype)[:, None]
    ay = (fy - y0).astype(fmap.dtype)[:, None]
    flat = fmap.data.transpose(0, 2, 3, 1).reshape(-1, c)
    i00 = (batch_idx * h + y0) * w + x0
    i01 = (batch_idx * h + y0) * w + x1
    i10 = (batch_idx * h + y1) * w + x0
    i11 = (batch_idx * h + y1) * w + x1
    w00, w01, w10, w11 = (1 - ay) * (1 - ax), (1 - ay) * ax, ay * (1 - ax), ay * ax
    y = flat[i00] * w00 + flat[i01] * w01 + flat[i10] * w10 + flat[i11] * w11

    def bw(g):
        idx = np.concatenate([i00, i01, i10, i11])
        vals = np.concatenate([g * w00, g * w01, g * w10, g * w11])
        gf = scatter_rows(len(flat), idx, vals)
        return (np.ascontiguousarray(gf.reshape(n, h, w, c).transpose(0, 3, 1, 2)),)

    return _out("bilinear_sample", (fmap,), y, bw)


# loss ------------------------------------------------------------------------------------

def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy, evaluated on logits.

    Uses ``max(x, 0) - x*t + log1p(exp(-|x|))`` so large logits never hit log(0).
    """
    t = targets.data if isinstance(targets, Tensor) else np.asarray(targets)
    if t.shape != logits.shape:
        raise TensorError(f"bce_with_logits: shape mismatch {logits.shape} vs {t.shape}")
    if not np.all((t == 0) | (t == 1)):
        raise TensorError("bce_with_logits: targets must be 0 or 1")
    x = logits.data
    t = t.astype(x.dtype)
    per = np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))
    n = x.size
    loss = np.asarray(per.mean(), dtype=x.dtype).reshape(())
    return _out("bce_with_logits", (logits,), loss, lambda g: ((_sigmoid(x) - t) * (g / n),))
