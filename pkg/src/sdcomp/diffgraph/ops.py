"""Differentiable operation suite over (batch, channel, height, width) arrays.

Shape rules:
- arithmetic ops broadcast by numpy rules; gradients are summed back down
  to each operand's shape,
- conv2d / conv2d_transpose use "same" zero padding: output spatial size is
  ceil(in / stride) for conv2d and in * stride for the transpose; when the
  total padding is odd the extra row/column goes on the bottom/right,
- grid_sample_bilinear takes pixel coordinates (u, v) = (column, row) with
  the origin at the top-left pixel center; out-of-bounds samples produce 0
  and a separate in-bounds mask output.
"""

from __future__ import annotations

import numpy as np

from .graph import Node, ShapeMismatch, constant, make_op

# Coordinates within this margin of the image border still count as
# in-bounds for grid sampling, so an identity warp keeps a full mask
# despite rounding in the projection arithmetic.
GRID_BOUNDS_EPS = 1e-6


def as_node(value) -> Node:
    return value if isinstance(value, Node) else constant(value)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape of a broadcast operand."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _binary(op_name, a, b, value, da, db) -> Node:
    a, b = as_node(a), as_node(b)

    def backward(g):
        if a.requires_grad:
            a.grad += _unbroadcast(da(g), a.value.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(db(g), b.value.shape)

    return make_op(op_name, value, (a, b), backward)


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    return _binary("add", a, b, a.value + b.value, lambda g: g, lambda g: g)


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    return _binary("sub", a, b, a.value - b.value, lambda g: g, lambda g: -g)


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    return _binary(
        "mul", a, b, a.value * b.value, lambda g: g * b.value, lambda g: g * a.value
    )


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    return _binary(
        "div",
        a,
        b,
        a.value / b.value,
        lambda g: g / b.value,
        lambda g: -g * a.value / (b.value * b.value),
    )


def neg(x) -> Node:
    x = as_node(x)

    def backward(g):
        x.grad += -g

    return make_op("neg", -x.value, (x,), backward)


def _unary(op_name, x, value, dx) -> Node:
    def backward(g):
        x.grad += dx(g)

    return make_op(op_name, value, (x,), backward)


def abs_(x) -> Node:
    x = as_node(x)
    return _unary("abs", x, np.abs(x.value), lambda g: g * np.sign(x.value))


def exp(x) -> Node:
    x = as_node(x)
    value = np.exp(x.value)
    return _unary("exp", x, value, lambda g: g * value)


def log(x) -> Node:
    x = as_node(x)
    return _unary("log", x, np.log(x.value), lambda g: g / x.value)


def sqrt(x) -> Node:
    x = as_node(x)
    value = np.sqrt(x.value)
    return _unary("sqrt", x, value, lambda g: g * (0.5 / value))


def square(x) -> Node:
    x = as_node(x)
    return _unary("square", x, x.value * x.value, lambda g: g * (2.0 * x.value))


def clamp(x, lo=None, hi=None) -> Node:
    x = as_node(x)
    value = np.clip(x.value, lo, hi)
    pass_through = np.ones_like(x.value)
    if lo is not None:
        pass_through *= x.value >= lo
    if hi is not None:
        pass_through *= x.value <= hi
    return _unary("clamp", x, value, lambda g: g * pass_through)


def leaky_relu(x, slope: float = 0.1) -> Node:
    x = as_node(x)
    factor = np.where(x.value > 0, 1.0, slope)
    return _unary("leaky_relu", x, x.value * factor, lambda g: g * factor)


def softplus(x) -> Node:
    x = as_node(x)
    # Stable softplus: max(x, 0) + log1p(exp(-|x|)); same trick for sigmoid.
    damp = np.exp(-np.abs(x.value))
    value = np.maximum(x.value, 0.0) + np.log1p(damp)
    sigmoid = np.where(x.value >= 0, 1.0 / (1.0 + damp), damp / (1.0 + damp))
    return _unary("softplus", x, value, lambda g: g * sigmoid)


def sum_(x, axis=None) -> Node:
    x = as_node(x)
    value = np.asarray(x.value.sum(axis=axis))

    def backward(g):
        if axis is None:
            x.grad += g  # scalar broadcasts
        else:
            x.grad += np.expand_dims(g, axis)

    return make_op("sum", value, (x,), backward)


def mean(x, axis=None) -> Node:
    x = as_node(x)
    value = np.asarray(x.value.mean(axis=axis))
    count = x.value.size if axis is None else x.value.shape[axis]

    def backward(g):
        if axis is None:
            x.grad += g / count
        else:
            x.grad += np.expand_dims(g, axis) / count

    return make_op("mean", value, (x,), backward)


def spatial_mean(x) -> Node:
    """Mean over the trailing (height, width) axes: (B, C, H, W) -> (B, C)."""
    x = as_node(x)
    if x.value.ndim != 4:
        raise ShapeMismatch(f"spatial_mean expects a 4-D array, got {x.value.shape}")
    b, c, h, w = x.value.shape
    value = x.value.mean(axis=(2, 3))

    def backward(g):
        x.grad += g[:, :, None, None] / (h * w)

    return make_op("spatial_mean", value, (x,), backward)


def reshape(x, shape) -> Node:
    x = as_node(x)
    value = x.value.reshape(shape)

    def backward(g):
        x.grad += g.reshape(x.value.shape)

    return make_op("reshape", value, (x,), backward)


def getitem(x, index) -> Node:
    """Basic slicing/indexing with gradient scatter."""
    x = as_node(x)
    value = np.asarray(x.value[index])

    def backward(g):
        x.grad[index] += g

    return make_op("getitem", value, (x,), backward)


def concat(nodes, axis: int = 1) -> Node:
    nodes = [as_node(n) for n in nodes]
    shapes = [n.value.shape for n in nodes]
    base = list(shapes[0])
    for s in shapes[1:]:
        trimmed = list(s)
        trimmed[axis] = base[axis]
        if trimmed != base:
            raise ShapeMismatch(f"concat shapes incompatible: {shapes}")
    value = np.concatenate([n.value for n in nodes], axis=axis)
    offsets = np.cumsum([0] + [s[axis] for s in shapes])

    def backward(g):
        for node, start, stop in zip(nodes, offsets[:-1], offsets[1:]):
            if node.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(start, stop)
                node.grad += g[tuple(sl)]

    return make_op("concat", value, tuple(nodes), backward)


def matmul(a, b) -> Node:
    """2-D matrix product; the right operand may be a vector."""
    a, b = as_node(a), as_node(b)
    if a.value.ndim != 2 or b.value.ndim not in (1, 2):
        raise ShapeMismatch(f"matmul shapes {a.value.shape} @ {b.value.shape}")
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeMismatch(f"matmul shapes {a.value.shape} @ {b.value.shape}")
    value = a.value @ b.value

    def backward(g):
        if b.value.ndim == 1:
            if a.requires_grad:
                a.grad += np.outer(g, b.value)
            if b.requires_grad:
                b.grad += a.value.T @ g
        else:
            if a.requires_grad:
                a.grad += g @ b.value.T
            if b.requires_grad:
                b.grad += a.value.T @ g

    return make_op("matmul", value, (a, b), backward)


# ---------------------------------------------------------------------------
# Convolution core: one set of forward / input-adjoint / weight-adjoint
# routines shared by conv2d and conv2d_transpose.
# ---------------------------------------------------------------------------


def _same_geometry(size: int, kernel: int, stride: int) -> tuple:
    out = -(-size // stride)
    pad = max((out - 1) * stride + kernel - size, 0)
    return out, pad // 2, pad - pad // 2


def _gather_patches(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int):
    b, c = xp.shape[:2]
    patches = np.empty((b, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            patches[:, :, i, j] = xp[
                :, :, i : i + stride * oh : stride, j : j + stride * ow : stride
            ]
    return patches


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int) -> tuple:
    b, cin, h, wd = x.shape
    oh, pt, pb = _same_geometry(h, kh, stride)
    ow, pl, pr = _same_geometry(wd, kw, stride)
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    patches = _gather_patches(xp, kh, kw, stride, oh, ow)
    return patches.reshape(b, cin * kh * kw, oh * ow), oh, ow


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: int, cols=None) -> np.ndarray:
    b = x.shape[0]
    cout, cin, kh, kw = w.shape
    if cols is None:
        cols, oh, ow = _im2col(x, kh, kw, stride)
    else:
        cols, oh, ow = cols
    y = np.matmul(w.reshape(cout, cin * kh * kw), cols)  # (B, cout, OH*OW)
    return y.reshape(b, cout, oh, ow)


def _conv_input_grad(dy: np.ndarray, w: np.ndarray, stride: int, x_shape: tuple):
    b, cin, h, wd = x_shape
    cout, _, kh, kw = w.shape
    oh, pt, pb = _same_geometry(h, kh, stride)
    ow, pl, pr = _same_geometry(wd, kw, stride)
    wmat = w.reshape(cout, cin * kh * kw)
    dpatches = np.matmul(wmat.T, dy.reshape(b, cout, oh * ow)).reshape(
        b, cin, kh, kw, oh, ow
    )
    dxp = np.zeros((b, cin, h + pt + pb, wd + pl + pr), dtype=dy.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[
                :, :, i : i + stride * oh : stride, j : j + stride * ow : stride
            ] += dpatches[:, :, i, j]
    return dxp[:, :, pt : pt + h, pl : pl + wd]


def _conv_weight_grad(x: np.ndarray, dy: np.ndarray, stride: int, w_shape: tuple, cols=None):
    b = x.shape[0]
    cout, cin, kh, kw = w_shape
    if cols is None:
        cols, _, _ = _im2col(x, kh, kw, stride)
    dw = np.matmul(
        dy.reshape(b, cout, -1), cols.transpose(0, 2, 1)
    ).sum(axis=0)
    return dw.reshape(w_shape)


def conv2d(x, w, b=None, stride: int = 1) -> Node:
    """2-D convolution with "same" zero padding.

    ``w`` has shape (out_channels, in_channels, kh, kw); an optional bias
    has shape (out_channels,).
    """
    x, w = as_node(x), as_node(w)
    if x.value.ndim != 4 or w.value.ndim != 4:
        raise ShapeMismatch("conv2d expects 4-D input and weights")
    if x.value.shape[1] != w.value.shape[1]:
        raise ShapeMismatch(
            f"conv2d channels: input {x.value.shape} vs weights {w.value.shape}"
        )
    kh, kw = w.value.shape[2:]
    cols = _im2col(x.value, kh, kw, stride)
    value = _conv_forward(x.value, w.value, stride, cols=cols)
    # Keep the im2col buffer only when the weight gradient will need it.
    cached_cols = cols[0] if w.requires_grad else None
    bias = as_node(b) if b is not None else None
    if bias is not None:
        if bias.value.shape != (w.value.shape[0],):
            raise ShapeMismatch(f"conv2d bias shape {bias.value.shape}")
        value = value + bias.value[None, :, None, None]
    inputs = (x, w) if bias is None else (x, w, bias)

    def backward(g):
        if x.requires_grad:
            x.grad += _conv_input_grad(g, w.value, stride, x.value.shape)
        if w.requires_grad:
            w.grad += _conv_weight_grad(
                x.value, g, stride, w.value.shape, cols=cached_cols
            )
        if bias is not None and bias.requires_grad:
            bias.grad += g.sum(axis=(0, 2, 3))

    return make_op("conv2d", value, inputs, backward)


def conv2d_transpose(x, w, b=None, stride: int = 2) -> Node:
    """Transposed convolution: the exact adjoint of same-padding conv2d.

    ``w`` has shape (in_channels, out_channels, kh, kw); output spatial size
    is input size times stride.
    """
    x, w = as_node(x), as_node(w)
    if x.value.ndim != 4 or w.value.ndim != 4:
        raise ShapeMismatch("conv2d_transpose expects 4-D input and weights")
    if x.value.shape[1] != w.value.shape[0]:
        raise ShapeMismatch(
            f"conv2d_transpose channels: input {x.value.shape} vs weights {w.value.shape}"
        )
    bsz, cin, h, wd = x.value.shape
    cout = w.value.shape[1]
    big_shape = (bsz, cout, h * stride, wd * stride)
    value = _conv_input_grad(x.value, w.value, stride, big_shape)
    bias = as_node(b) if b is not None else None
    if bias is not None:
        if bias.value.shape != (cout,):
            raise ShapeMismatch(f"conv2d_transpose bias shape {bias.value.shape}")
        value = value + bias.value[None, :, None, None]
    inputs = (x, w) if bias is None else (x, w, bias)

    def backward(g):
        if x.requires_grad:
            x.grad += _conv_forward(g, w.value, stride)
        if w.requires_grad:
            w.grad += _conv_weight_grad(g, x.value, stride, w.value.shape)
        if bias is not None and bias.requires_grad:
            bias.grad += g.sum(axis=(0, 2, 3))

    return make_op("conv2d_transpose", value, inputs, backward)


def max_pool2(x) -> Node:
    """2x2 max pooling with stride 2; ties go to the first window element."""
    x = as_node(x)
    b, c, h, w = x.value.shape
    if h % 2 or w % 2:
        raise ShapeMismatch(f"max_pool2 needs even spatial dims, got {x.value.shape}")
    windows = (
        x.value.reshape(b, c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(b, c, h // 2, w // 2, 4)
    )
    best = np.argmax(windows, axis=-1)
    value = np.take_along_axis(windows, best[..., None], axis=-1)[..., 0]

    def backward(g):
        onehot = best[..., None] == np.arange(4)
        gwin = onehot * g[..., None]
        x.grad += (
            gwin.reshape(b, c, h // 2, w // 2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(b, c, h, w)
        )

    return make_op("max_pool2", value, (x,), backward)


def _upsample_matrix(n: int) -> np.ndarray:
    """Row-stochastic (2n, n) matrix for x2 bilinear upsampling.

    Output sample i reads the source at (i + 0.5) / 2 - 0.5, clamped to the
    valid range (half-pixel convention), so constants are preserved.
    """
    m = np.zeros((2 * n, n))
    for i in range(2 * n):
        src = (i + 0.5) / 2.0 - 0.5
        src = min(max(src, 0.0), n - 1.0)
        i0 = min(int(np.floor(src)), max(n - 2, 0))
        frac = src - i0
        m[i, i0] += 1.0 - frac
        m[i, min(i0 + 1, n - 1)] += frac
    return m


_UPSAMPLE_CACHE: dict = {}


def _upsample_matrix_cached(n: int) -> np.ndarray:
    if n not in _UPSAMPLE_CACHE:
        _UPSAMPLE_CACHE[n] = _upsample_matrix(n)
    return _UPSAMPLE_CACHE[n]


def upsample_bilinear2(x) -> Node:
    """x2 bilinear upsampling of a (B, C, H, W) array."""
    x = as_node(x)
    if x.value.ndim != 4:
        raise ShapeMismatch(f"upsample expects a 4-D array, got {x.value.shape}")
    b, c, h, w = x.value.shape
    ly = _upsample_matrix_cached(h)
    lx = _upsample_matrix_cached(w)
    value = np.matmul(np.matmul(ly, x.value), lx.T)

    def backward(g):
        x.grad += np.matmul(np.matmul(ly.T, g), lx)

    return make_op("upsample_bilinear2", value, (x,), backward)


def box_filter3(x) -> Node:
    """3x3 uniform filter with zero padding; self-adjoint."""
    x = as_node(x)
    if x.value.ndim != 4:
        raise ShapeMismatch(f"box_filter3 expects a 4-D array, got {x.value.shape}")

    def apply(arr):
        padded = np.pad(arr, ((0, 0), (0, 0), (1, 1), (1, 1)))
        out = np.zeros_like(arr)
        h, w = arr.shape[2], arr.shape[3]
        for i in range(3):
            for j in range(3):
                out += padded[:, :, i : i + h, j : j + w]
        return out / 9.0

    def backward(g):
        x.grad += apply(g)

    return make_op("box_filter3", apply(x.value), (x,), backward)


def grid_sample_bilinear(src, grid) -> tuple:
    """Bilinear sampling of ``src`` (B, C, H, W) at pixel coordinates.

    ``grid`` is (B, 2, Hg, Wg) holding (u, v). Returns the sampled node,
    zero outside the image, and a constant (B, 1, Hg, Wg) in-bounds mask.
    Gradients flow to both the source image and the coordinates.
    """
    src, grid = as_node(src), as_node(grid)
    if src.value.ndim != 4 or grid.value.ndim != 4 or grid.value.shape[1] != 2:
        raise ShapeMismatch(
            f"grid_sample shapes: src {src.value.shape}, grid {grid.value.shape}"
        )
    b, c, h, w = src.value.shape
    if grid.value.shape[0] != b:
        raise ShapeMismatch("grid batch size must match source")
    if h < 2 or w < 2:
        raise ShapeMismatch("grid_sample needs at least 2x2 source images")

    u = grid.value[:, 0]
    v = grid.value[:, 1]
    inb = (
        (u >= -GRID_BOUNDS_EPS)
        & (u <= w - 1 + GRID_BOUNDS_EPS)
        & (v >= -GRID_BOUNDS_EPS)
        & (v <= h - 1 + GRID_BOUNDS_EPS)
    )
    uc = np.clip(u, 0.0, w - 1.0)
    vc = np.clip(v, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(uc), w - 2).astype(np.intp)
    y0 = np.minimum(np.floor(vc), h - 2).astype(np.intp)
    fu = uc - x0
    fv = vc - y0

    batch = np.arange(b)[:, None, None]
    s = src.value.transpose(0, 2, 3, 1)  # (B, H, W, C)
    c00 = s[batch, y0, x0]
    c01 = s[batch, y0, x0 + 1]
    c10 = s[batch, y0 + 1, x0]
    c11 = s[batch, y0 + 1, x0 + 1]
    w00 = ((1 - fv) * (1 - fu))[..., None]
    w01 = ((1 - fv) * fu)[..., None]
    w10 = (fv * (1 - fu))[..., None]
    w11 = (fv * fu)[..., None]
    mask = inb[..., None].astype(np.float64)
    sampled = (w00 * c00 + w01 * c01 + w10 * c10 + w11 * c11) * mask
    value = sampled.transpose(0, 3, 1, 2)

    def backward(g):
        gn = g.transpose(0, 2, 3, 1) * mask  # (B, Hg, Wg, C)
        if src.requires_grad:
            gs = np.zeros_like(s)
            np.add.at(gs, (batch, y0, x0), w00 * gn)
            np.add.at(gs, (batch, y0, x0 + 1), w01 * gn)
            np.add.at(gs, (batch, y0 + 1, x0), w10 * gn)
            np.add.at(gs, (batch, y0 + 1, x0 + 1), w11 * gn)
            src.grad += gs.transpose(0, 3, 1, 2)
        if grid.requires_grad:
            du_img = (1 - fv)[..., None] * (c01 - c00) + fv[..., None] * (c11 - c10)
            dv_img = (1 - fu)[..., None] * (c10 - c00) + fu[..., None] * (c11 - c01)
            du = (du_img * gn).sum(axis=-1) * ((u > 0) & (u < w - 1))
            dv = (dv_img * gn).sum(axis=-1) * ((v > 0) & (v < h - 1))
            grid.grad += np.stack([du, dv], axis=1)

    out = make_op("grid_sample", value, (src, grid), backward)
    mask_node = constant(inb[:, None].astype(np.float64))
    return out, mask_node


def ssim3(a, b) -> Node:
    """Per-pixel SSIM with 3x3 uniform windows and unit dynamic range.

    Edge pixels use zero-padded windows. Built from differentiable
    primitives, so gradients come out of the graph for free.
    """
    a, b = as_node(a), as_node(b)
    if a.value.shape != b.value.shape:
        raise ShapeMismatch(f"ssim shapes {a.value.shape} vs {b.value.shape}")
    c1 = 0.01**2
    c2 = 0.03**2
    mu_a = box_filter3(a)
    mu_b = box_filter3(b)
    mu_aa = mul(mu_a, mu_a)
    mu_bb = mul(mu_b, mu_b)
    mu_ab = mul(mu_a, mu_b)
    var_a = sub(box_filter3(mul(a, a)), mu_aa)
    var_b = sub(box_filter3(mul(b, b)), mu_bb)
    cov = sub(box_filter3(mul(a, b)), mu_ab)
    numerator = mul(add(mul(mu_ab, 2.0), c1), add(mul(cov, 2.0), c2))
    denominator = mul(add(add(mu_aa, mu_bb), c1), add(add(var_a, var_b), c2))
    return div(numerator, denominator)
