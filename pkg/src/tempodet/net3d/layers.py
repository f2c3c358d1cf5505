"""Forward/backward kernels for the 3D ConvNet.

Volumes use the layout ``(N, C, T, H, W)``. Functions that take a single
volume also accept the unbatched ``(C, T, H, W)`` form and return results in
the same form they were given.
"""
import numpy as np


class ShapeError(ValueError):
    pass


def _batched(x, ndim):
    x = np.asarray(x)
    if x.ndim == ndim - 1:
        return x[None], True
    if x.ndim != ndim:
        raise ShapeError(f"expected a {ndim - 1}D or {ndim}D array, got shape {x.shape}")
    return x, False


# ---------------------------------------------------------------------------
# 3x3x3 convolution, stride 1, zero padding 1
#
# Columns are built over the 9 spatial taps only, with one zero frame of
# temporal padding on each side. The 3 temporal taps then become contiguous
# slices of the flattened (T + 2) * H * W axis, so each is a plain GEMM.

_SPATIAL = [(dh, dw) for dh in range(3) for dw in range(3)]


def _im2col(x):
    n, c, t, h, w = x.shape
    xp = np.zeros((n, c, t, h + 2, w + 2), dtype=x.dtype)
    xp[:, :, :, 1:-1, 1:-1] = x
    cols = np.zeros((n, c, 9, t + 2, h, w), dtype=x.dtype)
    for k, (dh, dw) in enumerate(_SPATIAL):
        cols[:, :, k, 1:-1] = xp[:, :, :, dh:dh + h, dw:dw + w]
    return cols.reshape(n, c * 9, (t + 2) * h * w)


def _col2im(dcols, shape):
    n, c, t, h, w = shape
    dcols = dcols.reshape(n, c, 9, t + 2, h, w)
    dxp = np.zeros((n, c, t, h + 2, w + 2), dtype=dcols.dtype)
    for k, (dh, dw) in enumerate(_SPATIAL):
        dxp[:, :, :, dh:dh + h, dw:dw + w] += dcols[:, :, k, 1:-1]
    return dxp[:, :, :, 1:-1, 1:-1]


def _temporal_taps(weight):
    c_out = weight.shape[0]
    return [np.ascontiguousarray(weight[:, :, dt].reshape(c_out, -1)) for dt in range(3)]


def conv3d_forward(x, weight, bias):
    """Same-size 3x3x3 cross-correlation.

    ``weight`` is ``(C_out, C_in, 3, 3, 3)`` and ``bias`` is ``(C_out,)``.
    Returns ``(out, cache)``.
    """
    xb, squeezed = _batched(x, 5)
    weight = np.asarray(weight)
    bias = np.asarray(bias)
    if weight.ndim != 5 or weight.shape[2:] != (3, 3, 3):
        raise ShapeError(f"conv3d weight must be (C_out, C_in, 3, 3, 3), got {weight.shape}")
    if weight.shape[1] != xb.shape[1]:
        raise ShapeError(
            f"conv3d input has {xb.shape[1]} channels but weight expects {weight.shape[1]}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"conv3d bias must be ({weight.shape[0]},), got {bias.shape}")
    n, _, t, h, w = xb.shape
    c_out = weight.shape[0]
    hw = h * w
    cols = _im2col(xb)
    taps = _temporal_taps(weight)
    out = np.empty((n, c_out, t * hw), dtype=np.result_type(xb, weight))
    for i in range(n):
        acc = taps[0] @ cols[i, :, :t * hw]
        acc += taps[1] @ cols[i, :, hw:(t + 1) * hw]
        acc += taps[2] @ cols[i, :, 2 * hw:(t + 2) * hw]
        out[i] = acc
    out += bias[:, None]
    out = out.reshape(n, c_out, t, h, w)
    cache = (cols, xb.shape, weight, squeezed)
    return (out[0] if squeezed else out), cache


def conv3d_backward(dout, cache, need_dx=True):
    """Gradients ``(dx, dweight, dbias)`` for :func:`conv3d_forward`.

    With ``need_dx=False`` the input gradient is skipped and ``dx`` is None.
    """
    cols, in_shape, weight, squeezed = cache
    dout, _ = _batched(dout, 5)
    n, _, t, h, w = in_shape
    hw = h * w
    c_out = weight.shape[0]
    dflat = dout.reshape(n, c_out, -1)
    db = dflat.sum(axis=(0, 2))
    taps = _temporal_taps(weight) if need_dx else None
    dw = np.zeros((3, c_out, cols.shape[1]), dtype=dflat.dtype)
    dcols = np.zeros_like(cols) if need_dx else None
    for i in range(n):
        for dt in range(3):
            window = slice(dt * hw, (dt + t) * hw)
            dw[dt] += dflat[i] @ cols[i, :, window].T
            if need_dx:
                dcols[i, :, window] += taps[dt].T @ dflat[i]
    # (3, C_out, C_in * 9) -> (C_out, C_in, 3, 3, 3)
    dw = dw.reshape(3, c_out, weight.shape[1], 3, 3).transpose(1, 2, 0, 3, 4)
    dw = np.ascontiguousarray(dw)
    if not need_dx:
        return None, dw, db
    dx = _col2im(dcols, in_shape)
    return (dx[0] if squeezed else dx), dw, db


# ---------------------------------------------------------------------------
# max pooling, stride == extent


def maxpool3d_forward(x, extent):
    """Non-overlapping max pooling; trailing elements that do not fill a
    window are dropped. Returns ``(out, cache)``."""
    xb, squeezed = _batched(x, 5)
    n, c, t, h, w = xb.shape
    kt, kh, kw = extent
    if kt > t or kh > h or kw > w:
        raise ShapeError(f"pool extent {tuple(extent)} larger than input {(t, h, w)}")
    ot, oh, ow = t // kt, h // kh, w // kw
    trimmed = xb[:, :, :ot * kt, :oh * kh, :ow * kw]
    win = trimmed.reshape(n, c, ot, kt, oh, kh, ow, kw).transpose(0, 1, 2, 4, 6, 3, 5, 7)
    win = win.reshape(n, c, ot, oh, ow, kt * kh * kw)
    # argmax returns the first maximum; window order (dt, dh, dw) matches
    # increasing flat index in the input
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    cache = (arg, xb.shape, tuple(extent), squeezed)
    return (out[0] if squeezed else out), cache


def maxpool3d_backward(dout, cache):
    arg, in_shape, (kt, kh, kw), squeezed = cache
    dout, _ = _batched(dout, 5)
    n, c, t, h, w = in_shape
    ot, oh, ow = arg.shape[2:]
    dwin = np.zeros(arg.shape + (kt * kh * kw,), dtype=dout.dtype)
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
    dwin = dwin.reshape(n, c, ot, oh, ow, kt, kh, kw).transpose(0, 1, 2, 5, 3, 6, 4, 7)
    dx = np.zeros(in_shape, dtype=dout.dtype)
    dx[:, :, :ot * kt, :oh * kh, :ow * kw] = dwin.reshape(n, c, ot * kt, oh * kh, ow * kw)
    return dx[0] if squeezed else dx


# ---------------------------------------------------------------------------
# elementwise and dense layers


def relu_forward(x):
    x = np.asarray(x)
    return np.maximum(x, 0), x > 0


def relu_backward(dout, mask):
    return dout * mask


def linear_forward(x, weight, bias):
    """Affine map ``x @ weight.T + bias``; ``x`` is ``(D_in,)`` or ``(N, D_in)``."""
    x = np.asarray(x)
    weight = np.asarray(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear input {x.shape} incompatible with weight {weight.shape}")
    if np.shape(bias) != (weight.shape[0],):
        raise ShapeError(f"linear bias must be ({weight.shape[0]},), got {np.shape(bias)}")
    return x @ weight.T + bias, (x, weight)


def linear_backward(dout, cache):
    x, weight = cache
    dx = dout @ weight
    if x.ndim == 1:
        dw = np.outer(dout, x)
        db = dout.copy()
    else:
        dw = dout.T @ x
        db = dout.sum(axis=0)
    return dx, dw, db


def dropout_forward(x, ratio, mode, rng=None):
    """Inverted dropout. ``mode`` is ``"train"`` or ``"eval"``."""
    if not 0 <= ratio < 1:
        raise ValueError(f"dropout ratio must be in [0, 1), got {ratio}")
    x = np.asarray(x)
    if mode == "eval" or ratio == 0:
        return x, None
    if mode != "train":
        raise ValueError(f"unknown dropout mode {mode!r}")
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    keep = rng.random(x.shape) >= ratio
    mask = keep.astype(x.dtype) / (1.0 - ratio)
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(logits):
    logits = np.asarray(logits)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# losses


def softmax_cross_entropy(logits, target, class_weight=1.0):
    """Weighted softmax cross-entropy for one example.

    Returns ``(loss, grad_logits)``.
    """
    logits = np.asarray(logits)
    if logits.ndim != 1 or logits.shape[0] < 2:
        raise ShapeError(f"logits must be a vector with K >= 2, got {logits.shape}")
    if not 0 <= target < logits.shape[0]:
        raise ValueError(f"target {target} out of range for {logits.shape[0]} classes")
    if class_weight <= 0:
        raise ValueError("class_weight must be positive")
    shifted = logits - logits.max()
    log_z = np.log(np.exp(shifted).sum())
    log_p = shifted - log_z
    loss = -class_weight * log_p[target]
    grad = np.exp(log_p)
    grad[target] -= 1.0
    return float(loss), class_weight * grad


def squared_error_loss(pred, target):
    diff = pred - target
    return 0.5 * diff * diff, diff
