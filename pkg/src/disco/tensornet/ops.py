"""Differentiable operators. Feature maps use NHWC layout."""

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ..errors import InsufficientBatch, ShapeError
from .tensor import Tensor, make_output

BN_EPS = 1e-5


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _windows(xp, stride, out_h, out_w):
    """View of padded input as (N, Ho, Wo, 3, 3, C) patches."""
    n, _, _, c = xp.shape
    sn, sh, sw, sc = xp.strides
    return as_strided(
        xp,
        shape=(n, out_h, out_w, 3, 3, c),
        strides=(sn, sh * stride, sw * stride, sh, sw, sc),
        writeable=False,
    )


def conv3x3(x, kernel, stride=1):
    """3x3 cross-correlation with zero padding 1.

    x: (N, H, W, Cin); kernel: (3, 3, Cin, Cout). Output spatial size is
    ceil(H / stride).
    """
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if stride not in (1, 2):
        raise ShapeError(f"stride must be 1 or 2, got {stride}")
    if x.data.ndim != 4 or kernel.shape[:2] != (3, 3) or kernel.data.ndim != 4:
        raise ShapeError(f"bad conv shapes {x.shape} * {kernel.shape}")
    n, h, w, cin = x.shape
    if kernel.shape[2] != cin:
        raise ShapeError(f"input has {cin} channels, kernel expects {kernel.shape[2]}")
    cout = kernel.shape[3]
    ho, wo = -(-h // stride), -(-w // stride)

    xp = np.pad(x.data, ((0, 0), (1, 1), (1, 1), (0, 0)))
    wmat = kernel.data.reshape(9 * cin, cout)
    cols = _windows(xp, stride, ho, wo).reshape(n * ho * wo, 9 * cin)
    out = (cols @ wmat).reshape(n, ho, wo, cout)
    del cols

    def backward(g):
        g2 = g.reshape(-1, cout)
        if kernel.requires_grad:
            cols = _windows(xp, stride, ho, wo).reshape(n * ho * wo, 9 * cin)
            kernel.accumulate((cols.T @ g2).reshape(kernel.shape))
            del cols
        if x.requires_grad:
            # input gradient is a correlation of the (dilated) output gradient
            # with the spatially flipped, channel-transposed kernel
            if stride == 1:
                gd = g
            else:
                gd = np.zeros((n, h, w, cout), dtype=g.dtype)
                gd[:, ::stride, ::stride, :] = g
            flipped = kernel.data[::-1, ::-1].transpose(0, 1, 3, 2).reshape(9 * cout, cin)
            gp = np.pad(gd, ((0, 0), (1, 1), (1, 1), (0, 0)))
            gcols = _windows(gp, 1, h, w).reshape(n * h * w, 9 * cout)
            x.accumulate((gcols @ flipped).reshape(n, h, w, cin), fresh=True)

    return make_output(out, (x, kernel), backward)


class BatchNormState:
    """Running statistics for one batch-norm layer."""

    def __init__(self, channels, dtype=np.float32, momentum=0.1):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum


def batchnorm(x, scale, shift, state, training=True):
    """Per-channel normalization over every axis except the last.

    In training mode the batch statistics are used and the running statistics
    in `state` are updated; eval mode reads `state` only.
    """
    x, scale, shift = _as_tensor(x), _as_tensor(scale), _as_tensor(shift)
    c = x.shape[-1]
    if scale.shape != (c,) or shift.shape != (c,):
        raise ShapeError(f"scale/shift must have shape ({c},)")
    axes = tuple(range(x.data.ndim - 1))
    if not training:
        inv_std = 1.0 / np.sqrt(state.running_var + BN_EPS)
        xhat = ((x.data - state.running_mean) * inv_std).astype(x.dtype, copy=False)
        out = xhat * scale.data + shift.data

        def backward_eval(g):
            if x.requires_grad:
                x.accumulate(g * (scale.data * inv_std).astype(x.dtype, copy=False))
            if scale.requires_grad:
                scale.accumulate((g * xhat).sum(axis=axes))
            if shift.requires_grad:
                shift.accumulate(g.sum(axis=axes))

        return make_output(out, (x, scale, shift), backward_eval)

    if x.shape[0] < 2:
        raise InsufficientBatch("batch norm needs at least 2 samples in training mode")
    x2 = x.data.reshape(-1, c)
    m = x2.shape[0]
    ones = np.ones(m, dtype=x.dtype)
    mean = (ones @ x2) / m
    xhat = x2 - mean
    var = np.einsum("ij,ij->j", xhat, xhat) / m
    inv_std = (1.0 / np.sqrt(var + BN_EPS)).astype(x.dtype, copy=False)
    xhat *= inv_std
    out = xhat * scale.data
    out += shift.data
    out = out.reshape(x.shape)

    if state is not None:
        mom = state.momentum
        unbiased = var * (m / max(m - 1, 1))
        state.running_mean = ((1 - mom) * state.running_mean + mom * mean).astype(state.running_mean.dtype)
        state.running_var = ((1 - mom) * state.running_var + mom * unbiased).astype(state.running_var.dtype)

    def backward(g):
        g2 = g.reshape(-1, c)
        sum_g = ones @ g2
        sum_gx = np.einsum("ij,ij->j", g2, xhat)
        if shift.requires_grad:
            shift.accumulate(sum_g)
        if scale.requires_grad:
            scale.accumulate(sum_gx)
        if x.requires_grad:
            dx = xhat * (-sum_gx / m)
            dx += g2
            dx -= sum_g / m
            dx *= scale.data * inv_std
            x.accumulate(dx.reshape(x.shape), fresh=True)

    return make_output(out, (x, scale, shift), backward)


def relu(x):
    x = _as_tensor(x)
    out = np.maximum(x.data, 0)
    mask = out > 0

    def backward(g):
        x.accumulate(g * mask, fresh=True)

    return make_output(out, (x,), backward)


def dropout(x, p, training, rng=None):
    """Inverted dropout: kept units are scaled by 1/(1-p) at train time."""
    x = _as_tensor(x)
    if not training or p == 0:
        return x
    if not 0 <= p < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    rng = np.random.default_rng() if rng is None else rng
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1 - p)
    out = x.data * keep

    def backward(g):
        x.accumulate(g * keep, fresh=True)

    return make_output(out, (x,), backward)


def global_average_pool(x):
    """(N, H, W, C) -> (N, C) channel means."""
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError(f"expected NHWC input, got shape {x.shape}")
    n, h, w, c = x.shape
    out = x.data.mean(axis=(1, 2))

    def backward(g):
        x.accumulate(np.broadcast_to(g[:, None, None, :] / (h * w), x.shape))

    return make_output(out, (x,), backward)


def fully_connected(x, weights, bias=None):
    """x @ weights + bias with weights shaped (in, out)."""
    x, weights = _as_tensor(x), _as_tensor(weights)
    if x.data.ndim != 2 or weights.data.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ShapeError(f"cannot multiply {x.shape} by {weights.shape}")
    out = x.data @ weights.data
    parents = [x, weights]
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (weights.shape[1],):
            raise ShapeError(f"bias shape {bias.shape} does not match {weights.shape[1]} outputs")
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        if x.requires_grad:
            x.accumulate(g @ weights.data.T)
        if weights.requires_grad:
            weights.accumulate(x.data.T @ g)
        if bias is not None and bias.requires_grad:
            bias.accumulate(g.sum(axis=0))

    return make_output(out, parents, backward)


def l2_loss(prediction, target):
    """Mean squared error over all elements."""
    prediction = _as_tensor(prediction)
    target = np.asarray(target.data if isinstance(target, Tensor) else target)
    if prediction.shape != target.shape:
        raise ShapeError(f"prediction {prediction.shape} vs target {target.shape}")
    diff = prediction.data - target.astype(prediction.dtype, copy=False)
    n = diff.size
    out = np.asarray((diff * diff).sum() / n, dtype=prediction.dtype)

    def backward(g):
        prediction.accumulate(g * (2.0 / n) * diff)

    return make_output(out, (prediction,), backward)


def weighted_sum(tensors, weights):
    """sum_i w_i * t_i for same-shape tensors and python-scalar weights."""
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("weighted_sum of nothing")
    out = sum(w * t.data for t, w in zip(tensors, weights))
    out = np.asarray(out, dtype=tensors[0].dtype)

    def backward(g):
        for t, w in zip(tensors, weights):
            if t.requires_grad:
                t.accumulate(g * w)

    return make_output(out, tensors, backward)
