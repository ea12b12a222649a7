# layers/tensor.py
"""
Dense numeric kernels: convolution, batch normalization, activations,
pooling and the 1D channel convolution used by the attention units.

Tensors are plain ``numpy.ndarray`` values in NCHW (feature maps) or NC
(descriptors) layout. Every forward op has an explicit backward op that
takes the forward inputs again plus the upstream gradient. Kernels compute
and return float64 regardless of the storage dtype of their inputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

Tensor = np.ndarray

ACC_DTYPE = np.float64


# ---------- types ----------
@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_h: int = 3
    kernel_w: int = 3
    stride: int = 1
    padding: int = 0
    groups: int = 1
    has_bias: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError(f"channel counts must be >= 1, got {self.in_channels}->{self.out_channels}")
        if self.kernel_h < 1 or self.kernel_w < 1:
            raise ValueError(f"kernel taps must be >= 1, got {self.kernel_h}x{self.kernel_w}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ValueError(f"padding must be >= 0, got {self.padding}")
        if self.groups < 1:
            raise ValueError(f"groups must be >= 1, got {self.groups}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ValueError(
                f"groups={self.groups} must divide in_channels={self.in_channels} "
                f"and out_channels={self.out_channels}"
            )

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels // self.groups, self.kernel_h, self.kernel_w)

    @property
    def is_depthwise(self) -> bool:
        return self.groups == self.in_channels == self.out_channels


@dataclass
class GradPair:
    """A value and (once backward has run) its gradient."""
    value: Tensor
    grad: Tensor | None = None

    def __post_init__(self):
        if self.grad is not None and self.grad.shape != self.value.shape:
            raise ValueError(f"grad shape {self.grad.shape} != value shape {self.value.shape}")

    def set_grad(self, grad: Tensor) -> None:
        if grad.shape != self.value.shape:
            raise ValueError(f"grad shape {grad.shape} != value shape {self.value.shape}")
        self.grad = grad

    def zero_grad(self) -> None:
        self.grad = None


# ---------- helpers ----------
def _f64(x) -> Tensor:
    return np.asarray(x, dtype=ACC_DTYPE)


def _check_nchw(x: Tensor, what: str) -> Tensor:
    x = _f64(x)
    if x.ndim != 4:
        raise ValueError(f"{what}: expected NCHW tensor, got shape {x.shape}")
    return x


def conv_output_shape(spec: ConvSpec, h: int, w: int) -> tuple[int, int]:
    ho = (h + 2 * spec.padding - spec.kernel_h) // spec.stride + 1
    wo = (w + 2 * spec.padding - spec.kernel_w) // spec.stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv: {h}x{w} input too small for kernel {spec.kernel_h}x{spec.kernel_w} pad {spec.padding}")
    return ho, wo


def _conv_checks(x: Tensor, weights: Tensor, spec: ConvSpec) -> Tensor:
    x = _check_nchw(x, "conv2d input")
    if x.shape[1] != spec.in_channels:
        raise ValueError(f"conv2d: input has {x.shape[1]} channels, spec expects {spec.in_channels}")
    if tuple(weights.shape) != spec.weight_shape:
        raise ValueError(f"conv2d: weights shape {tuple(weights.shape)} != expected {spec.weight_shape}")
    return x


def _tap(xp: Tensor, i: int, j: int, stride: int, ho: int, wo: int) -> Tensor:
    return xp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]


def _pad_hw(x: Tensor, p: int) -> Tensor:
    if not p:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


# im2col buffers are built per batch chunk of at most this many elements
COL_CHUNK_ELEMS = 1 << 24


def _sample_chunks(n: int, per_sample: int):
    step = max(1, COL_CHUNK_ELEMS // max(1, per_sample))
    for lo in range(0, n, step):
        yield slice(lo, min(n, lo + step))


def _im2col(xp: Tensor, spec: ConvSpec, ho: int, wo: int) -> Tensor:
    """(N, C, Hp, Wp) padded input -> (groups, N*ho*wo, C/groups*kh*kw) patch matrix."""
    n, c = xp.shape[:2]
    g = spec.groups
    s = spec.stride
    win = sliding_window_view(xp, (spec.kernel_h, spec.kernel_w), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    win = win.reshape(n, g, c // g, ho, wo, spec.kernel_h, spec.kernel_w)
    return win.transpose(1, 0, 3, 4, 2, 5, 6).reshape(g, n * ho * wo, -1)


def _col2im(cols: Tensor, gxp: Tensor, spec: ConvSpec, ho: int, wo: int) -> None:
    """Scatter-add a (groups, N*ho*wo, C/groups*kh*kw) patch gradient into ``gxp``."""
    n, c = gxp.shape[:2]
    g = spec.groups
    kh, kw = spec.kernel_h, spec.kernel_w
    d = cols.reshape(g, n, ho, wo, c // g, kh, kw).transpose(1, 0, 4, 2, 3, 5, 6).reshape(n, c, ho, wo, kh, kw)
    for i in range(kh):
        for j in range(kw):
            _tap(gxp, i, j, spec.stride, ho, wo)[...] += d[..., i, j]


def _grouped_weights(wt: Tensor, spec: ConvSpec) -> Tensor:
    """(Cout, C/groups, kh, kw) -> (groups, C/groups*kh*kw, Cout/groups)."""
    g = spec.groups
    return wt.reshape(g, spec.out_channels // g, -1).transpose(0, 2, 1)


# ---------- convolution ----------
def conv2d_forward(x: Tensor, weights: Tensor, bias: Tensor | None, spec: ConvSpec) -> Tensor:
    x = _conv_checks(x, weights, spec)
    if spec.has_bias != (bias is not None):
        raise ValueError(f"conv2d: has_bias={spec.has_bias} but bias is {'absent' if bias is None else 'given'}")
    n, c, h, w = x.shape
    ho, wo = conv_output_shape(spec, h, w)
    xp = _pad_hw(x, spec.padding)
    wt = _f64(weights)

    if spec.is_depthwise:
        out = np.zeros((n, c, ho, wo), dtype=ACC_DTYPE)
        for i in range(spec.kernel_h):
            for j in range(spec.kernel_w):
                out += _tap(xp, i, j, spec.stride, ho, wo) * wt[:, 0, i, j][None, :, None, None]
    else:
        g, og = spec.groups, spec.out_channels // spec.groups
        wk = _grouped_weights(wt, spec)
        out = np.empty((n, spec.out_channels, ho, wo), dtype=ACC_DTYPE)
        for sl in _sample_chunks(n, c * spec.kernel_h * spec.kernel_w * ho * wo):
            m = sl.stop - sl.start
            y = _im2col(xp[sl], spec, ho, wo) @ wk                     # (g, m*ho*wo, og)
            out[sl] = y.reshape(g, m, ho, wo, og).transpose(1, 0, 4, 2, 3).reshape(m, spec.out_channels, ho, wo)

    if bias is not None:
        out += _f64(bias).reshape(1, -1, 1, 1)
    return out


def conv2d_backward(x: Tensor, weights: Tensor, spec: ConvSpec, upstream: Tensor):
    """Returns (grad_input, grad_weights, grad_bias-or-None)."""
    x = _conv_checks(x, weights, spec)
    n, c, h, w = x.shape
    ho, wo = conv_output_shape(spec, h, w)
    gy = _f64(upstream)
    if gy.shape != (n, spec.out_channels, ho, wo):
        raise ValueError(f"conv2d_backward: upstream shape {gy.shape} != output shape {(n, spec.out_channels, ho, wo)}")

    p = spec.padding
    xp = _pad_hw(x, p)
    wt = _f64(weights)
    gxp = np.zeros_like(xp)
    gw = np.zeros(spec.weight_shape, dtype=ACC_DTYPE)
    s = spec.stride

    if spec.is_depthwise:
        for i in range(spec.kernel_h):
            for j in range(spec.kernel_w):
                gw[:, 0, i, j] = np.einsum("nchw,nchw->c", gy, _tap(xp, i, j, s, ho, wo))
                _tap(gxp, i, j, s, ho, wo)[...] += gy * wt[:, 0, i, j][None, :, None, None]
    else:
        g, og = spec.groups, spec.out_channels // spec.groups
        wk = _grouped_weights(wt, spec)
        gwk = np.zeros_like(wk)
        for sl in _sample_chunks(n, c * spec.kernel_h * spec.kernel_w * ho * wo):
            m = sl.stop - sl.start
            gyk = gy[sl].reshape(m, g, og, ho, wo).transpose(1, 0, 3, 4, 2).reshape(g, m * ho * wo, og)
            gwk += _im2col(xp[sl], spec, ho, wo).transpose(0, 2, 1) @ gyk
            _col2im(gyk @ wk.transpose(0, 2, 1), gxp[sl], spec, ho, wo)
        gw = gwk.transpose(0, 2, 1).reshape(spec.weight_shape)

    gx = gxp[:, :, p:p + h, p:p + w] if p else gxp
    gb = gy.sum(axis=(0, 2, 3)) if spec.has_bias else None
    return np.ascontiguousarray(gx), gw, gb


# ---------- batch normalization ----------
def _bn_axes(x: Tensor) -> tuple[tuple[int, ...], tuple[int, ...]]:
    if x.ndim == 4:
        return (0, 2, 3), (1, -1, 1, 1)
    if x.ndim == 2:
        return (0,), (1, -1)
    raise ValueError(f"batchnorm: expected 2D or 4D input, got shape {x.shape}")


def batchnorm_forward(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    training: bool,
    momentum: float = 0.1,
    epsilon: float = 1e-5,
) -> Tensor:
    """Training mode normalizes with batch statistics and updates the running
    buffers in place (unbiased variance); eval mode reads them."""
    if epsilon <= 0:
        raise ValueError(f"batchnorm: epsilon must be positive, got {epsilon}")
    x = _f64(x)
    axes, bshape = _bn_axes(x)
    c = x.shape[1]
    for name, v in (("gamma", gamma), ("beta", beta), ("running_mean", running_mean), ("running_var", running_var)):
        if v.shape != (c,):
            raise ValueError(f"batchnorm: {name} has shape {v.shape}, expected ({c},)")

    if training:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        m = x.size // c
        unbiased = var * m / (m - 1) if m > 1 else var
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mean, var = _f64(running_mean), _f64(running_var)

    xhat = (x - mean.reshape(bshape)) / np.sqrt(var.reshape(bshape) + epsilon)
    return _f64(gamma).reshape(bshape) * xhat + _f64(beta).reshape(bshape)


def batchnorm_backward(
    x: Tensor,
    gamma: Tensor,
    upstream: Tensor,
    training: bool,
    running_mean: Tensor | None = None,
    running_var: Tensor | None = None,
    epsilon: float = 1e-5,
):
    """Returns (grad_input, grad_gamma, grad_beta)."""
    x, gy = _f64(x), _f64(upstream)
    if gy.shape != x.shape:
        raise ValueError(f"batchnorm_backward: upstream shape {gy.shape} != input shape {x.shape}")
    axes, bshape = _bn_axes(x)

    if training:
        mean, var = x.mean(axis=axes), x.var(axis=axes)
    else:
        if running_mean is None or running_var is None:
            raise ValueError("batchnorm_backward: eval mode needs running statistics")
        mean, var = _f64(running_mean), _f64(running_var)

    inv_std = 1.0 / np.sqrt(var + epsilon)
    xhat = (x - mean.reshape(bshape)) * inv_std.reshape(bshape)
    g_beta = gy.sum(axis=axes)
    g_gamma = (gy * xhat).sum(axis=axes)
    scale = (_f64(gamma) * inv_std).reshape(bshape)

    if not training:
        return gy * scale, g_gamma, g_beta

    m = x.size // x.shape[1]
    gx = scale / m * (m * gy - g_beta.reshape(bshape) - xhat * g_gamma.reshape(bshape))
    return gx, g_gamma, g_beta


# ---------- activations ----------
def relu_forward(x: Tensor) -> Tensor:
    return np.maximum(_f64(x), 0.0)


def relu_backward(x: Tensor, upstream: Tensor) -> Tensor:
    return _f64(upstream) * (_f64(x) > 0)


def relu6_forward(x: Tensor) -> Tensor:
    return np.clip(_f64(x), 0.0, 6.0)


def relu6_backward(x: Tensor, upstream: Tensor) -> Tensor:
    x = _f64(x)
    return _f64(upstream) * ((x > 0) & (x < 6))


def sigmoid_forward(x: Tensor) -> Tensor:
    x = _f64(x)
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid_backward(x: Tensor, upstream: Tensor) -> Tensor:
    s = sigmoid_forward(x)
    return _f64(upstream) * s * (1.0 - s)


# ---------- pooling ----------
def global_avg_pool(x: Tensor) -> Tensor:
    x = _check_nchw(x, "global_avg_pool input")
    if x.shape[2] < 1 or x.shape[3] < 1:
        raise ValueError(f"global_avg_pool: empty spatial dims in shape {x.shape}")
    return x.mean(axis=(2, 3))


def global_avg_pool_backward(input_shape: tuple[int, ...], upstream: Tensor) -> Tensor:
    n, c, h, w = input_shape
    gy = _f64(upstream)
    if gy.shape != (n, c):
        raise ValueError(f"global_avg_pool_backward: upstream shape {gy.shape} != {(n, c)}")
    return np.broadcast_to(gy[:, :, None, None] / (h * w), input_shape).copy()


# ---------- fully connected ----------
def linear_forward(x: Tensor, weights: Tensor, bias: Tensor | None = None) -> Tensor:
    x, wt = _f64(x), _f64(weights)
    if x.ndim != 2 or wt.ndim != 2 or x.shape[1] != wt.shape[1]:
        raise ValueError(f"linear: input {x.shape} incompatible with weights {wt.shape}")
    out = x @ wt.T
    if bias is not None:
        if bias.shape != (wt.shape[0],):
            raise ValueError(f"linear: bias shape {bias.shape} != ({wt.shape[0]},)")
        out += _f64(bias)
    return out


def linear_backward(x: Tensor, weights: Tensor, upstream: Tensor, has_bias: bool = True):
    """Returns (grad_input, grad_weights, grad_bias-or-None)."""
    x, wt, gy = _f64(x), _f64(weights), _f64(upstream)
    if gy.shape != (x.shape[0], wt.shape[0]):
        raise ValueError(f"linear_backward: upstream shape {gy.shape} != {(x.shape[0], wt.shape[0])}")
    return gy @ wt, gy.T @ x, (gy.sum(axis=0) if has_bias else None)


# ---------- 1D channel convolution ----------
def _conv1d_taps(weights: Tensor, k: int, groups: int) -> Tensor:
    wt = _f64(weights)
    if wt.shape == (k,):
        return np.broadcast_to(wt, (groups, k))
    if wt.shape == (groups, k):
        return wt
    raise ValueError(f"grouped_conv1d: weights shape {wt.shape} is neither ({k},) nor ({groups}, {k})")


def _conv1d_checks(z: Tensor, k: int, groups: int) -> Tensor:
    if k < 1 or k % 2 == 0:
        raise ValueError(f"grouped_conv1d: kernel size must be odd and >= 1, got {k}")
    z = _f64(z)
    if z.ndim != 2:
        raise ValueError(f"grouped_conv1d: expected (N, C) descriptor, got shape {z.shape}")
    if groups < 1 or z.shape[1] % groups:
        raise ValueError(f"grouped_conv1d: C={z.shape[1]} not divisible by groups={groups}")
    return z


def grouped_conv1d(z: Tensor, weights: Tensor, k: int, groups: int = 1) -> Tensor:
    """Same-padded k-tap correlation along the channel axis, applied
    independently inside each of ``groups`` contiguous channel segments."""
    z = _conv1d_checks(z, k, groups)
    n, c = z.shape
    taps = _conv1d_taps(weights, k, groups)
    p = (k - 1) // 2
    zp = np.pad(z.reshape(n, groups, c // groups), ((0, 0), (0, 0), (p, p)))
    win = sliding_window_view(zp, k, axis=2)  # (N, g, C/g, k)
    return np.einsum("ngsk,gk->ngs", win, taps).reshape(n, c)


def grouped_conv1d_backward(z: Tensor, weights: Tensor, k: int, groups: int, upstream: Tensor):
    """Returns (grad_input, grad_weights) with grad_weights shaped like weights."""
    z = _conv1d_checks(z, k, groups)
    n, c = z.shape
    gy = _f64(upstream)
    if gy.shape != z.shape:
        raise ValueError(f"grouped_conv1d_backward: upstream shape {gy.shape} != {z.shape}")
    taps = _conv1d_taps(weights, k, groups)
    seg, p = c // groups, (k - 1) // 2

    zp = np.pad(z.reshape(n, groups, seg), ((0, 0), (0, 0), (p, p)))
    win = sliding_window_view(zp, k, axis=2)
    gyg = gy.reshape(n, groups, seg)
    gw = np.einsum("ngsk,ngs->gk", win, gyg)

    gzp = np.zeros_like(zp)
    for j in range(k):
        gzp[:, :, j:j + seg] += gyg * taps[:, j][None, :, None]
    gz = gzp[:, :, p:p + seg].reshape(n, c)

    if np.ndim(weights) == 1:
        gw = gw.sum(axis=0)
    return gz, gw
