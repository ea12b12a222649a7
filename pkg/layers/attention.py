# layers/attention.py
"""
Channel attention units operating on (N, C, H, W) feature maps:

* SE  - squeeze with global average pooling, excite with a two-layer
        bottleneck (ReLU, sigmoid) of width max(1, C // r).
* ECA - squeeze, then one k-tap 1D convolution across channels.
* LCA - as ECA but the convolution runs inside g contiguous channel
        segments; one shared k-tap filter by default, one filter per
        segment when ``per_group_filters`` is set.

All three end with s = sigmoid(...) and output = s * x per channel.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import ClassVar

import numpy as np

from layers.tensor import (
    Tensor,
    global_avg_pool,
    global_avg_pool_backward,
    grouped_conv1d,
    grouped_conv1d_backward,
    linear_backward,
    linear_forward,
    relu_backward,
    relu_forward,
    sigmoid_backward,
    sigmoid_forward,
)


# ---------- spec & parameter records ----------
@dataclass(frozen=True)
class AttentionSpec:
    kind: str = "none"
    reduction_r: int = 16
    gamma: int = 2
    b_offset: int = 1
    groups_g: int = 4
    per_group_filters: bool = False
    se_bias: bool = False

    KINDS: ClassVar[tuple[str, ...]] = ("none", "se", "eca", "lca")
    LABELS: ClassVar[dict[str, str]] = {"none": "None", "se": "SE", "eca": "ECA", "lca": "LCA"}

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown attention kind '{self.kind}', expected one of {list(self.KINDS)}")
        if self.reduction_r < 1:
            raise ValueError(f"reduction_r must be >= 1, got {self.reduction_r}")
        if self.groups_g < 1:
            raise ValueError(f"groups_g must be >= 1, got {self.groups_g}")
        if self.gamma < 1:
            raise ValueError(f"gamma must be >= 1, got {self.gamma}")

    @classmethod
    def parse(cls, name: str, **overrides) -> "AttentionSpec":
        kind = (name or "none").strip().lower()
        return cls(kind=kind, **overrides)

    @property
    def label(self) -> str:
        return self.LABELS[self.kind]

    @property
    def enabled(self) -> bool:
        return self.kind != "none"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SEParams:
    w1: Tensor                 # (C//r, C)
    w2: Tensor                 # (C, C//r)
    b1: Tensor | None = None
    b2: Tensor | None = None

    @property
    def channels(self) -> int:
        return self.w1.shape[1]

    def arrays(self) -> dict[str, Tensor]:
        out = {"w1": self.w1, "w2": self.w2}
        if self.b1 is not None:
            out["b1"], out["b2"] = self.b1, self.b2
        return out


@dataclass
class ECAParams:
    kernel: Tensor             # (k,)

    @property
    def k(self) -> int:
        return self.kernel.shape[-1]

    def arrays(self) -> dict[str, Tensor]:
        return {"kernel": self.kernel}


@dataclass
class LCAParams:
    kernel: Tensor             # (k,) shared, or (g, k) per group
    groups_g: int = 4

    @property
    def k(self) -> int:
        return self.kernel.shape[-1]

    def arrays(self) -> dict[str, Tensor]:
        return {"kernel": self.kernel}


AttentionParams = SEParams | ECAParams | LCAParams


# ---------- sizing ----------
def adaptive_kernel_size(channels: int, gamma: int = 2, b_offset: int = 1) -> int:
    if channels < 1:
        raise ValueError(f"adaptive_kernel_size: channel count must be >= 1, got {channels}")
    t = int(abs((math.log2(channels) + b_offset) / gamma))
    return t if t % 2 else t + 1


def se_bottleneck(channels: int, reduction_r: int) -> int:
    return max(1, channels // reduction_r)


def attention_param_count(spec: AttentionSpec, channels: int) -> int:
    if spec.kind == "none":
        return 0
    if spec.kind == "se":
        w = se_bottleneck(channels, spec.reduction_r)
        return 2 * w * channels + ((w + channels) if spec.se_bias else 0)
    k = adaptive_kernel_size(channels, spec.gamma, spec.b_offset)
    if spec.kind == "lca" and spec.per_group_filters:
        return k * spec.groups_g
    return k


def attention_flops(spec: AttentionSpec, channels: int, h: int, w: int) -> int:
    """Per-sample FLOPs of one attention site: GAP (1/elem), excitation,
    sigmoid (1/channel) and the channel scaling (1/elem)."""
    if spec.kind == "none":
        return 0
    common = 2 * channels * h * w + channels
    if spec.kind == "se":
        width = se_bottleneck(channels, spec.reduction_r)
        extra = (width + channels) if spec.se_bias else 0
        return common + 2 * width * channels + width + extra
    k = adaptive_kernel_size(channels, spec.gamma, spec.b_offset)
    return common + k * channels


def make_attention_params(spec: AttentionSpec, channels: int, rng: np.random.Generator) -> AttentionParams | None:
    if spec.kind == "none":
        return None
    if spec.kind == "se":
        w = se_bottleneck(channels, spec.reduction_r)
        lim1, lim2 = 1.0 / math.sqrt(channels), 1.0 / math.sqrt(w)
        params = SEParams(
            w1=rng.uniform(-lim1, lim1, size=(w, channels)),
            w2=rng.uniform(-lim2, lim2, size=(channels, w)),
        )
        if spec.se_bias:
            params.b1 = rng.uniform(-lim1, lim1, size=(w,))
            params.b2 = rng.uniform(-lim2, lim2, size=(channels,))
        return params

    k = adaptive_kernel_size(channels, spec.gamma, spec.b_offset)
    lim = 1.0 / math.sqrt(k)
    if spec.kind == "eca":
        return ECAParams(kernel=rng.uniform(-lim, lim, size=(k,)))
    if channels % spec.groups_g:
        raise ValueError(f"LCA: C={channels} not divisible by groups_g={spec.groups_g}")
    shape = (spec.groups_g, k) if spec.per_group_filters else (k,)
    return LCAParams(kernel=rng.uniform(-lim, lim, size=shape), groups_g=spec.groups_g)


def params_from_arrays(spec: AttentionSpec, arrays: dict[str, Tensor]) -> AttentionParams | None:
    if spec.kind == "none":
        return None
    if spec.kind == "se":
        return SEParams(w1=arrays["w1"], w2=arrays["w2"], b1=arrays.get("b1"), b2=arrays.get("b2"))
    if spec.kind == "eca":
        return ECAParams(kernel=arrays["kernel"])
    return LCAParams(kernel=arrays["kernel"], groups_g=spec.groups_g)


# ---------- channel scaling ----------
def channel_scale(x: Tensor, s: Tensor) -> Tensor:
    x, s = np.asarray(x, dtype=np.float64), np.asarray(s, dtype=np.float64)
    if x.ndim != 4 or s.shape != x.shape[:2]:
        raise ValueError(f"channel_scale: scales {s.shape} do not match feature map {x.shape}")
    return x * s[:, :, None, None]


def channel_scale_backward(x: Tensor, s: Tensor, upstream: Tensor):
    """Returns (grad_x, grad_s)."""
    x, s, gy = (np.asarray(a, dtype=np.float64) for a in (x, s, upstream))
    if gy.shape != x.shape or s.shape != x.shape[:2]:
        raise ValueError(f"channel_scale_backward: shapes x={x.shape} s={s.shape} upstream={gy.shape}")
    return gy * s[:, :, None, None], np.einsum("nchw,nchw->nc", gy, x)


# ---------- SE ----------
def _se_trace(x: Tensor, params: SEParams) -> dict[str, Tensor]:
    if x.ndim != 4 or x.shape[1] != params.channels:
        raise ValueError(f"se_forward: input {np.shape(x)} does not match SE channels {params.channels}")
    z = global_avg_pool(x)
    a = linear_forward(z, params.w1, params.b1)
    h = relu_forward(a)
    u = linear_forward(h, params.w2, params.b2)
    return {"z": z, "a": a, "h": h, "u": u, "s": sigmoid_forward(u)}


def se_forward(x: Tensor, params: SEParams) -> Tensor:
    return channel_scale(x, _se_trace(x, params)["s"])


def se_backward(x: Tensor, params: SEParams, upstream: Tensor):
    t = _se_trace(x, params)
    gx, gs = channel_scale_backward(x, t["s"], upstream)
    gu = sigmoid_backward(t["u"], gs)
    has_bias = params.b1 is not None
    gh, gw2, gb2 = linear_backward(t["h"], params.w2, gu, has_bias)
    ga = relu_backward(t["a"], gh)
    gz, gw1, gb1 = linear_backward(t["z"], params.w1, ga, has_bias)
    gx = gx + global_avg_pool_backward(np.shape(x), gz)
    grads = {"w1": gw1, "w2": gw2}
    if has_bias:
        grads["b1"], grads["b2"] = gb1, gb2
    return gx, grads


# ---------- ECA / LCA ----------
def _conv_attention_trace(x: Tensor, kernel: Tensor, groups: int) -> dict[str, Tensor]:
    if np.ndim(x) != 4:
        raise ValueError(f"channel attention: expected NCHW input, got shape {np.shape(x)}")
    k = np.shape(kernel)[-1]
    z = global_avg_pool(x)
    u = grouped_conv1d(z, kernel, k, groups)
    return {"z": z, "u": u, "s": sigmoid_forward(u)}


def _conv_attention_backward(x: Tensor, kernel: Tensor, groups: int, upstream: Tensor):
    t = _conv_attention_trace(x, kernel, groups)
    gx, gs = channel_scale_backward(x, t["s"], upstream)
    gu = sigmoid_backward(t["u"], gs)
    gz, gk = grouped_conv1d_backward(t["z"], kernel, np.shape(kernel)[-1], groups, gu)
    return gx + global_avg_pool_backward(np.shape(x), gz), {"kernel": gk}


def eca_forward(x: Tensor, params: ECAParams) -> Tensor:
    return channel_scale(x, _conv_attention_trace(x, params.kernel, 1)["s"])


def eca_backward(x: Tensor, params: ECAParams, upstream: Tensor):
    return _conv_attention_backward(x, params.kernel, 1, upstream)


def lca_forward(x: Tensor, params: LCAParams) -> Tensor:
    return channel_scale(x, _conv_attention_trace(x, params.kernel, params.groups_g)["s"])


def lca_backward(x: Tensor, params: LCAParams, upstream: Tensor):
    return _conv_attention_backward(x, params.kernel, params.groups_g, upstream)


# ---------- dispatch ----------
def channel_scales(x: Tensor, params: AttentionParams) -> Tensor:
    """The (N, C) scale vector s a unit would apply to x."""
    if isinstance(params, SEParams):
        return _se_trace(x, params)["s"]
    groups = params.groups_g if isinstance(params, LCAParams) else 1
    return _conv_attention_trace(x, params.kernel, groups)["s"]


def attention_forward(x: Tensor, params: AttentionParams | None) -> Tensor:
    if params is None:
        return x
    if isinstance(params, SEParams):
        return se_forward(x, params)
    if isinstance(params, LCAParams):
        return lca_forward(x, params)
    return eca_forward(x, params)


def attention_backward(x: Tensor, params: AttentionParams | None, upstream: Tensor):
    if params is None:
        return upstream, {}
    if isinstance(params, SEParams):
        return se_backward(x, params, upstream)
    if isinstance(params, LCAParams):
        return lca_backward(x, params, upstream)
    return eca_backward(x, params, upstream)
