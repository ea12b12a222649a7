# models.py
"""
CIFAR-adapted ResNet-18 and MobileNetV2 as flat, topologically ordered
node graphs, plus whole-graph forward/backward and weight initialization.

A graph is a list of ``Node`` records. Each node names the node ids it
reads (``INPUT`` is the image batch); residual links are ``add`` nodes
whose second input is the shortcut. Parameters live on the nodes as
``GradPair`` records; BN running statistics live in ``buffers``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from config import Config
from layers.attention import (
    AttentionSpec,
    attention_backward,
    attention_forward,
    make_attention_params,
    params_from_arrays,
)
from layers.tensor import (
    ConvSpec,
    GradPair,
    Tensor,
    batchnorm_backward,
    batchnorm_forward,
    conv2d_backward,
    conv2d_forward,
    conv_output_shape,
    global_avg_pool,
    global_avg_pool_backward,
    linear_backward,
    linear_forward,
    relu6_backward,
    relu6_forward,
    relu_backward,
    relu_forward,
)

log = logging.getLogger(__name__)

INPUT = -1

NODE_KINDS = ("conv", "bn", "relu", "relu6", "attention", "add", "gap", "linear")

RESNET18_STAGES = ((64, 2, 1), (128, 2, 2), (256, 2, 2), (512, 2, 2))   # (channels, blocks, stride)

# (expansion t, channels c, repeats n); strides come from the stride plan
MOBILENETV2_SETTINGS = ((1, 16, 1), (6, 24, 2), (6, 32, 3), (6, 64, 4), (6, 96, 3), (6, 160, 3), (6, 320, 1))

# first-block stride per stage; "cifar" keeps 32x32 inputs at 4x4 before GAP
STRIDE_PLANS = {
    "cifar":    (1, 1, 2, 2, 1, 2, 1),
    "imagenet": (1, 2, 2, 2, 1, 2, 1),
}


# ------------------------------------------------------------
# A) Configuration
# ------------------------------------------------------------
def make_divisible(value: float, divisor: int = 8, min_value: int | None = None) -> int:
    min_value = min_value or divisor
    new_value = max(min_value, int(value + divisor / 2) // divisor * divisor)
    if new_value < 0.9 * value:
        new_value += divisor
    return new_value


@dataclass
class ModelConfig:
    arch:          str = "resnet18"
    attention:     AttentionSpec = field(default_factory=AttentionSpec)
    num_classes:   int = Config.NUM_CLASSES
    width_mult:    float = 1.0
    input_size:    int = 32
    stride_plan:   str = "cifar"
    # reduced variants (gradient checks, smoke runs); None = standard architecture
    stem_channels: int | None = None
    stages:        tuple | None = None
    head_channels: int | None = None

    ARCHS = ("resnet18", "mobilenetv2")

    def __post_init__(self):
        if isinstance(self.attention, str):
            self.attention = AttentionSpec.parse(self.attention)
        elif isinstance(self.attention, dict):
            self.attention = AttentionSpec(**self.attention)
        if self.stages is not None:
            self.stages = tuple(tuple(s) for s in self.stages)
        self.validate()

    def validate(self) -> None:
        if self.arch not in self.ARCHS:
            raise ValueError(f"unknown arch '{self.arch}', expected one of {list(self.ARCHS)}")
        if self.num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.width_mult <= 0:
            raise ValueError(f"width_mult must be positive, got {self.width_mult}")
        if self.input_size < 1:
            raise ValueError(f"input_size must be >= 1, got {self.input_size}")
        if self.stride_plan not in STRIDE_PLANS:
            raise ValueError(f"unknown stride plan '{self.stride_plan}', expected one of {list(STRIDE_PLANS)}")

    @property
    def standard_cifar(self) -> bool:
        return (self.width_mult == 1.0 and self.input_size == 32 and self.stages is None
                and self.stem_channels is None and self.head_channels is None and self.stride_plan == "cifar")

    def to_dict(self) -> dict:
        return {
            "arch": self.arch,
            "attention": self.attention.to_dict(),
            "num_classes": self.num_classes,
            "width_mult": self.width_mult,
            "input_size": self.input_size,
            "stride_plan": self.stride_plan,
            "stem_channels": self.stem_channels,
            "stages": [list(s) for s in self.stages] if self.stages is not None else None,
            "head_channels": self.head_channels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


# ------------------------------------------------------------
# B) Graph records
# ------------------------------------------------------------
@dataclass
class Node:
    id:        int
    name:      str
    kind:      str
    inputs:    tuple[int, ...]
    out_shape: tuple[int, ...]                 # per sample: (C, H, W) or (C,)
    conv:      ConvSpec | None = None
    attention: AttentionSpec | None = None
    params:    dict[str, GradPair] = field(default_factory=dict)
    buffers:   dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def channels(self) -> int:
        return self.out_shape[0]


@dataclass
class ForwardCache:
    batch:    Tensor
    values:   dict[int, Tensor]
    training: bool


@dataclass
class ModelGraph:
    config: ModelConfig
    nodes:  list[Node] = field(default_factory=list)
    dtype:  str = Config.DTYPE
    cache:  ForwardCache | None = field(default=None, repr=False)

    @property
    def arch(self) -> str:
        return self.config.arch

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (3, self.config.input_size, self.config.input_size)

    @property
    def shortcuts(self) -> list[tuple[int, int]]:
        """(source node id, add node id) for every residual link."""
        return [(n.inputs[1], n.id) for n in self.nodes if n.kind == "add"]

    @property
    def attention_nodes(self) -> list[Node]:
        return [n for n in self.nodes if n.kind == "attention"]

    def node(self, name: str) -> Node:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def named_parameters(self):
        for n in self.nodes:
            for pname, pair in n.params.items():
                yield f"{n.name}.{pname}", pair, n

    def num_parameters(self) -> int:
        return sum(pair.value.size for _, pair, _ in self.named_parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {}
        for n in self.nodes:
            for pname, pair in n.params.items():
                state[f"{n.name}.{pname}"] = pair.value
            for bname, buf in n.buffers.items():
                state[f"{n.name}.{bname}"] = buf
        return state

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = self.state_dict()
        missing = [k for k in own if k not in state]
        unexpected = [k for k in state if k not in own]
        if strict and (missing or unexpected):
            raise ValueError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for key, target in own.items():
            if key not in state:
                continue
            src = np.asarray(state[key])
            if src.shape != target.shape:
                raise ValueError(f"shape mismatch for '{key}': checkpoint {src.shape} vs graph {target.shape}")
            target[...] = src

    def zero_grad(self) -> None:
        for _, pair, _ in self.named_parameters():
            pair.zero_grad()


# ------------------------------------------------------------
# C) Builders
# ------------------------------------------------------------
class _GraphBuilder:
    def __init__(self, cfg: ModelConfig, dtype: str):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.graph = ModelGraph(config=cfg, dtype=dtype)

    def _add(self, name, kind, inputs, out_shape, **kw) -> int:
        node = Node(id=len(self.graph.nodes), name=name, kind=kind, inputs=tuple(inputs), out_shape=tuple(out_shape), **kw)
        self.graph.nodes.append(node)
        return node.id

    def shape(self, nid: int) -> tuple[int, ...]:
        return self.graph.input_shape if nid == INPUT else self.graph.nodes[nid].out_shape

    def _zeros(self, *shape) -> GradPair:
        return GradPair(np.zeros(shape, dtype=self.dtype))

    def conv(self, x, name, cout, k, stride=1, groups=1, bias=False) -> int:
        cin, h, w = self.shape(x)
        spec = ConvSpec(cin, cout, k, k, stride, (k - 1) // 2, groups, bias)
        ho, wo = conv_output_shape(spec, h, w)
        params = {"weight": self._zeros(*spec.weight_shape)}
        if bias:
            params["bias"] = self._zeros(cout)
        return self._add(name, "conv", [x], (cout, ho, wo), conv=spec, params=params)

    def bn(self, x, name) -> int:
        c = self.shape(x)[0]
        return self._add(
            name, "bn", [x], self.shape(x),
            params={"gamma": GradPair(np.ones(c, dtype=self.dtype)), "beta": self._zeros(c)},
            buffers={"running_mean": np.zeros(c), "running_var": np.ones(c)},
        )

    def act(self, x, name, kind) -> int:
        return self._add(name, kind, [x], self.shape(x))

    def attention(self, x, name) -> int:
        spec = self.cfg.attention
        if not spec.enabled:
            return x
        c = self.shape(x)[0]
        if spec.kind == "lca" and c % spec.groups_g:
            raise ValueError(f"{name}: C={c} not divisible by LCA groups_g={spec.groups_g}")
        # shapes only; values come from init_weights
        shaped = make_attention_params(spec, c, np.random.default_rng(0))
        params = {k: GradPair(np.zeros(v.shape, dtype=self.dtype)) for k, v in shaped.arrays().items()}
        return self._add(name, "attention", [x], self.shape(x), attention=spec, params=params)

    def add(self, a, b, name) -> int:
        if self.shape(a) != self.shape(b):
            raise ValueError(f"{name}: residual shapes differ {self.shape(a)} vs {self.shape(b)}")
        return self._add(name, "add", [a, b], self.shape(a))

    def gap(self, x, name) -> int:
        return self._add(name, "gap", [x], (self.shape(x)[0],))

    def linear(self, x, name, cout) -> int:
        cin = self.shape(x)[0]
        return self._add(name, "linear", [x], (cout,),
                         params={"weight": self._zeros(cout, cin), "bias": self._zeros(cout)})


def build_resnet18_cifar(cfg: ModelConfig, dtype: str = Config.DTYPE) -> ModelGraph:
    """3x3/stride-1 stem, no max-pool, four stages of post-activation
    BasicBlocks; attention on each residual branch before the addition."""
    if cfg.arch != "resnet18":
        raise ValueError(f"build_resnet18_cifar: config arch is '{cfg.arch}'")
    b = _GraphBuilder(cfg, dtype)
    wm = cfg.width_mult
    stages = cfg.stages or tuple((max(1, int(round(c * wm))), n, s) for c, n, s in RESNET18_STAGES)
    stem = cfg.stem_channels or stages[0][0]

    x = b.conv(INPUT, "stem.conv", stem, 3)
    x = b.bn(x, "stem.bn")
    x = b.act(x, "stem.relu", "relu")

    for si, (cout, blocks, stride) in enumerate(stages, start=1):
        for bi in range(blocks):
            p = f"layer{si}.{bi}"
            s = stride if bi == 0 else 1
            cin = b.shape(x)[0]
            y = b.conv(x, f"{p}.conv1", cout, 3, stride=s)
            y = b.bn(y, f"{p}.bn1")
            y = b.act(y, f"{p}.relu1", "relu")
            y = b.conv(y, f"{p}.conv2", cout, 3)
            y = b.bn(y, f"{p}.bn2")
            y = b.attention(y, f"{p}.attn")
            short = x
            if s != 1 or cin != cout:
                short = b.conv(x, f"{p}.shortcut.conv", cout, 1, stride=s)
                short = b.bn(short, f"{p}.shortcut.bn")
            x = b.add(y, short, f"{p}.add")
            x = b.act(x, f"{p}.relu2", "relu")

    x = b.gap(x, "head.gap")
    b.linear(x, "head.fc", cfg.num_classes)
    return b.graph


def build_mobilenetv2_cifar(cfg: ModelConfig, dtype: str = Config.DTYPE) -> ModelGraph:
    """Stride-1 stem, inverted residual stages on the configured stride plan,
    1x1 conv to 1280, GAP, linear head; attention at every block output."""
    if cfg.arch != "mobilenetv2":
        raise ValueError(f"build_mobilenetv2_cifar: config arch is '{cfg.arch}'")
    b = _GraphBuilder(cfg, dtype)
    wm = cfg.width_mult
    if cfg.stages is not None:
        settings = cfg.stages                              # (t, c, n, s)
    else:
        plan = STRIDE_PLANS[cfg.stride_plan]
        settings = tuple((t, make_divisible(c * wm), n, s) for (t, c, n), s in zip(MOBILENETV2_SETTINGS, plan))
    stem = cfg.stem_channels or make_divisible(32 * wm)
    head = cfg.head_channels or make_divisible(1280 * max(1.0, wm))

    x = b.conv(INPUT, "stem.conv", stem, 3)
    x = b.bn(x, "stem.bn")
    x = b.act(x, "stem.relu6", "relu6")

    idx = 0
    for t, cout, n, stride in settings:
        for i in range(n):
            p = f"blocks.{idx}"
            s = stride if i == 0 else 1
            cin = b.shape(x)[0]
            hidden = int(round(cin * t))
            y = x
            if t != 1:
                y = b.conv(y, f"{p}.expand.conv", hidden, 1)
                y = b.bn(y, f"{p}.expand.bn")
                y = b.act(y, f"{p}.expand.relu6", "relu6")
            y = b.conv(y, f"{p}.dw.conv", hidden, 3, stride=s, groups=hidden)
            y = b.bn(y, f"{p}.dw.bn")
            y = b.act(y, f"{p}.dw.relu6", "relu6")
            y = b.conv(y, f"{p}.project.conv", cout, 1)
            y = b.bn(y, f"{p}.project.bn")
            if s == 1 and cin == cout:
                y = b.add(y, x, f"{p}.add")
            x = b.attention(y, f"{p}.attn")
            idx += 1

    x = b.conv(x, "last.conv", head, 1)
    x = b.bn(x, "last.bn")
    x = b.act(x, "last.relu6", "relu6")
    x = b.gap(x, "head.gap")
    b.linear(x, "head.fc", cfg.num_classes)
    return b.graph


BUILDERS = {
    "resnet18": build_resnet18_cifar,
    "mobilenetv2": build_mobilenetv2_cifar,
}


def build_model(cfg: ModelConfig, seed: int | None = None, dtype: str = Config.DTYPE) -> ModelGraph:
    graph = BUILDERS[cfg.arch](cfg, dtype)
    if seed is not None:
        init_weights(graph, seed)
    log.debug("built %s/%s: %d nodes, %d params", cfg.arch, cfg.attention.kind, len(graph.nodes), graph.num_parameters())
    return graph


def tiny_config(arch: str, attention: str | AttentionSpec = "none", **overrides) -> ModelConfig:
    """Reduced variant (<= 3 blocks, <= 8 channels, 8x8 input) for gradient checks."""
    if isinstance(attention, str):
        attention = AttentionSpec.parse(attention, groups_g=2)
    if arch == "resnet18":
        base = dict(stem_channels=4, stages=((4, 1, 1), (8, 1, 2)))
    else:
        base = dict(stem_channels=4, stages=((1, 4, 1, 1), (2, 4, 2, 2)), head_channels=8)
    base.update(input_size=8, num_classes=3)
    base.update(overrides)
    return ModelConfig(arch=arch, attention=attention, **base)


def infer_shapes(graph: ModelGraph, input_shape: tuple[int, int, int] | None = None) -> list[tuple[str, tuple[int, ...]]]:
    """Per-sample output shape of every node for the given (C, H, W) input."""
    input_shape = tuple(input_shape or graph.input_shape)
    shapes: dict[int, tuple[int, ...]] = {INPUT: input_shape}
    for n in graph.nodes:
        src = shapes[n.inputs[0]]
        if n.kind == "conv":
            if src[0] != n.conv.in_channels:
                raise ValueError(f"{n.name}: input has {src[0]} channels, expected {n.conv.in_channels}")
            shapes[n.id] = (n.conv.out_channels, *conv_output_shape(n.conv, src[1], src[2]))
        elif n.kind == "gap":
            shapes[n.id] = (src[0],)
        elif n.kind == "linear":
            shapes[n.id] = (n.params["weight"].value.shape[0],)
        else:
            shapes[n.id] = src
    return [(n.name, shapes[n.id]) for n in graph.nodes]


# ------------------------------------------------------------
# D) Initialization
# ------------------------------------------------------------
def init_weights(graph: ModelGraph, seed: int) -> ModelGraph:
    """He-normal convs, unit/zero BN, fan-in uniform head and attention.
    Nodes are visited in order so one seed fixes every value."""
    rng = np.random.default_rng(seed)
    for n in graph.nodes:
        if n.kind == "conv":
            fan_in = n.conv.weight_shape[1] * n.conv.kernel_h * n.conv.kernel_w
            n.params["weight"].value[...] = rng.normal(0.0, math.sqrt(2.0 / fan_in), n.conv.weight_shape)
            if "bias" in n.params:
                n.params["bias"].value[...] = 0.0
        elif n.kind == "bn":
            n.params["gamma"].value[...] = 1.0
            n.params["beta"].value[...] = 0.0
            n.buffers["running_mean"][...] = 0.0
            n.buffers["running_var"][...] = 1.0
        elif n.kind == "linear":
            w = n.params["weight"].value
            lim = 1.0 / math.sqrt(w.shape[1])
            w[...] = rng.uniform(-lim, lim, w.shape)
            n.params["bias"].value[...] = rng.uniform(-lim, lim, w.shape[0])
        elif n.kind == "attention":
            fresh = make_attention_params(n.attention, n.channels, rng)
            for k, v in fresh.arrays().items():
                n.params[k].value[...] = v
    graph.zero_grad()
    graph.cache = None
    return graph


# ------------------------------------------------------------
# E) Execution
# ------------------------------------------------------------
def _arrays(node: Node) -> dict[str, Tensor]:
    return {k: p.value for k, p in node.params.items()}


def _node_forward(n: Node, ins: list[Tensor], training: bool) -> Tensor:
    x = ins[0]
    if n.kind == "conv":
        bias = n.params["bias"].value if "bias" in n.params else None
        return conv2d_forward(x, n.params["weight"].value, bias, n.conv)
    if n.kind == "bn":
        return batchnorm_forward(
            x, n.params["gamma"].value, n.params["beta"].value,
            n.buffers["running_mean"], n.buffers["running_var"],
            training, Config.BN_MOMENTUM, Config.BN_EPS,
        )
    if n.kind == "relu":
        return relu_forward(x)
    if n.kind == "relu6":
        return relu6_forward(x)
    if n.kind == "attention":
        return attention_forward(x, params_from_arrays(n.attention, _arrays(n)))
    if n.kind == "add":
        return x + ins[1]
    if n.kind == "gap":
        return global_avg_pool(x)
    if n.kind == "linear":
        return linear_forward(x, n.params["weight"].value, n.params["bias"].value)
    raise ValueError(f"unknown node kind '{n.kind}'")


def _node_backward(n: Node, ins: list[Tensor], gy: Tensor, training: bool):
    """Returns (grads for each input, {param name: grad})."""
    x = ins[0]
    if n.kind == "conv":
        gx, gw, gb = conv2d_backward(x, n.params["weight"].value, n.conv, gy)
        pg = {"weight": gw}
        if gb is not None:
            pg["bias"] = gb
        return [gx], pg
    if n.kind == "bn":
        gx, gg, gbeta = batchnorm_backward(
            x, n.params["gamma"].value, gy, training,
            n.buffers["running_mean"], n.buffers["running_var"], Config.BN_EPS,
        )
        return [gx], {"gamma": gg, "beta": gbeta}
    if n.kind == "relu":
        return [relu_backward(x, gy)], {}
    if n.kind == "relu6":
        return [relu6_backward(x, gy)], {}
    if n.kind == "attention":
        gx, pg = attention_backward(x, params_from_arrays(n.attention, _arrays(n)), gy)
        return [gx], pg
    if n.kind == "add":
        return [gy, gy], {}
    if n.kind == "gap":
        return [global_avg_pool_backward(x.shape, gy)], {}
    if n.kind == "linear":
        gx, gw, gb = linear_backward(x, n.params["weight"].value, gy)
        return [gx], {"weight": gw, "bias": gb}
    raise ValueError(f"unknown node kind '{n.kind}'")


def forward(graph: ModelGraph, batch: Tensor, training: bool = False, keep_cache: bool | None = None) -> Tensor:
    """Run every node in order. Training mode (or ``keep_cache``) keeps the
    intermediates that ``backward`` needs."""
    batch = np.asarray(batch)
    if batch.ndim != 4 or batch.shape[1:] != graph.input_shape:
        raise ValueError(f"forward: expected (N, {', '.join(map(str, graph.input_shape))}) input, got {batch.shape}")
    keep = training if keep_cache is None else keep_cache
    store = np.dtype(graph.dtype)
    last_use = {}
    for n in graph.nodes:
        for i in n.inputs:
            last_use[i] = n.id
    values: dict[int, Tensor] = {INPUT: batch}
    for n in graph.nodes:
        out = _node_forward(n, [values[i] for i in n.inputs], training)
        values[n.id] = out.astype(store, copy=False)
        if not keep:
            for i in n.inputs:
                if last_use[i] == n.id and i != INPUT:
                    values.pop(i, None)
    graph.cache = ForwardCache(batch=batch, values=values, training=training) if keep else None
    return values[graph.nodes[-1].id]


def backward(graph: ModelGraph, batch: Tensor, label_grads: Tensor) -> dict[str, Tensor]:
    """Propagate dLoss/dlogits back through the cached forward pass; fills
    each parameter's ``GradPair.grad`` and returns {qualified name: grad}."""
    cache = graph.cache
    if cache is None:
        raise ValueError("backward: no cached forward pass; call forward(..., training=True) first")
    if cache.batch is not batch and not (
        np.shape(cache.batch) == np.shape(batch) and np.array_equal(cache.batch, batch)
    ):
        raise ValueError("backward: cached forward pass was run on a different batch")

    last = graph.nodes[-1].id
    label_grads = np.asarray(label_grads, dtype=np.float64)
    if label_grads.shape != cache.values[last].shape:
        raise ValueError(f"backward: label grads {label_grads.shape} != logits {cache.values[last].shape}")

    pending: dict[int, Tensor] = {last: label_grads}
    grads: dict[str, Tensor] = {}
    for n in reversed(graph.nodes):
        gy = pending.pop(n.id, None)
        if gy is None:
            gy = np.zeros((label_grads.shape[0], *n.out_shape))
        in_grads, pgrads = _node_backward(n, [cache.values[i] for i in n.inputs], gy, cache.training)
        for src, g in zip(n.inputs, in_grads):
            if src == INPUT:
                continue
            pending[src] = g if src not in pending else pending[src] + g
        for pname, g in pgrads.items():
            n.params[pname].set_grad(g)
            grads[f"{n.name}.{pname}"] = g
    return grads


def predict(graph: ModelGraph, batch: Tensor) -> Tensor:
    return forward(graph, batch, training=False)
