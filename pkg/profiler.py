# profiler.py
"""
Analytical parameter and FLOPs accounting.

Counting convention (versioned as CONVENTION):
  conv / linear   1 multiply-accumulate = 1 FLOP (bias adds not counted)
  batch norm      2 FLOPs per output element
  relu / relu6 / residual add / sigmoid / channel scale   1 per element
  global average pooling   1 per input element
  SE excitation   2 * (C // r) * C, ECA/LCA 1D conv   k * C
All FLOPs are per sample. BN running statistics are buffers, not parameters.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field

import pandas as pd

from layers.attention import attention_flops, attention_param_count
from models import ModelGraph, infer_shapes

log = logging.getLogger(__name__)

CONVENTION = "mac1-elem1-bn2/v1"

# reference (Params M, FLOPs M) per (arch, attention), 32x32 CIFAR inputs
REFERENCE_METRICS = {
    ("resnet18", "none"):    (11.17, 557.78),
    ("resnet18", "se"):      (11.26, 558.36),
    ("resnet18", "eca"):     (11.17, 558.28),
    ("resnet18", "lca"):     (11.17, 558.28),
    ("mobilenetv2", "none"): (2.24, 92.80),
    ("mobilenetv2", "se"):   (2.27, 93.10),
    ("mobilenetv2", "eca"):  (2.24, 93.08),
    ("mobilenetv2", "lca"):  (2.24, 93.08),
}

CSV_COLUMNS = ["node_id", "name", "kind", "params", "flops"]


@dataclass
class NodeProfile:
    node_id: int
    name:    str
    kind:    str
    params:  int = 0
    flops:   int = 0


@dataclass
class ProfileReport:
    config:      dict
    per_node:    list[NodeProfile] = field(default_factory=list)
    input_shape: tuple[int, ...] = (3, 32, 32)
    convention:  str = CONVENTION

    @property
    def arch(self) -> str:
        return self.config["arch"]

    @property
    def attention(self) -> str:
        return self.config["attention"]["kind"]

    @property
    def total_params(self) -> int:
        return sum(n.params for n in self.per_node)

    @property
    def total_flops(self) -> int:
        return sum(n.flops for n in self.per_node)

    @property
    def params_m(self) -> float:
        return round(self.total_params / 1e6, 2)

    @property
    def flops_m(self) -> float:
        return round(self.total_flops / 1e6, 2)

    def kind_totals(self, kind: str) -> tuple[int, int]:
        nodes = [n for n in self.per_node if n.kind == kind]
        return sum(n.params for n in nodes), sum(n.flops for n in nodes)

    def reference(self) -> dict | None:
        """Reference values and the residual of this report against them."""
        ref = REFERENCE_METRICS.get((self.arch, self.attention))
        if ref is None or not _is_reference_config(self.config) or tuple(self.input_shape) != (3, 32, 32):
            return None
        params_ref, flops_ref = ref
        return {
            "params_m": params_ref,
            "flops_m": flops_ref,
            "params_match": self.params_m == params_ref,
            "flops_residual_pct": round((self.total_flops / 1e6 - flops_ref) / flops_ref * 100.0, 4),
        }

    # ---------- serialization ----------
    def to_dict(self) -> dict:
        return {
            "convention": self.convention,
            "config": self.config,
            "input_shape": list(self.input_shape),
            "per_node": [asdict(n) for n in self.per_node],
            "totals": {
                "params": self.total_params,
                "flops": self.total_flops,
                "params_m": self.params_m,
                "flops_m": self.flops_m,
            },
            "reference": self.reference(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProfileReport":
        report = cls(
            config=d["config"],
            per_node=[NodeProfile(**n) for n in d["per_node"]],
            input_shape=tuple(d.get("input_shape", (3, 32, 32))),
            convention=d.get("convention", CONVENTION),
        )
        totals = d.get("totals") or {}
        if totals and (totals.get("params") != report.total_params or totals.get("flops") != report.total_flops):
            raise ValueError("profile: totals do not equal the sum of per-node entries")
        return report

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(n) for n in self.per_node], columns=CSV_COLUMNS)

    def to_json(self, path: str) -> str:
        _ensure_parent(path)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
        return path

    def to_csv(self, path: str) -> str:
        _ensure_parent(path)
        self.to_frame().to_csv(path, index=False, lineterminator="\n")
        return path


@dataclass
class ProfileDelta:
    arch:         str
    base:         str
    other:        str
    params_delta: int
    flops_delta:  int
    params_pct:   float
    flops_pct:    float

    def to_dict(self) -> dict:
        return asdict(self)


def _ensure_parent(path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)


def _is_reference_config(cfg: dict) -> bool:
    return (cfg.get("width_mult", 1.0) == 1.0 and cfg.get("stages") is None
            and cfg.get("stem_channels") is None and cfg.get("head_channels") is None
            and cfg.get("stride_plan", "cifar") == "cifar" and cfg.get("num_classes", 10) == 10
            and not cfg["attention"].get("per_group_filters", False)
            and not cfg["attention"].get("se_bias", False))


def _per_sample(input_shape) -> tuple[int, int, int]:
    shape = tuple(int(s) for s in input_shape)
    if len(shape) == 4:
        shape = shape[1:]
    if len(shape) != 3:
        raise ValueError(f"profile: input shape must be (C, H, W) or (N, C, H, W), got {input_shape}")
    return shape


# ---------- per-node rules ----------
def node_params(node) -> int:
    if node.kind == "conv":
        s = node.conv
        return s.out_channels * (s.in_channels // s.groups) * s.kernel_h * s.kernel_w + (s.out_channels if s.has_bias else 0)
    if node.kind == "bn":
        return 2 * node.channels
    if node.kind == "linear":
        cout, cin = node.params["weight"].value.shape
        return cout * cin + cout
    if node.kind == "attention":
        return attention_param_count(node.attention, node.channels)
    return 0


def node_flops(node, in_shape: tuple[int, ...], out_shape: tuple[int, ...]) -> int:
    out_elems = 1
    for d in out_shape:
        out_elems *= d
    if node.kind == "conv":
        s = node.conv
        return out_shape[1] * out_shape[2] * s.out_channels * (s.in_channels // s.groups) * s.kernel_h * s.kernel_w
    if node.kind == "linear":
        cout, cin = node.params["weight"].value.shape
        return cout * cin
    if node.kind == "bn":
        return 2 * out_elems
    if node.kind in ("relu", "relu6", "add"):
        return out_elems
    if node.kind == "gap":
        return in_shape[0] * in_shape[1] * in_shape[2]
    if node.kind == "attention":
        c, h, w = out_shape
        return attention_flops(node.attention, c, h, w)
    return 0


# ---------- operations ----------
def count_params(graph: ModelGraph) -> ProfileReport:
    per_node = [NodeProfile(n.id, n.name, n.kind, params=node_params(n)) for n in graph.nodes]
    return ProfileReport(config=graph.config.to_dict(), per_node=per_node, input_shape=graph.input_shape)


def count_flops(graph: ModelGraph, input_shape=None) -> ProfileReport:
    shape = _per_sample(input_shape or graph.input_shape)
    out_shapes = dict(infer_shapes(graph, shape))
    shape_of = {-1: shape}
    per_node = []
    for n in graph.nodes:
        shape_of[n.id] = out_shapes[n.name]
        per_node.append(NodeProfile(n.id, n.name, n.kind, flops=node_flops(n, shape_of[n.inputs[0]], shape_of[n.id])))
    return ProfileReport(config=graph.config.to_dict(), per_node=per_node, input_shape=shape)


def profile_graph(graph: ModelGraph, input_shape=None) -> ProfileReport:
    report = count_flops(graph, input_shape)
    for entry, n in zip(report.per_node, graph.nodes):
        entry.params = node_params(n)
    ref = report.reference()
    if ref is not None:
        log.info("%s/%s: %.2fM params (ref %.2fM), %.2fM FLOPs (ref %.2fM, residual %+.3f%%)",
                 report.arch, report.attention, report.params_m, ref["params_m"],
                 report.total_flops / 1e6, ref["flops_m"], ref["flops_residual_pct"])
    return report


def diff_reports(a: ProfileReport, b: ProfileReport) -> ProfileDelta:
    """b relative to a."""
    if a.arch != b.arch:
        raise ValueError(f"diff_reports: architectures differ ('{a.arch}' vs '{b.arch}')")
    dp = b.total_params - a.total_params
    df = b.total_flops - a.total_flops
    return ProfileDelta(
        arch=a.arch,
        base=a.attention,
        other=b.attention,
        params_delta=dp,
        flops_delta=df,
        params_pct=dp / a.total_params * 100.0 if a.total_params else 0.0,
        flops_pct=df / a.total_flops * 100.0 if a.total_flops else 0.0,
    )


def load_profile_json(path: str) -> ProfileReport:
    with open(path, encoding="utf-8") as f:
        return ProfileReport.from_dict(json.load(f))


def table2_row(report: ProfileReport, delta: ProfileDelta | None = None, latency_ms: float | None = None) -> str:
    arch = {"resnet18": "ResNet-18", "mobilenetv2": "MobileNetV2"}.get(report.arch, report.arch)
    attn = {"none": "None", "se": "SE", "eca": "ECA", "lca": "LCA"}.get(report.attention, report.attention)
    lat = f"{latency_ms:.2f}" if latency_ms is not None else "-"
    row = f"{arch:<12} {attn:<5} {report.params_m:>7.2f} {report.total_flops / 1e6:>8.2f} {lat:>6}"
    if delta is not None:
        row += f"   {delta.params_delta:+,d} params ({delta.params_pct:+.4f}%)"
    return row
