# bench.py
"""
Inference latency/throughput measurement and the merged results bundle
behind the accuracy and efficiency tables and the five trade-off series.

Latency protocol: ``warmup`` untimed forwards, then ``iters`` timed forwards
of one fixed random input in eval mode. Only the forward call sits between
the two clock reads. Percentiles are nearest-rank on the sorted samples and
the standard deviation is the sample one (ddof=1).
"""
from __future__ import annotations

import json
import logging
import math
import os
import platform
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable

import numpy as np
import pandas as pd
from openpyxl.styles import Font, PatternFill
from openpyxl.utils import get_column_letter

from config import Config
from layers.attention import AttentionSpec
from models import ModelConfig, ModelGraph, forward
from profiler import ProfileReport
from trainer import TrainLog

log = logging.getLogger(__name__)

Clock = Callable[[], float]

ARCH_ORDER = ModelConfig.ARCHS
ATTN_ORDER = AttentionSpec.KINDS
ARCH_LABELS = {"resnet18": "ResNet-18", "mobilenetv2": "MobileNetV2"}

RESULT_COLUMNS = [
    "arch", "attention", "accuracy", "params", "flops",
    "params_m", "flops_m", "latency_ms", "throughput_ips",
]

# file name -> (x column, y column); rows missing either value are skipped
FIGURES = {
    "fig_latency.csv":        ("attention", "latency_ms"),
    "fig_acc_latency.csv":    ("latency_ms", "accuracy"),
    "fig_acc_params.csv":     ("params_m", "accuracy"),
    "fig_acc_flops.csv":      ("flops_m", "accuracy"),
    "fig_acc_throughput.csv": ("throughput_ips", "accuracy"),
}

TABLE1_COLUMNS = ["Model", "None", "SE", "ECA", "LCA"]
TABLE2_COLUMNS = ["Model", "Attn", "Params (M)", "FLOPs (M)", "Lat. (ms)"]

HEADER_FILL = PatternFill(start_color="FFD9E1F2", end_color="FFD9E1F2", fill_type="solid")


# ============================================================
# Latency / throughput
# ============================================================
@dataclass
class LatencyStats:
    mean: float
    std:  float
    min:  float
    p50:  float
    p95:  float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BenchReport:
    config:          dict
    batch_size:      int
    warmup_iters:    int
    timed_iters:     int
    latency_ms:      LatencyStats
    throughput_ips:  float
    environment:     str = ""
    output_checksum: float = 0.0
    # steady-state figure from measure_throughput; throughput_ips stays batch_size*1000/mean
    steady_throughput_ips: float | None = None
    throughput_batch:      int | None = None

    def __post_init__(self):
        if isinstance(self.latency_ms, dict):
            self.latency_ms = LatencyStats(**self.latency_ms)

    @property
    def arch(self) -> str:
        return self.config["arch"]

    @property
    def attention(self) -> str:
        return self.config["attention"]["kind"]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["latency_ms"] = self.latency_ms.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BenchReport":
        return cls(**d)

    def to_json(self, path: str) -> str:
        _write_json(path, self.to_dict())
        return path


def load_bench_json(path: str) -> BenchReport:
    with open(path, encoding="utf-8") as f:
        return BenchReport.from_dict(json.load(f))


def percentile(samples: Iterable[float], q: float) -> float:
    """Nearest-rank: the smallest sample with at least q% of samples <= it."""
    xs = sorted(samples)
    if not xs:
        raise ValueError("percentile of an empty sample")
    if not 0.0 <= q <= 100.0:
        raise ValueError(f"percentile q must be within [0, 100], got {q}")
    rank = max(1, math.ceil(q / 100.0 * len(xs)))
    return float(xs[rank - 1])


def latency_stats(samples_ms: list[float]) -> LatencyStats:
    if len(samples_ms) < 2:
        raise ValueError(f"latency statistics need at least 2 samples, got {len(samples_ms)}")
    arr = np.asarray(samples_ms, dtype=np.float64)
    return LatencyStats(
        mean=float(arr.mean()),
        std=float(arr.std(ddof=1)),
        min=float(arr.min()),
        p50=percentile(samples_ms, 50),
        p95=percentile(samples_ms, 95),
    )


def host_description() -> str:
    note = Config.HOST_NOTE or f"{platform.system()} {platform.machine()} {platform.processor()}".strip()
    return f"{note}; numpy {np.__version__}; CPU reference kernels"


def _bench_input(graph: ModelGraph, batch_size: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal((batch_size, *graph.input_shape)).astype(graph.dtype)


def measure_latency(
    graph: ModelGraph,
    batch_size: int = Config.BENCH_BATCH,
    warmup: int = Config.BENCH_WARMUP,
    iters: int = Config.BENCH_ITERS,
    clock: Clock = time.perf_counter,
    clock_unit_ms: float = 1000.0,
    seed: int = Config.SEED,
    environment: str | None = None,
) -> BenchReport:
    """Per-forward latency of an eval-mode graph. ``clock`` returns time in
    units of ``1 / clock_unit_ms`` milliseconds (seconds by default)."""
    if iters < 2:
        raise ValueError(f"iters must be >= 2 (std is undefined otherwise), got {iters}")
    if warmup < 0:
        raise ValueError(f"warmup must be >= 0, got {warmup}")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")

    graph.cache = None
    x = _bench_input(graph, batch_size, seed)
    blind = 0.0

    for _ in range(warmup):
        blind += float(forward(graph, x, training=False).sum())

    samples = []
    for _ in range(iters):
        t0 = clock()
        y = forward(graph, x, training=False)
        t1 = clock()
        samples.append((t1 - t0) * clock_unit_ms)
        blind += float(y.sum())

    stats = latency_stats(samples)
    if stats.mean <= 0:
        raise ValueError("clock did not advance during the timed region")
    report = BenchReport(
        config=graph.config.to_dict(),
        batch_size=batch_size,
        warmup_iters=warmup,
        timed_iters=iters,
        latency_ms=stats,
        throughput_ips=batch_size * 1000.0 / stats.mean,
        environment=host_description() if environment is None else environment,
        output_checksum=blind,
    )
    log.info("%s/%s latency: mean %.3f ms, std %.3f, p50 %.3f, p95 %.3f (batch %d, %d runs after %d warmup)",
             report.arch, report.attention, stats.mean, stats.std, stats.p50, stats.p95, batch_size, iters, warmup)
    return report


def measure_throughput(
    graph: ModelGraph,
    batch_size: int,
    duration_budget: float = Config.THROUGHPUT_BUDGET_S,
    clock: Clock = time.perf_counter,
    warmup: int = 1,
    seed: int = Config.SEED,
) -> float:
    """Images per second over back-to-back forwards until ``duration_budget``
    (clock units, seconds by default) has elapsed."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if duration_budget <= 0:
        raise ValueError(f"duration_budget must be positive, got {duration_budget}")

    graph.cache = None
    x = _bench_input(graph, batch_size, seed)
    for _ in range(warmup):
        forward(graph, x, training=False)

    images, batches_run = 0, 0
    start = clock()
    while True:
        forward(graph, x, training=False)
        images += batch_size
        batches_run += 1
        elapsed = clock() - start
        if batches_run == 1 and elapsed > duration_budget:
            raise ValueError(
                f"duration budget {duration_budget} is too small for one batch of {batch_size} (took {elapsed})"
            )
        if elapsed >= duration_budget:
            break
    ips = images / elapsed
    log.info("%s/%s throughput: %.1f images/s (batch %d, %d batches)",
             graph.config.arch, graph.config.attention.kind, ips, batch_size, batches_run)
    return ips


# ============================================================
# Results bundle
# ============================================================
@dataclass
class ResultRow:
    arch:           str
    attention:      str
    accuracy:       float | None = None     # top-1 on the test split, percent
    params:         int | None = None
    flops:          int | None = None
    params_m:       float | None = None
    flops_m:        float | None = None
    latency_ms:     float | None = None
    throughput_ips: float | None = None

    def __post_init__(self):
        if self.arch not in ARCH_ORDER:
            raise ValueError(f"unknown arch '{self.arch}', expected one of {list(ARCH_ORDER)}")
        if self.attention not in ATTN_ORDER:
            raise ValueError(f"unknown attention '{self.attention}', expected one of {list(ATTN_ORDER)}")

    @property
    def key(self) -> tuple[str, str]:
        return self.arch, self.attention

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ResultsBundle:
    rows: list[ResultRow] = field(default_factory=list)

    def __post_init__(self):
        keys = [r.key for r in self.rows]
        if len(keys) != len(set(keys)):
            raise ValueError("results bundle: duplicate (arch, attention) rows")
        self.rows.sort(key=_row_order)

    def row(self, arch: str, attention: str) -> ResultRow | None:
        for r in self.rows:
            if r.key == (arch, attention):
                return r
        return None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.to_dict() for r in self.rows], columns=RESULT_COLUMNS)

    def to_dict(self) -> dict:
        return {"columns": RESULT_COLUMNS, "rows": [r.to_dict() for r in self.rows]}

    @classmethod
    def from_dict(cls, d: dict) -> "ResultsBundle":
        return cls(rows=[ResultRow(**r) for r in d.get("rows", [])])


def _row_order(r: ResultRow) -> tuple[int, int]:
    return ARCH_ORDER.index(r.arch), ATTN_ORDER.index(r.attention)


def load_bundle_json(path: str) -> ResultsBundle:
    with open(path, encoding="utf-8") as f:
        return ResultsBundle.from_dict(json.load(f))


class BundleBuilder:
    """Merges metrics from several sources; a field set twice to different
    values is a conflict naming both sources."""

    def __init__(self):
        self._rows: dict[tuple[str, str], dict] = {}
        self._origin: dict[tuple[str, str, str], str] = {}

    def _set(self, arch: str, attention: str, fname: str, value, source: str) -> None:
        if value is None:
            return
        row = self._rows.setdefault((arch, attention), {"arch": arch, "attention": attention})
        okey = (arch, attention, fname)
        if row.get(fname) is not None and not _same(row[fname], value):
            raise ValueError(
                f"conflicting {fname} for {arch}/{attention}: {row[fname]!r} from {self._origin[okey]} "
                f"vs {value!r} from {source}"
            )
        if row.get(fname) is None:
            row[fname] = value
            self._origin[okey] = source

    def add_profile(self, report: ProfileReport, source: str = "profile") -> "BundleBuilder":
        for fname, value in (("params", report.total_params), ("flops", report.total_flops),
                             ("params_m", report.params_m), ("flops_m", report.flops_m)):
            self._set(report.arch, report.attention, fname, value, source)
        return self

    def add_train_log(self, train_log: TrainLog, source: str = "train log") -> "BundleBuilder":
        model = train_log.config.get("model")
        if not model:
            raise ValueError(f"{source}: train log does not record its model configuration")
        acc = train_log.final_test_acc
        self.add_accuracy(model["arch"], model["attention"]["kind"], None if acc is None else acc * 100.0, source)
        return self

    def add_accuracy(self, arch: str, attention: str, accuracy_pct: float | None, source: str = "accuracy") -> "BundleBuilder":
        self._rows.setdefault((arch, attention), {"arch": arch, "attention": attention})
        self._set(arch, attention, "accuracy", None if accuracy_pct is None else round(float(accuracy_pct), 2), source)
        return self

    def add_bench(self, report: BenchReport, source: str = "bench") -> "BundleBuilder":
        self._set(report.arch, report.attention, "latency_ms", report.latency_ms.mean, source)
        self._set(report.arch, report.attention, "throughput_ips", report.throughput_ips, source)
        return self

    def add_bundle(self, bundle: ResultsBundle, source: str = "bundle") -> "BundleBuilder":
        for r in bundle.rows:
            self._rows.setdefault(r.key, {"arch": r.arch, "attention": r.attention})
            for fname, value in r.to_dict().items():
                if fname not in ("arch", "attention"):
                    self._set(r.arch, r.attention, fname, value, source)
        return self

    def build(self) -> ResultsBundle:
        return ResultsBundle(rows=[ResultRow(**d) for d in self._rows.values()])


def _same(a, b) -> bool:
    if isinstance(a, float) or isinstance(b, float):
        return math.isclose(float(a), float(b), rel_tol=1e-9, abs_tol=1e-12)
    return a == b


def build_bundle(
    profiles: Iterable[ProfileReport] = (),
    train_logs: Iterable[TrainLog] = (),
    bench_reports: Iterable[BenchReport] = (),
    accuracies: dict[tuple[str, str], float] | None = None,
) -> ResultsBundle:
    b = BundleBuilder()
    for i, p in enumerate(profiles):
        b.add_profile(p, f"profile[{i}]")
    for i, t in enumerate(train_logs):
        b.add_train_log(t, f"train_log[{i}]")
    for i, r in enumerate(bench_reports):
        b.add_bench(r, f"bench[{i}]")
    for (arch, attn), acc in (accuracies or {}).items():
        b.add_accuracy(arch, attn, acc, f"accuracies[{arch}/{attn}]")
    return b.build()


# ============================================================
# Emission
# ============================================================
def _write_json(path: str, payload: dict) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _to_csv(df: pd.DataFrame, path: str) -> str:
    df.to_csv(path, index=False, lineterminator="\n")
    return path


def figure_frame(bundle: ResultsBundle, fname: str) -> pd.DataFrame:
    metrics = [c for c in FIGURES[fname] if c not in ("arch", "attention")]
    df = bundle.to_frame()
    keep = df[["arch", "attention", *metrics]].dropna()
    skipped = df.loc[~df.index.isin(keep.index), ["arch", "attention"]]
    if len(skipped):
        log.warning("%s: skipping %s (missing %s)", fname,
                    ", ".join(f"{a}/{t}" for a, t in skipped.itertuples(index=False)), " or ".join(metrics))
    return keep.reset_index(drop=True)


def table1_frame(bundle: ResultsBundle) -> pd.DataFrame:
    """Top-1 accuracy (%) per model; attention variants as columns."""
    out = []
    for arch in ARCH_ORDER:
        rows = [r for r in bundle.rows if r.arch == arch]
        if not rows:
            continue
        line = {"Model": ARCH_LABELS[arch]}
        for attn in ATTN_ORDER:
            r = bundle.row(arch, attn)
            line[AttentionSpec.LABELS[attn]] = r.accuracy if r is not None else None
        out.append(line)
    return pd.DataFrame(out, columns=TABLE1_COLUMNS)


def table2_frame(bundle: ResultsBundle) -> pd.DataFrame:
    out = [{
        "Model": ARCH_LABELS[r.arch],
        "Attn": AttentionSpec.LABELS[r.attention],
        "Params (M)": r.params_m,
        "FLOPs (M)": r.flops_m,
        "Lat. (ms)": None if r.latency_ms is None else round(r.latency_ms, 2),
    } for r in bundle.rows]
    return pd.DataFrame(out, columns=TABLE2_COLUMNS)


def _write_xlsx(bundle: ResultsBundle, path: str) -> str:
    sheets = {
        "Results": bundle.to_frame(),
        "Accuracy": table1_frame(bundle),
        "Efficiency": table2_frame(bundle),
    }
    with pd.ExcelWriter(path, engine="openpyxl") as xw:
        for name, df in sheets.items():
            df.to_excel(xw, index=False, sheet_name=name)
            ws = xw.sheets[name]
            ws.freeze_panes = "A2"
            for ix in range(1, len(df.columns) + 1):
                ws.column_dimensions[get_column_letter(ix)].width = 16
                cell = ws.cell(row=1, column=ix)
                cell.fill = HEADER_FILL
                cell.font = Font(bold=True)
    return path


def emit_results(bundle: ResultsBundle, out_dir: str, formats: Iterable[str] = ("csv", "json"), xlsx: bool = False) -> list[str]:
    """Write the bundle, both tables and the five figure series under
    ``out_dir``. Returns the written paths in a stable order."""
    formats = tuple(formats)
    unknown = [f for f in formats if f not in ("csv", "json")]
    if unknown:
        raise ValueError(f"unknown result format(s) {unknown}, expected csv and/or json")
    try:
        os.makedirs(out_dir, exist_ok=True)
        if not os.access(out_dir, os.W_OK):
            raise PermissionError(f"{out_dir} is not writable")
        written = []
        if "csv" in formats:
            written.append(_to_csv(bundle.to_frame(), os.path.join(out_dir, "results.csv")))
        if "json" in formats:
            path = os.path.join(out_dir, "results.json")
            _write_json(path, bundle.to_dict())
            written.append(path)
        written.append(_to_csv(table1_frame(bundle), os.path.join(out_dir, "table1_accuracy.csv")))
        written.append(_to_csv(table2_frame(bundle), os.path.join(out_dir, "table2_efficiency.csv")))
        for fname in FIGURES:
            written.append(_to_csv(figure_frame(bundle, fname), os.path.join(out_dir, fname)))
        if xlsx:
            written.append(_write_xlsx(bundle, os.path.join(out_dir, "results.xlsx")))
    except OSError as e:
        raise ValueError(f"cannot write results under {out_dir}: {e}") from e
    log.info("wrote %d result files for %d configurations to %s", len(written), len(bundle.rows), out_dir)
    return written
