# commands/common.py
"""Flag helpers shared by the subcommands.

Overridable flags default to ``None``; ``resolve`` then applies
flags > --config file > Config defaults.
"""
import argparse
import json
import os

from config import OUTPUT_DIR, Config
from data import RECORDS_PER_FILE
from layers.attention import AttentionSpec
from models import STRIDE_PLANS, ModelConfig
from utils.errors import UsageError

ARCH_CHOICES = list(ModelConfig.ARCHS)
ATTN_CHOICES = list(AttentionSpec.KINDS)

# keys a --config file may set, with their built-in defaults
FILE_KEYS = {
    "arch": "resnet18",
    "attn": "none",
    "groups": Config.LCA_GROUPS,
    "reduction": Config.SE_REDUCTION,
    "per_group_filters": False,
    "stride_plan": "cifar",
    "data_dir": Config.DATA_DIR,
    "epochs": Config.EPOCHS,
    "lr": Config.BASE_LR,
    "momentum": Config.MOMENTUM,
    "weight_decay": Config.WEIGHT_DECAY,
    "batch_size": Config.BATCH_SIZE,
    "seed": Config.SEED,
    "subset": None,
    "test_subset": None,
    "records_per_file": RECORDS_PER_FILE,
    "batch": Config.BENCH_BATCH,
    "iters": Config.BENCH_ITERS,
    "warmup": Config.BENCH_WARMUP,
    "throughput_batch": 0,
    "throughput_budget": Config.THROUGHPUT_BUDGET_S,
}


def lower(s: str) -> str:
    return s.strip().lower()


def load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as f:
            d = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read --config {path}: {e}") from e
    if not isinstance(d, dict):
        raise UsageError(f"--config {path}: expected a JSON object")
    unknown = sorted(set(d) - set(FILE_KEYS))
    if unknown:
        raise UsageError(f"--config {path}: unknown keys {unknown}; valid keys are {sorted(FILE_KEYS)}")
    return d


def resolve(args: argparse.Namespace, key: str):
    value = getattr(args, key, None)
    if value is not None:
        return value
    file_cfg = getattr(args, "file_config", None) or {}
    if key in file_cfg:
        return file_cfg[key]
    if key == "data_dir":
        return os.getenv("CATTN_DATA_DIR") or Config.DATA_DIR
    return FILE_KEYS[key]


def resolved(args: argparse.Namespace, keys) -> dict:
    return {k: resolve(args, k) for k in keys}


def add_model_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--arch", type=lower, choices=ARCH_CHOICES, help="backbone (default resnet18)")
    g.add_argument("--attn", type=lower, choices=ATTN_CHOICES, help="channel attention (default none)")
    g.add_argument("--groups", type=int, help=f"LCA segment count g (default {Config.LCA_GROUPS})")
    g.add_argument("--reduction", type=int, help=f"SE reduction ratio r (default {Config.SE_REDUCTION})")
    g.add_argument("--per-group-filters", action="store_const", const=True,
                   help="LCA variant with one filter per segment (default off)")
    g.add_argument("--stride-plan", choices=sorted(STRIDE_PLANS), help="MobileNetV2 stride plan (default cifar)")


def add_common_args(p: argparse.ArgumentParser, out_name: str) -> None:
    p.add_argument("--config", help="JSON file of flag values; flags override it")
    p.add_argument("--out", default=os.path.join(OUTPUT_DIR, out_name),
                   help=f"output directory; manifest.json is written at its root (default {OUTPUT_DIR}/{out_name})")


def model_config(args: argparse.Namespace, arch: str | None = None, attn: str | None = None) -> ModelConfig:
    r = resolved(args, ("arch", "attn", "groups", "reduction", "per_group_filters", "stride_plan"))
    arch = arch or r["arch"]
    attn = attn or r["attn"]
    if arch not in ARCH_CHOICES:
        raise UsageError(f"unknown arch '{arch}', expected one of {ARCH_CHOICES}")
    if attn not in ATTN_CHOICES:
        raise UsageError(f"unknown attention '{attn}', expected one of {ATTN_CHOICES}")
    try:
        spec = AttentionSpec(
            kind=attn,
            reduction_r=r["reduction"],
            gamma=Config.ECA_GAMMA,
            b_offset=Config.ECA_B,
            groups_g=r["groups"],
            per_group_filters=bool(r["per_group_filters"]),
        )
        return ModelConfig(arch=arch, attention=spec, stride_plan=r["stride_plan"])
    except ValueError as e:
        raise UsageError(str(e)) from e


def stem(cfg: ModelConfig) -> str:
    return f"{cfg.arch}_{cfg.attention.kind}"
