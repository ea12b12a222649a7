# commands/profile.py
import logging
import os
from dataclasses import replace

from commands.common import add_common_args, add_model_args, model_config, stem
from layers.attention import AttentionSpec
from models import build_model
from profiler import diff_reports, profile_graph, table2_row
from utils.manifest import RunManifest

log = logging.getLogger(__name__)

TABLE2_HEADER = f"{'Model':<12} {'Attn':<5} {'Params':>7} {'FLOPs':>8} {'Lat.':>6}"


def profile_one(cfg):
    """(report, delta vs the attention-free baseline or None)."""
    report = profile_graph(build_model(cfg))
    if not cfg.attention.enabled:
        return report, None
    base_cfg = replace(cfg, attention=AttentionSpec("none"))
    return report, diff_reports(profile_graph(build_model(base_cfg)), report)


def write_profile(report, out_dir: str, manifest: RunManifest, name: str) -> list[str]:
    paths = [
        report.to_json(os.path.join(out_dir, f"profile_{name}.json")),
        report.to_csv(os.path.join(out_dir, f"profile_{name}.csv")),
    ]
    for p in paths:
        manifest.add_output(p)
    return paths


def run(args) -> int:
    cfg = model_config(args)
    report, delta = profile_one(cfg)

    manifest = RunManifest(command="profile", config={"model": cfg.to_dict()}, out_dir=args.out)
    os.makedirs(args.out, exist_ok=True)
    paths = write_profile(report, args.out, manifest, stem(cfg))
    log.info("wrote %s", ", ".join(paths))
    manifest.write()

    print(TABLE2_HEADER)
    print(table2_row(report, delta))
    ref = report.reference()
    if ref is not None:
        print(f"reference: {ref['params_m']:.2f}M params, {ref['flops_m']:.2f}M FLOPs "
              f"(FLOPs residual {ref['flops_residual_pct']:+.3f}%)")
    return 0


def register(subparsers) -> None:
    p = subparsers.add_parser("profile", help="count parameters and FLOPs of one configuration")
    add_model_args(p)
    add_common_args(p, "profile")
    p.set_defaults(func=run)
