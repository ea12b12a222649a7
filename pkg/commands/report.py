# commands/report.py
import json
import logging

from bench import BenchReport, BundleBuilder, ResultsBundle, emit_results
from commands.common import add_common_args
from profiler import ProfileReport
from trainer import TrainLog
from utils.errors import UsageError
from utils.manifest import RunManifest

log = logging.getLogger(__name__)


def load_any(path: str):
    """Profile report, bench report, train log or results bundle, by shape."""
    try:
        with open(path, encoding="utf-8") as f:
            d = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ValueError(f"cannot read report input {path}: {e}") from e
    if not isinstance(d, dict):
        raise ValueError(f"{path}: not a report")
    if "per_node" in d:
        return ProfileReport.from_dict(d)
    if "timed_iters" in d:
        return BenchReport.from_dict(d)
    if "records" in d:
        return TrainLog.from_dict(d)
    if "rows" in d:
        return ResultsBundle.from_dict(d)
    raise ValueError(f"{path}: unrecognised report (expected a profile, bench, train log or results file)")


def merge_inputs(paths: list[str]) -> ResultsBundle:
    b = BundleBuilder()
    for path in paths:
        obj = load_any(path)
        if isinstance(obj, ProfileReport):
            b.add_profile(obj, path)
        elif isinstance(obj, BenchReport):
            b.add_bench(obj, path)
        elif isinstance(obj, TrainLog):
            b.add_train_log(obj, path)
        else:
            b.add_bundle(obj, path)
    return b.build()


def report_into(paths: list[str], out_dir: str, manifest: RunManifest, formats=("csv", "json"), xlsx=False) -> ResultsBundle:
    bundle = merge_inputs(paths)
    log.info("merged %d input(s) into %d configuration(s)", len(paths), len(bundle.rows))
    for p in paths:
        manifest.add_input(p)
    for p in emit_results(bundle, out_dir, formats, xlsx):
        manifest.add_output(p)
    return bundle


def run(args) -> int:
    if not args.inputs:
        raise UsageError("report needs at least one input file")
    formats = tuple(args.format or ("csv", "json"))
    manifest = RunManifest(command="report", config={"formats": list(formats), "xlsx": args.xlsx}, out_dir=args.out)
    bundle = report_into(args.inputs, args.out, manifest, formats, args.xlsx)
    manifest.write()
    print(f"{len(bundle.rows)} configurations -> {args.out}")
    return 0


def register(subparsers) -> None:
    p = subparsers.add_parser("report", help="merge profile/bench/train outputs into tables and figure series")
    p.add_argument("inputs", nargs="+", help="profile_*.json, bench_*.json, trainlog_*.json or results.json files")
    p.add_argument("--format", action="append", choices=["csv", "json"],
                   help="bundle format(s); repeatable (default csv and json)")
    p.add_argument("--xlsx", action="store_true", help="also write results.xlsx")
    add_common_args(p, "report")
    p.set_defaults(func=run)
