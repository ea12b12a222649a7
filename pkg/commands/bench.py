# commands/bench.py
import logging
import os

from bench import measure_latency, measure_throughput
from commands.common import add_common_args, add_model_args, model_config, resolved, stem
from config import Config
from models import build_model
from utils.checkpoint import load_checkpoint
from utils.errors import UsageError
from utils.manifest import RunManifest

log = logging.getLogger(__name__)

BENCH_KEYS = ("batch", "iters", "warmup", "seed", "throughput_batch", "throughput_budget")


def check_protocol(r: dict) -> None:
    if r["iters"] < 2:
        raise UsageError(f"--iters must be >= 2 (std is undefined otherwise), got {r['iters']}")
    if r["warmup"] < 0 or r["batch"] < 1:
        raise UsageError("--warmup must be >= 0 and --batch >= 1")


def bench_one(graph, r: dict, out_dir: str, manifest: RunManifest, name: str):
    report = measure_latency(graph, batch_size=r["batch"], warmup=r["warmup"], iters=r["iters"], seed=r["seed"])
    if r["throughput_batch"]:
        report.steady_throughput_ips = measure_throughput(graph, r["throughput_batch"], r["throughput_budget"], seed=r["seed"])
        report.throughput_batch = r["throughput_batch"]
    path = report.to_json(os.path.join(out_dir, f"bench_{name}.json"))
    manifest.add_output(path)
    return report


def run(args) -> int:
    r = resolved(args, BENCH_KEYS)
    check_protocol(r)
    manifest_cfg = {"bench": r}
    if args.checkpoint:
        graph, header = load_checkpoint(args.checkpoint)
        manifest_cfg["model"] = header["config"]
    else:
        cfg = model_config(args)
        graph = build_model(cfg, seed=r["seed"])
        manifest_cfg["model"] = cfg.to_dict()
        log.info("no checkpoint given; benchmarking a randomly initialized %s/%s", cfg.arch, cfg.attention.kind)

    manifest = RunManifest(command="bench", config=manifest_cfg, out_dir=args.out)
    if args.checkpoint:
        manifest.add_input(args.checkpoint)
    os.makedirs(args.out, exist_ok=True)
    report = bench_one(graph, r, args.out, manifest, stem(graph.config))
    manifest.write()

    s = report.latency_ms
    print(f"{report.arch}/{report.attention}: mean {s.mean:.3f} ms (std {s.std:.3f}, p50 {s.p50:.3f}, "
          f"p95 {s.p95:.3f}), {report.throughput_ips:.1f} images/s")
    if report.steady_throughput_ips is not None:
        print(f"steady-state throughput at batch {report.throughput_batch}: {report.steady_throughput_ips:.1f} images/s")
    return 0


def register(subparsers) -> None:
    p = subparsers.add_parser("bench", help="measure inference latency of a checkpoint or a fresh configuration")
    p.add_argument("--checkpoint", help="checkpoint to load; without it --arch/--attn are built at random init")
    add_model_args(p)
    g = p.add_argument_group("protocol")
    g.add_argument("--batch", type=int, help=f"latency batch size (default {Config.BENCH_BATCH})")
    g.add_argument("--iters", type=int, help=f"timed forward passes, >= 2 (default {Config.BENCH_ITERS})")
    g.add_argument("--warmup", type=int, help=f"untimed warmup passes (default {Config.BENCH_WARMUP})")
    g.add_argument("--seed", type=int, help=f"seed for weights and the fixed input (default {Config.SEED})")
    g.add_argument("--throughput-batch", type=int,
                   help="also measure steady-state throughput at this batch size (default 0, off)")
    g.add_argument("--throughput-budget", type=float,
                   help=f"seconds of throughput measurement (default {Config.THROUGHPUT_BUDGET_S})")
    add_common_args(p, "bench")
    p.set_defaults(func=run)
