# commands/reproduce.py
"""All eight (backbone x attention) configurations: profile, optionally
train, bench, then one report. A single manifest covers every output."""
import logging
import os

from commands.bench import BENCH_KEYS, bench_one, check_protocol
from commands.common import ARCH_CHOICES, ATTN_CHOICES, add_common_args, model_config, resolved, stem
from commands.profile import profile_one, write_profile
from commands.report import report_into
from commands.train import TRAIN_KEYS, load_data, train_config, train_one
from config import Config
from data import RECORDS_PER_FILE, dataset_checksum, split_files
from models import build_model
from profiler import table2_row
from utils.manifest import RunManifest

log = logging.getLogger(__name__)


def run(args) -> int:
    b = resolved(args, BENCH_KEYS)
    check_protocol(b)
    t = resolved(args, TRAIN_KEYS)
    tcfg = train_config(t) if args.train else None
    configs = [model_config(args, arch, attn) for arch in ARCH_CHOICES for attn in ATTN_CHOICES]

    run_cfg = {"models": [c.to_dict() for c in configs], "bench": None if args.skip_bench else b,
               "train": tcfg.to_dict() if tcfg else None}
    if tcfg:
        run_cfg["data_dir"] = t["data_dir"]
        run_cfg["records_per_file"] = t["records_per_file"]
    manifest = RunManifest(command="reproduce-all", config=run_cfg, out_dir=args.out)

    data = None
    if tcfg:
        data = load_data(t["data_dir"], tcfg, records_per_file=t["records_per_file"])
        for split in ("train", "test"):
            manifest.add_input(f"{t['data_dir']}/{split}:{'+'.join(split_files(split))}",
                               dataset_checksum(t["data_dir"], split))

    dirs = {k: os.path.join(args.out, k) for k in ("profile", "train", "bench", "report")}
    for k, d in dirs.items():
        if (k == "train" and not tcfg) or (k == "bench" and args.skip_bench):
            continue
        os.makedirs(d, exist_ok=True)

    inputs = []
    for cfg in configs:
        name = stem(cfg)
        log.info("configuration %s", name)
        report, delta = profile_one(cfg)
        inputs.append(write_profile(report, dirs["profile"], manifest, name)[0])
        print(table2_row(report, delta))

        graph = None
        if tcfg:
            graph, _ = train_one(cfg, tcfg, data, dirs["train"], manifest)
            inputs.append(os.path.join(dirs["train"], f"trainlog_{name}.json"))
        if not args.skip_bench:
            graph = graph or build_model(cfg, seed=b["seed"])
            bench_one(graph, b, dirs["bench"], manifest, name)
            inputs.append(os.path.join(dirs["bench"], f"bench_{name}.json"))

    # report inputs are this run's own outputs, not external inputs
    sub = RunManifest(command="report", config={}, out_dir=args.out)
    report_into(inputs, dirs["report"], sub, xlsx=args.xlsx)
    for p in sub.outputs:
        manifest.add_output(os.path.join(args.out, p))
    manifest.write()
    print(f"{len(configs)} configurations -> {args.out}")
    return 0


def register(subparsers) -> None:
    p = subparsers.add_parser("reproduce-all", help="profile, bench and report all eight configurations")
    p.add_argument("--train", action="store_true", help="also train every configuration (needs --data-dir)")
    p.add_argument("--skip-bench", action="store_true", help="profile and report only")
    p.add_argument("--xlsx", action="store_true", help="also write report/results.xlsx")
    g = p.add_argument_group("model")
    g.add_argument("--groups", type=int, help=f"LCA segment count g (default {Config.LCA_GROUPS})")
    g.add_argument("--reduction", type=int, help=f"SE reduction ratio r (default {Config.SE_REDUCTION})")
    g = p.add_argument_group("recipe (with --train)")
    g.add_argument("--data-dir", help=f"CIFAR-10 binary batches; falls back to $CATTN_DATA_DIR (default {Config.DATA_DIR})")
    g.add_argument("--epochs", type=int, help=f"(default {Config.EPOCHS})")
    g.add_argument("--lr", type=float, help=f"(default {Config.BASE_LR})")
    g.add_argument("--momentum", type=float, help=f"(default {Config.MOMENTUM})")
    g.add_argument("--weight-decay", type=float, help=f"(default {Config.WEIGHT_DECAY})")
    g.add_argument("--batch-size", type=int, help=f"(default {Config.BATCH_SIZE})")
    g.add_argument("--seed", type=int, help=f"(default {Config.SEED})")
    g.add_argument("--subset", type=int, help="train on N images (default: all)")
    g.add_argument("--test-subset", type=int, help="evaluate on N images (default: all)")
    g.add_argument("--records-per-file", type=int,
                   help=f"records expected in each batch file, 0 for any (default {RECORDS_PER_FILE})")
    g = p.add_argument_group("protocol")
    g.add_argument("--batch", type=int, help=f"latency batch size (default {Config.BENCH_BATCH})")
    g.add_argument("--iters", type=int, help=f"timed forward passes (default {Config.BENCH_ITERS})")
    g.add_argument("--warmup", type=int, help=f"untimed warmup passes (default {Config.BENCH_WARMUP})")
    g.add_argument("--throughput-batch", type=int, help="also measure throughput at this batch size (default 0, off)")
    g.add_argument("--throughput-budget", type=float, help=f"(default {Config.THROUGHPUT_BUDGET_S})")
    add_common_args(p, "reproduce")
    p.set_defaults(func=run)
