# commands/train.py
import logging
import os

from commands.common import add_common_args, add_model_args, model_config, resolved, stem
from config import Config
from data import (
    RECORDS_PER_FILE,
    AugmentConfig,
    dataset_checksum,
    load_cifar10_bin,
    norm_stats_for,
    split_files,
    subset,
)
from models import build_model
from trainer import TrainConfig, TrainData, train
from utils.errors import UsageError
from utils.manifest import RunManifest

log = logging.getLogger(__name__)

TRAIN_KEYS = ("data_dir", "epochs", "lr", "momentum", "weight_decay", "batch_size", "seed", "subset", "test_subset",
              "records_per_file")


def train_config(r: dict) -> TrainConfig:
    if r["records_per_file"] < 0:
        raise UsageError(f"--records-per-file must be >= 0, got {r['records_per_file']}")
    try:
        return TrainConfig(
            epochs=r["epochs"],
            base_lr=r["lr"],
            momentum=r["momentum"],
            weight_decay=r["weight_decay"],
            batch_size=r["batch_size"],
            seed=r["seed"],
            subset_size=r["subset"],
            test_subset_size=r["test_subset"],
        )
    except ValueError as e:
        raise UsageError(str(e)) from e


def load_data(data_dir: str, tcfg: TrainConfig, cache_dir: str | None = None,
              records_per_file: int = RECORDS_PER_FILE) -> TrainData:
    """Both splits; ``records_per_file=0`` accepts batch files of any whole record count."""
    rpf = records_per_file or None
    train_set = load_cifar10_bin(data_dir, "train", rpf)
    test_set = load_cifar10_bin(data_dir, "test", rpf)
    # statistics always come from the full training split
    mean, std = norm_stats_for(data_dir, train_set, cache_dir)
    return TrainData(
        train=subset(train_set, tcfg.subset_size, tcfg.seed),
        test=subset(test_set, tcfg.test_subset_size, tcfg.seed),
        augment=AugmentConfig().with_stats(mean, std),
    )


def train_one(cfg, tcfg: TrainConfig, data: TrainData, out_dir: str, manifest: RunManifest):
    graph = build_model(cfg, seed=tcfg.seed)
    name = stem(cfg)
    ckpt = os.path.join(out_dir, f"checkpoint_{name}.ckpt")
    graph, train_log = train(graph, data, tcfg, checkpoint_path=ckpt)
    for p in (ckpt,
              train_log.to_csv(os.path.join(out_dir, f"trainlog_{name}.csv")),
              train_log.to_json(os.path.join(out_dir, f"trainlog_{name}.json"))):
        manifest.add_output(p)
    return graph, train_log


def run(args) -> int:
    cfg = model_config(args)
    r = resolved(args, TRAIN_KEYS)
    tcfg = train_config(r)
    data_dir = r["data_dir"]

    data = load_data(data_dir, tcfg, records_per_file=r["records_per_file"])
    log.info("training %s/%s on %d images, evaluating on %d", cfg.arch, cfg.attention.kind, len(data.train), len(data.test))
    manifest = RunManifest(
        command="train",
        config={"model": cfg.to_dict(), "train": tcfg.to_dict(), "data_dir": data_dir,
                "records_per_file": r["records_per_file"]},
        out_dir=args.out,
    )
    for split in ("train", "test"):
        manifest.add_input(f"{data_dir}/{split}:{'+'.join(split_files(split))}", dataset_checksum(data_dir, split))

    os.makedirs(args.out, exist_ok=True)
    _, train_log = train_one(cfg, tcfg, data, args.out, manifest)
    manifest.write()
    acc = train_log.final_test_acc
    print(f"{cfg.arch}/{cfg.attention.kind}: {len(train_log.records)} epochs, "
          f"final loss {train_log.losses[-1]:.4f}, test acc {'-' if acc is None else f'{acc * 100:.2f}%'}")
    return 0


def register(subparsers) -> None:
    p = subparsers.add_parser("train", help="train one configuration with the SGD + cosine recipe")
    add_model_args(p)
    g = p.add_argument_group("recipe")
    g.add_argument("--data-dir", help="CIFAR-10 binary batches; falls back to $CATTN_DATA_DIR "
                                      f"(default {Config.DATA_DIR})")
    g.add_argument("--epochs", type=int, help=f"(default {Config.EPOCHS})")
    g.add_argument("--lr", type=float, help=f"initial learning rate, cosine annealed (default {Config.BASE_LR})")
    g.add_argument("--momentum", type=float, help=f"(default {Config.MOMENTUM})")
    g.add_argument("--weight-decay", type=float, help=f"(default {Config.WEIGHT_DECAY})")
    g.add_argument("--batch-size", type=int, help=f"(default {Config.BATCH_SIZE})")
    g.add_argument("--seed", type=int, help=f"(default {Config.SEED})")
    g.add_argument("--subset", type=int, help="train on N images of the training split (default: all)")
    g.add_argument("--test-subset", type=int, help="evaluate on N images of the test split (default: all)")
    g.add_argument("--records-per-file", type=int,
                   help=f"records expected in each batch file, 0 for any (default {RECORDS_PER_FILE})")
    add_common_args(p, "train")
    p.set_defaults(func=run)
