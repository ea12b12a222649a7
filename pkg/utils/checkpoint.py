# utils/checkpoint.py
"""
Binary checkpoint container.

    magic    8 bytes   b"CATTNCKP"
    version  uint16    little-endian
    hlen     uint32    little-endian, length of the JSON header
    header   hlen      UTF-8 JSON: config echo, seed, entries[name, shape, offset, nbytes]
    blobs    ...       parameters and BN buffers, little-endian IEEE-754 float64,
                       offsets relative to the end of the header
"""
from __future__ import annotations

import json
import os
import struct

import numpy as np

from models import ModelConfig, ModelGraph, build_model
from utils.errors import CheckpointError

MAGIC = b"CATTNCKP"
FORMAT_VERSION = 1
BLOB_DTYPE = np.dtype("<f8")
_PREFIX = struct.Struct("<HI")


def save_checkpoint(graph: ModelGraph, path: str, seed: int | None = None, extra: dict | None = None) -> str:
    entries, blobs, offset = [], [], 0
    for name, arr in graph.state_dict().items():
        raw = np.ascontiguousarray(arr, dtype=BLOB_DTYPE).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)

    header = {
        "format_version": FORMAT_VERSION,
        "config": graph.config.to_dict(),
        "seed": seed,
        "dtype": BLOB_DTYPE.str,
        "entries": entries,
        "extra": extra or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")

    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(_PREFIX.pack(FORMAT_VERSION, len(hbytes)))
        f.write(hbytes)
        for raw in blobs:
            f.write(raw)
    os.replace(tmp, path)
    return path


def read_header(path: str) -> tuple[dict, int]:
    """Returns (header, byte offset where the blobs start)."""
    try:
        with open(path, "rb") as f:
            head = f.read(len(MAGIC) + _PREFIX.size)
            if len(head) < len(MAGIC) + _PREFIX.size or head[:len(MAGIC)] != MAGIC:
                raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
            version, hlen = _PREFIX.unpack(head[len(MAGIC):])
            if version != FORMAT_VERSION:
                raise CheckpointError(f"{path}: unsupported format version {version}")
            hbytes = f.read(hlen)
    except OSError as e:
        raise CheckpointError(f"{path}: cannot read checkpoint ({e})") from e
    if len(hbytes) != hlen:
        raise CheckpointError(f"{path}: header truncated ({len(hbytes)} of {hlen} bytes)")
    try:
        header = json.loads(hbytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: header is not valid JSON ({e})") from e
    for key in ("config", "entries"):
        if key not in header:
            raise CheckpointError(f"{path}: header misses '{key}'")
    return header, len(MAGIC) + _PREFIX.size + hlen


def load_checkpoint(path: str, dtype: str | None = None) -> tuple[ModelGraph, dict]:
    header, start = read_header(path)
    try:
        cfg = ModelConfig.from_dict(header["config"])
    except (TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: config echo rejected ({e})") from e
    graph = build_model(cfg, dtype=dtype) if dtype else build_model(cfg)

    with open(path, "rb") as f:
        f.seek(start)
        payload = f.read()

    own = graph.state_dict()
    seen = set()
    for e in header["entries"]:
        name, shape = e["name"], tuple(e["shape"])
        if name not in own:
            raise CheckpointError(f"{path}: unexpected tensor '{name}'")
        if own[name].shape != shape:
            raise CheckpointError(f"{path}: '{name}' has shape {shape}, graph expects {own[name].shape}")
        end = e["offset"] + e["nbytes"]
        if e["nbytes"] != int(np.prod(shape)) * BLOB_DTYPE.itemsize or end > len(payload):
            raise CheckpointError(f"{path}: blob for '{name}' truncated or mis-sized")
        own[name][...] = np.frombuffer(payload, dtype=BLOB_DTYPE, count=int(np.prod(shape)), offset=e["offset"]).reshape(shape)
        seen.add(name)

    missing = sorted(set(own) - seen)
    if missing:
        raise CheckpointError(f"{path}: missing tensors {missing[:5]}")
    return graph, header
