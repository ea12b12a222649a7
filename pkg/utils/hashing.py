# utils/hashing.py
import hashlib
from typing import Iterable


def files_sha256(fpaths: Iterable[str]) -> str:
    """One digest over several files, in the order given."""
    h = hashlib.sha256()
    for fpath in fpaths:
        with open(fpath, "rb") as f:
            for chunk in iter(lambda: f.read(1024 * 1024), b""):
                h.update(chunk)
    return h.hexdigest()


def file_sha256(fpath: str) -> str:
    return files_sha256([fpath])
