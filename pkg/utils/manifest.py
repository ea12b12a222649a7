# utils/manifest.py
import json
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

from config import VERSION
from utils.hashing import file_sha256

MANIFEST_FILE = "manifest.json"


@dataclass
class RunManifest:
    command:   str
    config:    dict
    out_dir:   str
    inputs:    dict[str, str] = field(default_factory=dict)    # path -> sha256
    outputs:   list[str] = field(default_factory=list)         # relative to out_dir
    version:   str = VERSION
    timestamp: str = ""

    def add_input(self, path: str, digest: str | None = None) -> None:
        self.inputs[path] = digest or file_sha256(path)

    def add_output(self, path: str) -> None:
        rel = os.path.relpath(os.path.abspath(path), os.path.abspath(self.out_dir)).replace(os.sep, "/")
        if rel in self.outputs:
            raise ValueError(f"manifest: output '{rel}' declared twice")
        self.outputs.append(rel)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("out_dir")
        d["outputs"] = sorted(self.outputs)
        return d

    def write(self) -> str:
        verify_outputs(self.out_dir, self.outputs)
        self.timestamp = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        path = os.path.join(self.out_dir, MANIFEST_FILE)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
        return path


def verify_outputs(out_dir: str, outputs: list[str]) -> None:
    """Every declared output exists, is non-empty and, for JSON, parses."""
    for rel in outputs:
        path = os.path.join(out_dir, rel)
        if not os.path.isfile(path) or os.path.getsize(path) == 0:
            raise ValueError(f"declared output missing or empty: {path}")
        if path.endswith(".json"):
            with open(path, encoding="utf-8") as f:
                try:
                    json.load(f)
                except json.JSONDecodeError as e:
                    raise ValueError(f"declared output is not valid JSON: {path} ({e})") from e


def load_manifest(path: str) -> dict:
    with open(path, encoding="utf-8") as f:
        return json.load(f)
