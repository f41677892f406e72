"""Bundle writers and console tables shared by the CLI commands."""

import logging
import os
import tempfile
from importlib import metadata
from typing import Dict, Iterable, List, Optional, Sequence

import orjson
import pandas as pd

from cffe import __version__
from cffe.errors import IoFailure

log = logging.getLogger(__name__)

TRACKED_PACKAGES = ("numpy", "pandas", "scipy", "joblib", "pydantic", "orjson", "python-dotenv")


def fmt_pp(x, digits=3):
    if x is None or x != x:
        return "n/a"
    return f"{float(x):+.{digits}f}"


def fmt_pct(x):
    if x is None or x != x:
        return "n/a"
    return f"{float(x):+.2f}%"


def atomic_write(path: str, data: bytes) -> None:
    """Write to a temp file in the target directory, then rename over the target."""
    directory = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def csv_bytes(rows: Sequence[dict], columns: Optional[Sequence[str]] = None) -> bytes:
    frame = pd.DataFrame(list(rows), columns=list(columns) if columns else None)
    return frame.to_csv(index=False, lineterminator="\n").encode("utf-8")


def json_bytes(doc) -> bytes:
    return orjson.dumps(doc, option=orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY)


def package_versions() -> Dict[str, str]:
    out = {"cffe": __version__}
    for name in TRACKED_PACKAGES:
        try:
            out[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            out[name] = "missing"
    return out


class Bundle:
    """Output directory plus the manifest describing what went into it."""

    def __init__(self, out_dir: str, command: str, seed: int, config: dict):
        self.out_dir = out_dir
        self.command = command
        self.seed = seed
        self.config = config
        self.seeds: Dict[str, int] = {}
        self.files: List[str] = []
        self.skipped: Dict[str, str] = {}

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def write_bytes(self, name: str, data: bytes) -> str:
        path = self.path(name)
        atomic_write(path, data)
        self.files.append(name)
        log.info(f"wrote {path}")
        return path

    def write_csv(self, name: str, rows: Sequence[dict], columns: Optional[Sequence[str]] = None) -> str:
        return self.write_bytes(name, csv_bytes(rows, columns))

    def write_json(self, name: str, doc) -> str:
        return self.write_bytes(name, json_bytes(doc))

    def skip(self, name: str, reason: str) -> None:
        self.skipped[name] = reason
        log.warning(f"skipped {name}: {reason}")

    def finalize(self, complete: bool, error: Optional[str] = None) -> str:
        doc = {
            "command": self.command,
            "complete": complete,
            "error": error,
            "seed": self.seed,
            "sub_seeds": self.seeds,
            "config": self.config,
            "files": sorted(self.files),
            "skipped": self.skipped,
            "versions": package_versions(),
        }
        path = self.path("manifest.json")
        atomic_write(path, json_bytes(doc))
        return path


def print_table(title: str, rows: Iterable[dict], columns: Sequence[str], widths: Optional[Dict[str, int]] = None) -> None:
    widths = widths or {}
    print(f"\n=== {title} ===")
    print(" | ".join(f"{c:>{widths.get(c, 9)}}" for c in columns))
    for r in rows:
        cells = []
        for c in columns:
            v = r.get(c)
            w = widths.get(c, 9)
            if isinstance(v, float):
                cells.append(f"{fmt_pp(v):>{w}}")
            else:
                cells.append(f"{'' if v is None else str(v):>{w}}")
        print(" | ".join(cells))
