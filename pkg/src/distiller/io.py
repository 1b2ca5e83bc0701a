"""File helpers: atomic writes, JSON-lines, key = value configs, manifests."""
from __future__ import annotations

import hashlib
import json
import os
import platform
import tempfile
from pathlib import Path
from typing import Iterable


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_jsonl(rows: Iterable[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)


def write_jsonl(path, rows: Iterable[dict]) -> None:
    atomic_write_text(path, dumps_jsonl(rows))


def read_jsonl(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


class ConfigError(ValueError):
    """Invalid configuration; raised before any work starts."""


def parse_kv(text: str) -> dict[str, str]:
    """Parse flat ``key = value`` lines. ``#`` starts a comment; blank lines are skipped."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = val
    return out


def read_kv(path) -> dict[str, str]:
    try:
        return parse_kv(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def config_hash(kv: dict[str, str]) -> str:
    canon = "\n".join(f"{k}={kv[k]}" for k in sorted(kv))
    return hashlib.sha256(canon.encode()).hexdigest()


def write_manifest(out_dir, command: str, kv: dict[str, str], seed: int | None) -> None:
    import numpy

    from . import __version__

    doc = {
        "command": command,
        "config_hash": config_hash(kv),
        "config": dict(sorted(kv.items())),
        "seed": seed,
        "versions": {
            "distiller": __version__,
            "numpy": numpy.__version__,
            "python": platform.python_version(),
        },
    }
    atomic_write_text(Path(out_dir) / "manifest.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
