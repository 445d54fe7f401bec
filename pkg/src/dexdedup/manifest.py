"""Run manifests: what was run, on which inputs, with which seeds."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable

from . import __version__


def file_digest(path: Path) -> str:
    h = hashlib.blake2b(digest_size=8)
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def input_digests(paths: Iterable[Path]) -> dict[str, str]:
    """64-bit content digest of every file under the given inputs, keyed by path."""
    out: dict[str, str] = {}
    for p in map(Path, paths):
        if p.is_dir():
            for f in sorted(x for x in p.rglob("*") if x.is_file()):
                out[f.as_posix()] = file_digest(f)
        elif p.is_file():
            out[p.as_posix()] = file_digest(p)
    return out


@dataclass
class RunManifest:
    subcommand: str
    flags: dict
    inputs: dict[str, str]
    seeds: list[int] = field(default_factory=list)
    tool_version: str = __version__
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))

    def to_json(self) -> dict:
        return asdict(self)

    def content_digest(self) -> str:
        """Digest of everything except the timestamp."""
        body = {k: v for k, v in self.to_json().items() if k != "timestamp"}
        return hashlib.blake2b(json.dumps(body, sort_keys=True).encode(), digest_size=8).hexdigest()

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    def write(self, path: Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")
