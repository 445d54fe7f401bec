"""Turn DEX files, APK containers and smali trees into per-method opcode sequences."""

from __future__ import annotations

import fnmatch
import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .dex import scan_dex
from .errors import (
    BadApk,
    DexDedupError,
    EmptyCorpus,
    MalformedDex,
    MalformedSmali,
    NoDexEntries,
    UnknownMnemonic,
)
from .smali import parse_smali

FORMATS = ("dex", "apk", "smali")


@dataclass(frozen=True)
class OpcodeSequence:
    method_id: str
    opcodes: tuple[int, ...]


@dataclass
class ExtractionReport:
    app_id: str
    method_count: int = 0
    skipped_methods: int = 0
    filtered_methods: int = 0
    parse_warnings: list[str] = field(default_factory=list)


@dataclass
class ExtractedApp:
    app_id: str
    sequences: list[OpcodeSequence]
    report: ExtractionReport
    label: str | None = None

    def to_json(self) -> dict:
        record = {
            "app_id": self.app_id,
            "methods": [{"id": s.method_id, "opcodes": list(s.opcodes)} for s in self.sequences],
        }
        if self.label is not None:
            record["label"] = self.label
        return record


def _apply_min_length(seqs: list[OpcodeSequence], report: ExtractionReport,
                      min_length: int) -> list[OpcodeSequence]:
    kept = [s for s in seqs if len(s.opcodes) >= min_length]
    report.filtered_methods += len(seqs) - len(kept)
    report.method_count = len(kept)
    return kept


def extract_from_dex(data: bytes, app_id: str = "", min_length: int = 1
                     ) -> tuple[list[OpcodeSequence], ExtractionReport]:
    scan = scan_dex(data)
    report = ExtractionReport(app_id, skipped_methods=scan.skipped,
                              parse_warnings=list(scan.warnings))
    seqs = [OpcodeSequence(m.method_id, tuple(m.opcodes)) for m in scan.methods]
    return _apply_min_length(seqs, report, min_length), report


def extract_from_smali(text: str) -> list[OpcodeSequence]:
    cls = parse_smali(text)
    return [OpcodeSequence(m.method_id, tuple(m.opcodes)) for m in cls.methods]


def dex_entries(archive: zipfile.ZipFile) -> list[str]:
    names = [n for n in archive.namelist() if fnmatch.fnmatchcase(n, "classes*.dex") and "/" not in n]
    return sorted(names)


def open_apk(data: bytes) -> zipfile.ZipFile:
    try:
        return zipfile.ZipFile(io.BytesIO(data))
    except zipfile.BadZipFile as exc:
        raise BadApk(f"not a zip archive: {exc}") from exc


def extract_from_apk(data: bytes, app_id: str = "", min_length: int = 1
                     ) -> tuple[list[OpcodeSequence], ExtractionReport]:
    """Concatenate the sequences of every ``classes*.dex`` entry in name order.

    A malformed entry is reported in ``parse_warnings`` and skipped.
    """
    with open_apk(data) as archive:
        names = dex_entries(archive)
        if not names:
            raise NoDexEntries(f"{app_id or 'archive'} has no classes*.dex entries")
        report = ExtractionReport(app_id)
        seqs: list[OpcodeSequence] = []
        for name in names:
            try:
                part, sub = extract_from_dex(archive.read(name), app_id)
            except MalformedDex as exc:
                report.parse_warnings.append(f"{name}: {exc}")
                continue
            seqs.extend(part)
            report.skipped_methods += sub.skipped_methods
            report.parse_warnings.extend(f"{name}: {w}" for w in sub.parse_warnings)
    return _apply_min_length(seqs, report, min_length), report


def extract_from_smali_dir(root: Path, app_id: str = "", min_length: int = 1
                           ) -> tuple[list[OpcodeSequence], ExtractionReport]:
    report = ExtractionReport(app_id or root.name)
    seqs: list[OpcodeSequence] = []
    for path in sorted(root.rglob("*.smali"), key=lambda p: p.relative_to(root).as_posix()):
        try:
            seqs.extend(extract_from_smali(path.read_text(encoding="utf-8", errors="replace")))
        except (MalformedSmali, UnknownMnemonic) as exc:
            report.skipped_methods += 1
            report.parse_warnings.append(f"{path.relative_to(root).as_posix()}: {exc}")
    return _apply_min_length(seqs, report, min_length), report


def detect_format(path: Path) -> str:
    if path.is_dir():
        return "smali"
    with path.open("rb") as fh:
        head = fh.read(4)
    if head == b"dex\n":
        return "dex"
    if head[:2] == b"PK":
        return "apk"
    raise DexDedupError(f"cannot detect input format of {path}")


def app_id_for(path: Path) -> str:
    return path.name if path.is_dir() else path.stem


def extract_path(path: Path, fmt: str | None = None, min_length: int = 1,
                 label: str | None = None) -> ExtractedApp:
    path = Path(path)
    fmt = fmt or detect_format(path)
    app_id = app_id_for(path)
    if fmt == "smali":
        seqs, report = extract_from_smali_dir(path, app_id, min_length)
    elif fmt == "dex":
        seqs, report = extract_from_dex(path.read_bytes(), app_id, min_length)
    elif fmt == "apk":
        seqs, report = extract_from_apk(path.read_bytes(), app_id, min_length)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return ExtractedApp(app_id, seqs, report, label)


def discover_apps(paths: Iterable[Path]) -> list[Path]:
    """Expand inputs into app locations.

    Files are apps.  A directory holding ``.smali`` files directly (or a
    ``smali*`` subtree) is one app; otherwise its children are examined,
    sorted by name.
    """
    found: list[Path] = []
    for p in map(Path, paths):
        if p.is_file():
            found.append(p)
        elif p.is_dir():
            if _is_smali_app(p):
                found.append(p)
                continue
            for child in sorted(p.iterdir()):
                if child.is_file() and child.suffix.lower() in (".apk", ".zip", ".dex"):
                    found.append(child)
                elif child.is_dir() and _is_smali_app(child):
                    found.append(child)
        else:
            raise FileNotFoundError(p)
    return found


def _is_smali_app(d: Path) -> bool:
    return any(d.glob("*.smali")) or any(c.is_dir() and c.name.startswith("smali") for c in d.iterdir())


def extract_corpus(paths: Iterable[Path], fmt: str | None = None, min_length: int = 1,
                   label: str | None = None) -> list[ExtractedApp]:
    apps = discover_apps(paths)
    if not apps:
        raise EmptyCorpus("no apps found in the given inputs")
    return [extract_path(p, fmt, min_length, label) for p in apps]


def write_jsonl(apps: Iterable[ExtractedApp], fh) -> None:
    for app in apps:
        fh.write(json.dumps(app.to_json(), separators=(",", ":")) + "\n")


def read_jsonl(fh) -> Iterator[ExtractedApp]:
    for lineno, line in enumerate(fh, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            seqs = [OpcodeSequence(m["id"], tuple(int(v) for v in m["opcodes"])) for m in rec["methods"]]
            app_id = rec["app_id"]
        except (ValueError, KeyError, TypeError) as exc:
            raise DexDedupError(f"extraction record at line {lineno}: {exc}") from exc
        report = ExtractionReport(app_id, method_count=len(seqs))
        yield ExtractedApp(app_id, seqs, report, rec.get("label"))
