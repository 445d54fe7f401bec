"""Binary permission / API-call features and labeled feature matrices."""

from __future__ import annotations

import csv
import io
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dex import DexFile
from .errors import CsvParseError, DuplicateAppId, MalformedManifest, NoManifest, WidthMismatch
from .extract import app_id_for, detect_format, dex_entries, open_apk
from .smali import parse_smali

# Permission list in published order (45 rows).  Row 45 is printed as
# "KILL _BACKGROUND_PROCESS"; the real constant is used.  HARDWARE_TEST is
# printed twice (rows 13 and 32).
PRINTED_PERMISSIONS: tuple[str, ...] = (
    "READ_PHONE_STATE", "WRITE_CONTACTS", "CALL_PHONE", "READ_CONTACTS",
    "INTERNET", "SEND_SMS", "DISABLE_KEYGUARD", "PROCESS_OUTGOING_CALLS",
    "RECEIVE_BOOT_COMPLETED", "READ_SMS", "FACTORY_TEST", "DEVICE_POWER",
    "HARDWARE_TEST", "CHANGE_WIFI_STATE", "GET_ACCOUNTS", "READ_HISTORY_BOOKMARKS",
    "WRITE_APN_SETTINGS", "MODIFY_PHONE_STATE", "WRITE_HISTORY_BOOKMARKS", "ACCESS_LOCATION",
    "EXPAND_STATUS_BAR", "WRITE_EXTERNAL_STORAGE", "RECEIVE_SMS", "WRITE_SMS",
    "ACCESS_WIFI_STATE", "MODIFY_AUDIO_SETTINGS", "ACCESS_NETWORK_STATE", "WRITE_SETTINGS",
    "READ_EXTERNAL_STORAGE", "ACCESS_MOCK_LOCATION", "USE_CREDENTIALS", "HARDWARE_TEST",
    "VIBRATE", "READ_LOGS", "CHANGE_NETWORK_STATE", "ACCESS_GPS",
    "WAKE_LOCK", "ACCESS_COURSE_UPDATES", "ACCESS_LOCATION_EXTRA_COMMANDS", "ACCESS_FINE_LOCATION",
    "GET_TASKS", "RESTART_PACKAGES", "MOUNT_UNMOUNT_FILESYSTEMS", "INSTALL_PACKAGES",
    "KILL_BACKGROUND_PROCESSES",
)

# API list in published row order (34 rows).  Capitalization typos are fixed
# to the real Android method names; getAppPackageName is printed twice
# (rows 21 and 31).
PRINTED_API_CALLS: tuple[str, ...] = (
    "getNetworkType", "getNetworkOperator", "loadClass", "getMessage",
    "getMethod", "getClassLoader", "getLongitude", "getLatitude",
    "createFromPdu", "getInputStream", "getOutputStream", "getWifiState",
    "abortBroadcast", "requestFocus", "getSubscriberId", "getDisplayOriginatingAddress",
    "sendTextMessage", "getDisplayMessageBody", "getPackageInfo", "getLastKnownLocation",
    "getAppPackageName", "getCookies", "isProviderEnabled", "getSimOperatorName",
    "getDeviceId", "getCertStatus", "getSimSerialNumber", "getLine1Number",
    "killProcess", "exec", "getAppPackageName", "setSerialNumber",
    "getSessions", "getCredential",
)

API_SPELLING_FIXES = {
    "GetLongitude": "getLongitude",
    "GetLatitude": "getLatitude",
    "abortBroadCast": "abortBroadcast",
    "RequestFocus": "requestFocus",
}


def _dedup(names: Iterable[str]) -> tuple[str, ...]:
    return tuple(dict.fromkeys(names))


PERMISSIONS: tuple[str, ...] = _dedup(PRINTED_PERMISSIONS)
API_CALLS: tuple[str, ...] = _dedup(PRINTED_API_CALLS)
CATALOGS = {
    "permissions": PERMISSIONS,
    "apicalls": API_CALLS,
    "both": PERMISSIONS + API_CALLS,
}
LABEL_NAMES = ("goodware", "malware")  # index == encoded label; malware is positive
PERMISSION_PREFIX = "android.permission."


def catalog(subset: str) -> tuple[str, ...]:
    try:
        return CATALOGS[subset]
    except KeyError:
        raise ValueError(f"feature set must be one of {sorted(CATALOGS)}") from None


# -- permission features --------------------------------------------------

_RES_XML_TYPE = 0x0003
_RES_STRING_POOL_TYPE = 0x0001
_UTF8_FLAG = 0x100


def axml_strings(data: bytes) -> list[str]:
    """Return the string pool of an Android binary XML document."""
    if len(data) < 8:
        raise MalformedManifest("binary XML shorter than its header")
    kind, header_size, _ = struct.unpack_from("<HHI", data, 0)
    if kind != _RES_XML_TYPE:
        raise MalformedManifest(f"not a binary XML document (chunk type 0x{kind:04x})")
    off = header_size
    if off + 28 > len(data):
        raise MalformedManifest("missing string pool chunk")
    kind, hsize, size, count, _, flags, strings_start, _ = struct.unpack_from("<HHIIIIII", data, off)
    if kind != _RES_STRING_POOL_TYPE or off + size > len(data) or off + hsize + 4 * count > off + size:
        raise MalformedManifest("string pool chunk unreadable")
    offsets = struct.unpack_from(f"<{count}I", data, off + hsize)
    base = off + strings_start
    end = off + size
    out = []
    try:
        for rel in offsets:
            p = base + rel
            if flags & _UTF8_FLAG:
                p = _skip_len8(data, p)
                nbytes = data[p]
                if nbytes & 0x80:
                    nbytes = ((nbytes & 0x7F) << 8) | data[p + 1]
                    p += 1
                p += 1
                if p + nbytes > end:
                    raise IndexError
                out.append(data[p:p + nbytes].decode("utf-8", errors="replace"))
            else:
                nchars = struct.unpack_from("<H", data, p)[0]
                p += 2
                if nchars & 0x8000:
                    nchars = ((nchars & 0x7FFF) << 16) | struct.unpack_from("<H", data, p)[0]
                    p += 2
                if p + 2 * nchars > end:
                    raise IndexError
                out.append(data[p:p + 2 * nchars].decode("utf-16-le", errors="replace"))
    except (IndexError, struct.error) as exc:
        raise MalformedManifest("string pool entry out of bounds") from exc
    return out


def _skip_len8(data: bytes, p: int) -> int:
    return p + (2 if data[p] & 0x80 else 1)


_TEXT_PERMISSION = re.compile(r"android\.permission\.[A-Za-z0-9_]+")


def manifest_strings(manifest: bytes) -> list[str]:
    """Strings of a manifest, binary (AXML) or plain-text XML."""
    if manifest.lstrip()[:1] == b"<":
        return _TEXT_PERMISSION.findall(manifest.decode("utf-8", errors="replace"))
    return axml_strings(manifest)


def apk_permission_strings(apk: bytes) -> list[str]:
    with open_apk(apk) as archive:
        try:
            manifest = archive.read("AndroidManifest.xml")
        except KeyError:
            raise NoManifest("archive has no AndroidManifest.xml") from None
    return manifest_strings(manifest)


def permission_bits(strings: Iterable[str], names: Sequence[str] = PERMISSIONS) -> np.ndarray:
    """Bit i is set iff ``android.permission.<names[i]>`` occurs among ``strings``.

    Bare names (without the prefix) are accepted too, for pre-extracted lists.
    """
    present = set()
    for s in strings:
        present.add(s[len(PERMISSION_PREFIX):] if s.startswith(PERMISSION_PREFIX) else s)
    return np.array([name in present for name in names], dtype=np.uint8)


# -- API-call features ----------------------------------------------------

def dex_method_names(data: bytes) -> frozenset[str]:
    return DexFile(data).method_names


def apk_method_names(apk: bytes) -> frozenset[str]:
    names: set[str] = set()
    with open_apk(apk) as archive:
        for entry in dex_entries(archive):
            names |= dex_method_names(archive.read(entry))
    return frozenset(names)


def smali_method_names(root: Path) -> frozenset[str]:
    names: set[str] = set()
    for path in sorted(root.rglob("*.smali")):
        names |= parse_smali(path.read_text(encoding="utf-8", errors="replace")).referenced_names
    return frozenset(names)


def api_bits(method_names: Iterable[str], names: Sequence[str] = API_CALLS) -> np.ndarray:
    present = set(method_names)
    return np.array([name in present for name in names], dtype=np.uint8)


@dataclass
class AppFeatures:
    """Raw per-app evidence from which any catalog subset can be projected."""

    app_id: str
    label: str
    permissions: frozenset[str]
    method_names: frozenset[str]
    warnings: tuple[str, ...] = ()

    def bits(self, subset: str) -> np.ndarray:
        parts = []
        if subset in ("permissions", "both"):
            parts.append(permission_bits(self.permissions))
        if subset in ("apicalls", "both"):
            parts.append(api_bits(self.method_names))
        if not parts:
            catalog(subset)
        return np.concatenate(parts)

    def to_json(self) -> dict:
        return {"app_id": self.app_id, "label": self.label,
                "permissions": sorted(self.permissions), "api_calls": sorted(self.method_names)}


def features_of_path(path: Path, label: str) -> AppFeatures:
    """Collect permission strings and method names for one app on disk."""
    path = Path(path)
    fmt = detect_format(path)
    warnings: list[str] = []
    perms: list[str] = []
    if fmt == "apk":
        data = path.read_bytes()
        try:
            perms = apk_permission_strings(data)
        except NoManifest as exc:
            warnings.append(str(exc))
        names = apk_method_names(data)
    elif fmt == "dex":
        warnings.append("raw dex input carries no manifest; permission bits are zero")
        names = dex_method_names(path.read_bytes())
    else:
        manifest = path / "AndroidManifest.xml"
        if manifest.is_file():
            perms = manifest_strings(manifest.read_bytes())
        else:
            warnings.append("no AndroidManifest.xml in smali tree; permission bits are zero")
        names = smali_method_names(path)
    stripped = frozenset(p[len(PERMISSION_PREFIX):] for p in perms if p.startswith(PERMISSION_PREFIX))
    return AppFeatures(app_id_for(path), label, stripped, names, tuple(warnings))


def features_from_record(rec: dict) -> AppFeatures:
    perms = frozenset(p[len(PERMISSION_PREFIX):] if p.startswith(PERMISSION_PREFIX) else p
                      for p in rec.get("permissions", []))
    return AppFeatures(rec["app_id"], rec.get("label", "unlabeled"), perms,
                       frozenset(rec.get("api_calls", [])))


# -- matrix -----------------------------------------------------------------

@dataclass
class FeatureMatrix:
    columns: tuple[str, ...]
    app_ids: tuple[str, ...]
    X: np.ndarray  # uint8, shape (rows, columns)
    y: np.ndarray  # uint8, 1 == malware

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.uint8).reshape(len(self.app_ids), len(self.columns))
        self.y = np.asarray(self.y, dtype=np.uint8)
        if len(self.y) != len(self.app_ids):
            raise WidthMismatch("label count differs from row count")
        if len(set(self.app_ids)) != len(self.app_ids):
            raise DuplicateAppId("feature matrix app ids must be unique")

    def __len__(self) -> int:
        return len(self.app_ids)

    def __eq__(self, other) -> bool:
        return (isinstance(other, FeatureMatrix) and self.columns == other.columns
                and self.app_ids == other.app_ids and np.array_equal(self.X, other.X)
                and np.array_equal(self.y, other.y))

    def take(self, rows) -> "FeatureMatrix":
        rows = np.asarray(rows, dtype=np.int64)
        return FeatureMatrix(self.columns, tuple(self.app_ids[i] for i in rows), self.X[rows], self.y[rows])

    def select_ids(self, ids: Iterable[str]) -> "FeatureMatrix":
        pos = {a: i for i, a in enumerate(self.app_ids)}
        return self.take([pos[a] for a in ids])

    def class_counts(self) -> dict[str, int]:
        return {"malware": int(self.y.sum()), "goodware": int(len(self.y) - self.y.sum())}


def encode_label(label: str) -> int:
    try:
        return LABEL_NAMES.index(label)
    except ValueError:
        raise ValueError(f"label must be malware or goodware, got {label!r}") from None


def build_matrix(apps: Sequence[AppFeatures], subset: str) -> FeatureMatrix:
    columns = catalog(subset)
    rows = [a.bits(subset) for a in apps]
    X = np.vstack(rows) if rows else np.zeros((0, len(columns)), dtype=np.uint8)
    return FeatureMatrix(columns, tuple(a.app_id for a in apps), X, [encode_label(a.label) for a in apps])


def matrix_from_rows(columns: Sequence[str], rows: Sequence[tuple[str, Sequence[int], str]]) -> FeatureMatrix:
    """Assemble a matrix from ``(app_id, bits, label)`` rows, checking widths."""
    for app_id, bits, _ in rows:
        if len(bits) != len(columns):
            raise WidthMismatch(f"{app_id}: {len(bits)} bits for {len(columns)} columns")
    X = np.array([list(b) for _, b, _ in rows], dtype=np.uint8).reshape(len(rows), len(columns))
    return FeatureMatrix(tuple(columns), tuple(r[0] for r in rows), X, [encode_label(r[2]) for r in rows])


def write_csv(matrix: FeatureMatrix, fh, with_ids: bool = True) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow((["app_id"] if with_ids else []) + list(matrix.columns) + ["label"])
    for app_id, bits, y in zip(matrix.app_ids, matrix.X, matrix.y):
        w.writerow(([app_id] if with_ids else []) + [int(b) for b in bits] + [LABEL_NAMES[y]])


def read_csv(fh) -> FeatureMatrix:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise CsvParseError("empty file", 1) from None
    if not header or header[-1] != "label":
        raise CsvParseError("last header column must be 'label'", 1)
    with_ids = header[0] == "app_id"
    columns = tuple(header[1 if with_ids else 0:-1])
    width = len(header)
    app_ids, X, y = [], [], []
    seen: set[str] = set()
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != width:
            raise CsvParseError(f"expected {width} fields, got {len(row)}", lineno)
        app_id = row[0] if with_ids else f"row{lineno - 1}"
        cells = row[1 if with_ids else 0:-1]
        try:
            bits = [int(c) for c in cells]
            label = encode_label(row[-1])
        except ValueError as exc:
            raise CsvParseError(str(exc), lineno) from None
        if any(b not in (0, 1) for b in bits):
            raise CsvParseError("feature cells must be 0 or 1", lineno)
        if app_id in seen:
            raise CsvParseError(f"duplicate app id {app_id!r}", lineno)
        seen.add(app_id)
        app_ids.append(app_id)
        X.append(bits)
        y.append(label)
    return FeatureMatrix(columns, tuple(app_ids), np.array(X, dtype=np.uint8).reshape(len(app_ids), len(columns)), y)


def dumps_csv(matrix: FeatureMatrix, with_ids: bool = True) -> str:
    buf = io.StringIO()
    write_csv(matrix, buf, with_ids)
    return buf.getvalue()


def extract_api_features(source, names: Sequence[str] = API_CALLS) -> np.ndarray:
    """API bits from DEX bytes or from an iterable of invoked method names."""
    if isinstance(source, (bytes, bytearray, memoryview)):
        return api_bits(dex_method_names(bytes(source)), names)
    return api_bits(source, names)


def extract_permission_features(source, names: Sequence[str] = PERMISSIONS) -> np.ndarray:
    """Permission bits from APK bytes or from an iterable of permission strings."""
    if isinstance(source, (bytes, bytearray, memoryview)):
        strings = apk_permission_strings(bytes(source))
        return permission_bits([t for t in strings if t.startswith(PERMISSION_PREFIX)], names)
    return permission_bits(source, names)

