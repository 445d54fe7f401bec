"""Synthetic corpora: a small DEX/AXML/APK writer and seeded generators.

The writer emits structurally valid DEX files (sorted id tables, map list,
adler32 checksum and SHA-1 signature) with zeroed operands.  It exists so
that the pipeline can be exercised end to end without redistributing real
malware.
"""

from __future__ import annotations

import hashlib
import io
import struct
import zipfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .features import API_CALLS, PERMISSIONS, FeatureMatrix
from .fingerprint import AppFingerprint
from .opcodes import UNUSED, WIDTHS

_PAYLOAD_OPS = {0x26: "fill", 0x2B: "packed", 0x2C: "sparse"}
# opcodes a plain (non-odex) compiler can emit
STANDARD_OPCODES: tuple[int, ...] = tuple(v for v in range(0xE3) if v not in UNUSED)


def assemble(opcodes: Sequence[int]) -> list[int]:
    """Encode an opcode list as code units with zero operands.

    Switch and fill-array-data instructions get an empty payload appended
    after the body (4-byte aligned, as the format requires).
    """
    units: list[int] = []
    fixups: list[tuple[int, str]] = []
    for op in opcodes:
        if op in _PAYLOAD_OPS:
            fixups.append((len(units), _PAYLOAD_OPS[op]))
        units.append(op)
        units.extend([0] * (WIDTHS[op] - 1))
    for at, kind in fixups:
        if len(units) % 2:
            units.append(0)  # alignment nop
        rel = len(units) - at
        units[at + 1] = rel & 0xFFFF
        units[at + 2] = (rel >> 16) & 0xFFFF
        if kind == "packed":
            units.extend([0x0100, 0, 0, 0])
        elif kind == "sparse":
            units.extend([0x0200, 0])
        else:
            units.extend([0x0300, 1, 0, 0])
    return units


def _uleb(value: int) -> bytes:
    out = bytearray()
    while True:
        b = value & 0x7F
        value >>= 7
        if value:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def _shorty_char(desc: str) -> str:
    return "L" if desc[0] in "L[" else desc


def _mutf8(text: str) -> bytes:
    # supplementary characters become two 3-byte surrogates; NUL becomes C0 80
    units = text.encode("utf-16-le", "surrogatepass")
    split = "".join(chr(u) for u in struct.unpack(f"<{len(units) // 2}H", units))
    return split.encode("utf-8", "surrogatepass").replace(b"\x00", b"\xc0\x80")


@dataclass
class _Method:
    class_desc: str
    name: str
    proto: tuple[str, tuple[str, ...]]
    code: list[int] | None = None
    access: int = 0x1


@dataclass
class DexBuilder:
    """Accumulates classes, method bodies and bare method references."""

    methods: list[_Method] = field(default_factory=list)
    refs: set[tuple[str, str, tuple[str, tuple[str, ...]]]] = field(default_factory=set)

    def add_method(self, class_desc: str, name: str, code_units: Sequence[int] | None,
                   proto: tuple[str, tuple[str, ...]] = ("V", ()), access: int = 0x1) -> None:
        self.methods.append(_Method(class_desc, name, proto, None if code_units is None else list(code_units),
                                    access))

    def add_opcodes(self, class_desc: str, name: str, opcodes: Sequence[int], **kw) -> None:
        self.add_method(class_desc, name, assemble(opcodes), **kw)

    def add_method_ref(self, class_desc: str, name: str,
                       proto: tuple[str, tuple[str, ...]] = ("V", ())) -> None:
        self.refs.add((class_desc, name, proto))

    def build(self, version: int = 35) -> bytes:
        classes = sorted({m.class_desc for m in self.methods})
        protos_used = {m.proto for m in self.methods} | {r[2] for r in self.refs}
        strings = set(classes) | {"Ljava/lang/Object;"}
        strings |= {m.name for m in self.methods} | {r[0] for r in self.refs} | {r[1] for r in self.refs}
        for ret, params in protos_used:
            strings |= {ret, *params, _shorty_char(ret) + "".join(_shorty_char(p) for p in params)}
        # string ids sort by UTF-16 code units; equal to code point order outside surrogates
        string_list = sorted(strings, key=lambda s: s.encode("utf-16-be"))
        sidx = {s: i for i, s in enumerate(string_list)}
        type_descs = set(classes) | {"Ljava/lang/Object;"} | {r[0] for r in self.refs}
        for ret, params in protos_used:
            type_descs |= {ret, *params}
        type_list = sorted(type_descs, key=lambda s: sidx[s])
        tidx = {t: i for i, t in enumerate(type_list)}
        protos = sorted(protos_used, key=lambda p: (tidx[p[0]], [tidx[x] for x in p[1]]))
        pidx = {p: i for i, p in enumerate(protos)}
        method_keys = {(m.class_desc, m.name, m.proto) for m in self.methods} | self.refs
        mlist = sorted(method_keys, key=lambda k: (tidx[k[0]], sidx[k[1]], pidx[k[2]]))
        midx = {k: i for i, k in enumerate(mlist)}

        off = 0x70
        string_ids_off = off
        off += 4 * len(string_list)
        type_ids_off = off
        off += 4 * len(type_list)
        proto_ids_off = off
        off += 12 * len(protos)
        method_ids_off = off
        off += 8 * len(mlist)
        class_defs_off = off
        off += 32 * len(classes)
        data_off = off

        data = bytearray()

        def here() -> int:
            return data_off + len(data)

        def align4() -> None:
            while here() % 4:
                data.append(0)

        string_data_off = here()
        string_offsets = []
        for s in string_list:
            string_offsets.append(here())
            data += _uleb(len(s.encode("utf-16-le", "surrogatepass")) // 2) + _mutf8(s) + b"\x00"
        align4()
        type_list_off = here()
        param_offsets = {}
        for p in protos:
            if p[1]:
                align4()
                param_offsets[p] = here()
                data += struct.pack("<I", len(p[1])) + b"".join(struct.pack("<H", tidx[t]) for t in p[1])
        n_type_lists = len(param_offsets)
        align4()
        code_off_start = here()
        code_offsets = {}
        for m in self.methods:
            if m.code is None:
                continue
            align4()
            code_offsets[(m.class_desc, m.name, m.proto)] = here()
            data += struct.pack("<HHHHII", 16, 0, 5, 0, 0, len(m.code))
            data += struct.pack(f"<{len(m.code)}H", *m.code)
        n_code = len(code_offsets)
        class_data_start = here()
        class_data_offsets = {}
        for c in classes:
            defined = sorted(
                ((midx[(m.class_desc, m.name, m.proto)], m) for m in self.methods if m.class_desc == c),
                key=lambda t: t[0],
            )
            direct = [(i, m) for i, m in defined if m.name in ("<init>", "<clinit>") or m.access & 0x2]
            virtual = [(i, m) for i, m in defined if (i, m) not in direct]
            class_data_offsets[c] = here()
            data += _uleb(0) + _uleb(0) + _uleb(len(direct)) + _uleb(len(virtual))
            for group in (direct, virtual):
                prev = 0
                for i, m in group:
                    key = (m.class_desc, m.name, m.proto)
                    data += _uleb(i - prev) + _uleb(m.access) + _uleb(code_offsets.get(key, 0))
                    prev = i
        align4()
        map_off = here()
        entries = [
            (0x0000, 1, 0),
            (0x0001, len(string_list), string_ids_off),
            (0x0002, len(type_list), type_ids_off),
            (0x0003, len(protos), proto_ids_off),
            (0x0005, len(mlist), method_ids_off),
            (0x0006, len(classes), class_defs_off),
            (0x2002, len(string_list), string_data_off),
            (0x1001, n_type_lists, type_list_off),
            (0x2001, n_code, code_off_start),
            (0x2000, len(classes), class_data_start),
            (0x1000, 1, map_off),
        ]
        entries = [e for e in entries if e[1]]
        data += struct.pack("<I", len(entries))
        for kind, size, offset in entries:
            data += struct.pack("<HHII", kind, 0, size, offset)

        body = bytearray()
        for o in string_offsets:
            body += struct.pack("<I", o)
        for t in type_list:
            body += struct.pack("<I", sidx[t])
        for p in protos:
            shorty = _shorty_char(p[0]) + "".join(_shorty_char(x) for x in p[1])
            body += struct.pack("<III", sidx[shorty], tidx[p[0]], param_offsets.get(p, 0))
        for cls_desc, name, proto in mlist:
            body += struct.pack("<HHI", tidx[cls_desc], pidx[proto], sidx[name])
        for c in classes:
            body += struct.pack("<8I", tidx[c], 0x1, tidx["Ljava/lang/Object;"], 0, 0xFFFFFFFF, 0,
                                class_data_offsets[c], 0)
        file_size = data_off + len(data)
        header = bytearray(b"dex\n%03d\x00" % version)
        header += b"\x00" * 24  # checksum + signature, filled below
        header += struct.pack(
            "<20I", file_size, 0x70, 0x12345678, 0, 0, map_off,
            len(string_list), string_ids_off, len(type_list), type_ids_off,
            len(protos), proto_ids_off, 0, 0, len(mlist), method_ids_off,
            len(classes), class_defs_off, len(data), data_off,
        )
        out = header + body + data
        assert len(out) == file_size
        out[12:32] = hashlib.sha1(bytes(out[32:])).digest()
        out[8:12] = struct.pack("<I", zlib.adler32(bytes(out[12:])))
        return bytes(out)


def axml_document(strings: Sequence[str]) -> bytes:
    """Binary XML holding only a UTF-16 string pool (enough for permission scans)."""
    offsets, blob = [], bytearray()
    for s in strings:
        offsets.append(len(blob))
        enc = s.encode("utf-16-le")
        blob += struct.pack("<H", len(enc) // 2) + enc + b"\x00\x00"
    while len(blob) % 4:
        blob.append(0)
    header_size = 28
    strings_start = header_size + 4 * len(strings)
    pool = struct.pack("<HHIIIIII", 0x0001, header_size, strings_start + len(blob), len(strings), 0, 0,
                       strings_start, 0)
    pool += b"".join(struct.pack("<I", o) for o in offsets) + bytes(blob)
    return struct.pack("<HHI", 0x0003, 8, 8 + len(pool)) + pool


def manifest_for(package: str, permissions: Sequence[str]) -> bytes:
    strings = ["manifest", "uses-permission", "package", "name", "android",
               "http://schemas.android.com/apk/res/android", package]
    strings += [f"android.permission.{p}" for p in permissions]
    return axml_document(strings)


_FIXED_TIME = (1980, 1, 1, 0, 0, 0)


def build_apk(dex_files: Sequence[bytes], manifest: bytes | None) -> bytes:
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
        if manifest is not None:
            zf.writestr(zipfile.ZipInfo("AndroidManifest.xml", _FIXED_TIME), manifest)
        for i, dex in enumerate(dex_files):
            name = "classes.dex" if i == 0 else f"classes{i + 1}.dex"
            zf.writestr(zipfile.ZipInfo(name, _FIXED_TIME), dex)
    return buf.getvalue()


# -- feature-level synthetic corpora ----------------------------------------


@dataclass
class SyntheticCorpus:
    fingerprints: list[AppFingerprint]
    matrix: FeatureMatrix


def _distinct_rows(rng: np.random.Generator, probs: np.ndarray, count: int, taken: set) -> list[np.ndarray]:
    rows = []
    while len(rows) < count:
        row = (rng.random(len(probs)) < probs).astype(np.uint8)
        key = row.tobytes()
        if key in taken:
            continue
        taken.add(key)
        rows.append(row)
    return rows


def feature_corpus(n_malware: int, n_goodware: int, malware_copies, goodware_copies, seed: int = 0,
                   columns: Sequence[str] = API_CALLS, signal: float = 0.35,
                   informative: int = 10) -> SyntheticCorpus:
    """Distinct base apps with noisy but learnable features, then exact copies.

    ``*_copies`` is either an int (copies per base app) or a callable
    ``rng -> int``.  Every base app has a distinct feature row (so the data
    are separable) and a distinct random hash set; copies share both.
    """
    rng = np.random.default_rng(seed)
    f = len(columns)
    base_p = np.full(f, 0.3)
    mal_p = base_p.copy()
    mal_p[:informative] += signal
    taken: set = set()
    mal_rows = _distinct_rows(rng, mal_p, n_malware, taken)
    good_rows = _distinct_rows(rng, base_p, n_goodware, taken)
    fps, ids, X, y = [], [], [], []
    for label, rows, copies in (("malware", mal_rows, malware_copies), ("goodware", good_rows, goodware_copies)):
        for b, row in enumerate(rows):
            hashes = frozenset(int(h) for h in rng.integers(0, 2**63, size=int(rng.integers(5, 30))))
            k = copies(rng) if callable(copies) else int(copies)
            for c in range(k):
                app_id = f"{label[:3]}-{b:04d}-c{c}"
                fps.append(AppFingerprint(app_id, label, hashes, len(hashes)))
                ids.append(app_id)
                X.append(row)
                y.append(1 if label == "malware" else 0)
    return SyntheticCorpus(fps, FeatureMatrix(tuple(columns), tuple(ids), np.array(X), y))


def inflation_corpus(seed: int = 0, distinct: int = 50, duplication: int = 4) -> SyntheticCorpus:
    """Bundled holdout-inflation corpus: ``distinct`` separable apps, each copied ``duplication`` times."""
    half = distinct // 2
    return feature_corpus(half, distinct - half, duplication, duplication, seed)


def drebin_like_corpus(seed: int = 0) -> SyntheticCorpus:
    """Malware heavily duplicated (1-6 copies), goodware mostly unique."""
    return feature_corpus(
        60, 80,
        lambda rng: int(rng.integers(1, 7)),
        lambda rng: 2 if rng.random() < 0.1 else 1,
        seed,
    )


# -- APK-level synthetic corpus ---------------------------------------------

_API_CLASSES = {
    "sendTextMessage": "Landroid/telephony/SmsManager;",
    "getDeviceId": "Landroid/telephony/TelephonyManager;",
    "getSubscriberId": "Landroid/telephony/TelephonyManager;",
    "getLine1Number": "Landroid/telephony/TelephonyManager;",
    "exec": "Ljava/lang/Runtime;",
    "loadClass": "Ljava/lang/ClassLoader;",
}
_MALICIOUS_APIS = ("sendTextMessage", "getDeviceId", "getSubscriberId", "getLine1Number",
                   "getSimSerialNumber", "createFromPdu", "abortBroadcast", "exec", "getNetworkOperator")
_MALICIOUS_PERMS = ("READ_PHONE_STATE", "SEND_SMS", "RECEIVE_SMS", "READ_SMS", "RECEIVE_BOOT_COMPLETED",
                    "WRITE_SMS", "INSTALL_PACKAGES")


@dataclass
class _AppSpec:
    app_id: str
    label: str
    bodies: list[tuple[int, ...]]
    apis: set[str]
    perms: set[str]


def _random_body(rng: np.random.Generator) -> tuple[int, ...]:
    n = int(rng.integers(3, 13))
    ops = rng.choice(STANDARD_OPCODES, size=n)
    return tuple(int(o) for o in ops) + (0x0E,)


def _profile(rng, names, hot, p_hot, p_cold) -> set[str]:
    return {n for n in names if rng.random() < (p_hot if n in hot else p_cold)}


def _apk_bytes(spec: _AppSpec) -> bytes:
    builder = DexBuilder()
    cls = f"Lcom/synth/{spec.app_id.replace('-', '_')}/Main;"
    for i, body in enumerate(spec.bodies):
        builder.add_opcodes(cls, f"m{i:03d}", body)
    for api in sorted(spec.apis):
        builder.add_method_ref(_API_CLASSES.get(api, "Landroid/synth/Api;"), api)
    manifest = manifest_for(f"com.synth.{spec.app_id.replace('-', '_')}", sorted(spec.perms))
    return build_apk([builder.build()], manifest)


def apk_corpus_specs(seed: int = 0, families: int = 14, singletons: int = 10, goodware: int = 50) -> list[_AppSpec]:
    rng = np.random.default_rng(seed)
    library = [_random_body(rng) for _ in range(6)]  # shared third-party code
    specs: list[_AppSpec] = []
    for f in range(families):
        core = [_random_body(rng) for _ in range(int(rng.integers(6, 10)))]
        apis = _profile(rng, API_CALLS, _MALICIOUS_APIS, 0.6, 0.1)
        perms = _profile(rng, PERMISSIONS, _MALICIOUS_PERMS, 0.65, 0.1)
        members: list[_AppSpec] = []
        for m in range(int(rng.integers(2, 7))):
            app_id = f"mal-f{f:02d}-{m:02d}"
            if members and rng.random() < 0.45:
                src = members[int(rng.integers(len(members)))]
                members.append(_AppSpec(app_id, "malware", list(src.bodies), set(src.apis), set(src.perms)))
                continue
            extra = [_random_body(rng) for _ in range(int(rng.integers(0, 3)))]
            members.append(_AppSpec(app_id, "malware", core + extra, set(apis), set(perms)))
        specs += members
    for s in range(singletons):
        bodies = [_random_body(rng) for _ in range(int(rng.integers(5, 12)))]
        specs.append(_AppSpec(f"mal-s{s:02d}", "malware", bodies,
                              _profile(rng, API_CALLS, _MALICIOUS_APIS, 0.5, 0.1),
                              _profile(rng, PERMISSIONS, _MALICIOUS_PERMS, 0.5, 0.1)))
    good: list[_AppSpec] = []
    for g in range(goodware):
        app_id = f"good-{g:03d}"
        if good and rng.random() < 0.1:
            src = good[int(rng.integers(len(good)))]
            good.append(_AppSpec(app_id, "goodware", list(src.bodies), set(src.apis), set(src.perms)))
            continue
        bodies = library[: int(rng.integers(0, 4))] + [_random_body(rng) for _ in range(int(rng.integers(5, 15)))]
        good.append(_AppSpec(app_id, "goodware", bodies,
                             _profile(rng, API_CALLS, _MALICIOUS_APIS, 0.15, 0.2),
                             _profile(rng, PERMISSIONS, _MALICIOUS_PERMS, 0.15, 0.15)))
    return specs + good


def write_apk_corpus(root: Path, seed: int = 0, **kw) -> dict[str, list[Path]]:
    """Write ``root/malware/*.apk`` and ``root/goodware/*.apk``."""
    root = Path(root)
    out: dict[str, list[Path]] = {"malware": [], "goodware": []}
    for label in out:
        (root / label).mkdir(parents=True, exist_ok=True)
    for spec in apk_corpus_specs(seed, **kw):
        path = root / spec.label / f"{spec.app_id}.apk"
        path.write_bytes(_apk_bytes(spec))
        out[spec.label].append(path)
    return out
