"""Bounds-checked reader for the Dalvik executable (DEX) container.

Only the pieces needed here are decoded: strings, types, prototypes, method
references, class definitions with their class data, and code items.  Every
read goes through ``_Reader`` so malformed input surfaces as ``MalformedDex``
with the offending offset instead of an ``IndexError`` or ``struct.error``.

Reference: https://source.android.com/docs/core/runtime/dex-format
"""

from __future__ import annotations

import array
import re
import struct
import sys
import zlib
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator

from .errors import MalformedDex, MethodParseError
from .opcodes import (
    FILL_ARRAY_DATA_PAYLOAD,
    PACKED_SWITCH_PAYLOAD,
    PAYLOAD_IDENTS,
    SPARSE_SWITCH_PAYLOAD,
    UNUSED,
    widths_for_version,
)

HEADER_SIZE = 0x70
ENDIAN_CONSTANT = 0x12345678
NO_INDEX = 0xFFFFFFFF
_MAGIC_RE = re.compile(rb"dex\n(\d{3})\x00")

_HEADER_FIELDS = (
    "checksum", "file_size", "header_size", "endian_tag", "link_size",
    "link_off", "map_off", "string_ids_size", "string_ids_off",
    "type_ids_size", "type_ids_off", "proto_ids_size", "proto_ids_off",
    "field_ids_size", "field_ids_off", "method_ids_size", "method_ids_off",
    "class_defs_size", "class_defs_off", "data_size", "data_off",
)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data

    def _check(self, off: int, size: int, what: str) -> None:
        if off < 0 or off + size > len(self.data):
            raise MalformedDex(f"truncated {what}", off)

    def u16(self, off: int, what: str = "u16") -> int:
        self._check(off, 2, what)
        return self.data[off] | (self.data[off + 1] << 8)

    def u32(self, off: int, what: str = "u32") -> int:
        self._check(off, 4, what)
        return struct.unpack_from("<I", self.data, off)[0]

    def uleb128(self, off: int, what: str = "uleb128") -> tuple[int, int]:
        result = 0
        shift = 0
        for i in range(5):
            self._check(off + i, 1, what)
            b = self.data[off + i]
            result |= (b & 0x7F) << shift
            if not b & 0x80:
                return result, off + i + 1
            shift += 7
        raise MalformedDex(f"overlong {what}", off)

    def units(self, off: int, count: int, what: str) -> memoryview:
        self._check(off, count * 2, what)
        if sys.byteorder == "little":
            return memoryview(self.data)[off:off + count * 2].cast("H")
        arr = array.array("H", self.data[off:off + count * 2])
        arr.byteswap()
        return memoryview(arr)


def _decode_mutf8(raw: bytes) -> str:
    # MUTF-8 encodes NUL as C0 80 and supplementary characters as surrogate pairs.
    raw = raw.replace(b"\xc0\x80", b"\x00")
    try:
        text = raw.decode("utf-8", errors="surrogatepass")
        return text.encode("utf-16", "surrogatepass").decode("utf-16")
    except UnicodeError:
        return raw.decode("utf-8", errors="replace")


@dataclass(frozen=True)
class MethodRef:
    class_descriptor: str
    name: str
    signature: str

    def __str__(self) -> str:
        return f"{self.class_descriptor}->{self.name}{self.signature}"


@dataclass(frozen=True)
class EncodedMethod:
    method_idx: int
    access_flags: int
    code_off: int


@dataclass
class CodeWalk:
    opcodes: list[int]
    unused_seen: int = 0
    payloads_skipped: int = 0


def walk_code_units(insns, version: int = 35) -> CodeWalk:
    """Return the opcode byte of each instruction in a code-unit stream.

    Payload pseudo-instructions and the alignment ``nop`` that precedes them
    are skipped.  Raises ``MethodParseError`` if an instruction or payload
    would extend past the end of the stream.
    """
    widths = widths_for_version(version)
    n = len(insns)
    walk = CodeWalk([])
    pc = 0
    while pc < n:
        unit = insns[pc]
        op = unit & 0xFF
        if op == 0 and unit in PAYLOAD_IDENTS:
            pc += _payload_width(insns, pc, n)
            walk.payloads_skipped += 1
            continue
        if unit == 0 and pc % 2 == 1 and pc + 1 < n and insns[pc + 1] in PAYLOAD_IDENTS:
            pc += 1  # alignment padding ahead of a payload
            continue
        width = widths[op]
        if pc + width > n:
            raise MethodParseError(
                f"instruction 0x{op:02x} at unit {pc} needs {width} units, only {n - pc} left"
            )
        if op in UNUSED:
            walk.unused_seen += 1
        walk.opcodes.append(op)
        pc += width
    return walk


def _payload_width(insns, pc: int, n: int) -> int:
    ident = insns[pc]
    if pc + 2 > n:
        raise MethodParseError(f"truncated payload header at unit {pc}")
    if ident == PACKED_SWITCH_PAYLOAD:
        width = insns[pc + 1] * 2 + 4
    elif ident == SPARSE_SWITCH_PAYLOAD:
        width = insns[pc + 1] * 4 + 2
    else:
        assert ident == FILL_ARRAY_DATA_PAYLOAD
        if pc + 4 > n:
            raise MethodParseError(f"truncated fill-array-data header at unit {pc}")
        element_width = insns[pc + 1]
        size = insns[pc + 2] | (insns[pc + 3] << 16)
        width = (size * element_width + 1) // 2 + 4
    if pc + width > n:
        raise MethodParseError(f"payload at unit {pc} runs past end of method ({width} units)")
    return width


@dataclass
class DexMethod:
    ref: MethodRef
    access_flags: int
    code_off: int


class DexFile:
    """Parsed view over the bytes of one DEX file."""

    def __init__(self, data: bytes):
        if len(data) < HEADER_SIZE:
            raise MalformedDex(f"file is {len(data)} bytes, shorter than the header", 0)
        m = _MAGIC_RE.fullmatch(data[:8])
        if not m:
            raise MalformedDex(f"bad magic {data[:8]!r}", 0)
        self.data = data
        self.version = int(m.group(1))
        self._r = _Reader(data)
        values = struct.unpack_from("<I20s20I", data, 8)
        self.signature = values[1]
        hdr = dict(zip(_HEADER_FIELDS, (values[0],) + values[2:]))
        self.header = hdr
        if hdr["endian_tag"] != ENDIAN_CONSTANT:
            raise MalformedDex(f"unsupported endian tag 0x{hdr['endian_tag']:08x}", 0x28)
        self.warnings: list[str] = []
        if hdr["file_size"] != len(data):
            self.warnings.append(f"header file_size {hdr['file_size']} != actual {len(data)}")
        if zlib.adler32(data[12:]) != hdr["checksum"]:
            self.warnings.append("adler32 checksum mismatch")
        for name, width in (("string_ids", 4), ("type_ids", 4), ("proto_ids", 12),
                            ("field_ids", 8), ("method_ids", 8), ("class_defs", 32)):
            size, off = hdr[f"{name}_size"], hdr[f"{name}_off"]
            if size and (off + size * width > len(data) or off < HEADER_SIZE):
                raise MalformedDex(f"{name} section out of bounds", off)
        self._strings: dict[int, str] = {}

    # -- id tables -----------------------------------------------------

    def string(self, idx: int) -> str:
        cached = self._strings.get(idx)
        if cached is not None:
            return cached
        if idx >= self.header["string_ids_size"]:
            raise MalformedDex(f"string index {idx} out of range")
        off = self._r.u32(self.header["string_ids_off"] + idx * 4, "string_id")
        _, start = self._r.uleb128(off, "string_data length")
        end = self.data.find(b"\x00", start)
        if end < 0:
            raise MalformedDex("unterminated string_data", start)
        text = _decode_mutf8(self.data[start:end])
        self._strings[idx] = text
        return text

    def type_descriptor(self, idx: int) -> str:
        if idx >= self.header["type_ids_size"]:
            raise MalformedDex(f"type index {idx} out of range")
        return self.string(self._r.u32(self.header["type_ids_off"] + idx * 4, "type_id"))

    def _type_list(self, off: int) -> list[str]:
        if off == 0:
            return []
        size = self._r.u32(off, "type_list")
        units = self._r.units(off + 4, size, "type_list")
        return [self.type_descriptor(t) for t in units]

    def proto_signature(self, idx: int) -> str:
        if idx >= self.header["proto_ids_size"]:
            raise MalformedDex(f"proto index {idx} out of range")
        base = self.header["proto_ids_off"] + idx * 12
        ret = self.type_descriptor(self._r.u32(base + 4, "proto_id"))
        params = self._type_list(self._r.u32(base + 8, "proto_id"))
        return "(" + "".join(params) + ")" + ret

    def method_ref(self, idx: int) -> MethodRef:
        if idx >= self.header["method_ids_size"]:
            raise MalformedDex(f"method index {idx} out of range")
        base = self.header["method_ids_off"] + idx * 8
        class_idx = self._r.u16(base, "method_id")
        proto_idx = self._r.u16(base + 2, "method_id")
        name_idx = self._r.u32(base + 4, "method_id")
        return MethodRef(self.type_descriptor(class_idx), self.string(name_idx),
                         self.proto_signature(proto_idx))

    @cached_property
    def method_names(self) -> frozenset[str]:
        """Simple names of every method referenced or defined in the file."""
        base = self.header["method_ids_off"]
        names = set()
        for i in range(self.header["method_ids_size"]):
            names.add(self.string(self._r.u32(base + i * 8 + 4, "method_id")))
        return frozenset(names)

    # -- classes and code ----------------------------------------------

    def _class_data(self, off: int) -> Iterator[EncodedMethod]:
        r = self._r
        static_fields, off = r.uleb128(off, "class_data")
        instance_fields, off = r.uleb128(off, "class_data")
        direct, off = r.uleb128(off, "class_data")
        virtual, off = r.uleb128(off, "class_data")
        for _ in range(static_fields + instance_fields):
            _, off = r.uleb128(off, "encoded_field")
            _, off = r.uleb128(off, "encoded_field")
        methods = []
        for count in (direct, virtual):
            idx = 0
            for _ in range(count):
                diff, off = r.uleb128(off, "encoded_method")
                flags, off = r.uleb128(off, "encoded_method")
                code_off, off = r.uleb128(off, "encoded_method")
                idx += diff
                methods.append(EncodedMethod(idx, flags, code_off))
        return iter(methods)

    def iter_methods(self) -> Iterator[DexMethod]:
        """Yield every method defined with a class_data entry, in file order.

        A class whose class_data is damaged is skipped with a warning; a
        method whose reference cannot be resolved is yielded with
        ``code_off == -1`` so the caller records it as skipped.
        """
        base = self.header["class_defs_off"]
        for c in range(self.header["class_defs_size"]):
            class_data_off = self._r.u32(base + c * 32 + 24, "class_def")
            if class_data_off == 0:
                continue
            try:
                encoded = self._class_data(class_data_off)
            except MalformedDex as exc:
                self.warnings.append(f"class_def {c}: {exc}")
                continue
            for em in encoded:
                try:
                    ref = self.method_ref(em.method_idx)
                except MalformedDex:
                    yield DexMethod(MethodRef("?", f"method@{em.method_idx}", ""), em.access_flags, -1)
                    continue
                yield DexMethod(ref, em.access_flags, em.code_off)

    def code_units(self, code_off: int) -> memoryview:
        if code_off < 0:
            raise MethodParseError("unresolvable method reference")
        try:
            insns_size = self._r.u32(code_off + 12, "code_item")
            return self._r.units(code_off + 16, insns_size, "code_item insns")
        except MalformedDex as exc:
            raise MethodParseError(str(exc)) from exc

    def opcodes(self, code_off: int) -> CodeWalk:
        return walk_code_units(self.code_units(code_off), self.version)


@dataclass
class MethodOpcodes:
    method_id: str
    opcodes: list[int]


@dataclass
class DexScan:
    methods: list[MethodOpcodes] = field(default_factory=list)
    skipped: int = 0
    warnings: list[str] = field(default_factory=list)


def scan_dex(data: bytes) -> DexScan:
    """Extract opcode lists for every method body, isolating per-method errors."""
    dex = DexFile(data)
    scan = DexScan()
    for method in dex.iter_methods():
        if method.code_off == 0:
            continue  # abstract or native
        try:
            walk = dex.opcodes(method.code_off)
        except MethodParseError as exc:
            scan.skipped += 1
            scan.warnings.append(f"{method.ref}: {exc}")
            continue
        if walk.unused_seen:
            scan.warnings.append(f"{method.ref}: {walk.unused_seen} unused opcode(s)")
        if walk.opcodes:
            scan.methods.append(MethodOpcodes(str(method.ref), walk.opcodes))
    scan.warnings[:0] = dex.warnings
    return scan
