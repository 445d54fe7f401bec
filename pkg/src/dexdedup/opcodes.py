"""Dalvik opcode table: value <-> mnemonic map and instruction widths.

The canonical names follow the classic (pre-ART, odex-aware) Dalvik opcode
list, which is what malware corpora of the 2010-2012 era were compiled
against: quickened opcodes live in 0xEE-0xFB and every unassigned slot is
named ``unused_XX`` with an upper-case hex suffix.

Widths are in 16-bit code units and come from the instruction formats of the
public Dalvik bytecode reference (10x, 12x, 22x, 35c, ...).  Only the opcode
byte is kept downstream, but the widths are what finds instruction
boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

_UNUSED = (
    list(range(0x3E, 0x44))
    + [0x73, 0x79, 0x7A]
    + list(range(0xE3, 0xEE))
    + [0xEF, 0xF1, 0xFC, 0xFD, 0xFE, 0xFF]
)

_NAMED = {
    0x00: "nop",
    0x01: "move",
    0x02: "move/from16",
    0x03: "move/16",
    0x04: "move-wide",
    0x05: "move-wide/from16",
    0x06: "move-wide/16",
    0x07: "move-object",
    0x08: "move-object/from16",
    0x09: "move-object/16",
    0x0A: "move-result",
    0x0B: "move-result-wide",
    0x0C: "move-result-object",
    0x0D: "move-exception",
    0x0E: "return-void",
    0x0F: "return",
    0x10: "return-wide",
    0x11: "return-object",
    0x12: "const/4",
    0x13: "const/16",
    0x14: "const",
    0x15: "const/high16",
    0x16: "const-wide/16",
    0x17: "const-wide/32",
    0x18: "const-wide",
    0x19: "const-wide/high16",
    0x1A: "const-string",
    0x1B: "const-string/jumbo",
    0x1C: "const-class",
    0x1D: "monitor-enter",
    0x1E: "monitor-exit",
    0x1F: "check-cast",
    0x20: "instance-of",
    0x21: "array-length",
    0x22: "new-instance",
    0x23: "new-array",
    0x24: "filled-new-array",
    0x25: "filled-new-array/range",
    0x26: "fill-array-data",
    0x27: "throw",
    0x28: "goto",
    0x29: "goto/16",
    0x2A: "goto/32",
    0x2B: "packed-switch",
    0x2C: "sparse-switch",
    0x2D: "cmpl-float",
    0x2E: "cmpg-float",
    0x2F: "cmpl-double",
    0x30: "cmpg-double",
    0x31: "cmp-long",
    0x32: "if-eq",
    0x33: "if-ne",
    0x34: "if-lt",
    0x35: "if-ge",
    0x36: "if-gt",
    0x37: "if-le",
    0x38: "if-eqz",
    0x39: "if-nez",
    0x3A: "if-ltz",
    0x3B: "if-gez",
    0x3C: "if-gtz",
    0x3D: "if-lez",
    0x6E: "invoke-virtual",
    0x6F: "invoke-super",
    0x70: "invoke-direct",
    0x71: "invoke-static",
    0x72: "invoke-interface",
    0x74: "invoke-virtual/range",
    0x75: "invoke-super/range",
    0x76: "invoke-direct/range",
    0x77: "invoke-static/range",
    0x78: "invoke-interface/range",
    0xD0: "add-int/lit16",
    0xD1: "rsub-int",
    0xD2: "mul-int/lit16",
    0xD3: "div-int/lit16",
    0xD4: "rem-int/lit16",
    0xD5: "and-int/lit16",
    0xD6: "or-int/lit16",
    0xD7: "xor-int/lit16",
    0xD8: "add-int/lit8",
    0xD9: "rsub-int/lit8",
    0xDA: "mul-int/lit8",
    0xDB: "div-int/lit8",
    0xDC: "rem-int/lit8",
    0xDD: "and-int/lit8",
    0xDE: "or-int/lit8",
    0xDF: "xor-int/lit8",
    0xE0: "shl-int/lit8",
    0xE1: "shr-int/lit8",
    0xE2: "ushr-int/lit8",
    0xEE: "execute-inline",
    0xF0: "invoke-direct-empty",
    0xF2: "iget-quick",
    0xF3: "iget-wide-quick",
    0xF4: "iget-object-quick",
    0xF5: "iput-quick",
    0xF6: "iput-wide-quick",
    0xF7: "iput-object-quick",
    0xF8: "invoke-virtual-quick",
    0xF9: "invoke-virtual-quick/range",
    0xFA: "invoke-super-quick",
    0xFB: "invoke-super-quick/range",
}


def _fill_regular_blocks(table: dict[int, str]) -> None:
    kinds = ["", "-wide", "-object", "-boolean", "-byte", "-char", "-short"]
    for base, ops in ((0x44, ("aget", "aput")), (0x52, ("iget", "iput")), (0x60, ("sget", "sput"))):
        value = base
        for op in ops:
            for kind in kinds:
                table[value] = op + kind
                value += 1
    unary = [
        "neg-int", "not-int", "neg-long", "not-long", "neg-float", "neg-double",
        "int-to-long", "int-to-float", "int-to-double", "long-to-int",
        "long-to-float", "long-to-double", "float-to-int", "float-to-long",
        "float-to-double", "double-to-int", "double-to-long", "double-to-float",
        "int-to-byte", "int-to-char", "int-to-short",
    ]
    for i, name in enumerate(unary):
        table[0x7B + i] = name
    ints = ["add", "sub", "mul", "div", "rem", "and", "or", "xor", "shl", "shr", "ushr"]
    floats = ["add", "sub", "mul", "div", "rem"]
    binops = (
        [f"{op}-int" for op in ints]
        + [f"{op}-long" for op in ints]
        + [f"{op}-float" for op in floats]
        + [f"{op}-double" for op in floats]
    )
    for i, name in enumerate(binops):
        table[0x90 + i] = name
        table[0xB0 + i] = name + "/2addr"
    for value in _UNUSED:
        table[value] = f"unused_{value:02X}"


def _build_names() -> tuple[str, ...]:
    table = dict(_NAMED)
    _fill_regular_blocks(table)
    assert sorted(table) == list(range(256)), "opcode table must be total"
    return tuple(table[v] for v in range(256))


MNEMONICS: tuple[str, ...] = _build_names()
VALUES: dict[str, int] = {name: value for value, name in enumerate(MNEMONICS)}
UNUSED: frozenset[int] = frozenset(_UNUSED)

# Payload pseudo-instructions: identified by a nop opcode byte with a
# non-zero high byte at an instruction boundary.
PACKED_SWITCH_PAYLOAD = 0x0100
SPARSE_SWITCH_PAYLOAD = 0x0200
FILL_ARRAY_DATA_PAYLOAD = 0x0300
PAYLOAD_IDENTS = frozenset({PACKED_SWITCH_PAYLOAD, SPARSE_SWITCH_PAYLOAD, FILL_ARRAY_DATA_PAYLOAD})

# Spelling variants found in the source opcode listing and in smali output
# from other toolchain generations.  Keys are never canonical names.
ALIASES: dict[str, str] = {
    # listing typos and spacing artifacts
    "move/from 16": "move/from16",
    "move-wide/from": "move-wide/from16",
    "const-wide/high 16": "const-wide/high16",
    "const-string-jumbo": "const-string/jumbo",
    "filled-new-array-range": "filled-new-array/range",
    "invoke-interface-range": "invoke-interface/range",
    "83 int-to-double": "int-to-double",
    "mul-int/2addr e": "mul-int/2addr",
    "sub-int/lit16": "rsub-int",
    "sub-int/lit8": "rsub-int/lit8",
    # alternate official spellings
    "rsub-int/lit16": "rsub-int",
    # later-generation names occupying the same slots
    "return-void-no-barrier": "unused_73",
    "return-void-barrier": "unused_F1",
    "invoke-object-init/range": "invoke-direct-empty",
    "execute-inline/range": "unused_EF",
    "iget-volatile": "unused_E3",
    "iput-volatile": "unused_E4",
    "sget-volatile": "unused_E5",
    "sput-volatile": "unused_E6",
    "iget-object-volatile": "unused_E7",
    "iget-wide-volatile": "unused_E8",
    "iput-wide-volatile": "unused_E9",
    "sget-wide-volatile": "unused_EA",
    "sput-wide-volatile": "unused_EB",
    "breakpoint": "unused_EC",
    "throw-verification-error": "unused_ED",
    "invoke-polymorphic": "invoke-super-quick",
    "invoke-polymorphic/range": "invoke-super-quick/range",
    "invoke-custom": "unused_FC",
    "invoke-custom/range": "unused_FD",
    "const-method-handle": "unused_FE",
    "const-method-type": "unused_FF",
}

# Rows of the source listing whose printed name sits in the wrong slot
# (0x06 is missing there, so 0x04/0x05 are shifted; 0x15 and 0xD1 repeat
# their neighbour; 0xD2-0xD4 are shifted by one).  value -> printed name.
LISTING_ERRATA: dict[int, str | None] = {
    0x04: "move-wide/from",
    0x05: "move-wide/16",
    0x06: None,
    0x15: "const",
    0xD1: "add-int/lit16",
    0xD2: "sub-int/lit16",
    0xD3: "mul-int/lit16",
    0xD4: "div-int/lit16",
}

_FORMAT_WIDTH = {
    "10x": 1, "12x": 1, "11n": 1, "11x": 1, "10t": 1,
    "20t": 2, "22x": 2, "21t": 2, "21s": 2, "21h": 2, "21c": 2,
    "23x": 2, "22b": 2, "22t": 2, "22s": 2, "22c": 2, "22cs": 2,
    "30t": 3, "32x": 3, "31i": 3, "31t": 3, "31c": 3,
    "35c": 3, "35ms": 3, "35mi": 3, "3rc": 3, "3rms": 3,
    "45cc": 4, "4rcc": 4, "51l": 5,
}


def _build_formats() -> tuple[str, ...]:
    fmt = ["10x"] * 256
    spans = [
        (0x01, 0x01, "12x"), (0x02, 0x02, "22x"), (0x03, 0x03, "32x"),
        (0x04, 0x04, "12x"), (0x05, 0x05, "22x"), (0x06, 0x06, "32x"),
        (0x07, 0x07, "12x"), (0x08, 0x08, "22x"), (0x09, 0x09, "32x"),
        (0x0A, 0x0D, "11x"), (0x0F, 0x11, "11x"),
        (0x12, 0x12, "11n"), (0x13, 0x13, "21s"), (0x14, 0x14, "31i"),
        (0x15, 0x15, "21h"), (0x16, 0x16, "21s"), (0x17, 0x17, "31i"),
        (0x18, 0x18, "51l"), (0x19, 0x19, "21h"), (0x1A, 0x1A, "21c"),
        (0x1B, 0x1B, "31c"), (0x1C, 0x1C, "21c"), (0x1D, 0x1E, "11x"),
        (0x1F, 0x1F, "21c"), (0x20, 0x20, "22c"), (0x21, 0x21, "12x"),
        (0x22, 0x22, "21c"), (0x23, 0x23, "22c"), (0x24, 0x24, "35c"),
        (0x25, 0x25, "3rc"), (0x26, 0x26, "31t"), (0x27, 0x27, "11x"),
        (0x28, 0x28, "10t"), (0x29, 0x29, "20t"), (0x2A, 0x2A, "30t"),
        (0x2B, 0x2C, "31t"), (0x2D, 0x31, "23x"), (0x32, 0x37, "22t"),
        (0x38, 0x3D, "21t"), (0x44, 0x51, "23x"), (0x52, 0x5F, "22c"),
        (0x60, 0x6D, "21c"), (0x6E, 0x72, "35c"), (0x74, 0x78, "3rc"),
        (0x7B, 0x8F, "12x"), (0x90, 0xAF, "23x"), (0xB0, 0xCF, "12x"),
        (0xD0, 0xD7, "22s"), (0xD8, 0xE2, "22b"),
        (0xEE, 0xEE, "35mi"), (0xF0, 0xF0, "35c"), (0xF2, 0xF7, "22cs"),
        (0xF8, 0xF8, "35ms"), (0xF9, 0xF9, "3rms"), (0xFA, 0xFA, "35ms"),
        (0xFB, 0xFB, "3rms"),
    ]
    for lo, hi, f in spans:
        for v in range(lo, hi + 1):
            fmt[v] = f
    return tuple(fmt)


FORMATS: tuple[str, ...] = _build_formats()
WIDTHS: tuple[int, ...] = tuple(_FORMAT_WIDTH[f] for f in FORMATS)

# DEX 038+ reassigns 0xFA-0xFF (invoke-polymorphic, invoke-custom,
# const-method-handle/type) with different widths.
_MODERN_OVERRIDES = {0xFA: "45cc", 0xFB: "4rcc", 0xFC: "35c", 0xFD: "3rc", 0xFE: "21c", 0xFF: "21c"}
MODERN_WIDTHS: tuple[int, ...] = tuple(
    _FORMAT_WIDTH[_MODERN_OVERRIDES.get(v, FORMATS[v])] for v in range(256)
)


def widths_for_version(version: int) -> tuple[int, ...]:
    return MODERN_WIDTHS if version >= 38 else WIDTHS


@dataclass(frozen=True)
class Opcode:
    value: int
    mnemonic: str

    @property
    def unused(self) -> bool:
        return self.value in UNUSED

    @property
    def width(self) -> int:
        return WIDTHS[self.value]


def decode_opcode(byte: int) -> Opcode:
    if not 0 <= byte <= 0xFF:
        raise ValueError(f"opcode byte out of range: {byte}")
    return Opcode(byte, MNEMONICS[byte])


def canonical_mnemonic(name: str) -> str | None:
    """Map a mnemonic spelling to its canonical name, or None if unknown."""
    key = " ".join(name.split())
    if key in VALUES:
        return key
    lowered = key.lower()
    if lowered.startswith("unused_") and len(lowered) == 9:
        key = "unused_" + lowered[7:].upper()
        return key if key in VALUES else None
    if lowered in VALUES:
        return lowered
    return ALIASES.get(lowered)


def encode_mnemonic(name: str) -> int:
    canon = canonical_mnemonic(name)
    if canon is None:
        raise KeyError(name)
    return VALUES[canon]
