"""Line-oriented reader for smali class listings.

Only instruction lines contribute opcodes.  Directives, labels, comments and
the bodies of multi-line directives (annotations, switch tables, array data)
are ignored, which mirrors how the binary walker skips payload
pseudo-instructions.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import MalformedSmali, UnknownMnemonic
from .opcodes import VALUES, canonical_mnemonic

# Directives that open a block closed by ".end <name>"; everything inside is skipped.
_BLOCKS = {
    ".annotation": "annotation",
    ".subannotation": "subannotation",
    ".packed-switch": "packed-switch",
    ".sparse-switch": "sparse-switch",
    ".array-data": "array-data",
}
_METHOD_REF = re.compile(r"->([^\s(]+)\(")


@dataclass
class SmaliMethod:
    method_id: str
    opcodes: list[int]


@dataclass
class SmaliClass:
    descriptor: str
    methods: list[SmaliMethod] = field(default_factory=list)
    referenced_names: set[str] = field(default_factory=set)


def parse_smali(text: str) -> SmaliClass:
    descriptor: str | None = None
    methods: list[SmaliMethod] = []
    names: set[str] = set()
    current: SmaliMethod | None = None
    skip_until: list[str] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        head = line.split(None, 1)[0]

        if skip_until:
            if head == ".end" and line.split()[1:2] == [skip_until[-1]]:
                skip_until.pop()
            elif head in _BLOCKS:
                skip_until.append(_BLOCKS[head])
            continue

        if head == ".class":
            if descriptor is not None:
                raise MalformedSmali(f"line {lineno}: second .class directive")
            descriptor = line.split()[-1]
        elif head == ".method":
            if current is not None:
                raise MalformedSmali(f"line {lineno}: .method inside an open method")
            if descriptor is None:
                raise MalformedSmali(f"line {lineno}: .method before .class")
            signature = line.split()[-1]
            names.add(signature.split("(", 1)[0])
            current = SmaliMethod(f"{descriptor}->{signature}", [])
        elif head == ".end":
            what = line.split()[1:2]
            if what == ["method"]:
                if current is None:
                    raise MalformedSmali(f"line {lineno}: .end method without .method")
                if current.opcodes:
                    methods.append(current)
                current = None
            elif what and what[0] in _BLOCKS.values():
                raise MalformedSmali(f"line {lineno}: unbalanced .end {what[0]}")
        elif head in _BLOCKS:
            skip_until.append(_BLOCKS[head])
        elif head.startswith((".", ":")):
            continue
        elif current is not None:
            canon = canonical_mnemonic(head)
            if canon is None:
                raise UnknownMnemonic(head, lineno)
            current.opcodes.append(VALUES[canon])
            names.update(_METHOD_REF.findall(line))
        else:
            raise MalformedSmali(f"line {lineno}: instruction outside a method: {line!r}")

    if current is not None:
        raise MalformedSmali(f"unterminated method {current.method_id}")
    if skip_until:
        raise MalformedSmali(f"unterminated .{skip_until[-1]} block")
    if descriptor is None:
        raise MalformedSmali("missing .class directive")
    return SmaliClass(descriptor, methods, names)
