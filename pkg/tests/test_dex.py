import struct

import pytest
from hypothesis import given, settings, strategies as st

from conftest import androguard_opcodes
from dexfixture import MINIMAL_METHOD_ID, MINIMAL_OPCODES, minimal_dex
from dexdedup.dex import DexFile, scan_dex, walk_code_units
from dexdedup.errors import MalformedDex, MethodParseError
from dexdedup.extract import extract_from_dex
from dexdedup.opcodes import MODERN_WIDTHS, WIDTHS
from dexdedup.synth import STANDARD_OPCODES, DexBuilder, assemble


def test_minimal_fixture_yields_const4_return():
    seqs, report = extract_from_dex(minimal_dex(), "minimal")
    assert [(s.method_id, s.opcodes) for s in seqs] == [(MINIMAL_METHOD_ID, MINIMAL_OPCODES)]
    assert report.method_count == 1
    assert report.parse_warnings == []


def test_minimal_fixture_agrees_with_independent_disassembler():
    assert androguard_opcodes(minimal_dex()) == {MINIMAL_METHOD_ID: MINIMAL_OPCODES}


def test_zero_method_dex():
    seqs, report = extract_from_dex(minimal_dex(with_method=False), "empty")
    assert seqs == []
    assert report.method_count == 0


@pytest.mark.parametrize("cut", [0, 7, 8, 0x40, 0x6F])
def test_truncated_header(cut):
    with pytest.raises(MalformedDex):
        DexFile(minimal_dex()[:cut])


def test_bad_magic_reports_offset():
    data = b"zip\n035\0" + minimal_dex()[8:]
    with pytest.raises(MalformedDex) as info:
        DexFile(data)
    assert info.value.offset == 0


def test_section_out_of_bounds():
    data = bytearray(minimal_dex())
    struct.pack_into("<I", data, 60, len(data) + 100)  # string_ids_off
    with pytest.raises(MalformedDex) as info:
        DexFile(bytes(data))
    assert info.value.offset is not None


def test_checksum_mismatch_is_a_warning_not_an_error():
    data = bytearray(minimal_dex())
    data[8] ^= 0xFF
    scan = scan_dex(bytes(data))
    assert [m.opcodes for m in scan.methods] == [list(MINIMAL_OPCODES)]
    assert any("checksum" in w for w in scan.warnings)


def test_overrunning_method_is_isolated():
    b = DexBuilder()
    b.add_opcodes("LA;", "good", [0x12, 0x0F])
    b.add_method("LA;", "bad", [0x0014])  # const (3 units) with one unit present
    seqs, report = extract_from_dex(b.build(), "x")
    assert [s.method_id for s in seqs] == ["LA;->good()V"]
    assert report.skipped_methods == 1
    assert any("bad" in w for w in report.parse_warnings)


def test_walker_widths_and_payloads():
    units = assemble([0x12, 0x2B, 0x26, 0x2C, 0x0F])
    walk = walk_code_units(units)
    assert walk.opcodes == [0x12, 0x2B, 0x26, 0x2C, 0x0F]
    assert walk.payloads_skipped == 3


def test_walker_records_unused_opcodes():
    walk = walk_code_units([0x003E, 0x000E])
    assert walk.opcodes == [0x3E, 0x0E]
    assert walk.unused_seen == 1


def test_modern_widths_only_differ_at_top_slots():
    diff = [v for v in range(256) if WIDTHS[v] != MODERN_WIDTHS[v]]
    assert diff and min(diff) >= 0xFA


@given(st.lists(st.integers(0, 0xFFFF), max_size=64))
def test_walker_is_total_on_arbitrary_units(units):
    try:
        walk = walk_code_units(units)
    except MethodParseError:
        return
    assert len(walk.opcodes) <= len(units)


@given(st.lists(st.sampled_from(STANDARD_OPCODES), min_size=1, max_size=40))
def test_walker_inverts_assembler(opcodes):
    assert walk_code_units(assemble(opcodes)).opcodes == opcodes


@settings(max_examples=300)
@given(st.data())
def test_fuzzed_dex_parses_or_raises_typed_error(data):
    base = bytearray(minimal_dex())
    for _ in range(data.draw(st.integers(1, 8))):
        pos = data.draw(st.integers(0, len(base) - 1))
        base[pos] = data.draw(st.integers(0, 255))
    cut = data.draw(st.integers(0, len(base)))
    try:
        scan = scan_dex(bytes(base[:cut]))
    except MalformedDex:
        return
    for m in scan.methods:
        assert all(0 <= v <= 0xFF for v in m.opcodes)


def test_builder_dex_agrees_with_androguard():
    b = DexBuilder()
    b.add_opcodes("Lcom/x/A;", "foo", [0x12, 0x2B, 0x26, 0x2C, 0x0F])
    b.add_opcodes("Lcom/x/A;", "<init>", [0x70, 0x0E])
    b.add_opcodes("Lcom/x/B;", "bar", [0x6E, 0x0C, 0x39, 0x28, 0x11], proto=("Ljava/lang/String;", ("I", "J")))
    data = b.build()
    seqs, _ = extract_from_dex(data, "b")
    assert {s.method_id: s.opcodes for s in seqs} == androguard_opcodes(data)


@settings(max_examples=25)
@given(st.lists(st.lists(st.sampled_from(STANDARD_OPCODES), min_size=1, max_size=30), min_size=1, max_size=5))
def test_random_bodies_agree_with_androguard(bodies):
    b = DexBuilder()
    for i, body in enumerate(bodies):
        b.add_opcodes("Lp/Q;", f"m{i}", body)
    data = b.build()
    seqs, _ = extract_from_dex(data, "r")
    assert {s.method_id: s.opcodes for s in seqs} == androguard_opcodes(data)


def test_same_bytes_same_output():
    data = minimal_dex()
    assert extract_from_dex(data, "a") == extract_from_dex(data, "a")
