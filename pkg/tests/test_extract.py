import io
import json
import zipfile
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from dexfixture import MINIMAL_METHOD_ID, MINIMAL_OPCODES, MINIMAL_SMALI, minimal_dex
from dexdedup.cli import main
from dexdedup.errors import BadApk, EmptyCorpus, MalformedSmali, NoDexEntries, UnknownMnemonic
from dexdedup.extract import (extract_corpus, extract_from_apk, extract_from_dex, extract_from_smali,
                              extract_from_smali_dir, read_jsonl, write_jsonl)
from dexdedup.opcodes import MNEMONICS
from dexdedup.synth import STANDARD_OPCODES, DexBuilder, build_apk

RICH_SMALI = """\
.class public Lcom/x/A;
.super Ljava/lang/Object;
.source "A.java"

.annotation system Ldalvik/annotation/MemberClasses;
    value = {
        Lcom/x/A$B;
    }
.end annotation

# instance fields
.field private x:I

.method public foo()V
    .locals 2
    .param p1, "x"    # I
        .annotation build Lfoo/Bar;
        .end annotation
    .end param
    .prologue
    .line 10
    const/4 v0, 0x1
    packed-switch v0, :pswitch_data_0

    :goto_0
    fill-array-data v1, :array_0
    sparse-switch v0, :sswitch_data_0
    return v0

    :pswitch_data_0
    .packed-switch 0x1
        :goto_0
    .end packed-switch

    :array_0
    .array-data 4
        0x1t
    .end array-data

    :sswitch_data_0
    .sparse-switch
        0x5 -> :goto_0
    .end sparse-switch
.end method

.method public constructor <init>()V
    .registers 1
    invoke-direct {p0}, Ljava/lang/Object;-><init>()V
    return-void
.end method

.method public abstract nothing()V
.end method
"""


def rich_dex():
    b = DexBuilder()
    b.add_opcodes("Lcom/x/A;", "foo", [0x12, 0x2B, 0x26, 0x2C, 0x0F])
    b.add_opcodes("Lcom/x/A;", "<init>", [0x70, 0x0E])
    b.add_method("Lcom/x/A;", "nothing", None, access=0x401)
    return b.build()


def as_multiset(seqs):
    return Counter(s.opcodes for s in seqs)


def test_smali_example():
    text = ".class LA;\n.method public a()V\nconst/4 v0, 0x0\nreturn-void\n.end method\n"
    assert [s.opcodes for s in extract_from_smali(text)] == [(0x12, 0x0E)]


def test_class_without_methods():
    assert extract_from_smali(".class public LA;\n.super Ljava/lang/Object;\n") == []


def test_unknown_mnemonic_names_line():
    text = ".class LA;\n.method a()V\nfrob-widget v0\n.end method\n"
    with pytest.raises(UnknownMnemonic) as info:
        extract_from_smali(text)
    assert info.value.line == 3


@pytest.mark.parametrize("text", [
    ".class LA;\n.method a()V\nreturn-void\n",                       # unterminated method
    ".class LA;\n.end method\n",                                       # stray end
    ".class LA;\n.method a()V\n.method b()V\n.end method\n.end method\n",  # nested
    ".method a()V\nreturn-void\n.end method\n",                        # no .class
    ".class LA;\n.class LB;\n",                                        # two .class
    ".class LA;\nreturn-void\n",                                       # instruction outside method
])
def test_malformed_smali(text):
    with pytest.raises(MalformedSmali):
        extract_from_smali(text)


def test_listing_spellings_are_accepted():
    text = (".class LA;\n.method a()V\nconst-string-jumbo v0, \"s\"\n"
            "invoke-interface-range {v0 .. v1}, LI;->f()V\nreturn-void\n.end method\n")
    assert [s.opcodes for s in extract_from_smali(text)] == [(0x1B, 0x78, 0x0E)]


def test_minimal_dual_fixture():
    from_smali = extract_from_smali(MINIMAL_SMALI)
    from_dex, _ = extract_from_dex(minimal_dex())
    assert from_smali == from_dex
    assert from_smali[0].method_id == MINIMAL_METHOD_ID
    assert from_smali[0].opcodes == MINIMAL_OPCODES


def test_rich_dual_fixture():
    from_smali = extract_from_smali(RICH_SMALI)
    from_dex, report = extract_from_dex(rich_dex())
    assert as_multiset(from_smali) == as_multiset(from_dex)
    assert sorted(s.method_id for s in from_smali) == sorted(s.method_id for s in from_dex)
    assert report.method_count == 2


@settings(max_examples=60)
@given(st.lists(st.lists(st.sampled_from(STANDARD_OPCODES), min_size=1, max_size=20), min_size=1, max_size=6))
def test_random_dual_fixtures(bodies):
    b = DexBuilder()
    lines = [".class public LZ;", ".super Ljava/lang/Object;"]
    for i, body in enumerate(bodies):
        b.add_opcodes("LZ;", f"m{i}", body)
        lines.append(f".method public m{i}()V")
        lines.append("    .locals 4")
        lines.extend(f"    {MNEMONICS[op]} v0" for op in body)
        lines.append(".end method")
    from_dex, _ = extract_from_dex(b.build())
    assert as_multiset(extract_from_smali("\n".join(lines))) == as_multiset(from_dex)


def _zip(entries: dict[str, bytes]) -> bytes:
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as z:
        for name, data in entries.items():
            z.writestr(name, data)
    return buf.getvalue()


def test_apk_multidex_order():
    second = DexBuilder()
    second.add_opcodes("LB;", "b", [0x0E])
    apk = _zip({"classes2.dex": second.build(), "assets/classes9.dex": b"junk", "classes.dex": minimal_dex()})
    seqs, report = extract_from_apk(apk, "multi")
    assert [s.method_id for s in seqs] == [MINIMAL_METHOD_ID, "LB;->b()V"]
    assert report.method_count == 2


def test_apk_with_fixture_equals_direct():
    apk = build_apk([minimal_dex()], None)
    assert extract_from_apk(apk, "m")[0] == extract_from_dex(minimal_dex(), "m")[0]


def test_apk_without_dex():
    with pytest.raises(NoDexEntries):
        extract_from_apk(_zip({"AndroidManifest.xml": b"<manifest/>"}), "x")


def test_not_a_zip():
    with pytest.raises(BadApk):
        extract_from_apk(b"not a zip", "x")


def test_malformed_entry_is_a_warning():
    apk = _zip({"classes.dex": minimal_dex(), "classes2.dex": b"dex\n035\0short"})
    seqs, report = extract_from_apk(apk, "x")
    assert [s.opcodes for s in seqs] == [MINIMAL_OPCODES]
    assert any(w.startswith("classes2.dex") for w in report.parse_warnings)


def test_min_length_filter():
    seqs, report = extract_from_dex(rich_dex(), "r", min_length=3)
    assert [s.opcodes for s in seqs] == [(0x12, 0x2B, 0x26, 0x2C, 0x0F)]
    assert report.filtered_methods == 1
    assert report.method_count == len(seqs)


def test_smali_dir_isolates_bad_files(tmp_path):
    app = tmp_path / "app"
    (app / "smali" / "com" / "x").mkdir(parents=True)
    (app / "smali" / "com" / "x" / "A.smali").write_text(RICH_SMALI)
    (app / "smali" / "LA.smali").write_text(MINIMAL_SMALI)
    (app / "smali" / "Bad.smali").write_text(".class LBad;\n.method a()V\nfrob v0\n.end method\n")
    seqs, report = extract_from_smali_dir(app, "app")
    assert report.method_count == 3
    assert len(report.parse_warnings) == 1


def test_corpus_jsonl_roundtrip(tmp_path):
    (tmp_path / "a.dex").write_bytes(minimal_dex())
    (tmp_path / "b.dex").write_bytes(rich_dex())
    apps = extract_corpus([tmp_path])
    assert [a.app_id for a in apps] == ["a", "b"]
    buf = io.StringIO()
    write_jsonl(apps, buf)
    first = json.loads(buf.getvalue().splitlines()[0])
    assert first == {"app_id": "a", "methods": [{"id": MINIMAL_METHOD_ID, "opcodes": [18, 15]}]}
    back = list(read_jsonl(io.StringIO(buf.getvalue())))
    assert [(a.app_id, a.sequences) for a in back] == [(a.app_id, a.sequences) for a in apps]


def test_empty_corpus(tmp_path):
    with pytest.raises(EmptyCorpus):
        extract_corpus([tmp_path])


def test_cli_extract(tmp_path, capsys):
    (tmp_path / "a.dex").write_bytes(minimal_dex())
    out = tmp_path / "out.jsonl"
    assert main(["extract", str(tmp_path / "a.dex"), "--format", "dex", "--out", str(out), "--quiet"]) == 0
    assert json.loads(out.read_text())["methods"][0]["opcodes"] == [18, 15]
    sidecar = json.loads((tmp_path / "out.jsonl.manifest.json").read_text())
    assert sidecar["subcommand"] == "extract"
    assert list(sidecar["inputs"].values()) and all(len(d) == 16 for d in sidecar["inputs"].values())
    assert main(["extract", str(tmp_path / "missing.dex"), "--quiet"]) != 0
