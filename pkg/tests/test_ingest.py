from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import REFERENCE_LINES
from dalvikseq.ingest import (Dialect, DuplicateAppId, EmptyCorpus, Label, MalformedEntry, MissingFile,
                              Undecidable, detect_dialect, load_corpus, load_manifest, normalize,
                              scan_directory)


def write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def test_load_manifest_two_entries(tmp_path):
    m = write(tmp_path / "m.tsv", "# comment\na\tx.txt\tbenign\tauto\nb\t/abs/y.txt\tMALICIOUS\tapktool\n")
    manifest = load_manifest(m)
    assert [e.app_id for e in manifest] == ["a", "b"]
    assert manifest.entries[0].path == tmp_path / "x.txt"
    assert manifest.entries[1].path == Path("/abs/y.txt")
    assert manifest.entries[1].label is Label.MALICIOUS
    assert manifest.entries[1].dialect is Dialect.APKTOOL


def test_load_manifest_duplicate_id(tmp_path):
    m = write(tmp_path / "m.tsv", "a\tx.txt\tbenign\tauto\na\ty.txt\tbenign\tauto\n")
    with pytest.raises(DuplicateAppId) as err:
        load_manifest(m)
    assert err.value.app_id == "a"


def test_load_manifest_bad_label_names_line(tmp_path):
    m = write(tmp_path / "m.tsv", "a\tx.txt\tbenign\tauto\nb\ty.txt\triskware\tauto\n")
    with pytest.raises(MalformedEntry) as err:
        load_manifest(m)
    assert err.value.line_no == 2
    assert "line 2" in str(err.value)


def test_load_manifest_wrong_field_count(tmp_path):
    m = write(tmp_path / "m.tsv", "a\tx.txt\tbenign\n")
    with pytest.raises(MalformedEntry):
        load_manifest(m)


def test_load_manifest_missing(tmp_path):
    with pytest.raises(MissingFile):
        load_manifest(tmp_path / "nope.tsv")


def test_scan_directory_labels(tmp_path):
    write(tmp_path / "benign" / "x.txt", "nop\n")
    write(tmp_path / "malicious" / "y.txt", "nop\n")
    m = scan_directory(tmp_path)
    assert [(e.app_id, e.label) for e in m] == [("x", Label.BENIGN), ("y", Label.MALICIOUS)]
    assert all(e.dialect is Dialect.AUTO for e in m)


def test_scan_directory_benign_only(tmp_path):
    for n in range(3):
        write(tmp_path / "benign" / f"a{n}.txt", "nop\n")
    m = scan_directory(tmp_path)
    assert len(m) == 3 and all(e.label is Label.BENIGN for e in m)


def test_scan_directory_empty(tmp_path):
    with pytest.raises(EmptyCorpus):
        scan_directory(tmp_path)


@pytest.mark.parametrize("line,dialect", REFERENCE_LINES)
def test_detect_dialect_reference_lines(line, dialect):
    assert detect_dialect([line]) is dialect


@pytest.mark.parametrize("line,dialect", [
    ("invoke-static {}, Lair/com/adobe/connectpro/AppEntry;->access$100(...", Dialect.APKTOOL),
    ("invoke-static {}, <ref AppEntry.access100()...@L>", Dialect.IDA),
    ("invoke-static AppEntry->access$100()AppEntry", Dialect.JEB),
    # markdown-escaped form as it appears in extracted text
    ("invoke-static {}, Lair/com/adobe/connectpro/AppEntry; ->access\\$100(Lair/com/adobe/connectpro/AppEntry;",
     Dialect.APKTOOL),
])
def test_detect_dialect_variants(line, dialect):
    assert detect_dialect([line]) is dialect


def test_detect_dialect_tie_prefers_apktool():
    apk, ida = REFERENCE_LINES[4][0], REFERENCE_LINES[2][0]
    assert detect_dialect([ida, apk]) is Dialect.APKTOOL
    assert detect_dialect([REFERENCE_LINES[0][0], ida]) is Dialect.IDA


def test_detect_dialect_majority():
    lines = [REFERENCE_LINES[0][0]] * 3 + [REFERENCE_LINES[4][0]]
    assert detect_dialect(lines) is Dialect.JEB


def test_detect_dialect_undecidable():
    with pytest.raises(Undecidable):
        detect_dialect(["const/4 v0, 0x0", "return-void"])
    with pytest.raises(Undecidable):
        detect_dialect(["", "   "])


def test_detect_dialect_window_is_500_lines():
    lines = ["nop"] * 500 + [REFERENCE_LINES[0][0]]
    with pytest.raises(Undecidable):
        detect_dialect(lines)


def test_normalize_examples():
    assert normalize(["# header", "", "  const/4 v0, 0x0  "]) == ["const/4 v0, 0x0"]
    assert normalize([]) == []
    lines = ["a", "# c1", "b", "c", "   # c2", "d", "e"]
    assert normalize(lines, Dialect.JEB) == ["a", "b", "c", "d", "e"]


def test_normalize_keeps_directives():
    lines = [".class public LFoo;", ":cond_0", ".end method"]
    assert normalize(lines) == lines


line_text = st.text(alphabet=st.sampled_from(list("ab #\t.:-v0,")), max_size=12)


@given(st.lists(line_text, max_size=30))
def test_normalize_idempotent_and_ordered(lines):
    once = normalize(lines)
    assert normalize(once) == once
    assert all(s and not s.startswith("#") and s == s.strip() for s in once)
    # surviving lines are a subsequence of the stripped input
    it = iter(x.strip() for x in lines)
    assert all(any(s == x for x in it) for s in once)


def test_load_corpus_round_trip(tmp_path):
    files = {("benign", "b1"): REFERENCE_LINES[0][0], ("benign", "b2"): REFERENCE_LINES[2][0],
             ("malicious", "m1"): REFERENCE_LINES[4][0], ("malicious", "m2"): "# c\n" + REFERENCE_LINES[5][0]}
    for (lab, name), text in files.items():
        write(tmp_path / lab / f"{name}.txt", text + "\n\n")
    docs = load_corpus(scan_directory(tmp_path))
    assert sorted((d.app_id, d.label.value) for d in docs) == sorted((n, lab) for lab, n in files)
    assert [d.dialect for d in docs] == [Dialect.JEB, Dialect.IDA, Dialect.APKTOOL, Dialect.APKTOOL]
    assert all(len(d.lines) == 1 for d in docs)


def test_load_corpus_forced_dialect_and_bad_bytes(tmp_path):
    write(tmp_path / "benign" / "x.txt", "nop\n")
    (tmp_path / "malicious").mkdir()
    (tmp_path / "malicious" / "y.txt").write_bytes(b"const-string v0, \"\xff\xfe\"\n")
    docs = load_corpus(scan_directory(tmp_path), Dialect.IDA)
    assert all(d.dialect is Dialect.IDA for d in docs)
    assert "�" in docs[1].lines[0]
