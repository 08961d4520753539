"""Corpus loading, disassembler dialect detection and line normalization."""

from __future__ import annotations

import enum
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DalvikSeqError, UsageError

log = logging.getLogger(__name__)

DETECT_WINDOW = 500


class Label(enum.Enum):
    BENIGN = "benign"
    MALICIOUS = "malicious"


class Dialect(enum.Enum):
    AUTO = "auto"
    JEB = "jeb"
    IDA = "ida"
    APKTOOL = "apktool"


class MissingFile(UsageError):
    pass


class MalformedEntry(UsageError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"manifest line {line_no}: {reason}")
        self.line_no = line_no


class DuplicateAppId(UsageError):
    def __init__(self, app_id: str):
        super().__init__(f"duplicate app_id {app_id!r}")
        self.app_id = app_id


class EmptyCorpus(UsageError):
    pass


class Undecidable(DalvikSeqError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    app_id: str
    path: Path
    label: Label
    dialect: Dialect = Dialect.AUTO


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self):
        seen_ids, seen_paths = set(), set()
        for e in self.entries:
            if e.app_id in seen_ids:
                raise DuplicateAppId(e.app_id)
            if e.path in seen_paths:
                raise UsageError(f"path listed twice: {e.path}")
            seen_ids.add(e.app_id)
            seen_paths.add(e.path)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


@dataclass
class RawDocument:
    app_id: str
    label: Label
    dialect: Dialect
    lines: list[str]


def _parse_enum(enum_cls, text: str, line_no: int, what: str):
    try:
        return enum_cls(text.strip().lower())
    except ValueError:
        allowed = ", ".join(m.value for m in enum_cls)
        raise MalformedEntry(line_no, f"{what} {text!r} not in {{{allowed}}}") from None


def load_manifest(path) -> DatasetManifest:
    """Read a tab-separated ``app_id, path, label, dialect`` manifest.

    Relative paths are resolved against the manifest's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"manifest not found: {path}")
    base = path.parent
    entries = []
    seen = set()
    with open(path, encoding="utf-8", errors="replace") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise MalformedEntry(line_no, f"expected 4 tab-separated fields, got {len(parts)}")
            app_id, file_path, label, dialect = (p.strip() for p in parts)
            if not app_id or not file_path:
                raise MalformedEntry(line_no, "empty app_id or path")
            if app_id in seen:
                raise DuplicateAppId(app_id)
            seen.add(app_id)
            p = Path(file_path)
            entries.append(ManifestEntry(
                app_id,
                p if p.is_absolute() else base / p,
                _parse_enum(Label, label, line_no, "label"),
                _parse_enum(Dialect, dialect, line_no, "dialect"),
            ))
    return DatasetManifest(entries)


def write_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in manifest:
            fh.write(f"{e.app_id}\t{e.path}\t{e.label.value}\t{e.dialect.value}\n")


def scan_directory(root) -> DatasetManifest:
    """Build a manifest from ``root/benign/*.txt`` and ``root/malicious/*.txt``."""
    root = Path(root)
    entries = []
    for label in (Label.BENIGN, Label.MALICIOUS):
        sub = root / label.value
        if not sub.is_dir():
            continue
        for f in sorted(sub.glob("*.txt")):
            if f.is_file():
                entries.append(ManifestEntry(f.stem, f, label, Dialect.AUTO))
    if not entries:
        raise EmptyCorpus(f"no .txt files under {root}/benign or {root}/malicious")
    return DatasetManifest(entries)


# An Apktool/smali type descriptor: L<path>/<Name>;
_APKTOOL_DESC = re.compile(r"(?<![\w$/])L[\w$/-]+;\s*->")
_APKTOOL_REGS = re.compile(r"\{[^}]*\}\s*,")
_APKTOOL_DIRECTIVE = re.compile(r"^\.(?:class|super|method|end method|source)\b")
_IDA_ANGLE = re.compile(r"<(?:ref|void|[\w$.]+)\s[^>]*@[^>]*>")
_JEB_CALL = re.compile(r"(?:^|[\s,])[\w$]+->[\w$<>]+\(")


def _signature_scores(lines) -> dict[Dialect, int]:
    scores = {Dialect.APKTOOL: 0, Dialect.IDA: 0, Dialect.JEB: 0}
    for line in lines:
        if _IDA_ANGLE.search(line):
            scores[Dialect.IDA] += 1
        elif _APKTOOL_DESC.search(line) and (_APKTOOL_REGS.search(line) or _APKTOOL_DIRECTIVE.match(line)):
            scores[Dialect.APKTOOL] += 1
        elif _APKTOOL_DIRECTIVE.match(line) and re.search(r"\sL[\w$/]+;", line):
            scores[Dialect.APKTOOL] += 1
        elif _JEB_CALL.search(line) and "<" not in line and not _APKTOOL_DESC.search(line):
            scores[Dialect.JEB] += 1
    return scores


def detect_dialect(lines) -> Dialect:
    """Vote over the first 500 nonblank lines; ties go APKTOOL > IDA > JEB."""
    window = []
    for line in lines:
        s = line.strip()
        if s and not s.startswith("#"):
            window.append(s)
            if len(window) == DETECT_WINDOW:
                break
    if not window:
        raise Undecidable("no nonblank lines to inspect")
    scores = _signature_scores(window)
    best = max(scores.values())
    if best == 0:
        raise Undecidable("no dialect signature found in the first "
                          f"{DETECT_WINDOW} lines; pin the dialect in the manifest")
    for d in (Dialect.APKTOOL, Dialect.IDA, Dialect.JEB):
        if scores[d] == best:
            return d
    raise AssertionError("unreachable")


def normalize(lines, dialect: Dialect | None = None) -> list[str]:
    """Trim lines, dropping blanks and ``#`` comment lines.

    The rule is the same for every dialect; ``dialect`` is accepted so callers
    can pass it uniformly.
    """
    out = []
    for line in lines:
        s = line.strip()
        if s and not s.startswith("#"):
            out.append(s)
    return out


def read_lines(path) -> list[str]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"corpus file not found: {path}")
    with open(path, encoding="utf-8", errors="replace") as fh:
        return fh.read().splitlines()


def load_document(entry: ManifestEntry, dialect: Dialect = Dialect.AUTO) -> RawDocument:
    """Read, resolve the dialect (override > manifest > detection), normalize."""
    raw = read_lines(entry.path)
    chosen = dialect if dialect is not Dialect.AUTO else entry.dialect
    if chosen is Dialect.AUTO:
        chosen = detect_dialect(raw)
    lines = normalize(raw, chosen)
    if not lines:
        log.warning("%s: no instruction lines after normalization", entry.app_id)
    return RawDocument(entry.app_id, entry.label, chosen, lines)


def load_corpus(manifest: DatasetManifest, dialect: Dialect = Dialect.AUTO) -> list[RawDocument]:
    return [load_document(e, dialect) for e in manifest]
