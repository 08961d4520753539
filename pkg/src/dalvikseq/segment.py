"""Split normalized documents into instruction, block, method or class units.

Every segmentation is a partition: concatenating the units of a document in
order gives back the document's lines exactly.
"""

from __future__ import annotations

import enum
import logging
import re
from dataclasses import dataclass

from .ingest import Dialect, Label, RawDocument

log = logging.getLogger(__name__)


class UnitKind(enum.Enum):
    ISM = "ism"
    BSM = "bsm"
    MSM = "msm"
    CSM = "csm"


@dataclass
class SequenceUnit:
    app_id: str
    kind: UnitKind
    label: Label
    lines: list[str]

    def __post_init__(self):
        if not self.lines:
            raise ValueError("a sequence unit needs at least one line")


# Jumps, calls and exits end straight-line flow. Matched as mnemonic prefixes.
DALVIK_TERMINATORS = (
    "goto",
    "if-",
    "invoke-",
    "return",
    "throw",
    "packed-switch",
    "sparse-switch",
)


@dataclass(frozen=True)
class Markers:
    method_start: re.Pattern
    method_end: re.Pattern
    class_start: re.Pattern


_SMALI_MARKERS = Markers(
    re.compile(r"^\.method\b"),
    re.compile(r"^\.end\s+method\b"),
    re.compile(r"^\.class\b"),
)

# IDA/IDAPython exports have no smali directives; accept the smali form plus
# proc/endp function frames and "class"/"method" header lines.
_IDA_MARKERS = Markers(
    re.compile(r"^(?:\.method\b|method\s|\S+\s+proc\b)"),
    re.compile(r"^(?:\.end\s+method\b|end\s+method\b|\S+\s+endp\b)"),
    re.compile(r"^(?:\.class\b|class\s)"),
)

DEFAULT_MARKERS = {
    Dialect.APKTOOL: _SMALI_MARKERS,
    Dialect.JEB: _SMALI_MARKERS,
    Dialect.IDA: _IDA_MARKERS,
}


def terminator_set(dialect: Dialect = Dialect.APKTOOL) -> tuple[str, ...]:
    """Mnemonic prefixes that close a basic block.

    All three disassemblers print Dalvik mnemonics, so the set is shared.
    """
    return DALVIK_TERMINATORS


def mnemonic(line: str) -> str:
    parts = line.split(None, 1)
    return parts[0].lower() if parts else ""


def is_terminator(line: str, patterns=DALVIK_TERMINATORS) -> bool:
    return mnemonic(line).startswith(tuple(patterns))


def _units(doc, kind, groups):
    return [SequenceUnit(doc.app_id, kind, doc.label, g) for g in groups if g]


def _split_blocks(lines, patterns):
    groups, cur = [], []
    for line in lines:
        cur.append(line)
        if is_terminator(line, patterns):
            groups.append(cur)
            cur = []
    groups.append(cur)
    return groups


def _split_methods(lines, markers):
    groups, cur = [], []
    in_method = False
    for line in lines:
        if markers.method_start.match(line):
            # a new header also closes an unterminated method or a residual gap
            groups.append(cur)
            cur = [line]
            in_method = True
        elif in_method and markers.method_end.match(line):
            cur.append(line)
            groups.append(cur)
            cur = []
            in_method = False
        else:
            cur.append(line)
    groups.append(cur)
    return groups


def _split_classes(lines, markers):
    groups, cur = [], []
    for line in lines:
        if markers.class_start.match(line):
            groups.append(cur)
            cur = []
        cur.append(line)
    groups.append(cur)
    return groups


def segment(doc: RawDocument, kind: UnitKind, terminators=None,
            markers: Markers | None = None) -> list[SequenceUnit]:
    """Cut ``doc`` into units of ``kind``.

    BSM closes a block after any terminator line; labels do not open one.
    MSM emits method bodies plus the residual lines between them. CSM opens
    a new unit at each class header.
    """
    lines = doc.lines
    if not lines:
        return []
    if kind is UnitKind.ISM:
        return _units(doc, kind, [[line] for line in lines])
    if kind is UnitKind.BSM:
        patterns = terminator_set(doc.dialect) if terminators is None else tuple(terminators)
        return _units(doc, kind, _split_blocks(lines, patterns))
    markers = markers or DEFAULT_MARKERS[doc.dialect]
    if kind is UnitKind.MSM:
        groups = _split_methods(lines, markers)
    elif kind is UnitKind.CSM:
        groups = _split_classes(lines, markers)
    else:
        raise ValueError(kind)
    units = _units(doc, kind, groups)
    if len(units) == 1:
        log.info("%s: no %s boundaries found, kept as one unit", doc.app_id, kind.value)
    return units


def segment_corpus(docs, kind: UnitKind, **kw) -> list[SequenceUnit]:
    out = []
    for doc in docs:
        out.extend(segment(doc, kind, **kw))
    return out


def unit_stats(units) -> tuple[int, float]:
    """(number of units, mean lines per unit)."""
    if not units:
        return 0, 0.0
    return len(units), sum(len(u.lines) for u in units) / len(units)
