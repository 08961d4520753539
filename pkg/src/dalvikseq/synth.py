"""Seeded generator of Apktool-style smali corpora with known ground truth.

Apps are built class -> method -> block. Every method has at least two
blocks, each ended by a terminator, so unit counts always satisfy
ISM >= BSM >= MSM >= CSM.

Two label signals can be switched on:

* a planted multi-line pattern: every class of a malicious app contains the
  pattern lines contiguously in one block; benign apps contain the same lines
  with the same per-app frequencies but spread over separate blocks and
  methods, never all three in one class;
* callee package paths drawn from label-specific pools.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .ingest import Dialect, Label, RawDocument
from .net import STREAM_SYNTH, make_rng
from .segment import SequenceUnit, UnitKind

PATTERN = (
    'const-string v2, "content://sms/inbox"',
    "sget-object v3, Landroid/os/Build;->SERIAL:Ljava/lang/String;",
    'const-string v4, "su -c"',
)

PLANTED_TOKEN = "MALSIG"

SHARED_PACKAGES = (
    "com/example/app", "com/example/util", "org/json/core", "com/util/io",
    "com/google/gson", "okhttp3/internal", "com/ui/widget", "org/apache/http",
)
MALICIOUS_PACKAGES = (
    "com/svc/pay/sms", "net/adx/push/core", "com/sys/root/exec", "cn/dl/loader",
)
BENIGN_PACKAGES = (
    "android/support/v4/app", "androidx/core/view", "com/android/billing", "android/widget",
)
CLASS_NAMES = ("Manager", "Helper", "Service", "Activity", "Receiver", "Task", "Client", "Worker")
METHOD_NAMES = ("run", "init", "send", "load", "update", "start", "check", "read")
SIGNATURES = ("()V", "(I)V", "(Ljava/lang/String;)V", "(II)I", "()Z")


@dataclass
class SynthSpec:
    n_apps: int = 200
    classes_per_app: int = 3
    methods_per_class: tuple[int, int] = (2, 3)
    blocks_per_method: tuple[int, int] = (2, 4)
    body_lines: tuple[int, int] = (1, 3)
    plant_pattern: bool = True
    # probability that a callee descriptor uses a label-specific package
    path_correlation: float = 0.0
    # False renders callees without any package path (JEB-like)
    emit_paths: bool = True
    # split "Lpkg/Cls;" and "->member" into two fragments, as some Apktool
    # text shows them
    split_descriptor: bool = False
    pattern: tuple[str, ...] = field(default=PATTERN)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def granularity_spec() -> SynthSpec:
    return SynthSpec(n_apps=1200, plant_pattern=True)


def path_token_spec() -> SynthSpec:
    return SynthSpec(n_apps=800, plant_pattern=False, path_correlation=0.8)


class _AppBuilder:
    def __init__(self, spec: SynthSpec, rng: np.random.Generator, label: Label, serial: int):
        self.spec = spec
        self.rng = rng
        self.label = label
        self.serial = serial
        self.label_no = 0

    def pick(self, seq):
        return seq[int(self.rng.integers(len(seq)))]

    def between(self, lo_hi):
        lo, hi = lo_hi
        return int(self.rng.integers(lo, hi + 1))

    def reg(self):
        return f"v{int(self.rng.integers(0, 6))}"

    def descriptor(self) -> str:
        # identical draws whatever the rendering knobs, so corpora generated
        # with different knobs share every other line
        spec = self.spec
        cls = self.pick(CLASS_NAMES)
        member = f"{self.pick(METHOD_NAMES)}{self.pick(SIGNATURES)}"
        correlated = self.rng.random() < spec.path_correlation
        own = self.pick(MALICIOUS_PACKAGES if self.label is Label.MALICIOUS else BENIGN_PACKAGES)
        shared = self.pick(SHARED_PACKAGES)
        if not spec.emit_paths:
            return f"{cls}->{member}"
        sep = " " if spec.split_descriptor else ""
        return f"L{own if correlated else shared}/{cls};{sep}->{member}"

    def body_line(self) -> str:
        r = self.rng.integers(0, 8)
        a, b = self.reg(), self.reg()
        n = int(self.rng.integers(0, 8))
        if r == 0:
            return f"const/4 {a}, 0x{n}"
        if r == 1:
            return f"move-result {a}"
        if r == 2:
            return f"add-int/lit8 {a}, {b}, 0x{n}"
        if r == 3:
            return f"iget {a}, p0, Lcom/example/app/{self.pick(CLASS_NAMES)};->f{n}:I"
        if r == 4:
            return f"new-instance {a}, Ljava/lang/StringBuilder;"
        if r == 5:
            return f'const-string {a}, "s{n}"'
        if r == 6:
            return f"move-object {a}, {b}"
        return f"mul-int {a}, {b}, {self.reg()}"

    def new_label(self, prefix: str) -> str:
        self.label_no += 1
        return f":{prefix}_{self.label_no}"

    def terminator(self, last: bool) -> str:
        if last:
            return "return-void" if self.rng.random() < 0.5 else f"return {self.reg()}"
        r = self.rng.integers(0, 4)
        if r == 0:
            return f"if-eqz {self.reg()}, {self.new_label('cond')}"
        if r == 1:
            return f"goto {self.new_label('goto')}"
        if r == 2:
            return f"invoke-static {{{self.reg()}}}, {self.descriptor()}"
        return f"invoke-virtual {{{self.reg()}, {self.reg()}}}, {self.descriptor()}"

    def build_class(self, class_no: int, inserts) -> list[str]:
        """``inserts`` maps (method, block) slots to extra body lines."""
        spec = self.spec
        name = f"{self.pick(CLASS_NAMES)}{class_no}"
        lines = [f".class public Lcom/example/app/{name};", ".super Ljava/lang/Object;"]
        for m, n_blocks in enumerate(self._shape):
            lines.append(f".method public {self.pick(METHOD_NAMES)}{m}{self.pick(SIGNATURES)}")
            lines.append(".registers 6")
            for b in range(n_blocks):
                if b and self.rng.random() < 0.5:
                    lines.append(self.new_label("cond"))
                lines.extend(self.body_line() for _ in range(self.between(spec.body_lines)))
                lines.extend(inserts.get((m, b), ()))
                lines.append(self.terminator(last=b == n_blocks - 1))
            lines.append(".end method")
        return lines

    def plan_inserts(self, class_no: int) -> dict:
        spec = self.spec
        slots = [(m, b) for m, nb in enumerate(self._shape) for b in range(nb)]
        if not spec.plant_pattern:
            return {}
        if self.label is Label.MALICIOUS:
            return {slots[int(self.rng.integers(len(slots)))]: list(spec.pattern)}
        # same per-app line frequencies, but never the full set in one class
        k = len(spec.pattern)
        j = class_no % k
        extra = [spec.pattern[j], spec.pattern[j], spec.pattern[(j + 1) % k]]
        by_method = {}
        for m, b in slots:
            by_method.setdefault(m, []).append((m, b))
        methods = [int(x) for x in self.rng.permutation(len(by_method))]
        chosen = []
        for n in range(len(extra)):
            candidates = [s for s in by_method[methods[n % len(methods)]] if s not in chosen]
            if not candidates:
                candidates = [s for s in slots if s not in chosen] or slots
            chosen.append(candidates[int(self.rng.integers(len(candidates)))])
        inserts = {}
        for slot, line in zip(chosen, extra):
            inserts.setdefault(slot, []).append(line)
        return inserts

    def build(self) -> list[str]:
        lines = []
        for c in range(self.spec.classes_per_app):
            n_methods = self.between(self.spec.methods_per_class)
            self._shape = [self.between(self.spec.blocks_per_method) for _ in range(n_methods)]
            lines.extend(self.build_class(c, self.plan_inserts(c)))
        return lines


def generate_corpus(spec: SynthSpec, seed: int) -> list[RawDocument]:
    """Half benign, half malicious apps (benign first), deterministic in ``seed``."""
    if spec.methods_per_class[0] < 1 or spec.blocks_per_method[0] < 2:
        raise ValueError("need >= 1 method per class and >= 2 blocks per method")
    rng = make_rng(seed, STREAM_SYNTH)
    n_benign = spec.n_apps // 2
    docs = []
    for n in range(spec.n_apps):
        label = Label.BENIGN if n < n_benign else Label.MALICIOUS
        app_id = f"{label.value[0]}{n:05d}"
        lines = _AppBuilder(spec, rng, label, n).build()
        docs.append(RawDocument(app_id, label, Dialect.APKTOOL, lines))
    return docs


def write_corpus(docs, root) -> Path:
    """Write ``root/<label>/<app_id>.txt`` files for the ingest pipeline."""
    root = Path(root)
    for doc in docs:
        d = root / doc.label.value
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{doc.app_id}.txt").write_text("\n".join(doc.lines) + "\n", encoding="utf-8")
    return root


def planted_token_units(n_apps: int = 100, units_per_app: int = 50, seed: int = 0,
                        lines_per_unit: tuple[int, int] = (2, 5)) -> list[SequenceUnit]:
    """Short units; every malicious unit carries one ``MALSIG`` line, no benign unit does."""
    rng = make_rng(seed, STREAM_SYNTH)
    spec = SynthSpec()
    units = []
    for n in range(n_apps):
        label = Label.BENIGN if n < n_apps // 2 else Label.MALICIOUS
        app_id = f"{label.value[0]}{n:05d}"
        b = _AppBuilder(spec, rng, label, n)
        for _ in range(units_per_app):
            lines = [b.body_line() for _ in range(b.between(lines_per_unit))]
            if label is Label.MALICIOUS:
                lines.insert(int(rng.integers(0, len(lines) + 1)), f"const-string v0, {PLANTED_TOKEN}")
            lines.append(b.terminator(last=False))
            units.append(SequenceUnit(app_id, UnitKind.BSM, label, lines))
    return units
