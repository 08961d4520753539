import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dalvikseq.ingest import Dialect, Label, RawDocument  # noqa: E402

# The same two calls as printed by each disassembler.
REFERENCE_LINES = [
    ("invoke-static AppEntry->access$100()AppEntry", Dialect.JEB),
    ("invoke-static InstallOfferPingUtils->PingAndExit(Activity, String, Z, Z, Z)V, v0, v1, v3, v3, v2",
     Dialect.JEB),
    ("invoke-static {}, <ref AppEntry.access100()AppEntry.access100@L>", Dialect.IDA),
    ("invoke-static {v0, v1, v3, v3, v2}, <void InstallOfferPingUtils.PingAndExit(ref, ref, boolean, "
     "boolean, boolean) InstallOfferPingUtils_PingAndExit@VLLZZZ>", Dialect.IDA),
    ("invoke-static {}, Lair/com/adobe/connectpro/AppEntry; ->access$100(Lair/com/adobe/connectpro/AppEntry;",
     Dialect.APKTOOL),
    ("invoke-static {v0, v1, v3, v3, v2}, Lcom/adobe/air/InstallOfferPingUtils; "
     "->PingAndExit(Landroid/app/Activity;Ljava/lang/String:ZZZ)V", Dialect.APKTOOL),
]

SMALI_EXAMPLE = [
    ".class public Lcom/e/Foo;",
    ".method public bar()V",
    "const/4 v0, 0x0",
    "if-eqz v0, :cond_0",
    "invoke-static {}, Lcom/e/Foo;->baz()V",
    ":cond_0",
    "return-void",
    ".end method",
]


@pytest.fixture
def smali_doc():
    return RawDocument("app", Label.MALICIOUS, Dialect.APKTOOL, list(SMALI_EXAMPLE))


ACCEPTANCE_RESULTS = {}  # criterion number -> result line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[n])
