"""Sequence-unit malware detection on Dalvik disassembly text."""

__version__ = "0.1.0"
