"""Tokenization, vocabulary and fixed-length integer encoding."""

from __future__ import annotations

import struct
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import EmptyTrainingSet, UsageError
from .ingest import Label
from .segment import SequenceUnit, UnitKind

PAD_ID = 0
OOV_ID = 1
PAD_TOKEN = "<PAD>"
OOV_TOKEN = "<OOV>"

DEFAULT_VOCAB_SIZE = 30000
DEFAULT_MIN_FREQ = 1

SEQ_LEN = {
    UnitKind.ISM: 15,
    UnitKind.BSM: 40,
    UnitKind.MSM: 500,
    UnitKind.CSM: 2500,
}

DATASET_MAGIC = b"DSQE"
DATASET_VERSION = 1


def tokenize_line(line: str) -> list[str]:
    return line.replace(",", " ").split()


def tokenize(unit) -> list[str]:
    """Tokens of a unit (or a plain list of lines), in line order."""
    lines = unit.lines if isinstance(unit, SequenceUnit) else unit
    tokens = []
    for line in lines:
        tokens.extend(tokenize_line(line))
    return tokens


def seq_len_for(kind: UnitKind) -> int:
    return SEQ_LEN[kind]


class Vocabulary:
    """Token to id map. Ids 0 and 1 are reserved for padding and OOV."""

    def __init__(self, tokens=()):
        self.id_to_token = [PAD_TOKEN, OOV_TOKEN]
        self.token_to_id = {}
        for tok in tokens:
            if tok in self.token_to_id:
                raise UsageError(f"duplicate vocabulary token {tok!r}")
            self.token_to_id[tok] = len(self.id_to_token)
            self.id_to_token.append(tok)

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def __len__(self):
        return self.size

    def __contains__(self, token):
        return token in self.token_to_id

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, OOV_ID)

    def decode(self, ids) -> list[str]:
        return [self.id_to_token[i] for i in ids if i != PAD_ID]

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.id_to_token == other.id_to_token

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for i, tok in enumerate(self.id_to_token):
                fh.write(f"{tok}\t{i}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        rows = []
        with open(path, encoding="utf-8") as fh:
            for n, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                tok, sep, idx = line.rpartition("\t")
                if not sep or not idx.isdigit():
                    raise UsageError(f"{path}:{n}: expected token<TAB>id")
                rows.append((int(idx), tok))
        rows.sort()
        if [i for i, _ in rows] != list(range(len(rows))) or len(rows) < 2:
            raise UsageError(f"{path}: ids are not contiguous from 0")
        return cls(tok for _, tok in rows[2:])


def build_vocabulary(units, max_size: int = DEFAULT_VOCAB_SIZE,
                     min_freq: int = DEFAULT_MIN_FREQ) -> Vocabulary:
    """Rank tokens by (count desc, token asc) and keep the top ``max_size - 2``."""
    if max_size < 3:
        raise UsageError("max_size must be >= 3")
    if min_freq < 1:
        raise UsageError("min_freq must be >= 1")
    units = list(units)
    if not units:
        raise EmptyTrainingSet("cannot build a vocabulary from zero units")
    counts = Counter()
    for u in units:
        counts.update(tokenize(u))
    ranked = sorted((tok for tok, c in counts.items() if c >= min_freq),
                    key=lambda tok: (-counts[tok], tok))
    return Vocabulary(ranked[: max_size - 2])


@dataclass
class EncodedSequence:
    ids: np.ndarray
    label: int
    app_id: str


def encode_tokens(tokens, vocab: Vocabulary, seq_len: int) -> np.ndarray:
    if seq_len < 1:
        raise UsageError("sequence length must be >= 1")
    out = np.zeros(seq_len, dtype=np.int32)
    head = tokens[:seq_len]
    out[: len(head)] = [vocab.lookup(t) for t in head]
    return out


def encode(unit: SequenceUnit, vocab: Vocabulary, seq_len: int) -> EncodedSequence:
    """Head-truncate or tail-pad the unit's token ids to ``seq_len``."""
    ids = encode_tokens(tokenize(unit), vocab, seq_len)
    return EncodedSequence(ids, int(unit.label is Label.MALICIOUS), unit.app_id)


def encode_all(units, vocab: Vocabulary, seq_len: int):
    """Stack encodings into ``(ids[N, L] int32, labels[N] uint8, app_ids)``."""
    units = list(units)
    ids = np.zeros((len(units), seq_len), dtype=np.int32)
    labels = np.zeros(len(units), dtype=np.uint8)
    app_ids = []
    for n, u in enumerate(units):
        enc = encode(u, vocab, seq_len)
        ids[n] = enc.ids
        labels[n] = enc.label
        app_ids.append(enc.app_id)
    return ids, labels, app_ids


def save_dataset(path, ids: np.ndarray, labels: np.ndarray) -> None:
    """Binary container: header, then all id rows, then one label byte per row."""
    ids = np.ascontiguousarray(ids, dtype="<i4")
    count, seq_len = ids.shape
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    if labels.shape != (count,):
        raise UsageError("one label per row required")
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<BII", DATASET_VERSION, seq_len, count))
        fh.write(ids.tobytes(order="C"))
        fh.write(labels.tobytes())


def load_dataset(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != DATASET_MAGIC:
        raise UsageError(f"{path}: not an encoded dataset")
    version, seq_len, count = struct.unpack_from("<BII", data, 4)
    if version != DATASET_VERSION:
        raise UsageError(f"{path}: unsupported dataset version {version}")
    pos = 4 + struct.calcsize("<BII")
    n_ids = seq_len * count
    ids = np.frombuffer(data, dtype="<i4", count=n_ids, offset=pos).reshape(count, seq_len)
    pos += 4 * n_ids
    labels = np.frombuffer(data, dtype=np.uint8, count=count, offset=pos)
    if pos + count != len(data):
        raise UsageError(f"{path}: trailing or missing bytes")
    return ids.astype(np.int32), labels.copy()
