"""Splitting, training loop, evaluation, corpus statistics and experiments."""

from __future__ import annotations

import hashlib
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import __version__
from .encode import (DEFAULT_MIN_FREQ, DEFAULT_VOCAB_SIZE, build_vocabulary, encode_all,
                     seq_len_for, tokenize)
from .errors import DalvikSeqError, EmptyTrainingSet, UsageError
from .ingest import Label
from .net import (STREAM_DROPOUT, STREAM_SHUFFLE, STREAM_SPLIT, AdamState, ModelConfig,
                  adam_update, backward, bce_loss, forward, init_params, make_rng)
from .segment import UnitKind, segment_corpus

log = logging.getLogger(__name__)

REPORT_VERSION = 1
CSV_COLUMNS = ("kind", "dialect", "tpr", "fpr", "acc", "mean_tokens", "n_sequences")


class TooFewApps(UsageError):
    pass


class EmptyTable(DalvikSeqError):
    pass


@dataclass(frozen=True)
class ContingencyTable:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Metrics:
    tpr: float
    fpr: float
    acc: float

    def to_dict(self) -> dict:
        return asdict(self)


def metrics_from(table: ContingencyTable) -> Metrics:
    """TPR, FPR and accuracy; a zero denominator gives 0."""
    if table.total == 0:
        raise EmptyTable("no evaluated items")
    pos = table.tp + table.fn
    neg = table.fp + table.tn
    return Metrics(
        tpr=table.tp / pos if pos else 0.0,
        fpr=table.fp / neg if neg else 0.0,
        acc=(table.tp + table.tn) / table.total,
    )


def contingency(predicted, labels) -> ContingencyTable:
    p = np.asarray(predicted, dtype=bool)
    y = np.asarray(labels, dtype=bool)
    return ContingencyTable(
        tp=int(np.sum(p & y)), fp=int(np.sum(p & ~y)),
        tn=int(np.sum(~p & ~y)), fn=int(np.sum(~p & y)),
    )


def _label_of(x) -> Label:
    return x if isinstance(x, Label) else Label(x)


def split_by_app(apps, train_fraction: float = 0.8, seed: int = 0):
    """Stratified app-level split.

    ``apps`` is a manifest, a list of documents, or ``(app_id, label)`` pairs.
    Returns sorted ``(train_ids, test_ids)``.
    """
    if not 0.0 < train_fraction < 1.0:
        raise UsageError("train_fraction must be in (0, 1)")
    by_label = defaultdict(list)
    for a in apps:
        app_id, label = (a.app_id, a.label) if hasattr(a, "app_id") else a
        by_label[_label_of(label)].append(app_id)
    if len(set(x for ids in by_label.values() for x in ids)) != sum(map(len, by_label.values())):
        raise UsageError("duplicate app ids in split input")
    rng = make_rng(seed, STREAM_SPLIT)
    train, test = [], []
    for label in (Label.BENIGN, Label.MALICIOUS):
        ids = sorted(by_label.get(label, []))
        n_train = int(round(len(ids) * train_fraction))
        if n_train < 1 or n_train >= len(ids):
            raise TooFewApps(f"{len(ids)} {label.value} apps cannot fill both sides at {train_fraction}")
        order = rng.permutation(len(ids))
        train.extend(ids[i] for i in order[:n_train])
        test.extend(ids[i] for i in order[n_train:])
    return sorted(train), sorted(test)


def _batches_by_length(ids, batch_size):
    """Index batches of similar real length; pads are suffix-only."""
    lengths = (np.asarray(ids) != 0).sum(axis=1)
    order = np.argsort(lengths, kind="stable")
    return [order[s : s + batch_size] for s in range(0, len(order), batch_size)]


def predict(params, ids, config: ModelConfig) -> np.ndarray:
    """Eval-mode probabilities, in input order."""
    ids = np.asarray(ids)
    probs = np.empty(len(ids))
    for idx in _batches_by_length(ids, max(config.batch_size, 256)):
        probs[idx] = forward(params, ids[idx], pooling=config.pooling)[0]
    return probs


def train(config: ModelConfig, ids, labels, cap: int | None = None, params=None):
    """Seeded minibatch Adam training. Returns ``(params, per-epoch mean losses)``.

    Each epoch reshuffles, keeps the first ``cap`` sequences if a cap is set,
    and walks them in ``batch_size`` chunks (the last one may be short).
    """
    ids = np.asarray(ids)
    labels = np.asarray(labels, dtype=np.float64)
    if len(ids) == 0:
        raise EmptyTrainingSet("no training sequences")
    if params is None:
        params = init_params(config)
    state = AdamState.for_params(params)
    shuffle_rng = make_rng(config.seed, STREAM_SHUFFLE)
    drop_rng = make_rng(config.seed, STREAM_DROPOUT)
    losses = []
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(ids))
        if cap is not None:
            order = order[:cap]
        total = 0.0
        for s in range(0, len(order), config.batch_size):
            idx = order[s : s + config.batch_size]
            probs, cache = forward(params, ids[idx], True, drop_rng, config.dropout, config.pooling)
            total += bce_loss(probs, labels[idx]) * len(idx)
            grads = backward(cache, labels[idx])
            params, state = adam_update(params, grads, state, config.learning_rate)
        losses.append(total / len(order))
        log.info("epoch %d/%d loss %.4f", epoch + 1, config.epochs, losses[-1])
    return params, losses


def evaluate(params, ids, labels, threshold: float = 0.5,
             config: ModelConfig | None = None) -> ContingencyTable:
    """Sequence-level table; probability >= threshold counts as malicious."""
    if not 0.0 < threshold < 1.0:
        raise UsageError("threshold must be in (0, 1)")
    probs = predict(params, ids, config or ModelConfig())
    return contingency(probs >= threshold, labels)


def aggregate_app(probs, app_ids, threshold: float = 0.5, rule: str = "mean") -> dict[str, int]:
    """Per-app prediction (1 = malicious) from its sequences' probabilities.

    ``mean``: mean probability >= threshold. ``vote``: at least half of the
    sequences are individually >= threshold.
    """
    grouped = defaultdict(list)
    for p, a in zip(probs, app_ids):
        grouped[a].append(float(p))
    out = {}
    for a in sorted(grouped):
        ps = np.asarray(grouped[a])
        if rule == "mean":
            out[a] = int(ps.mean() >= threshold)
        elif rule == "vote":
            out[a] = int(np.mean(ps >= threshold) >= 0.5)
        else:
            raise UsageError(f"unknown aggregation rule {rule!r}")
    return out


def ids_digest(ids) -> str:
    return hashlib.sha256("\n".join(sorted(ids)).encode("utf-8")).hexdigest()


def corpus_statistics(docs, units) -> dict:
    """File, sequence and token counts per label, plus overall means."""
    files = {lab.value: 0 for lab in Label}
    for d in docs:
        files[d.label.value] += 1
    seqs = {lab.value: 0 for lab in Label}
    tokens = {lab.value: 0 for lab in Label}
    n_lines = 0
    for u in units:
        seqs[u.label.value] += 1
        tokens[u.label.value] += len(tokenize(u))
        n_lines += len(u.lines)
    n = sum(seqs.values())
    return {
        "n_files": files,
        "n_sequences": seqs,
        "n_tokens": tokens,
        "total_sequences": n,
        "mean_tokens": sum(tokens.values()) / n if n else 0.0,
        "mean_lines": n_lines / n if n else 0.0,
    }


@dataclass
class PipelineOptions:
    kind: UnitKind = UnitKind.CSM
    seq_len: int | None = None
    vocab_size: int = DEFAULT_VOCAB_SIZE
    min_freq: int = DEFAULT_MIN_FREQ
    train_fraction: float = 0.8
    threshold: float = 0.5
    max_sequences: int | None = None
    app_rule: str = "mean"
    seed: int = 0
    model: dict | None = None  # ModelConfig overrides

    def resolved_seq_len(self) -> int:
        return self.seq_len if self.seq_len is not None else seq_len_for(self.kind)


def _dialect_name(docs) -> str:
    names = sorted({d.dialect.value for d in docs})
    return names[0] if len(names) == 1 else "mixed"


def run_pipeline(docs, opts: PipelineOptions, split=None):
    """segment -> split -> vocabulary -> encode -> train -> evaluate.

    Returns ``(report, params, vocab, config, datasets)``; ``datasets`` holds
    the encoded train/test arrays.
    """
    docs = list(docs)
    train_ids, test_ids = split or split_by_app(docs, opts.train_fraction, opts.seed)
    train_set, test_set = set(train_ids), set(test_ids)
    if train_set & test_set:
        raise UsageError("train and test apps overlap")
    units = segment_corpus(docs, opts.kind)
    train_units = [u for u in units if u.app_id in train_set]
    test_units = [u for u in units if u.app_id in test_set]
    if not train_units:
        raise EmptyTrainingSet("no training units after segmentation")
    vocab = build_vocabulary(train_units, opts.vocab_size, opts.min_freq)
    seq_len = opts.resolved_seq_len()
    tr_x, tr_y, _ = encode_all(train_units, vocab, seq_len)
    te_x, te_y, te_apps = encode_all(test_units, vocab, seq_len)

    config = ModelConfig(**{**(opts.model or {}), "seq_len": seq_len,
                            "vocab_size": vocab.size, "seed": opts.seed})
    params, losses = train(config, tr_x, tr_y, cap=opts.max_sequences)

    probs = predict(params, te_x, config)
    seq_table = contingency(probs >= opts.threshold, te_y)
    app_pred = aggregate_app(probs, te_apps, opts.threshold, opts.app_rule)
    label_of = {d.app_id: int(d.label is Label.MALICIOUS) for d in docs}
    app_table = contingency([app_pred[a] for a in app_pred], [label_of[a] for a in app_pred])

    report = {
        "report_version": REPORT_VERSION,
        "tool_version": __version__,
        "unit": opts.kind.value,
        "dialect": _dialect_name(docs),
        "seed": opts.seed,
        "seq_len": seq_len,
        "config": config.to_dict(),
        "options": {
            "vocab_size_limit": opts.vocab_size,
            "min_freq": opts.min_freq,
            "train_fraction": opts.train_fraction,
            "threshold": opts.threshold,
            "max_sequences": opts.max_sequences,
            "app_rule": opts.app_rule,
        },
        "split": {
            "n_train_apps": len(train_ids),
            "n_test_apps": len(test_ids),
            "train_ids_sha256": ids_digest(train_ids),
            "test_ids_sha256": ids_digest(test_ids),
            "train_ids": list(train_ids),
            "test_ids": list(test_ids),
        },
        "vocabulary_size": vocab.size,
        "losses": losses,
        "sequence_level": {"table": seq_table.to_dict(),
                           "metrics": metrics_from(seq_table).to_dict()},
        "app_level": {"table": app_table.to_dict(),
                      "metrics": metrics_from(app_table).to_dict()},
        "statistics": corpus_statistics(docs, units),
        "truncated_train_sequences": int(sum(len(tokenize(u)) > seq_len for u in train_units)),
    }
    datasets = {"train": (tr_x, tr_y), "test": (te_x, te_y)}
    return report, params, vocab, config, datasets


def csv_row(report: dict) -> dict:
    m = report["sequence_level"]["metrics"]
    return {
        "kind": report["unit"],
        "dialect": report["dialect"],
        "tpr": m["tpr"],
        "fpr": m["fpr"],
        "acc": m["acc"],
        "mean_tokens": report["statistics"]["mean_tokens"],
        "n_sequences": report["statistics"]["total_sequences"],
    }


def format_csv(rows) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for r in rows:
        lines.append(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


# --- synthetic factor experiments -------------------------------------------

def _experiment_row(report: dict, arm: str | None = None) -> dict:
    row = csv_row(report)
    row["seq_len"] = report["seq_len"]
    row["app_acc"] = report["app_level"]["metrics"]["acc"]
    row["final_loss"] = report["losses"][-1] if report["losses"] else None
    if arm is not None:
        row["arm"] = arm
    return row


def granularity_experiment(spec=None, seed: int = 1, seq_lens: dict | None = None,
                           max_sequences: int | None = 8000, model: dict | None = None) -> dict:
    """Train and test every unit kind on one planted-pattern corpus."""
    from .synth import generate_corpus, granularity_spec

    spec = spec or granularity_spec()
    docs = generate_corpus(spec, seed)
    split = split_by_app(docs, 0.8, seed)
    rows, reports = [], {}
    for kind in UnitKind:
        seq_len = (seq_lens or {}).get(kind, seq_len_for(kind))
        opts = PipelineOptions(kind=kind, seq_len=seq_len, seed=seed,
                               max_sequences=max_sequences, model=model)
        report = run_pipeline(docs, opts, split)[0]
        reports[kind.value] = _strip_ids(report)
        rows.append(_experiment_row(report))
        log.info("granularity %s acc %.4f", kind.value, rows[-1]["acc"])
    return {
        "experiment": "granularity",
        "report_version": REPORT_VERSION,
        "tool_version": __version__,
        "seed": seed,
        "corpus": spec.to_dict(),
        "max_sequences": max_sequences,
        "rows": rows,
        "runs": reports,
    }


def path_token_experiment(spec=None, seed: int = 1, kind: UnitKind = UnitKind.MSM,
                          seq_len: int | None = None, max_sequences: int | None = 8000,
                          model: dict | None = None) -> dict:
    """Same corpus skeleton twice: label-correlated callee paths vs. no paths."""
    from .synth import generate_corpus, path_token_spec

    base = spec or path_token_spec()
    arms = {
        "with_path": replace(base, emit_paths=True, split_descriptor=True),
        "without_path": replace(base, emit_paths=False),
    }
    split = None
    rows, reports = [], {}
    for arm, arm_spec in arms.items():
        docs = generate_corpus(arm_spec, seed)
        if split is None:
            split = split_by_app(docs, 0.8, seed)
        opts = PipelineOptions(kind=kind, seq_len=seq_len, seed=seed,
                               max_sequences=max_sequences, model=model)
        report = run_pipeline(docs, opts, split)[0]
        reports[arm] = _strip_ids(report)
        rows.append(_experiment_row(report, arm))
        log.info("path-token %s acc %.4f", arm, rows[-1]["acc"])
    return {
        "experiment": "path-token",
        "report_version": REPORT_VERSION,
        "tool_version": __version__,
        "seed": seed,
        "unit": kind.value,
        "corpus": {arm: s.to_dict() for arm, s in arms.items()},
        "max_sequences": max_sequences,
        "rows": rows,
        "runs": reports,
    }


def _strip_ids(report: dict) -> dict:
    out = dict(report)
    out["split"] = {k: v for k, v in report["split"].items() if not k.endswith("_ids")}
    return out


EXPERIMENTS = {
    "granularity": granularity_experiment,
    "path-token": path_token_experiment,
}
