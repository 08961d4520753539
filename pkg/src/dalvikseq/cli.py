"""``dalvikseq`` command line: ingest, segments, run, experiment, rerun."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .encode import DATASET_VERSION, save_dataset, seq_len_for
from .errors import DalvikSeqError, UsageError
from .harness import EXPERIMENTS, PipelineOptions, csv_row, format_csv, run_pipeline
from .ingest import (DatasetManifest, Dialect, Label, ManifestEntry, RawDocument, load_corpus,
                     load_manifest, scan_directory, write_manifest)
from .net import CHECKPOINT_VERSION, ModelConfig, save_checkpoint
from .harness import REPORT_VERSION
from .segment import UnitKind, segment_corpus

log = logging.getLogger("dalvikseq")

CONFIG_FILE = "config.json"
DOCUMENTS_FILE = "documents.jsonl"
MANIFEST_FILE = "manifest.tsv"


class UnknownExperiment(UsageError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_config(out: Path, command: str, argv: list[str], resolved: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    dump_json({"command": command, "argv": argv, "resolved": resolved,
               "tool_version": __version__}, out / CONFIG_FILE)


# --- ingest ---------------------------------------------------------------

def cmd_ingest(args, argv) -> int:
    out = Path(args.out)
    source = {"manifest": args.manifest} if args.manifest else {"corpus": args.corpus}
    write_config(out, "ingest", argv, {**source, "dialect": args.dialect})
    manifest = load_manifest(args.manifest) if args.manifest else scan_directory(args.corpus)
    docs = load_corpus(manifest, Dialect(args.dialect))
    resolved = DatasetManifest([
        ManifestEntry(e.app_id, e.path, e.label, d.dialect) for e, d in zip(manifest, docs)
    ])
    write_manifest(resolved, out / MANIFEST_FILE)
    with open(out / DOCUMENTS_FILE, "w", encoding="utf-8", newline="\n") as fh:
        for d in sorted(docs, key=lambda d: d.app_id):
            fh.write(json.dumps({"app_id": d.app_id, "label": d.label.value,
                                 "dialect": d.dialect.value, "lines": d.lines}) + "\n")
    digest = hashlib.sha256((out / DOCUMENTS_FILE).read_bytes()).hexdigest()
    (out / "digest.txt").write_text(digest + "\n", encoding="utf-8")

    counts = {}
    for d in docs:
        counts.setdefault(d.dialect.value, {lab.value: 0 for lab in Label})[d.label.value] += 1
    print(f"ingested {len(docs)} documents into {out}")
    for dialect in sorted(counts):
        c = counts[dialect]
        print(f"  {dialect}: benign={c['benign']} malicious={c['malicious']}")
    print(f"  digest {digest}")
    return 0


def load_cache(cache) -> list[RawDocument]:
    path = Path(cache) / DOCUMENTS_FILE
    if not path.is_file():
        raise UsageError(f"no ingested corpus at {cache} (run `dalvikseq ingest` first)")
    docs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            d = json.loads(line)
            docs.append(RawDocument(d["app_id"], Label(d["label"]), Dialect(d["dialect"]), d["lines"]))
    return docs


def _apply_dialect(docs, dialect: str):
    if dialect == "auto":
        return docs
    return [RawDocument(d.app_id, d.label, Dialect(dialect), d.lines) for d in docs]


# --- segments ---------------------------------------------------------------

def cmd_segments(args, argv) -> int:
    docs = _apply_dialect(load_cache(args.cache), args.dialect)
    for u in segment_corpus(docs, UnitKind(args.unit)):
        sys.stdout.write(json.dumps({"app_id": u.app_id, "kind": u.kind.value,
                                     "label": u.label.value, "lines": u.lines}) + "\n")
    return 0


# --- run --------------------------------------------------------------------

def _model_overrides(args) -> dict:
    return {
        "epochs": args.epochs,
        "batch_size": args.batch,
        "learning_rate": args.lr,
        "dropout": args.dropout,
        "hidden": args.hidden,
        "embed_dim": args.embed_dim,
        "dense_units": args.dense_units,
        "pooling": args.pooling,
    }


def resolve_run_config(args) -> dict:
    """Every knob of a run with defaults filled in."""
    kind = UnitKind(args.unit)
    seq_len = args.seq_len if args.seq_len is not None else seq_len_for(kind)
    model = ModelConfig(seq_len=seq_len, seed=args.seed, **_model_overrides(args)).to_dict()
    model.pop("vocab_size")  # known only after the vocabulary is built
    return {
        "cache": str(args.cache),
        "unit": kind.value,
        "dialect": args.dialect,
        "seq_len": seq_len,
        "vocab_size": args.vocab_size,
        "min_freq": args.min_freq,
        "train_fraction": args.train_fraction,
        "threshold": args.threshold,
        "max_sequences": args.max_sequences,
        "app_rule": args.app_rule,
        "seed": args.seed,
        "model": model,
    }


def cmd_run(args, argv) -> int:
    out = Path(args.out)
    resolved = resolve_run_config(args)
    write_config(out, "run", argv, resolved)
    docs = _apply_dialect(load_cache(args.cache), args.dialect)
    opts = PipelineOptions(
        kind=UnitKind(args.unit), seq_len=resolved["seq_len"], vocab_size=args.vocab_size,
        min_freq=args.min_freq, train_fraction=args.train_fraction, threshold=args.threshold,
        max_sequences=args.max_sequences, app_rule=args.app_rule, seed=args.seed,
        model=_model_overrides(args),
    )
    report, params, vocab, config, datasets = run_pipeline(docs, opts)
    dump_json(report, out / "report.json")
    (out / "report.csv").write_text(format_csv([csv_row(report)]), encoding="utf-8")
    save_checkpoint(out / "model.dsqm", config, params)
    vocab.save(out / "vocab.tsv")
    for name, (x, y) in datasets.items():
        save_dataset(out / f"{name}.dsqe", x, y)
    m = report["sequence_level"]["metrics"]
    a = report["app_level"]["metrics"]
    print(f"{report['unit']} {report['dialect']}: seq TPR={m['tpr']:.4f} FPR={m['fpr']:.4f} "
          f"ACC={m['acc']:.4f} | app ACC={a['acc']:.4f} -> {out}")
    return 0


# --- experiment ---------------------------------------------------------------

def cmd_experiment(args, argv) -> int:
    if args.name not in EXPERIMENTS:
        raise UnknownExperiment(f"unknown experiment {args.name!r}; "
                                f"choose from {', '.join(sorted(EXPERIMENTS))}")
    from .synth import granularity_spec, path_token_spec

    out = Path(args.out)
    model = {"epochs": args.epochs} if args.epochs is not None else None
    kw = {"seed": args.seed, "max_sequences": args.max_sequences, "model": model}
    if args.name == "granularity":
        spec = replace(granularity_spec(), n_apps=args.apps or 1200)
        if args.csm_seq_len is not None:
            kw["seq_lens"] = {UnitKind.CSM: args.csm_seq_len}
    else:
        spec = replace(path_token_spec(), n_apps=args.apps or 800)
        if args.seq_len is not None:
            kw["seq_len"] = args.seq_len
    write_config(out, "experiment", argv, {"name": args.name, "corpus": spec.to_dict(),
                                           **{k: v for k, v in kw.items() if k != "seq_lens"},
                                           "csm_seq_len": args.csm_seq_len,
                                           "seq_len": args.seq_len})
    report = EXPERIMENTS[args.name](spec=spec, **kw)
    dump_json(report, out / "experiment.json")
    (out / "experiment.csv").write_text(format_csv(report["rows"]), encoding="utf-8")
    for row in report["rows"]:
        tag = row.get("arm", row["kind"])
        print(f"{tag:>12}  acc={row['acc']:.4f}  tpr={row['tpr']:.4f}  fpr={row['fpr']:.4f}  "
              f"mean_tokens={row['mean_tokens']:.2f}  n={row['n_sequences']}")
    return 0


def cmd_rerun(args, argv) -> int:
    cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
    return main(cfg["argv"])


# --- parser -------------------------------------------------------------------

def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dalvikseq", description=__doc__)
    p.add_argument("--version", action="version",
                   version=(f"dalvikseq {__version__} (checkpoint v{CHECKPOINT_VERSION}, "
                            f"dataset v{DATASET_VERSION}, report v{REPORT_VERSION})"))
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    ing = sub.add_parser("ingest", help="load, detect dialects and normalize a corpus")
    src = ing.add_mutually_exclusive_group(required=True)
    src.add_argument("--manifest", help="tab-separated manifest file")
    src.add_argument("--corpus", help="directory with benign/ and malicious/ subdirectories")
    ing.add_argument("--dialect", choices=[d.value for d in Dialect], default="auto")
    ing.add_argument("--out", required=True)
    ing.set_defaults(func=cmd_ingest)

    seg = sub.add_parser("segments", help="print units of an ingested corpus as JSON lines")
    seg.add_argument("--cache", required=True)
    seg.add_argument("--unit", choices=[k.value for k in UnitKind], default="csm")
    seg.add_argument("--dialect", choices=[d.value for d in Dialect], default="auto")
    seg.set_defaults(func=cmd_segments)

    defaults = ModelConfig()
    run = sub.add_parser("run", help="segment, train and evaluate on an ingested corpus")
    run.add_argument("--cache", required=True)
    run.add_argument("--unit", choices=[k.value for k in UnitKind], default="csm")
    run.add_argument("--dialect", choices=[d.value for d in Dialect], default="auto")
    run.add_argument("--seq-len", type=_positive_int)
    run.add_argument("--vocab-size", type=int, default=30000)
    run.add_argument("--min-freq", type=_positive_int, default=1)
    run.add_argument("--epochs", type=int, default=defaults.epochs)
    run.add_argument("--batch", type=_positive_int, default=defaults.batch_size)
    run.add_argument("--lr", type=float, default=defaults.learning_rate)
    run.add_argument("--dropout", type=float, default=defaults.dropout)
    run.add_argument("--hidden", type=_positive_int, default=defaults.hidden)
    run.add_argument("--embed-dim", type=_positive_int, default=defaults.embed_dim)
    run.add_argument("--dense-units", type=_positive_int, default=defaults.dense_units)
    run.add_argument("--pooling", choices=["max", "mean"], default=defaults.pooling)
    run.add_argument("--train-fraction", type=float, default=0.8)
    run.add_argument("--threshold", type=float, default=0.5)
    run.add_argument("--app-rule", choices=["mean", "vote"], default="mean")
    run.add_argument("--max-sequences", type=_positive_int)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out", required=True)
    run.set_defaults(func=cmd_run)

    exp = sub.add_parser("experiment", help="run a synthetic factor experiment")
    exp.add_argument("name", help="granularity or path-token")
    exp.add_argument("--seed", type=int, default=1)
    exp.add_argument("--apps", type=_positive_int, help="number of generated apps")
    exp.add_argument("--epochs", type=int)
    exp.add_argument("--max-sequences", type=_positive_int, default=8000)
    exp.add_argument("--seq-len", type=_positive_int, help="path-token: sequence length")
    exp.add_argument("--csm-seq-len", type=_positive_int, help="granularity: reduced CSM length")
    exp.add_argument("--out", required=True)
    exp.set_defaults(func=cmd_experiment)

    rr = sub.add_parser("rerun", help="replay a command from its config.json")
    rr.add_argument("config")
    rr.set_defaults(func=cmd_rerun)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args, argv)
    except SystemExit as e:  # --version / --help
        return int(e.code or 0)
    except DalvikSeqError as e:
        print(f"dalvikseq: error: {e}", file=sys.stderr)
        return e.exit_code
    except BrokenPipeError:
        return 0
    except OSError as e:
        print(f"dalvikseq: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
