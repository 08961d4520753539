"""Acceptance gate: one test per criterion, each reporting a pass/fail line.

Run alone with ``pytest tests/test_acceptance.py -v -s``; the summary lines
also appear in the terminal summary of a full run.
"""

import json
import time
from contextlib import contextmanager
from fractions import Fraction

import numpy as np
import pytest

from conftest import ACCEPTANCE_RESULTS, REFERENCE_LINES
from oracles import finite_difference_check, random_instance
from dalvikseq.cli import build_parser, dump_json, main, resolve_run_config
from dalvikseq.encode import (Vocabulary, build_vocabulary, encode_all, load_dataset,
                              save_dataset, seq_len_for)
from dalvikseq.harness import (ContingencyTable, evaluate, granularity_experiment,
                               metrics_from, path_token_experiment, split_by_app, train)
from dalvikseq.ingest import detect_dialect
from dalvikseq.net import (ModelConfig, backward, forward, init_params, load_checkpoint,
                           make_rng, save_checkpoint)
from dalvikseq.segment import UnitKind, segment
from dalvikseq.synth import SynthSpec, generate_corpus, planted_token_units, write_corpus

@contextmanager
def criterion(n, text):
    """Record ``[PASS]``/``[FAIL]`` for criterion ``n``; details may be added on the fly."""
    info = {}
    try:
        yield info
    except BaseException:
        ACCEPTANCE_RESULTS[n] = f"[FAIL] criterion {n}: {text} {info.get('detail', '')}".rstrip()
        print(ACCEPTANCE_RESULTS[n])
        raise
    ACCEPTANCE_RESULTS[n] = f"[PASS] criterion {n}: {text} {info.get('detail', '')}".rstrip()
    print(ACCEPTANCE_RESULTS[n])


def test_01_gradient_correctness():
    with criterion(1, "BPTT gradients vs central differences (h=1e-3, float64), rel err < 1e-4, < 60 s") as info:
        t0 = time.perf_counter()
        checked, rejected, worst, seed = 0, 0, 0.0, 0
        while checked < 20:
            assert seed < 200, "too many configurations straddle a kink"
            cfg, p, ids, y = random_instance(seed)
            pooling = "mean" if seed % 2 else "max"
            probs, cache = forward(p, ids, True, make_rng(seed, 1), 0.2, pooling)
            err, kinked = finite_difference_check(p, ids, y, backward(cache, y), seed, pooling)
            seed += 1
            if kinked:
                rejected += 1
                continue
            checked += 1
            worst = max(worst, err)
        elapsed = time.perf_counter() - t0
        info["detail"] = (f"({checked} configs, {rejected} kink-straddling rejected, "
                          f"worst {worst:.2e}, {elapsed:.1f} s)")
        assert worst < 1e-4
        assert elapsed < 60


def test_02_segmentation_partition():
    with criterion(2, "units partition every document and ISM >= BSM >= MSM >= CSM, < 30 s") as info:
        t0 = time.perf_counter()
        docs = generate_corpus(SynthSpec(n_apps=1000), 2)
        for doc in docs:
            counts = []
            for kind in UnitKind:
                units = segment(doc, kind)
                assert [line for u in units for line in u.lines] == doc.lines
                counts.append(len(units))
            assert counts[0] >= counts[1] >= counts[2] >= counts[3], (doc.app_id, counts)
        elapsed = time.perf_counter() - t0
        info["detail"] = f"({len(docs)} documents x 4 kinds, {elapsed:.1f} s)"
        assert elapsed < 30


def test_03_dialect_detection():
    with criterion(3, "all six reference lines detect to their source tool"):
        for line, dialect in REFERENCE_LINES:
            assert detect_dialect([line]) is dialect, line


def test_04_metrics_exact():
    with criterion(4, "1000 random tables match the scalar oracle exactly") as info:
        rng = np.random.default_rng(4)
        degenerate = 0
        for n in range(1000):
            tp, fp, tn, fn = (int(v) for v in rng.integers(0, 50, 4))
            if n % 5 == 0:  # empty one side of the table
                if n % 10 == 0:
                    tp = fn = 0
                else:
                    fp = tn = 0
            if tp + fp + tn + fn == 0:
                tn = 1
            m = metrics_from(ContingencyTable(tp=tp, fp=fp, tn=tn, fn=fn))
            tpr = float(Fraction(tp, tp + fn)) if tp + fn else 0.0
            fpr = float(Fraction(fp, fp + tn)) if fp + tn else 0.0
            degenerate += (tp + fn == 0) + (fp + tn == 0)
            assert (m.tpr, m.fpr, m.acc) == (tpr, fpr, float(Fraction(tp + tn, tp + fp + tn + fn)))
        info["detail"] = f"({degenerate} zero denominators)"
        assert degenerate >= 100


def test_05_defaults_fidelity(tmp_path):
    with criterion(5, "serialized resolved defaults equal the published values"):
        expected = {"ism": 15, "bsm": 40, "msm": 500, "csm": 2500}
        for unit, length in expected.items():
            args = build_parser().parse_args(["run", "--cache", "c", "--out", "o", "--unit", unit])
            dump_json(resolve_run_config(args), tmp_path / "config.json")
            text = (tmp_path / "config.json").read_text()
            for needle in ('"dropout": 0.2,', '"hidden": 64,', '"batch_size": 128,',
                           '"learning_rate": 0.001000000474974513,', '"epochs": 5,',
                           f'"seq_len": {length},'):
                assert needle in text, (unit, needle)
            assert seq_len_for(UnitKind(unit)) == length


def test_06_learnability():
    with criterion(6, "planted-token corpus, default training, test ACC >= 0.99, < 5 min") as info:
        t0 = time.perf_counter()
        units = planted_token_units(n_apps=100, units_per_app=50, seed=0)
        apps = sorted({(u.app_id, u.label) for u in units})
        tr, te = split_by_app(apps, 0.8, seed=0)
        tr, te = set(tr), set(te)
        train_units = [u for u in units if u.app_id in tr]
        test_units = [u for u in units if u.app_id in te]
        vocab = build_vocabulary(train_units)
        length = seq_len_for(UnitKind.BSM)
        x, y, _ = encode_all(train_units, vocab, length)
        xt, yt, _ = encode_all(test_units, vocab, length)
        cfg = ModelConfig(seq_len=length, vocab_size=vocab.size, seed=0)
        params, _ = train(cfg, x, y)
        acc = metrics_from(evaluate(params, xt, yt, 0.5, cfg)).acc
        elapsed = time.perf_counter() - t0
        info["detail"] = f"(ACC {acc:.4f} on {len(yt)} test of {len(units)} sequences, {elapsed:.0f} s)"
        assert acc >= 0.99
        assert elapsed < 300


@pytest.mark.slow
def test_07_granularity_trend():
    with criterion(7, "ACC(CSM) >= ACC(ISM) + 0.05 and monotone within 0.02, < 15 min") as info:
        t0 = time.perf_counter()
        report = granularity_experiment(seed=1)
        elapsed = time.perf_counter() - t0
        acc = [row["acc"] for row in report["rows"]]
        assert [row["kind"] for row in report["rows"]] == ["ism", "bsm", "msm", "csm"]
        info["detail"] = "(ACC " + " ".join(f"{a:.4f}" for a in acc) + f", {elapsed:.0f} s)"
        assert acc[3] >= acc[0] + 0.05
        for a, b in zip(acc, acc[1:]):
            assert b >= a - 0.02
        assert elapsed < 900


@pytest.mark.slow
def test_08_path_token_effect():
    with criterion(8, "path arm beats pathless arm by >= 0.05 ACC with more tokens, < 10 min") as info:
        t0 = time.perf_counter()
        report = path_token_experiment(seed=1)
        elapsed = time.perf_counter() - t0
        with_, without = report["rows"]
        runs = report["runs"]
        info["detail"] = (f"(ACC {with_['acc']:.4f} vs {without['acc']:.4f}, tokens "
                          f"{with_['mean_tokens']:.2f} vs {without['mean_tokens']:.2f}, {elapsed:.0f} s)")
        assert (with_["arm"], without["arm"]) == ("with_path", "without_path")
        assert runs["with_path"]["split"] == runs["without_path"]["split"]
        assert runs["with_path"]["seed"] == runs["without_path"]["seed"]
        assert with_["acc"] >= without["acc"] + 0.05
        assert with_["mean_tokens"] > without["mean_tokens"]
        assert elapsed < 600


def test_09_determinism(tmp_path):
    with criterion(9, "two identical cmd_run invocations give byte-identical outputs"):
        write_corpus(generate_corpus(SynthSpec(n_apps=24), 9), tmp_path / "raw")
        assert main(["ingest", "--corpus", str(tmp_path / "raw"), "--out", str(tmp_path / "cache")]) == 0
        for out in ("a", "b"):
            assert main(["run", "--cache", str(tmp_path / "cache"), "--unit", "msm", "--seed", "7",
                         "--epochs", "2", "--out", str(tmp_path / out)]) == 0
        for name in ("report.json", "report.csv", "model.dsqm", "vocab.tsv", "train.dsqe",
                     "test.dsqe"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
        assert json.loads((tmp_path / "a" / "report.json").read_text())["seed"] == 7


def test_10_round_trips(tmp_path):
    with criterion(10, "checkpoint, vocabulary and dataset containers round-trip exactly"):
        cfg = ModelConfig(seq_len=12, vocab_size=37, embed_dim=5, hidden=4, dense_units=3, seed=10)
        rng = np.random.default_rng(10)
        params = {k: v + rng.normal(size=v.shape) for k, v in init_params(cfg).items()}
        params["dense2_b"][0] = np.nextafter(0.0, 1.0)  # subnormal survives
        save_checkpoint(tmp_path / "m.dsqm", cfg, params)
        cfg2, params2 = load_checkpoint(tmp_path / "m.dsqm")
        assert cfg2 == cfg and params2.keys() == params.keys()
        for k in params:
            assert params2[k].dtype == np.float64
            assert params2[k].tobytes() == params[k].tobytes()

        vocab = Vocabulary(["invoke-static", "{v0,", "Lcom/x;->y()V", "ünïcode", "a b"[0], "#"])
        vocab.save(tmp_path / "v.tsv")
        assert Vocabulary.load(tmp_path / "v.tsv").token_to_id == vocab.token_to_id

        ids = rng.integers(0, 2**31 - 1, (17, 12)).astype(np.int32)
        labels = rng.integers(0, 2, 17).astype(np.uint8)
        save_dataset(tmp_path / "d.dsqe", ids, labels)
        ids2, labels2 = load_dataset(tmp_path / "d.dsqe")
        assert np.array_equal(ids, ids2) and np.array_equal(labels, labels2)
        assert ids2.dtype == np.int32 and labels2.dtype == np.uint8
