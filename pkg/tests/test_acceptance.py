"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary
(see conftest.py). The learning criteria train full-size models and take a
few minutes in total.
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest

from capsfusion import checkpoint
from capsfusion.baseline import bow_baseline
from capsfusion.capsnet import route, squash
from capsfusion.config import TrainConfig
from capsfusion.metrics import MetricsReport
from capsfusion.model import CapsFusion
from capsfusion.ndtensor import grad_check
from capsfusion.pipeline import (
    KeywordList,
    SynthSpec,
    annotate,
    filter_corpus,
    keyword_match,
    load_corpus,
    split,
    stop_filter,
    synth_corpus,
)
from capsfusion.trainer import default_grid, evaluate, prepare, sweep, sweep_csv, train

from conftest import FIXTURES, TINY, record_criterion, tiny_batch

pytestmark = pytest.mark.acceptance


@contextmanager
def criterion(number, title):
    details = []
    try:
        yield details
    except BaseException as exc:
        record_criterion(number, title, False, f"{type(exc).__name__}: {exc}".splitlines()[0])
        raise
    record_criterion(number, title, True, "; ".join(details))


@pytest.fixture(scope="module")
def text_run():
    """Default configuration on the text-signal corpus, trained once and shared."""
    cfg = TrainConfig()
    records = synth_corpus(SynthSpec(n_records=1000, signal="text"), 7)
    data = prepare(records, cfg)
    start = time.perf_counter()
    model, curve = train(data.train, cfg, len(data.vocab))
    elapsed = time.perf_counter() - start
    return cfg, data, model, curve, evaluate(model, data.test), elapsed


def test_c01_gradient_fidelity():
    with criterion(1, "gradient fidelity of the full loss") as info:
        cfg = TrainConfig(dropout=0.0, **TINY)
        model = CapsFusion.initialize(cfg, 50, np.random.default_rng(0))
        ids, feats, labels = tiny_batch(np.random.default_rng(1))
        names = sorted(model.arrays)

        def loss(ts):
            return model.loss(dict(zip(names, ts)), ids, feats, labels)

        start = time.perf_counter()
        report = grad_check(loss, [model.arrays[n] for n in names], epsilon=1e-5, tolerance=1e-4)
        elapsed = time.perf_counter() - start
        raw = grad_check(loss, [model.arrays[n] for n in names], epsilon=1e-5, tolerance=1e-4, floor=0.0)
        info.append(
            f"max rel error {report.max_rel_error:.3g} over {report.entries} entries in {elapsed:.1f}s "
            f"(without the 1e-6 denominator floor: {raw.max_rel_error:.3g})"
        )
        assert report.max_rel_error < 1e-4, dict(zip(names, report.per_param))
        assert elapsed < 60


def test_c02_routing_invariants():
    with criterion(2, "routing invariants on 10,000 instances") as info:
        rng = np.random.default_rng(2024)
        worst_sum, worst_norm = 0.0, 0.0
        for _ in range(10_000):
            n_in, n_out, d = (int(x) for x in rng.integers(1, 9, size=3))
            r = int(rng.integers(1, 6))
            u_hat = rng.normal(scale=rng.uniform(0.05, 10.0), size=(n_in, n_out, d))
            state = route(u_hat, r)
            for c in state.couplings:
                assert np.all(c > 0)
                worst_sum = max(worst_sum, float(np.max(np.abs(c.sum(axis=-1) - 1.0))))
            norms = np.linalg.norm(state.v.data, axis=-1)
            assert np.all(norms >= 0) and np.all(norms < 1)
            worst_norm = max(worst_norm, float(norms.max()))
            replay = route(u_hat, r)
            for a, b in ((state.b, replay.b), (state.c, replay.c), (state.v, replay.v)):
                assert np.array_equal(a.data, b.data)
            single = route(u_hat, 1)
            uniform = squash((u_hat / n_out).sum(axis=0)).data
            np.testing.assert_allclose(single.v.data, uniform, rtol=0, atol=1e-12)
        assert worst_sum <= 1e-12
        info.append(f"max |row sum - 1| {worst_sum:.2g}; max |v| {worst_norm:.6f}")


def test_c03_squash_closed_form():
    with criterion(3, "squash closed form") as info:
        a, b = squash(np.array([1.0, 0.0])).data, squash(np.array([3.0, 0.0])).data
        err = max(np.max(np.abs(a - [0.5, 0.0])), np.max(np.abs(b - [0.9, 0.0])))
        info.append(f"max abs error {err:.2g}")
        assert err <= 1e-12


def test_c04_metrics_oracle():
    with criterion(4, "metrics oracle") as info:
        hand = MetricsReport(tp=3, fp=1, tn=4, fn=2)
        assert hand.positive.precision == 0.75
        assert abs(hand.positive.recall - 0.6) < 1e-15
        assert abs(hand.positive.f1 - 2 * 0.75 * 0.6 / 1.35) < 1e-15
        assert round(hand.positive.f1, 4) == 0.6667
        assert hand.accuracy == 0.7
        rng = np.random.default_rng(4)
        for _ in range(1000):
            n = int(rng.integers(1, 60))
            y, p = rng.integers(0, 2, size=n), rng.integers(0, 2, size=n)
            r = MetricsReport.from_labels(y, p)
            tp = fp = tn = fn = 0
            for truth, guess in zip(y.tolist(), p.tolist()):
                if guess == 1:
                    tp, fp = (tp + 1, fp) if truth == 1 else (tp, fp + 1)
                else:
                    tn, fn = (tn + 1, fn) if truth == 0 else (tn, fn + 1)
            assert (r.tp, r.fp, r.tn, r.fn) == (tp, fp, tn, fn)
            assert r.accuracy == (tp + tn) / n
            prec = tp / (tp + fp) if tp + fp else 0.0
            rec = tp / (tp + fn) if tp + fn else 0.0
            assert r.positive.precision == prec and r.positive.recall == rec
        info.append("hand case exact; 1000 random sets agree")


def test_c05_end_to_end_learning(text_run):
    with criterion(5, "text-signal accuracy >= 0.95") as info:
        cfg, data, _, curve, report, elapsed = text_run
        info.append(f"accuracy {report.accuracy:.4f} after {len(curve)} epochs in {elapsed:.0f}s")
        assert len(data.train) == 800 and len(data.test) == 200
        assert len(curve) <= 20
        assert report.accuracy >= 0.95
        assert elapsed < 600


def test_c06_fusion_advantage():
    with criterion(6, "fusion beats text-only and bag-of-words by >= 0.10") as info:
        cfg = TrainConfig()
        records = synth_corpus(SynthSpec(n_records=1000, signal="features"), 7)
        data = prepare(records, cfg)
        fusion, _ = train(data.train, cfg, len(data.vocab))
        ablation, _ = train(data.train, cfg.replace(use_features=False), len(data.vocab))
        acc_fusion = evaluate(fusion, data.test).accuracy
        acc_text = evaluate(ablation, data.test).accuracy
        train_recs, test_recs = split(records, cfg.train_ratio, cfg.seed)
        acc_bow = bow_baseline(train_recs, test_recs).accuracy
        info.append(f"fusion {acc_fusion:.3f}, text-only {acc_text:.3f}, bag-of-words {acc_bow:.3f}")
        assert acc_fusion - acc_text >= 0.10
        assert acc_fusion - acc_bow >= 0.10


def test_c07_pipeline_fixture():
    with criterion(7, "crafted fixture filtering and annotation") as info:
        records = load_corpus(FIXTURES / "crafted_corpus.jsonl")
        stop = KeywordList.default("stop")
        keywords = KeywordList.default()
        survivors, report = filter_corpus(records, keywords, stop)
        relevant = [r for r in records if keyword_match(r.text, keywords)]
        kept, removed = stop_filter(relevant, stop)
        assert kept == survivors
        named = ("https://", "http://", "suicide attack")
        # independent copy of the English stop phrases the default list ships with
        stop_phrases = named + ("bomb", "bus attack", "car attack", "suicide hotline", ".ac.ir")
        removed_ids = [r.id for r in removed]
        assert all(r.id in removed_ids for r in relevant if any(m in r.text.casefold() for m in named))
        assert removed_ids == [r.id for r in relevant if any(m in r.text.casefold() for m in stop_phrases)]
        assert not any(m in r.text.casefold() for r in kept for m in stop_phrases)
        (denial,) = [r for r in records if "i will not commit suicide" in r.text.casefold()]
        assert annotate(denial) == "negative"
        assert report.rows == [("keyword", 18, 2), ("stop", 11, 7)]
        info.append(f"removed {', '.join(removed_ids)}")


def test_c08_sweep_harness():
    with criterion(8, "sweep grids and byte-identical reruns") as info:
        cfg = TrainConfig(epochs=1, **TINY)
        records = synth_corpus(SynthSpec(n_records=200, signal="text", min_len=4, max_len=10), 7)
        data = prepare(records, cfg)
        for axis, rows in (("dropout", 8), ("batch", 10)):
            first = sweep_csv(sweep(default_grid(axis), data, cfg))
            second = sweep_csv(sweep(default_grid(axis), data, cfg))
            assert first == second
            assert len(first.splitlines()) == rows + 1
            info.append(f"{axis}: {rows} rows")
        assert [p["dropout"] for p in default_grid("dropout")] == [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
        assert [p["batch_size"] for p in default_grid("batch")] == [2, 4, 6, 8, 16, 32, 64, 128, 512, 1024]


def test_c09_checkpoint_round_trip(text_run, tmp_path):
    with criterion(9, "checkpoint round trip") as info:
        _, data, model, _, _, _ = text_run
        first, second = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        checkpoint.save(checkpoint.Checkpoint(model, data.vocab, data.stats), first)
        loaded = checkpoint.load(first)
        checkpoint.save(loaded, second)
        assert first.read_bytes() == second.read_bytes()
        rng = np.random.default_rng(9)
        ids = rng.integers(0, len(data.vocab), size=(100, model.config.seq_len))
        feats = rng.normal(size=(100, 7))
        assert np.array_equal(loaded.model.predict_proba(ids, feats), model.predict_proba(ids, feats))
        info.append(f"{first.stat().st_size} bytes; 100 predictions bit-identical")


def test_c10_determinism(text_run):
    with criterion(10, "determinism of full training runs") as info:
        cfg, data, model, curve, report, _ = text_run
        model2, curve2 = train(data.train, cfg, len(data.vocab))
        assert curve2 == curve
        assert evaluate(model2, data.test) == report
        for name in model.arrays:
            assert np.array_equal(model.arrays[name], model2.arrays[name])
        info.append(f"identical {len(curve)}-epoch curves and metrics")
