"""Acceptance suite. Each test prints one PASS/FAIL line for its criterion.

Run on its own with ``pytest tests/test_acceptance.py -v -s`` or
``python tests/test_acceptance.py``.
"""
import csv
import io
import math
import time
from pathlib import Path

import numpy as np
import pytest

from cdnemil import autodiff as ad
from cdnemil.cdne import CdneHead, loss_neg, loss_pos
from cdnemil.cli import main
from cdnemil.data import SyntheticSpec, datasets_equal, generate_synthetic, load_dataset, write_dataset
from cdnemil.diagnostics import accuracy, auroc, bag_diagnostics, evaluate
from cdnemil.train import load_config, load_sources, reseeded, train_fold

ROOT = Path(__file__).resolve().parent.parent
BENCHMARK = ROOT / "configs" / "benchmark.json"
TOY = ROOT / "configs" / "toy.json"
SEEDS = range(5)
VARIANTS = ("attention", "gated_attention")

pytestmark = pytest.mark.acceptance


def report(number, title, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} :: {detail}"
    print(line, flush=True)
    return line


@pytest.fixture
def say(capsys):
    def emit(*args):
        with capsys.disabled():
            print()
            report(*args)
    return emit


# ---------------------------------------------------------------------------
# 1 gradient fidelity

def test_gradient_fidelity(say, capsys):
    start = time.perf_counter()
    code = main(["gradcheck"])
    elapsed = time.perf_counter() - start
    out = capsys.readouterr().out
    worst = max(float(line.rsplit("=", 1)[1]) for line in out.splitlines())
    ok = code == 0 and elapsed < 10.0
    say(1, "gradient fidelity", ok,
        f"{len(out.splitlines())} checks, worst rel err {worst:.2e} (tol 1e-4), {elapsed:.1f}s (< 10s)")
    assert ok


# ---------------------------------------------------------------------------
# 2 loss oracles

def _loop_stds(z, mu):
    k = len(z)
    return [math.sqrt(sum((z[i][j] - mu[j]) ** 2 for i in range(k)) / (k - 1)) for j in range(len(mu))]


def _head(mu, thr):
    head = CdneHead.init(np.random.default_rng(0), len(mu), len(mu), thr=thr)
    head.centers[0].values[...] = mu
    return head


def test_loss_oracles(say):
    worst = 0.0
    rng = np.random.default_rng(2024)
    for _ in range(100):
        k, m = int(rng.integers(2, 12)), int(rng.integers(1, 10))
        z, mu, thr = rng.normal(size=(k, m)) * 2, rng.normal(size=m), float(rng.uniform(0, 4))
        stds = _loop_stds(z, mu)
        head = _head(mu, thr)
        worst = max(worst,
                    abs(loss_neg(head, 0, ad.tensor(z)).item() - sum(stds) / m),
                    abs(loss_pos(head, 0, ad.tensor(z)).item() - sum(max(thr - s, 0.0) for s in stds) / m))
    worked_neg = loss_neg(_head([1.0, 2.0], 1.0), 0, ad.tensor([[0.0, 0.0], [1.0, 2.0], [2.0, 4.0]])).item()
    worked_pos = loss_pos(_head([0.0, 0.0], 1.0), 0, ad.tensor([[-0.5, -2.0], [0.5, 2.0], [0.0, 0.0]])).item()
    ok = worst <= 1e-10 and abs(worked_neg - 1.5) <= 1e-10 and abs(worked_pos - 0.25) <= 1e-10
    say(2, "loss oracles", ok,
        f"100 cases max |diff| {worst:.1e} (<= 1e-10); worked examples {worked_neg!r}, {worked_pos!r}")
    assert ok


# ---------------------------------------------------------------------------
# 3 baseline recovery

def test_baseline_recovery(say):
    base = load_config(BENCHMARK)
    base.epochs = 5
    identical = []
    for variant in VARIANTS:
        cfg = base.with_updates(lambda_neg=0.0, lambda_pos=0.0)
        cfg.model.variant = variant
        plain = cfg.with_updates(enabled=False)
        train, _ = load_sources(cfg, ROOT)
        a, la = train_fold(cfg, train)
        b, lb = train_fold(plain, train)
        same = all(np.array_equal(x.values, y.values)
                   for x, y in zip(a.model.parameters(), b.model.parameters()))
        same = same and [r.l_mil for r in la.records] == [r.l_mil for r in lb.records]
        identical.append(same)
    ok = all(identical)
    say(3, "baseline recovery", ok, f"bitwise identical parameters and losses: {dict(zip(VARIANTS, identical))}")
    assert ok


# ---------------------------------------------------------------------------
# 4 and 5: frozen synthetic benchmark

_BENCH_CACHE = {}


def _benchmark_runs(variant):
    """Per seed: held-out AUROC and diagnostics summary with and without CDNE."""
    if variant in _BENCH_CACHE:
        return _BENCH_CACHE[variant]
    start = time.perf_counter()
    base = load_config(BENCHMARK)
    base.model.variant = variant
    runs = []
    for s in SEEDS:
        cfg = reseeded(base, s)
        train, test = load_sources(cfg, ROOT)
        row = {}
        for name, enabled in (("cdne", True), ("baseline", False)):
            trained, _ = train_fold(cfg.with_updates(enabled=enabled), train)
            _, summary = bag_diagnostics(trained.model, trained.head, test)
            row[name] = (evaluate(trained.model, test)["auroc"], summary)
        runs.append(row)
    _BENCH_CACHE[variant] = (runs, time.perf_counter() - start)
    return _BENCH_CACHE[variant]


@pytest.mark.parametrize("variant", VARIANTS)
def test_benchmark_auroc_gain(say, variant):
    runs, elapsed = _benchmark_runs(variant)
    cdne = np.mean([r["cdne"][0] for r in runs])
    base = np.mean([r["baseline"][0] for r in runs])
    ok = cdne - base >= 0.02 and elapsed < 300
    say(4, f"benchmark AUROC gain ({variant})", ok,
        f"CDNE {cdne:.4f} vs baseline {base:.4f}, delta {cdne - base:+.4f} (>= 0.02); "
        f"{elapsed:.0f}s (< 300s)")
    assert ok


@pytest.mark.parametrize("variant", VARIANTS)
def test_benchmark_embedding_diagnostics(say, variant):
    runs, _ = _benchmark_runs(variant)
    tighter = sum(r["cdne"][1]["negative_center_dispersion"] < r["baseline"][1]["negative_center_dispersion"]
                  for r in runs)
    tighter_norm = sum(r["cdne"][1]["negative_center_dispersion_normalized"]
                       < r["baseline"][1]["negative_center_dispersion_normalized"] for r in runs)
    separated = 0
    for r in runs:
        per_class = r["cdne"][1]["per_class_mean_std"]
        separated += per_class["0"] < per_class["1"]
    ok = tighter >= 4 and separated >= 4
    say(5, f"embedding diagnostics ({variant})", ok,
        f"dispersion lower in {tighter}/5 seeds (scale-normalized {tighter_norm}/5); "
        f"negative mean_std < positive in {separated}/5 (need >= 4 each)")
    assert ok


# ---------------------------------------------------------------------------
# 6 ablation trend

def test_ablation_trend(say, tmp_path, capsys):
    out = tmp_path / "ablate.csv"
    start = time.perf_counter()
    code = main(["ablate", str(BENCHMARK), "--axis", "lambda_neg", "--values", "0,10,1000",
                 "--seeds", ",".join(str(s) for s in SEEDS), "--out", str(out)])
    elapsed = time.perf_counter() - start
    capsys.readouterr()
    rows = {float(r["value"]): r for r in csv.DictReader(io.StringIO(out.read_text()))}
    auc = {v: float(r["auroc_mean"]) for v, r in rows.items()}
    ok = code == 0 and auc[1000.0] < auc[10.0]
    say(6, "lambda_neg ablation trend", ok,
        f"mean CV AUROC at 0/10/1000: {auc[0.0]:.4f}/{auc[10.0]:.4f}/{auc[1000.0]:.4f} "
        f"(need 1000 < 10); {elapsed:.0f}s")
    assert ok


# ---------------------------------------------------------------------------
# 7 metric exactness

def _pair_count(scores, labels):
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = sum(float(p > n) + 0.5 * float(p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_metric_exactness(say):
    rng = np.random.default_rng(7)
    worst, acc_ok = 0.0, True
    for i in range(1000):
        n = int(rng.integers(2, 60))
        labels = rng.integers(0, 2, size=n)
        labels[rng.choice(n, 2, replace=False)] = [0, 1]
        scores = rng.integers(0, 6, size=n).astype(float) if i % 2 else rng.normal(size=n)
        worst = max(worst, abs(auroc(scores, labels) - _pair_count(scores, labels)))
        preds = rng.integers(0, 2, size=n)
        acc_ok &= accuracy(preds, labels) == sum(int(p == y) for p, y in zip(preds, labels)) / n
    ok = worst <= 1e-12 and acc_ok
    say(7, "metric exactness", ok, f"1000 cases with ties, max |auroc - pair count| {worst:.1e}; accuracy exact: {acc_ok}")
    assert ok


# ---------------------------------------------------------------------------
# 8 determinism and formats

def test_determinism_and_formats(say, tmp_path, capsys):
    outs = []
    for name in ("a", "b"):
        assert main(["cv", str(TOY), "--out", str(tmp_path / name)]) == 0
        outs.append(tmp_path / name)
    capsys.readouterr()
    files = sorted(p.name for p in outs[0].iterdir())
    same = all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in files)
    same = same and files == sorted(p.name for p in outs[1].iterdir())
    ds = generate_synthetic(SyntheticSpec(seed=11))
    roundtrip = datasets_equal(ds, load_dataset(write_dataset(ds, tmp_path / "data")))
    ok = same and roundtrip
    say(8, "determinism and formats", ok,
        f"repeated cv: {len(files)} files byte-identical={same}; dataset round-trip exact={roundtrip}")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
