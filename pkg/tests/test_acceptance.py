"""End-to-end acceptance run: one test per criterion, one PASS/FAIL line each.

Run alone with ``pytest tests/test_acceptance.py -v``; the summary lines
are written straight to the terminal, bypassing output capture.
"""

import time

import numpy as np
import pytest

from nncondense.cli import main
from nncondense.condensation import (dequantize, error_bound, prune_model, pruned_equivalence_mask, quantize,
                                     quantize_model)
from nncondense.data import generate_synthetic, load_variable_specs, preprocess
from nncondense.evaluation import auroc, bench_inference
from nncondense.layers import dnn_spec, forward, hlstm_spec, init_model, lstm_spec, param_count, predict
from nncondense.model_store import payload_bytes
from nncondense.training import TrainConfig, train

from oracles import brute_force_auroc, fd_check, grad_case, randomize

COHORT_SEED = 2019
COHORT_N = 2000


@pytest.fixture
def verdict(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({detail})")
        assert ok, detail

    return emit


def test_criterion_1_parameter_counts(verdict):
    start = time.perf_counter()
    pruned, _ = prune_model(init_model(lstm_spec(), 0), 0.5)
    counts = {
        "lstm": param_count(lstm_spec()),
        "lstm_pruned": pruned.num_params(),
        "hlstm": param_count(hlstm_spec(units=16, hdim=16)),
        "dnn": param_count(dnn_spec()),
    }
    elapsed = time.perf_counter() - start
    ok = counts == {"lstm": 8081, "lstm_pruned": 3273, "hlstm": 6993, "dnn": 60929} and elapsed < 1.0
    verdict(1, "parameter counts", ok, f"{counts}, {elapsed:.2f}s")


def test_criterion_2_gradients(verdict):
    start = time.perf_counter()
    worst = {kind: max(fd_check(*grad_case(kind, seed), seed=seed) for seed in range(20))
             for kind in ("dense", "lstm", "hlstm")}
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) < 1e-4 and elapsed < 30
    verdict(2, "gradients vs central differences", ok,
            ", ".join(f"{k} max rel err {v:.1e}" for k, v in worst.items()) + f", {elapsed:.1f}s")


def test_criterion_3_pruning_equivalence(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = {}
    for name, spec, shape in (("dnn", dnn_spec(), (50, 76)), ("lstm", lstm_spec(), (50, 48, 76))):
        model = randomize(init_model(spec, 1), 2, scale=0.3)
        pruned, report = prune_model(model, 0.5)
        masked = pruned_equivalence_mask(model, report.removed)
        x = rng.normal(size=shape).astype(np.float32)
        worst[name] = float(np.abs(forward(pruned, x) - forward(masked, x)).max())
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) <= 1e-6 and elapsed < 10
    verdict(3, "pruned forward == masked original", ok,
            ", ".join(f"{k} max diff {v:.1e}" for k, v in worst.items()) + f", {elapsed:.1f}s")


def test_criterion_4_quantization(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    tensors = [np.array([1.5], np.float32), np.full(7, -0.25, np.float32), np.array([-1, 0, 1], np.float32)]
    while len(tensors) < 100:
        size = int(rng.integers(1, 500))
        tensors.append((rng.normal(size=size) * 10.0 ** rng.integers(-3, 3)).astype(np.float32))
    ratio_bound = 0.0
    for t in tensors:
        q = quantize(t)
        err = np.abs(dequantize(q).astype(np.float64) - t).max()
        ratio_bound = max(ratio_bound, err / error_bound(q, t) if error_bound(q, t) else err)
    dnn = init_model(dnn_spec(), 0)
    size_ratio = payload_bytes(dnn) / payload_bytes(quantize_model(dnn))
    elapsed = time.perf_counter() - start
    ok = ratio_bound <= 1.0 and size_ratio >= 3.5 and elapsed < 5
    verdict(4, "quantization bounds", ok,
            f"worst err / (scale/2 + ulp) = {ratio_bound:.6f}, payload ratio {size_ratio:.2f}x, {elapsed:.1f}s")


def test_criterion_5_auroc_oracle(verdict):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 201))
        labels = rng.integers(0, 2, size=n)
        labels[:2] = [0, 1]
        scores = rng.integers(0, 8, size=n) / 8 if rng.random() < 0.5 else rng.normal(size=n)
        worst = max(worst, abs(auroc(scores, labels) - brute_force_auroc(scores, labels)))
    separated = auroc([0.1, 0.2, 0.7, 0.9], [0, 0, 1, 1])
    ties = auroc([0.4] * 10, [0, 1] * 5)
    ok = worst <= 1e-12 and separated == 1.0 and ties == 0.5
    verdict(5, "AUROC vs all-pairs oracle", ok, f"max diff {worst:.1e}, separated {separated}, ties {ties}")


# ---------------------------------------------------- desk-scale comparison


@pytest.fixture(scope="module")
def comparison():
    start = time.perf_counter()
    specs = load_variable_specs()
    cohort = preprocess(generate_synthetic(COHORT_N, seed=COHORT_SEED, specs=specs).episodes, specs, seed=0)
    seq = ((cohort.train.x, cohort.train.y), (cohort.test.x, cohort.test.y))
    flat = ((cohort.train.static, cohort.train.y), (cohort.test.static, cohort.test.y))
    cfg = dict(epochs=20, batch_size=8, learning_rate=0.001, seed=0)
    models = {
        "lstm": train(init_model(lstm_spec(), 0), *seq, TrainConfig(**cfg))[0],
        "lstm_pruned": train(init_model(lstm_spec(), 0), *seq,
                             TrainConfig(prune_fraction=0.5, prune_after_epoch=1, **cfg))[0],
        "hlstm": train(init_model(hlstm_spec(), 0), *seq, TrainConfig(**cfg))[0],
        "dnn": train(init_model(dnn_spec(), 0), *flat, TrainConfig(**cfg))[0],
    }
    models["dnn_quantized"] = quantize_model(models["dnn"])
    tests = {k: (flat if k.startswith("dnn") else seq)[1] for k in models}
    scores = {k: auroc(m.predict(tests[k][0], 512) if hasattr(m, "qparams") else predict(m, tests[k][0], 512),
                       tests[k][1]) for k, m in models.items()}
    return {"models": models, "tests": tests, "auroc": scores, "seconds": time.perf_counter() - start,
            "shape": cohort.train.x.shape[1:]}


def test_criterion_6_desk_scale_auroc(verdict, comparison):
    s = comparison["auroc"]
    base = s["lstm"]
    ok = (comparison["shape"] == (48, 76) and base >= 0.85 and s["lstm_pruned"] >= base - 0.03
          and s["hlstm"] >= base - 0.03 and abs(s["dnn_quantized"] - s["dnn"]) <= 0.01
          and comparison["seconds"] <= 15 * 60)
    verdict(6, "desk-scale test AUROC", ok,
            ", ".join(f"{k} {v:.4f}" for k, v in s.items()) + f", {comparison['seconds']:.0f}s")


def test_criterion_7_latency_orderings(verdict, comparison):
    models, tests = comparison["models"], comparison["tests"]
    us = {k: bench_inference(m, tests[k][0], repetitions=5, batch_size=512) for k, m in models.items()}
    lstms = ("lstm", "lstm_pruned", "hlstm")
    ok = us["lstm_pruned"] < us["lstm"] and max(us["dnn"], us["dnn_quantized"]) < min(us[k] for k in lstms)
    verdict(7, "latency orderings", ok, ", ".join(f"{k} {v:.1f}us" for k, v in us.items()))


def _pipeline(root, monkeypatch):
    """Run every stage from inside ``root`` with relative paths only."""

    def run(*argv):
        assert main([str(a) for a in argv]) == 0, argv

    root.mkdir()
    monkeypatch.chdir(root)
    with open("run.cfg", "w") as fh:
        fh.write("[model]\nkind = lstm\n[train]\nepochs = 2\nseed = 8\n")
    with open("dnn.cfg", "w") as fh:
        fh.write("[model]\nkind = dnn\n[train]\nepochs = 2\n")
    run("synth", "--n", 200, "--seed", 8, "--out", "raw")
    run("preprocess", "--episodes", "raw/episodes.csv", "--labels", "raw/labels.csv", "--out", "features")
    feats = "features/features.cnnf"
    run("train", "--config", "run.cfg", "--data", feats, "--out", "lstm")
    run("prune", "--model", "lstm/model.cnnc", "--fraction", 0.5, "--out", "lstm_p")
    run("train", "--config", "dnn.cfg", "--data", feats, "--out", "dnn")
    run("quantize", "--model", "dnn/model.cnnc", "--out", "dnn")
    run("eval", "--model", "lstm/model.cnnc", "--model", "lstm_p/model.cnnc", "--model", "dnn/model.cnnc",
        "--model", "dnn/model.q.cnnc", "--data", feats, "--out", "eval")
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != "timing.csv"}


def test_criterion_8_determinism(verdict, tmp_path, monkeypatch):
    a = _pipeline(tmp_path / "a", monkeypatch)
    b = _pipeline(tmp_path / "b", monkeypatch)
    differing = sorted(str(k) for k in set(a) | set(b) if a.get(k) != b.get(k))
    models = sum(str(k).endswith(".cnnc") for k in a)
    csvs = sum(str(k).endswith(".csv") for k in a)
    ok = not differing and models == 4 and csvs >= 6
    verdict(8, "pipeline determinism", ok,
            f"{len(a)} files compared ({models} model files, {csvs} CSVs), differing: {differing or 'none'}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
