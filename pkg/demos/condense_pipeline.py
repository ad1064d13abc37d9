"""
Training, pruning and quantizing on a synthetic cohort
======================================================

A small end-to-end run: generate ICU-like stays, preprocess them into
48 x 76 matrices, train the three model families, then shrink them.
Sizes are kept small so the whole script finishes in well under a minute.
"""

import tempfile

from nncondense.condensation import prune_model, quantize_model
from nncondense.data import generate_synthetic, load_variable_specs, preprocess
from nncondense.evaluation import EvalReport, auroc, bench_inference, emit_report
from nncondense.layers import dnn_spec, hlstm_spec, init_model, lstm_spec, predict
from nncondense.model_store import file_bytes
from nncondense.training import TrainConfig, train

###############################################################################
# Data
# ----
# 600 synthetic stays with about 11% positives.  Preprocessing bins every
# variable hourly, forward-fills gaps and appends one mask column per variable.

specs = load_variable_specs()
cohort = preprocess(generate_synthetic(600, seed=1, specs=specs).episodes, specs, seed=0)
print("train", cohort.train.x.shape, "test", cohort.test.x.shape)
print("positives in train: %.1f%%" % (100 * cohort.train.y.mean()))

seq_train = (cohort.train.x, cohort.train.y)
seq_test = (cohort.test.x, cohort.test.y)
flat_train = (cohort.train.static, cohort.train.y)
flat_test = (cohort.test.static, cohort.test.y)

###############################################################################
# Training
# --------
# The pruned LSTM starts out as the baseline and loses half of its units in
# both layers after the first epoch; training then continues on the smaller
# network.

config = TrainConfig(epochs=4, batch_size=8, seed=0)
logs = {}
models = {}
models["lstm"], logs["lstm"] = train(init_model(lstm_spec(), 0), seq_train, seq_test, config)
models["lstm_pruned"], logs["lstm_pruned"] = train(
    init_model(lstm_spec(), 0), seq_train, seq_test,
    TrainConfig(epochs=4, batch_size=8, seed=0, prune_fraction=0.5))
models["hlstm"], logs["hlstm"] = train(init_model(hlstm_spec(), 0), seq_train, seq_test, config)
models["dnn"], logs["dnn"] = train(init_model(dnn_spec(), 0), flat_train, flat_test, config)

###############################################################################
# Quantization
# ------------
# Every DNN tensor becomes 8-bit codes plus a float32 offset and step.
# The parameter count stays the same; the file shrinks about fourfold.

models["dnn_quantized"] = quantize_model(models["dnn"])

###############################################################################
# Comparison
# ----------

reports = []
for name, model in models.items():
    x, y = flat_test if name.startswith("dnn") else seq_test
    quantized = name == "dnn_quantized"
    scores = model.predict(x, 512) if quantized else predict(model, x, 512)
    float_model = model.dequantize() if quantized else model
    reports.append(EvalReport(
        model=name,
        params=model.num_params(),
        file_bytes=file_bytes(float_model),
        quantized_bytes=file_bytes(model) if quantized else None,
        inference_us=bench_inference(model, x, repetitions=3, batch_size=512),
        test_auroc=auroc(scores, y),
    ))

print("%-14s %8s %10s %10s %8s" % ("model", "params", "bytes", "us/sample", "AUROC"))
for r in reports:
    size = r.quantized_bytes if r.quantized_bytes is not None else r.file_bytes
    print("%-14s %8d %10d %10.1f %8.3f" % (r.model, r.params, size, r.inference_us, r.test_auroc))

###############################################################################
# The same numbers as CSV files plus a self-contained SVG chart.

out = tempfile.mkdtemp(prefix="nncondense-demo-")
for path in emit_report(reports, logs, out):
    print("wrote", path)

###############################################################################
# A pruned model is still an ordinary model, so it can be pruned again.

smaller, report = prune_model(models["lstm_pruned"], 0.5)
print("second prune: %d -> %d parameters" % (report.params_before, report.params_after))
print("units left per layer:", [layer.units for layer in smaller.spec.layers if layer.kind == "lstm"])
