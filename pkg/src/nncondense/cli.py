"""``nncondense`` command line: synth, preprocess, train, prune, quantize, eval, bench, report.

Exit codes: 0 success, 2 usage, 3 data, 4 model/format, 5 numeric.  Failures
print one ``nncondense: error[<class>]: <reason>`` line on stderr.
"""

import argparse
import configparser
import io
import logging
import sys
from pathlib import Path

from . import data as data_mod
from . import model_store
from ._io import atomic_write
from .condensation import QuantizedModel, prune_model, quantize_model
from .errors import CondenseError, DataError, ModelError, UsageError
from .evaluation import (EvalReport, auroc, bench_inference, emit_report, epochs_from_csv, epochs_to_csv,
                         reports_from_csv, reports_to_csv)
from .layers import dnn_spec, hlstm_spec, init_model, lstm_spec, param_count, predict
from .training import TrainConfig, train

log = logging.getLogger("nncondense")

MODEL_FILE = "model.cnnc"
QUANT_FILE = "model.q.cnnc"

# section -> key -> (parser, default); None default means "required or kind-dependent"
CONFIG_SCHEMA = {
    "data": {"features": (str, "")},
    "model": {
        "kind": (str, "lstm"),
        "units": (str, None),
        "hdim": (int, 16),
        "dropout": (float, None),
        "masking": (bool, True),
        "init_seed": (int, 0),
    },
    "train": {
        "epochs": (int, 20),
        "batch_size": (int, 8),
        "learning_rate": (float, 0.001),
        "beta1": (float, 0.9),
        "beta2": (float, 0.999),
        "epsilon": (float, 1e-8),
        "seed": (int, 0),
    },
    "condense": {
        "prune_fraction": (float, 0.0),
        "prune_after_epoch": (int, 1),
    },
    "output": {"dir": (str, "")},
}

_KIND_DEFAULTS = {"lstm": ("16,16", 0.3), "hlstm": ("16", 0.3), "dnn": ("256,128,64", 0.5)}


def parse_config(text):
    """Parse and fully resolve a run config; unknown sections or keys are errors."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise UsageError(f"bad config: {exc}") from exc
    resolved = {}
    for section in cp.sections():
        if section not in CONFIG_SCHEMA:
            raise UsageError(f"unknown config section [{section}]")
        for key in cp[section]:
            if key not in CONFIG_SCHEMA[section]:
                raise UsageError(f"unknown config key {section}.{key}")
    for section, keys in CONFIG_SCHEMA.items():
        resolved[section] = {}
        for key, (typ, default) in keys.items():
            if cp.has_option(section, key):
                try:
                    value = cp.getboolean(section, key) if typ is bool else typ(cp.get(section, key))
                except ValueError as exc:
                    raise UsageError(f"bad value for {section}.{key}: {exc}") from exc
            else:
                value = default
            resolved[section][key] = value
    kind = resolved["model"]["kind"]
    if kind not in _KIND_DEFAULTS:
        raise UsageError(f"model.kind must be lstm, hlstm or dnn, not {kind!r}")
    units, dropout = _KIND_DEFAULTS[kind]
    if resolved["model"]["units"] is None:
        resolved["model"]["units"] = units
    if resolved["model"]["dropout"] is None:
        resolved["model"]["dropout"] = dropout
    return resolved


def format_config(resolved):
    buf = io.StringIO()
    for section, keys in resolved.items():
        buf.write(f"[{section}]\n")
        for key, value in keys.items():
            if isinstance(value, bool):
                value = "true" if value else "false"
            buf.write(f"{key} = {value}\n")
        buf.write("\n")
    return buf.getvalue()


def build_spec(model_cfg, input_dim):
    try:
        units = tuple(int(u) for u in str(model_cfg["units"]).split(",") if u.strip())
    except ValueError as exc:
        raise UsageError(f"bad model.units: {exc}") from exc
    kind = model_cfg["kind"]
    if kind == "lstm":
        return lstm_spec(input_dim, units, model_cfg["dropout"], model_cfg["masking"])
    if kind == "hlstm":
        if len(units) != 1:
            raise UsageError("hlstm takes a single units value")
        return hlstm_spec(input_dim, units[0], model_cfg["hdim"], model_cfg["dropout"], model_cfg["masking"])
    return dnn_spec(input_dim, units, model_cfg["dropout"])


# ------------------------------------------------------------------ helpers


def _read_text(path, what):
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {what} {path}: {exc}") from exc


def _load_features(path):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read features {path}: {exc}") from exc
    try:
        return model_store.decode_tensors(raw)
    except CondenseError as exc:
        raise DataError(f"bad features file {path}: {exc}") from exc


def _split(features, sequential, part):
    key = "x" if sequential else "static"
    return features[f"{part}_{key}"], features[f"{part}_y"]


def _float_model(m):
    return m.dequantize() if isinstance(m, QuantizedModel) else m


def _model_name(path, given):
    if given:
        return given
    p = Path(path)
    return p.parent.name if p.name in (MODEL_FILE, QUANT_FILE) and p.parent.name else p.stem


# ----------------------------------------------------------------- commands


def cmd_synth(args):
    if args.n < 2:
        raise UsageError("--n must be at least 2")
    specs = data_mod.load_variable_specs(args.spec)
    cohort = data_mod.generate_synthetic(args.n, args.seed, specs, positive_rate=args.positive_rate)
    out = Path(args.out)
    atomic_write(out / "episodes.csv", data_mod.write_episodes_csv(cohort.episodes))
    atomic_write(out / "labels.csv", data_mod.write_labels_csv(cohort.episodes))
    layout = data_mod.FeatureLayout(specs)
    manifest = "index,feature\n" + "".join(f"{i},{n}\n" for i, n in enumerate(layout.names))
    atomic_write(out / "manifest.csv", manifest)
    log.info("%d variables, %d encoded features", len(specs), layout.width)


def cmd_preprocess(args):
    specs = data_mod.load_variable_specs(args.spec)
    episodes = data_mod.read_episodes_csv(_read_text(args.episodes, "episodes"),
                                          _read_text(args.labels, "labels"), specs)
    cohort = data_mod.preprocess(episodes, specs, seed=args.seed, test_fraction=args.test_fraction)
    tensors = {}
    for part in ("train", "test"):
        fs = getattr(cohort, part)
        tensors[f"{part}_x"] = fs.x
        tensors[f"{part}_static"] = fs.static
        tensors[f"{part}_y"] = fs.y
    out = Path(args.out)
    atomic_write(out / "features.cnnf", model_store.encode_tensors(tensors))
    atomic_write(out / "stats.csv", cohort.stats.to_csv())


def cmd_train(args):
    resolved = parse_config(_read_text(args.config, "config"))
    if args.data:
        resolved["data"]["features"] = args.data
    # an --out override is not recorded, so reruns into other directories match byte for byte
    out = Path(args.out or resolved["output"]["dir"] or ".")
    if not resolved["data"]["features"]:
        raise UsageError("no features file: set data.features or pass --data")
    features = _load_features(resolved["data"]["features"])
    model_cfg, train_cfg, condense = resolved["model"], resolved["train"], resolved["condense"]
    sequential = model_cfg["kind"] != "dnn"
    train_set = _split(features, sequential, "train")
    test_set = _split(features, sequential, "test")
    spec = build_spec(model_cfg, train_set[0].shape[-1])
    fraction = condense["prune_fraction"] or None
    try:
        config = TrainConfig(prune_fraction=fraction, prune_after_epoch=condense["prune_after_epoch"], **train_cfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if len(test_set[0]) == 0:
        test_set = None
    model, logs = train(init_model(spec, model_cfg["init_seed"]), train_set, test_set, config)
    model_store.save(model, out / MODEL_FILE)
    atomic_write(out / "epochs.csv", epochs_to_csv(logs))
    atomic_write(out / "timing.csv", "epoch,seconds\n" + "".join(f"{e.epoch},{e.seconds!r}\n" for e in logs))
    atomic_write(out / "resolved.cfg", format_config(resolved))


def cmd_prune(args):
    model = model_store.load(args.model)
    if isinstance(model, QuantizedModel):
        raise ModelError("cannot prune a quantized model")
    pruned, report = prune_model(model, args.fraction)
    out = Path(args.out)
    model_store.save(pruned, out / MODEL_FILE)
    atomic_write(out / "prune_report.csv", report.to_csv())
    log.info("params %d -> %d", report.params_before, report.params_after)


def cmd_quantize(args):
    model = model_store.load(args.model)
    if isinstance(model, QuantizedModel):
        raise ModelError("model is already quantized")
    model_store.save(quantize_model(model), Path(args.out) / QUANT_FILE)


def _report_for(path, name, features, bench_reps=None):
    m = model_store.load(path)
    fm = _float_model(m)
    x, y = _split(features, fm.spec.sequential, "test")
    if len(x) == 0:
        raise DataError("test split is empty")
    quantized = isinstance(m, QuantizedModel)
    score = auroc(predict(fm, x, 512), y) if y.min() != y.max() else None
    inference = bench_inference(m if quantized else fm, x, bench_reps, 512) if bench_reps else None
    return EvalReport(
        model=name,
        params=param_count(m.spec),
        file_bytes=model_store.file_bytes(fm),
        quantized_bytes=model_store.file_bytes(m) if quantized else None,
        inference_us=inference,
        test_auroc=score,
    )


def _names(args):
    names = args.name or []
    if names and len(names) != len(args.model):
        raise UsageError("--name must be given once per --model")
    return [_model_name(p, names[i] if names else None) for i, p in enumerate(args.model)]


def cmd_eval(args):
    features = _load_features(args.data)
    reports = [_report_for(p, n, features) for p, n in zip(args.model, _names(args))]
    atomic_write(Path(args.out) / "eval.csv", reports_to_csv(reports))


def cmd_bench(args):
    if args.repetitions < 3:
        raise UsageError("--repetitions must be at least 3")
    features = _load_features(args.data)
    path = Path(args.out) / "eval.csv"
    existing = {r.model: r for r in reports_from_csv(path.read_text("utf-8"))} if path.exists() else {}
    order = list(existing)
    for p, n in zip(args.model, _names(args)):
        fresh = _report_for(p, n, features, args.repetitions)
        if n in existing:
            existing[n].inference_us = fresh.inference_us
        else:
            existing[n] = fresh
            order.append(n)
    atomic_write(path, reports_to_csv([existing[n] for n in order]))


def cmd_report(args):
    reports = reports_from_csv(_read_text(args.eval, "eval csv"))
    curves = {}
    for item in args.epochs or []:
        name, sep, path = item.partition("=")
        if not sep:
            raise UsageError("--epochs takes NAME=PATH")
        curves[name] = epochs_from_csv(_read_text(path, "epoch log"))
    emit_report(reports, curves, args.out)


# ------------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"nncondense: error[usage]: {message}", file=sys.stderr)
        sys.exit(2)


def build_parser():
    p = _Parser(prog="nncondense", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic cohort")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--spec", default=None, help="variable spec file (default: built-in 76-feature layout)")
    s.add_argument("--positive-rate", type=float, default=0.11)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", help="bin, impute, encode and normalize long-format CSV")
    s.add_argument("--episodes", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--spec", default=None)
    s.add_argument("--seed", type=int, default=0, help="split seed")
    s.add_argument("--test-fraction", type=float, default=0.15)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", help="train a model from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--data", default=None, help="features file (overrides data.features)")
    s.add_argument("--out", default=None, help="output directory (overrides output.dir)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("prune", help="channel-prune a trained model")
    s.add_argument("--model", required=True)
    s.add_argument("--fraction", type=float, default=0.5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_prune)

    s = sub.add_parser("quantize", help="8-bit post-training quantization")
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_quantize)

    for name, func, help_ in (("eval", cmd_eval, "params, file sizes and test AUROC"),
                              ("bench", cmd_bench, "per-sample inference latency")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--model", action="append", required=True)
        s.add_argument("--name", action="append")
        s.add_argument("--data", required=True)
        s.add_argument("--out", required=True)
        if name == "bench":
            s.add_argument("--repetitions", type=int, default=5)
        s.set_defaults(func=func)

    s = sub.add_parser("report", help="comparison CSV, epoch curves and SVG chart")
    s.add_argument("--eval", required=True)
    s.add_argument("--epochs", action="append", metavar="NAME=PATH")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        args.func(args)
    except CondenseError as exc:
        print(f"nncondense: error[{exc.code}]: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
