"""Channel pruning and post-training 8-bit quantization."""

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelError, NumericError
from .layers import Model, forward, layer_param_count, param_count, predict, with_widths
from .tensor_core import FLOAT

# ----------------------------------------------------------------- pruning


def prunable_layers(spec):
    """Indices of layers whose channels may be removed.

    Hidden dense layers and LSTM layers qualify; the output layer never does.
    """
    last = len(spec.layers) - 1
    return [i for i, layer in enumerate(spec.layers)
            if i != last and layer.kind in ("lstm", "dense")]


def layer_saliencies(layer, params):
    """Mean absolute incoming weight for every output channel of a layer."""
    if layer.kind == "dense":
        return np.abs(params["kernel"].astype(np.float64)).mean(axis=0)
    if layer.kind == "lstm":
        u = layer.units
        w = np.concatenate([params["kernel"], params["recurrent_kernel"]], axis=0)
        return np.abs(w.astype(np.float64)).reshape(-1, 4, u).mean(axis=(0, 1))
    raise ModelError(f"{layer.kind} layers have no channel saliency")


def channel_saliency(layer, params, channel):
    if not 0 <= channel < layer.units:
        raise IndexError(f"channel {channel} out of range for {layer.units} units")
    return float(layer_saliencies(layer, params)[channel])


@dataclass
class LayerPrune:
    index: int
    kind: str
    saliencies: np.ndarray
    removed: list
    params_before: int
    params_after: int


@dataclass
class PruneReport:
    layers: list = field(default_factory=list)
    params_before: int = 0
    params_after: int = 0

    @property
    def removed(self):
        return {lp.index: lp.removed for lp in self.layers}

    def rows(self):
        for lp in self.layers:
            gone = set(lp.removed)
            for c, s in enumerate(lp.saliencies):
                yield lp.index, c, float(s), int(c in gone)

    def to_csv(self):
        buf = io.StringIO(newline="")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "channel", "saliency", "removed"])
        for layer, channel, sal, removed in self.rows():
            w.writerow([layer, channel, repr(sal), removed])
        return buf.getvalue()


def _consumer(spec, i):
    """Index of the next parameterised layer reading layer ``i``'s output."""
    for j in range(i + 1, len(spec.layers)):
        if spec.layers[j].kind != "dropout":
            return j
    return None


def select_removed(saliencies, fraction):
    n = len(saliencies)
    k = math.floor(fraction * n)
    if k >= n:
        raise ModelError(f"pruning {fraction} of {n} channels leaves none")
    # stable sort: ties go to the lower index first
    return sorted(int(c) for c in np.argsort(saliencies, kind="stable")[:k])


def _gate_cols(keep, units):
    return np.concatenate([g * units + keep for g in range(4)])


def prune_model(model, fraction):
    """Remove the lowest-saliency ``floor(fraction * n)`` channels per layer.

    A removed channel loses its incoming weights, bias entries, recurrent
    rows and columns, and the weights of every downstream layer that read
    it.  Returns the smaller model and a :class:`PruneReport`.
    """
    if not 0 <= fraction < 1:
        raise ModelError(f"prune fraction must lie in [0, 1), got {fraction}")
    spec = model.spec
    targets = prunable_layers(spec)
    if not targets:
        raise ModelError("model has no prunable layers")
    report = PruneReport(params_before=param_count(spec))
    keep_out = {}
    for i in targets:
        layer = spec.layers[i]
        sal = layer_saliencies(layer, model.params[i])
        removed = select_removed(sal, fraction)
        keep_out[i] = np.setdiff1d(np.arange(layer.units), removed)
        report.layers.append(LayerPrune(i, layer.kind, sal, removed, layer_param_count(layer), 0))

    new_spec = with_widths(spec, {i: len(k) for i, k in keep_out.items()})
    params = []
    keep_in = None
    for i, (layer, p) in enumerate(zip(spec.layers, model.params)):
        q = {k: v.copy() for k, v in p.items()}
        rows = keep_in if keep_in is not None else slice(None)
        out = keep_out.get(i)
        if layer.kind == "lstm":
            cols = _gate_cols(out, layer.units) if out is not None else slice(None)
            q["kernel"] = p["kernel"][rows][:, cols]
            q["recurrent_kernel"] = p["recurrent_kernel"][out if out is not None else slice(None)][:, cols]
            q["bias"] = p["bias"][cols]
        elif layer.kind == "hlstm":
            q["kernel"] = p["kernel"][rows]
        elif layer.kind == "dense":
            cols = out if out is not None else slice(None)
            q["kernel"] = p["kernel"][rows][:, cols]
            q["bias"] = p["bias"][cols]
        params.append({k: np.ascontiguousarray(v) for k, v in q.items()})
        if layer.kind != "dropout":
            keep_in = out
    pruned = Model(new_spec, params)
    for lp in report.layers:
        lp.params_after = layer_param_count(new_spec.layers[lp.index])
    report.params_after = param_count(new_spec)
    return pruned, report


def pruned_equivalence_mask(model, removed):
    """Full-width copy of ``model`` with removed channels cut off downstream.

    ``removed`` maps layer index to channel indices.  Each removed channel's
    outgoing weights (the consumer's kernel row and, for LSTM units, the
    unit's recurrent row) are zeroed, so the copy computes what the pruned
    model computes.
    """
    out = model.copy()
    for i, channels in removed.items():
        channels = list(channels)
        if not channels:
            continue
        layer = model.spec.layers[i]
        if layer.kind == "lstm":
            out.params[i]["recurrent_kernel"][channels, :] = 0
        j = _consumer(model.spec, i)
        if j is not None:
            out.params[j]["kernel"][channels] = 0
    return out


# ------------------------------------------------------------ quantization


@dataclass
class QuantizedTensor:
    min: np.float32
    scale: np.float32
    payload: np.ndarray
    shape: tuple

    @property
    def size(self):
        return self.payload.size


def quantize(t):
    """Per-tensor affine map onto 256 levels ``min + code * scale``."""
    t = np.asarray(t, dtype=FLOAT)
    if not np.all(np.isfinite(t)):
        raise NumericError("cannot quantize a tensor with non-finite values")
    if t.size == 0:
        return QuantizedTensor(FLOAT(0), FLOAT(0), np.zeros(0, np.uint8), t.shape)
    lo = FLOAT(t.min())
    hi = FLOAT(t.max())
    exact = (np.float64(hi) - np.float64(lo)) / 255
    scale = FLOAT(exact)
    if np.float64(scale) > exact:
        # round the stored scale toward zero so every grid point stays in range
        scale = np.nextafter(scale, FLOAT(0))
    if scale == 0:
        return QuantizedTensor(lo, FLOAT(0), np.zeros(t.size, np.uint8), t.shape)
    x = (t.ravel().astype(np.float64) - np.float64(lo)) / np.float64(scale)
    # codes are non-negative, so floor(x + 0.5) rounds half away from zero
    codes = np.clip(np.floor(x + 0.5), 0, 255).astype(np.uint8)
    return QuantizedTensor(lo, scale, codes, t.shape)


def dequantize(q):
    w = np.float64(q.min) + q.payload.astype(np.float64) * np.float64(q.scale)
    return w.astype(FLOAT).reshape(q.shape)


def error_bound(q, original):
    """Largest reconstruction error the affine grid allows for ``original``."""
    ulp = np.spacing(np.abs(np.asarray(original, dtype=FLOAT))).max(initial=0)
    return float(q.scale) / 2 + float(ulp)


class QuantizedModel:
    """Model whose parameters are stored as :class:`QuantizedTensor` codes.

    Inference dequantizes every tensor once, on first use, and runs the
    ordinary float path.
    """

    def __init__(self, spec, qparams):
        self.spec = spec
        self.qparams = qparams
        self._float = None

    def dequantize(self):
        if self._float is None:
            self._float = Model(self.spec, [{k: dequantize(v) for k, v in p.items()} for p in self.qparams])
        return self._float

    def named_params(self):
        for i, p in enumerate(self.qparams):
            for name, value in p.items():
                yield f"{i}.{name}", value

    def num_params(self):
        return sum(q.size for _, q in self.named_params())

    def forward(self, x):
        return forward(self.dequantize(), x)

    def predict(self, x, batch_size=None):
        return predict(self.dequantize(), x, batch_size)


def quantize_model(model):
    return QuantizedModel(model.spec, [{k: quantize(v) for k, v in p.items()} for p in model.params])
