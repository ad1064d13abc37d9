"""Layers, cells and model assembly with hand-written reverse mode.

A model is an ordered list of :class:`LayerSpec` descriptors plus one dict
of parameter arrays per layer.  Recurrent models take ``(batch, T,
features)`` input; a timestep whose feature vector is exactly zero is
skipped by every recurrent layer flagged with ``masking`` (state is carried
through unchanged).  Static models take ``(batch, features)``.

Gate blocks are laid out in (i, f, c, o) order along the last axis of every
LSTM / hLSTM kernel and bias.

Parameter names per layer kind::

    lstm   kernel (in, 4u)  recurrent_kernel (u, 4u)  bias (4u,)
    hlstm  kernel (in, 4d)  hidden_kernel (u, 4d)
           recurrent_kernel (4, d, u)                bias (4u,)
    dense  kernel (in, out) bias (out,)
"""

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .errors import ModelError, ShapeError
from .tensor_core import FLOAT, Rng, activation, activation_grad, matmul, sigmoid

GATES = ("i", "f", "c", "o")
RECURRENT = ("lstm", "hlstm")
KINDS = ("lstm", "hlstm", "dense", "dropout")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    input_dim: int
    units: int
    hdim: int = 0
    activation: str = ""
    rate: float = 0.0
    masking: bool = False

    def __post_init__(self):
        # stored as f32 in model files; keep the in-memory value identical
        object.__setattr__(self, "rate", float(np.float32(self.rate)))

    @property
    def recurrent(self):
        return self.kind in RECURRENT


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        validate_spec(self)

    @property
    def input_dim(self):
        return self.layers[0].input_dim

    @property
    def sequential(self):
        return any(layer.recurrent for layer in self.layers)


class LstmState(NamedTuple):
    h: np.ndarray
    c: np.ndarray


@dataclass
class Model:
    spec: ModelSpec
    params: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.params) != len(self.spec.layers):
            raise ModelError("one parameter dict per layer required")
        for i, (layer, p) in enumerate(zip(self.spec.layers, self.params)):
            expected = param_shapes(layer)
            got = {k: v.shape for k, v in p.items()}
            if got != expected:
                raise ShapeError(f"layer {i} ({layer.kind}): params {got}, expected {expected}")

    @property
    def dtype(self):
        for p in self.params:
            for v in p.values():
                return v.dtype
        return np.dtype(FLOAT)

    def astype(self, dtype):
        return Model(self.spec, [{k: v.astype(dtype) for k, v in p.items()} for p in self.params])

    def copy(self):
        return self.astype(self.dtype)

    def named_params(self):
        for i, p in enumerate(self.params):
            for name, value in p.items():
                yield f"{i}.{name}", value

    def num_params(self):
        return sum(v.size for _, v in self.named_params())


def validate_spec(spec):
    layers = spec.layers
    if not layers:
        raise ModelError("model has no layers")
    width = layers[0].input_dim
    seen_static = False
    for i, layer in enumerate(layers):
        if layer.kind not in KINDS:
            raise ModelError(f"layer {i}: unknown kind {layer.kind!r}")
        if layer.input_dim != width:
            raise ModelError(f"layer {i} ({layer.kind}) expects width {layer.input_dim}, got {width}")
        if layer.units <= 0 or layer.input_dim <= 0:
            raise ModelError(f"layer {i}: widths must be positive")
        if layer.kind == "hlstm" and layer.hdim <= 0:
            raise ModelError(f"layer {i}: hlstm needs hdim > 0")
        if layer.kind == "dropout":
            if layer.units != layer.input_dim or not 0 <= layer.rate < 1:
                raise ModelError(f"layer {i}: bad dropout layer")
        if layer.kind == "dense" and layer.activation not in ("relu", "sigmoid", "tanh", "linear"):
            raise ModelError(f"layer {i}: bad dense activation {layer.activation!r}")
        if layer.recurrent and seen_static:
            raise ModelError(f"layer {i}: recurrent layer after a static layer")
        if layer.kind == "dense":
            seen_static = True
        width = layer.units
    last = layers[-1]
    if last.kind != "dense" or last.units != 1 or last.activation != "sigmoid":
        raise ModelError("model must end in a single sigmoid output unit")


def param_shapes(layer):
    n_in, u, d = layer.input_dim, layer.units, layer.hdim
    if layer.kind == "lstm":
        return {"kernel": (n_in, 4 * u), "recurrent_kernel": (u, 4 * u), "bias": (4 * u,)}
    if layer.kind == "hlstm":
        return {
            "kernel": (n_in, 4 * d),
            "hidden_kernel": (u, 4 * d),
            "recurrent_kernel": (4, d, u),
            "bias": (4 * u,),
        }
    if layer.kind == "dense":
        return {"kernel": (n_in, u), "bias": (u,)}
    return {}


def layer_param_count(layer):
    n_in, u, d = layer.input_dim, layer.units, layer.hdim
    if layer.kind == "lstm":
        return 4 * (u * (n_in + u) + u)
    if layer.kind == "hlstm":
        return 4 * (n_in * d + u * d + d * u + u)
    if layer.kind == "dense":
        return n_in * u + u
    return 0


def param_count(spec):
    """Closed-form number of trainable scalars in ``spec``."""
    return sum(layer_param_count(layer) for layer in spec.layers)


# ---------------------------------------------------------------- builders


def lstm_spec(input_dim=76, units=(16, 16), dropout=0.3, masking=True):
    layers, width = [], input_dim
    for u in units:
        layers.append(LayerSpec("lstm", width, u, masking=masking))
        width = u
    layers.append(LayerSpec("dropout", width, width, rate=dropout))
    layers.append(LayerSpec("dense", width, 1, activation="sigmoid"))
    return ModelSpec(layers)


def hlstm_spec(input_dim=76, units=16, hdim=16, dropout=0.3, masking=True):
    return ModelSpec([
        LayerSpec("hlstm", input_dim, units, hdim=hdim, masking=masking),
        LayerSpec("dropout", units, units, rate=dropout),
        LayerSpec("dense", units, 1, activation="sigmoid"),
    ])


def dnn_spec(input_dim=76, widths=(256, 128, 64), dropout=0.5):
    layers, width = [], input_dim
    for w in widths:
        layers.append(LayerSpec("dense", width, w, activation="relu"))
        width = w
    layers.append(LayerSpec("dropout", width, width, rate=dropout))
    layers.append(LayerSpec("dense", width, 1, activation="sigmoid"))
    return ModelSpec(layers)


def with_widths(spec, widths):
    """Copy of ``spec`` with the units of the given layers replaced.

    ``widths`` maps layer index to new unit count; input widths of the
    following layers (and dropout pass-through widths) are rechained.
    """
    layers, width = [], spec.input_dim
    for i, layer in enumerate(spec.layers):
        units = widths.get(i, layer.units)
        if layer.kind == "dropout":
            units = width
        layers.append(replace(layer, input_dim=width, units=units))
        width = units
    return ModelSpec(layers)


# ---------------------------------------------------------- initialisation


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape, dtype=np.float64)


def _orthogonal(rng, rows, cols):
    a = rng.normal(size=(max(rows, cols), min(rows, cols)), dtype=np.float64)
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q if rows >= cols else q.T


def _gate_bias(units):
    b = np.zeros(4 * units)
    b[units:2 * units] = 1.0
    return b


def init_params(layer, rng):
    n_in, u, d = layer.input_dim, layer.units, layer.hdim
    if layer.kind == "lstm":
        p = {
            "kernel": _glorot(rng, (n_in, 4 * u), n_in, 4 * u),
            "recurrent_kernel": _orthogonal(rng, u, 4 * u),
            "bias": _gate_bias(u),
        }
    elif layer.kind == "hlstm":
        p = {
            "kernel": _glorot(rng, (n_in, 4 * d), n_in, 4 * d),
            "hidden_kernel": _glorot(rng, (u, 4 * d), u, 4 * d),
            "recurrent_kernel": np.stack([_orthogonal(rng, d, u) for _ in GATES]),
            "bias": _gate_bias(u),
        }
    elif layer.kind == "dense":
        p = {"kernel": _glorot(rng, (n_in, u), n_in, u), "bias": np.zeros(u)}
    else:
        p = {}
    return {k: v.astype(FLOAT) for k, v in p.items()}


def init_model(spec, seed=0):
    rng = Rng(seed).stream("init")
    return Model(spec, [init_params(layer, rng.stream(f"layer{i}")) for i, layer in enumerate(spec.layers)])


# ------------------------------------------------------------------- cells


def _gates(z, u):
    i = sigmoid(z[:, :u])
    f = sigmoid(z[:, u:2 * u])
    g = np.tanh(z[:, 2 * u:3 * u])
    o = sigmoid(z[:, 3 * u:])
    return i, f, g, o


def _check_state(prev, batch, units):
    if prev.h.shape != (batch, units) or prev.c.shape != (batch, units):
        raise ShapeError(f"state shapes {prev.h.shape}/{prev.c.shape}, expected {(batch, units)}")


def lstm_step(params, x_t, prev):
    """One LSTM timestep; returns the new :class:`LstmState`."""
    units = params["recurrent_kernel"].shape[0]
    _check_state(prev, x_t.shape[0], units)
    z = (matmul(x_t, params["kernel"]) + params["bias"]) + matmul(prev.h, params["recurrent_kernel"])
    i, f, g, o = _gates(z, units)
    c = f * prev.c + i * g
    return LstmState(o * np.tanh(c), c)


def _hlstm_preact(params, a, units):
    d = params["recurrent_kernel"].shape[1]
    parts = [matmul(a[:, k * d:(k + 1) * d], params["recurrent_kernel"][k]) for k in range(4)]
    return np.concatenate(parts, axis=1) + params["bias"]


def hlstm_step(params, x_t, prev):
    """One hLSTM timestep.

    Each gate first maps ``x_t`` and ``h_{t-1}`` through its own ReLU hidden
    layer (separate input and hidden kernels, no bias), then through the
    gate's recurrent kernel, where the bias is added.
    """
    units = params["hidden_kernel"].shape[0]
    _check_state(prev, x_t.shape[0], units)
    a = np.maximum(matmul(x_t, params["kernel"]) + matmul(prev.h, params["hidden_kernel"]), 0)
    i, f, g, o = _gates(_hlstm_preact(params, a, units), units)
    c = f * prev.c + i * g
    return LstmState(o * np.tanh(c), c)


# ------------------------------------------------------------ layer passes


class Tape:
    """Intermediates recorded by :func:`forward` for :func:`backward`."""

    def __init__(self):
        self.records = []
        self.step_mask = None
        self.scale = None

    def __bool__(self):
        return bool(self.records)


def _recurrent_forward(layer, p, x, keep, return_sequences, record):
    batch, steps, _ = x.shape
    u = layer.units
    dtype = x.dtype
    h = np.zeros((batch, u), dtype)
    c = np.zeros((batch, u), dtype)
    flat = x.reshape(batch * steps, -1)
    xk = matmul(flat, p["kernel"]).reshape(batch, steps, -1)
    if layer.kind == "lstm":
        xk = xk + p["bias"]
    outs = np.empty((batch, steps, u), dtype) if return_sequences else None
    cache = [] if record else None
    for t in range(steps):
        h_prev, c_prev = h, c
        if layer.kind == "lstm":
            z = xk[:, t] + matmul(h_prev, p["recurrent_kernel"])
            a = None
        else:
            a = np.maximum(xk[:, t] + matmul(h_prev, p["hidden_kernel"]), 0)
            z = _hlstm_preact(p, a, u)
        i, f, g, o = _gates(z, u)
        c_new = f * c_prev + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        if keep is None:
            h, c = h_new, c_new
        else:
            k = keep[:, t:t + 1]
            h = np.where(k, h_new, h_prev)
            c = np.where(k, c_new, c_prev)
        if return_sequences:
            outs[:, t] = h
        if record:
            cache.append((h_prev, c_prev, a, i, f, g, o, tc))
    out = outs if return_sequences else h
    rec = (x, keep, return_sequences, cache) if record else None
    return out, rec


def _recurrent_backward(layer, p, rec, dout, need_dx=True):
    x, keep, return_sequences, cache = rec
    batch, steps, n_in = x.shape
    u = layer.units
    dtype = x.dtype
    dh = np.zeros((batch, u), dtype) if return_sequences else dout
    dc = np.zeros((batch, u), dtype)
    width = 4 * (layer.hdim if layer.kind == "hlstm" else u)
    # per-step gradient wrt the input-side preactivation (x @ kernel)
    dxk = np.zeros((batch, steps, width), dtype)
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    h_prevs = np.empty((batch, steps, u), dtype)
    for t in reversed(range(steps)):
        h_prev, c_prev, a, i, f, g, o, tc = cache[t]
        h_prevs[:, t] = h_prev
        if return_sequences:
            dh = dh + dout[:, t]
        if keep is not None:
            k = keep[:, t:t + 1]
            dh_pass, dc_pass = np.where(k, 0, dh), np.where(k, 0, dc)
            dh, dc = np.where(k, dh, 0), np.where(k, dc, 0)
        dc = dc + dh * o * (1 - tc * tc)
        dz = np.concatenate([
            dc * g * i * (1 - i),
            dc * c_prev * f * (1 - f),
            dc * i * (1 - g * g),
            dh * tc * o * (1 - o),
        ], axis=1)
        dc = dc * f
        if layer.kind == "lstm":
            dxk[:, t] = dz
            dh = matmul(dz, p["recurrent_kernel"].T)
        else:
            d = layer.hdim
            da = np.empty_like(a)
            for gi in range(4):
                dz_g = dz[:, gi * u:(gi + 1) * u]
                a_g = a[:, gi * d:(gi + 1) * d]
                grads["recurrent_kernel"][gi] += matmul(a_g.T, dz_g)
                da[:, gi * d:(gi + 1) * d] = matmul(dz_g, p["recurrent_kernel"][gi].T)
            grads["bias"] += dz.sum(axis=0)
            dpre = da * (a > 0)
            dxk[:, t] = dpre
            dh = matmul(dpre, p["hidden_kernel"].T)
        if keep is not None:
            dh, dc = dh + dh_pass, dc + dc_pass
    flat_d = dxk.reshape(batch * steps, width)
    flat_h = h_prevs.reshape(batch * steps, u)
    grads["kernel"] = matmul(x.reshape(batch * steps, n_in).T, flat_d)
    if layer.kind == "lstm":
        grads["recurrent_kernel"] = matmul(flat_h.T, flat_d)
        grads["bias"] = flat_d.sum(axis=0)
    else:
        grads["hidden_kernel"] = matmul(flat_h.T, flat_d)
    if not need_dx:
        return None, grads
    return matmul(flat_d, p["kernel"].T).reshape(batch, steps, n_in), grads


def step_mask(x):
    """``(batch, T)`` boolean array, False where the feature vector is all zero."""
    return np.any(x != 0, axis=2)


def forward(model, x, training=False, rng=None, tape=None):
    """Run ``model`` on ``x`` and return ``(batch, 1)`` probabilities.

    ``rng`` drives dropout and is required when ``training`` is set.  Pass a
    fresh :class:`Tape` to record what :func:`backward` needs.
    """
    spec = model.spec
    x = np.asarray(x)
    if x.dtype != model.dtype:
        x = x.astype(model.dtype)
    if spec.sequential:
        if x.ndim != 3 or x.shape[2] != spec.input_dim:
            raise ShapeError(f"expected (batch, T, {spec.input_dim}) input, got {x.shape}")
        if x.shape[1] == 0:
            raise ShapeError("empty sequence (T = 0)")
    elif x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ShapeError(f"expected (batch, {spec.input_dim}) input, got {x.shape}")
    record = tape is not None
    keep = step_mask(x) if spec.sequential else None
    last_recurrent = max((i for i, l in enumerate(spec.layers) if l.recurrent), default=-1)
    h = x
    for i, (layer, p) in enumerate(zip(spec.layers, model.params)):
        rec = None
        if layer.recurrent:
            h, rec = _recurrent_forward(layer, p, h, keep if layer.masking else None,
                                        i < last_recurrent, record)
        elif layer.kind == "dropout":
            mask = None
            if training and layer.rate > 0:
                if rng is None:
                    raise ModelError("training-mode dropout needs an rng")
                scale = h.dtype.type(1 / (1 - layer.rate))
                mask = (rng.random(h.shape) >= layer.rate).astype(h.dtype) * scale
                h = h * mask
            rec = mask
        else:
            z = matmul(h, p["kernel"]) + p["bias"]
            inp, h = h, activation(z, layer.activation)
            rec = (inp, h)
        if record:
            tape.records.append(rec)
    return h


def backward(model, tape, dpred):
    """Gradients of a scalar loss wrt every parameter, one dict per layer.

    ``dpred`` is the loss gradient wrt the ``(batch, 1)`` output of the
    :func:`forward` call that filled ``tape``.
    """
    if not tape or len(tape.records) != len(model.spec.layers):
        raise ModelError("backward called without a recorded forward pass")
    grads = [None] * len(model.params)
    d = np.asarray(dpred, dtype=model.dtype)
    for i in reversed(range(len(model.spec.layers))):
        layer, p, rec = model.spec.layers[i], model.params[i], tape.records[i]
        if layer.recurrent:
            d, grads[i] = _recurrent_backward(layer, p, rec, d, need_dx=i > 0)
        elif layer.kind == "dropout":
            if rec is not None:
                d = d * rec
            grads[i] = {}
        else:
            inp, out = rec
            dz = d * activation_grad(out, layer.activation)
            grads[i] = {"kernel": matmul(inp.T, dz), "bias": dz.sum(axis=0)}
            if i > 0:
                d = matmul(dz, p["kernel"].T)
    return grads


def predict(model, x, batch_size=None):
    """Inference-mode probabilities as a flat array."""
    n = len(x)
    if batch_size is None or batch_size >= n:
        return forward(model, x)[:, 0]
    return np.concatenate([forward(model, x[s:s + batch_size])[:, 0] for s in range(0, n, batch_size)])
