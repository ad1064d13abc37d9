"""Byte-exact binary container for float and quantized models.

Layout (all integers little-endian, no padding; see FORMAT.md)::

    magic       4s   b"CNNC"
    version     u16  1
    flags       u16  bit 0 set for quantized payloads
    n_layers    u16
    per layer   kind u8, input u32, units u32, hdim u32, rate f32, masking u8
    n_tensors   u16
    per tensor  name_len u16, name, rank u8, dims u32 * rank, payload

A float payload is ``4 * size`` bytes of float32.  A quantized payload is
``min`` f32, ``scale`` f32, then ``size`` bytes of codes.
"""

import struct
from pathlib import Path

import numpy as np

from ._io import atomic_write
from .condensation import QuantizedModel, QuantizedTensor
from .errors import (BadMagicError, CondenseError, FormatError, InconsistentLayersError, ModelError,
                     TruncatedPayloadError, VersionMismatchError)
from .layers import LayerSpec, Model, ModelSpec, param_shapes

MAGIC = b"CNNC"
FEATURES_MAGIC = b"CNNF"
VERSION = 1
FLAG_QUANTIZED = 1

_KIND_CODES = {
    ("lstm", ""): 1,
    ("hlstm", ""): 2,
    ("dense", "relu"): 3,
    ("dense", "sigmoid"): 4,
    ("dropout", ""): 5,
    ("dense", "tanh"): 6,
    ("dense", "linear"): 7,
}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}

_HEADER = struct.Struct("<4sHHH")
_LAYER = struct.Struct("<BIIIfB")
_QHEAD = struct.Struct("<ff")


def _tensor_header(name, shape):
    raw = name.encode("utf-8")
    return struct.pack(f"<H{len(raw)}sB{len(shape)}I", len(raw), raw, len(shape), *shape)


def _tensor_items(params_list):
    for i, p in enumerate(params_list):
        for name, value in p.items():
            yield f"{i}.{name}", value


def encode(model):
    """Serialize a :class:`Model` or :class:`QuantizedModel` to bytes."""
    quantized = isinstance(model, QuantizedModel)
    params = model.qparams if quantized else model.params
    layers = model.spec.layers
    out = bytearray(_HEADER.pack(MAGIC, VERSION, FLAG_QUANTIZED if quantized else 0, len(layers)))
    for layer in layers:
        code = _KIND_CODES[(layer.kind, layer.activation if layer.kind == "dense" else "")]
        out += _LAYER.pack(code, layer.input_dim, layer.units, layer.hdim, layer.rate, int(layer.masking))
    items = list(_tensor_items(params))
    out += struct.pack("<H", len(items))
    for name, value in items:
        if quantized:
            out += _tensor_header(name, value.shape)
            out += _QHEAD.pack(value.min, value.scale)
            out += value.payload.astype(np.uint8).tobytes()
        else:
            if not np.all(np.isfinite(value)):
                raise ModelError(f"refusing to save non-finite tensor {name}")
            out += _tensor_header(name, value.shape)
            out += np.ascontiguousarray(value, dtype="<f4").tobytes()
    return bytes(out)


class _Reader:
    def __init__(self, data):
        self.data = memoryview(data)
        self.pos = 0

    def remaining(self):
        return len(self.data) - self.pos

    def take(self, n, what):
        if n > self.remaining():
            raise TruncatedPayloadError(f"truncated payload: need {n} bytes for {what}, {self.remaining()} left")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        s = struct.Struct(fmt) if isinstance(fmt, str) else fmt
        return s.unpack(self.take(s.size, what))


def _read_tensor_header(r):
    (name_len,) = r.unpack("<H", "tensor name length")
    name = bytes(r.take(name_len, "tensor name")).decode("utf-8")
    (rank,) = r.unpack("<B", f"rank of {name}")
    dims = r.unpack(f"<{rank}I", f"dims of {name}")
    return name, tuple(dims)


def decode(data):
    """Inverse of :func:`encode`; raises a :class:`FormatError` subclass."""
    r = _Reader(data)
    if r.remaining() < 4 or bytes(r.data[:4]) != MAGIC:
        raise BadMagicError("bad magic: not a CNNC model file")
    _, version, flags, n_layers = r.unpack(_HEADER, "header")
    if version != VERSION:
        raise VersionMismatchError(f"version mismatch: file has {version}, reader supports {VERSION}")
    quantized = bool(flags & FLAG_QUANTIZED)
    layers = []
    for k in range(n_layers):
        code, n_in, units, hdim, rate, masking = r.unpack(_LAYER, f"layer {k} descriptor")
        if code not in _CODE_KINDS:
            raise InconsistentLayersError(f"inconsistent layers: unknown kind code {code} in layer {k}")
        kind, act = _CODE_KINDS[code]
        layers.append(LayerSpec(kind, n_in, units, hdim=hdim, activation=act, rate=float(rate),
                                masking=bool(masking)))
    try:
        spec = ModelSpec(layers)
    except ModelError as exc:
        raise InconsistentLayersError(f"inconsistent layers: {exc}") from exc
    expected = [(f"{i}.{name}", shape) for i, layer in enumerate(spec.layers)
                for name, shape in param_shapes(layer).items()]
    (n_tensors,) = r.unpack("<H", "tensor count")
    if n_tensors != len(expected):
        raise InconsistentLayersError(f"inconsistent layers: {n_tensors} tensors, layers need {len(expected)}")
    params = [{} for _ in spec.layers]
    for want_name, want_shape in expected:
        name, dims = _read_tensor_header(r)
        if (name, dims) != (want_name, want_shape):
            raise InconsistentLayersError(
                f"inconsistent layers: tensor {name}{list(dims)} where {want_name}{list(want_shape)} expected")
        size = int(np.prod(dims, dtype=np.int64))
        layer_idx, short = name.split(".", 1)
        if quantized:
            lo, scale = r.unpack(_QHEAD, f"quantization header of {name}")
            codes = np.frombuffer(r.take(size, f"payload of {name}"), dtype=np.uint8).copy()
            value = QuantizedTensor(np.float32(lo), np.float32(scale), codes, dims)
        else:
            raw = r.take(4 * size, f"payload of {name}")
            value = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(dims)
        params[int(layer_idx)][short] = value
    if r.remaining():
        raise FormatError(f"{r.remaining()} trailing bytes after last tensor")
    if quantized:
        return QuantizedModel(spec, params)
    return Model(spec, params)


def save(model, path):
    """Write ``model`` to ``path`` atomically; returns the number of bytes."""
    return atomic_write(path, encode(model))


def load(path):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CondenseError(f"cannot read {path}: {exc}") from exc
    return decode(data)


def payload_bytes(model):
    """Bytes spent on parameter values alone (no names, dims or layer table)."""
    if isinstance(model, QuantizedModel):
        return sum(_QHEAD.size + q.size for _, q in model.named_params())
    return sum(4 * v.size for _, v in model.named_params())


def file_bytes(model):
    return len(encode(model))


# ------------------------------------------------------ feature containers


def encode_tensors(tensors, magic=FEATURES_MAGIC):
    """Named float32 tensors in the model tensor framing, behind ``magic``."""
    out = bytearray(magic + struct.pack("<HH", VERSION, len(tensors)))
    for name, value in tensors.items():
        value = np.ascontiguousarray(value, dtype="<f4")
        out += _tensor_header(name, value.shape)
        out += value.tobytes()
    return bytes(out)


def decode_tensors(data, magic=FEATURES_MAGIC):
    r = _Reader(data)
    if r.remaining() < 4 or bytes(r.data[:4]) != magic:
        raise BadMagicError(f"bad magic: expected {magic!r}")
    r.take(4, "magic")
    version, count = r.unpack("<HH", "header")
    if version != VERSION:
        raise VersionMismatchError(f"version mismatch: file has {version}, reader supports {VERSION}")
    out = {}
    for _ in range(count):
        name, dims = _read_tensor_header(r)
        size = int(np.prod(dims, dtype=np.int64))
        raw = r.take(4 * size, f"payload of {name}")
        out[name] = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(dims)
    if r.remaining():
        raise FormatError(f"{r.remaining()} trailing bytes after last tensor")
    return out
