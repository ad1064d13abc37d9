"""Dense numeric primitives used by every other module.

Tensors are plain :class:`numpy.ndarray` values in row-major order.  The
storage type is 32-bit float; 64-bit arrays flow through the same functions
unchanged, which is how the gradient checks run in double precision.

Matrix products go through a small compiled kernel with a fixed summation
order (``k`` ascending for every output element, one rounding per
multiply and per add) so results are reproducible bit for bit and can be
checked against a naive triple loop.
"""

import zlib

import numba
import numpy as np

from .errors import NumericError, ShapeError

FLOAT = np.float32
ACTIVATIONS = ("sigmoid", "tanh", "relu", "linear")


@numba.njit(cache=True)
def _matmul_kernel(a, b, out):
    m, k = a.shape
    n = b.shape[1]
    for i in range(m):
        for p in range(k):
            aip = a[i, p]
            for j in range(n):
                out[i, j] += aip * b[p, j]
    for i in range(m):
        for j in range(n):
            if not np.isfinite(out[i, j]):
                return False
    return True


def as_tensor(x, dtype=FLOAT):
    return np.ascontiguousarray(x, dtype=dtype)


def matmul(a, b):
    """Matrix product of ``a`` (m x k) and ``b`` (k x n).

    Both operands must be 2-D with matching inner dimension and the same
    floating dtype.  Raises :class:`ShapeError` on mismatch and
    :class:`NumericError` if the product overflows.
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    if a.dtype != b.dtype:
        raise ShapeError(f"matmul: dtype mismatch {a.dtype} vs {b.dtype}")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=a.dtype)
    if not _matmul_kernel(a, b, out):
        raise NumericError(f"matmul: non-finite result for {a.shape} x {b.shape}")
    return out


def elementwise(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"elementwise {op}: shapes {a.shape} and {b.shape} differ")
    if op == "mul":
        out = a * b
    elif op == "add":
        out = a + b
    else:
        raise ValueError(f"unknown elementwise op {op!r}")
    check_finite(out, f"elementwise {op}")
    return out


def sigmoid(x):
    # exp of a non-positive argument never overflows
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1 / (1 + z), z / (1 + z)).astype(x.dtype, copy=False)


def relu(x):
    return np.maximum(x, 0)


def activation(x, kind):
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "relu":
        return relu(x)
    if kind == "linear":
        return x
    raise ValueError(f"unknown activation {kind!r}")


def activation_grad(y, kind):
    """Derivative of the activation expressed through its output ``y``."""
    if kind == "sigmoid":
        return y * (1 - y)
    if kind == "tanh":
        return 1 - y * y
    if kind == "relu":
        return (y > 0).astype(y.dtype)
    if kind == "linear":
        return np.ones_like(y)
    raise ValueError(f"unknown activation {kind!r}")


def check_finite(x, name):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {name}")
    return x


class Rng:
    """Seeded random stream built on numpy's PCG64.

    ``stream(name)`` derives an independent child generator keyed by a
    CRC-32 of the name, so each consumer (weight init, dropout, shuffling,
    synthetic data) draws from its own sequence and adding draws in one
    place never perturbs another.
    """

    def __init__(self, seed, key=()):
        self.seed = int(seed)
        self.key = tuple(key)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def stream(self, name):
        return Rng(self.seed, self.key + (zlib.crc32(name.encode("utf-8")),))

    def raw(self, n):
        return self.generator.bit_generator.random_raw(n)

    def uniform(self, low=0.0, high=1.0, size=None, dtype=FLOAT):
        return np.asarray(self.generator.uniform(low, high, size)).astype(dtype)

    def normal(self, loc=0.0, scale=1.0, size=None, dtype=FLOAT):
        return np.asarray(self.generator.normal(loc, scale, size)).astype(dtype)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def random(self, size=None):
        return self.generator.random(size)
