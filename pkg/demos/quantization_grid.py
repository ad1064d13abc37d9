"""
What 8-bit affine quantization does to a weight tensor
======================================================

Each tensor is mapped onto 256 evenly spaced levels between its minimum
and maximum.  This script looks at the grid, the rounding error and what
happens at the edges.
"""

import numpy as np

from nncondense.condensation import dequantize, error_bound, quantize

###############################################################################
# Three values spanning [-1, 1]: the ends land on codes 0 and 255 and the
# midpoint rounds half away from zero onto code 128.

q = quantize(np.array([-1.0, 0.0, 1.0], np.float32))
print("codes", q.payload, "min", q.min, "scale", q.scale)
print("restored", dequantize(q))

###############################################################################
# A Glorot-sized random layer.  The worst error sits just under half a step.

rng = np.random.default_rng(0)
w = rng.uniform(-0.2, 0.2, size=(76, 256)).astype(np.float32)
q = quantize(w)
err = np.abs(dequantize(q) - w)
print("step %.6f  worst error %.6f  bound %.6f" % (q.scale, err.max(), error_bound(q, w)))

###############################################################################
# The error is spread evenly over the step, as rounding error should be.

hist, edges = np.histogram(err / q.scale, bins=5, range=(0, 0.5))
for count, lo in zip(hist, edges):
    print("%.1f-%.1f step  %s" % (lo, lo + 0.1, "#" * (count // 400)))

###############################################################################
# Constant tensors (a bias still at its initial value, say) get a zero step
# and come back exactly.

b = np.ones(64, np.float32)
qb = quantize(b)
print("constant: scale", qb.scale, "exact", np.array_equal(dequantize(qb), b))

###############################################################################
# Codes keep the order of the weights, so the largest weight stays largest.

order = np.argsort(w.ravel(), kind="stable")
print("monotone codes:", bool(np.all(np.diff(q.payload[order].astype(int)) >= 0)))

###############################################################################
# Re-quantizing restored values reproduces the same codes.

again = quantize(dequantize(q))
print("idempotent:", np.array_equal(again.payload, q.payload))
