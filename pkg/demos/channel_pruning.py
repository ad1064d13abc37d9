"""
Removing whole units from an LSTM
=================================

Channel pruning ranks units by the mean absolute value of their incoming
weights and deletes the weakest ones together with every weight that
touches them.  Here we check that the smaller network computes exactly what
the original computes with those units silenced.
"""

import numpy as np

from nncondense.condensation import layer_saliencies, prune_model, pruned_equivalence_mask
from nncondense.layers import forward, init_model, lstm_spec

model = init_model(lstm_spec(), seed=3)
print("baseline parameters:", model.num_params())

###############################################################################
# Saliency of the 16 units in the first LSTM layer.  Input and recurrent
# columns of all four gates count; biases do not.

sal = layer_saliencies(model.spec.layers[0], model.params[0])
for unit in np.argsort(sal):
    print("unit %2d  %.4f" % (unit, sal[unit]))

###############################################################################
# Remove the weaker half of each LSTM layer.

pruned, report = prune_model(model, 0.5)
print("pruned parameters:", pruned.num_params())
for lp in report.layers:
    print("layer %d removed %s" % (lp.index, lp.removed))

###############################################################################
# Shapes before and after.

for (name, a), (_, b) in zip(model.named_params(), pruned.named_params()):
    print("%-22s %-10s -> %s" % (name, a.shape, b.shape))

###############################################################################
# Silence the removed units in the full-size model instead of deleting
# them.  Both versions give the same predictions on random sequences.

masked = pruned_equivalence_mask(model, report.removed)
x = np.random.default_rng(0).normal(size=(50, 48, 76)).astype(np.float32)
diff = np.abs(forward(pruned, x) - forward(masked, x)).max()
print("largest prediction difference: %.2e" % diff)

###############################################################################
# The per-channel report is plain CSV.

print(report.to_csv().splitlines()[:5])
