#!/usr/bin/env python3
"""Spreading a global removal ratio across layers and modules."""
import numpy as np

from cpsvd.allocation import alpha_for, layer_importance, layer_ratios, module_ratios
from cpsvd.fixtures import toy_model

# Layers: a layer that barely changes its input is cheap to compress.
model = toy_model(seed=2)
s = [layer_importance(layer.x_in, layer.x_out) for layer in model.layers]
print("importance 1 - cos:", np.round(s, 4))
for t in (0.02, 0.1, 1.0):
    print(f"t={t:<4} layer ratios:", np.round(layer_ratios(s, 0.2, t), 4))

# Modules inside a layer: lower relative error -> larger share of the cut.
# alpha controls how sharp the preference is and grows with the ratio.
for r in (0.1, 0.2, 0.4):
    print(f"alpha({r}) = {alpha_for(r):.4f}")

errors = [0.05, 0.30, 0.12, 0.60]
params = [4096, 4096, 6144, 6144]
alloc = module_ratios(errors, params, 0.2)
print("error rank:", alloc.error_rank)
print("module ratios:", np.round(alloc.ratios, 4))
print("removed:", alloc.removed, "sum", alloc.removed.sum(), "target", 0.2 * sum(params))
