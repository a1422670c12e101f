#!/usr/bin/env python3
"""Why whiten before truncating.

Plain SVD keeps the directions with the most weight energy.  What we care
about is the error on real inputs, ||(W - W_hat) X||_F, so the truncation
should be done after folding the input statistics into the matrix.
"""
import numpy as np

from cpsvd import GramMatrix, svd_whitened, truncate, weighted_loss
from cpsvd.fixtures import make_rng, planted_activations

rng = make_rng(0)

# A 24x32 weight and 256 calibration tokens with two loud input channels.
w = rng.standard_normal((24, 32))
x = planted_activations(rng, 32, 256, outliers=2, outlier_scale=8.0)
gram = GramMatrix.from_activations(x)
print("Gram diagonal, largest five:", np.round(np.sort(np.diag(gram.h))[-5:], 1))

# Full rank reproduces W exactly (up to round-off).
fact = svd_whitened(w, gram)
print("full-rank reconstruction error:", np.linalg.norm(fact.u_prime @ fact.v_prime_t - w))

# Compare output losses against a weight-space SVD at the same rank.
u, s, vt = np.linalg.svd(w, full_matrices=False)
print(f"{'rank':>4} {'plain SVD':>10} {'whitened':>10}")
for k in (2, 4, 8, 12):
    plain = weighted_loss(w, (u[:, :k] * s[:k]) @ vt[:k], gram)
    white = weighted_loss(w, truncate(fact, k), gram)
    print(f"{k:>4} {plain:>10.2f} {white:>10.2f}")

# The loss is read straight off the Gram matrix; X is never needed again.
k = 6
direct = np.linalg.norm((w - np.dot(*truncate(fact, k))) @ x)
print("Gram-domain loss matches explicit X:", np.isclose(direct, weighted_loss(w, truncate(fact, k), gram)))
