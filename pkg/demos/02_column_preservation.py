#!/usr/bin/env python3
"""Trading rank for verbatim columns.

A few columns of W usually carry most of the truncation error (they meet the
loud input channels).  Storing those columns as-is and factoring the rest
can beat plain truncation at the same parameter count.
"""
import numpy as np

from cpsvd import GramMatrix, apply_hybrid, build_hybrid, column_losses, svd_whitened
from cpsvd.columns import preserve_split, reconstruction_error
from cpsvd.fixtures import make_rng, planted_activations, spectral_weight
from cpsvd.oracle import dense_reassemble, exhaustive_search

rng = make_rng(3)
m, n = 32, 48
w = spectral_weight(rng, m, n, decay=1.0)
gram = GramMatrix.from_activations(planted_activations(rng, n, 256, outliers=4))

budget = m * n - round(0.3 * m * n)        # remove 30% of the entries
r = budget // (m + n)
print(f"budget {budget}, plain rank {r}")

# Per-column losses of the rank-r truncation.  The head of this order is
# what gets preserved.
cl = column_losses(w, gram, svd_whitened(w, gram), r)
print("worst five columns:", cl.order[:5], np.round(cl.losses[cl.order[:5]], 2))

# The whole trade-off curve: delta_r rank units exchanged for columns.
print(f"{'delta_r':>7} {'c':>3} {'rank':>4} {'loss':>8}")
for dr in range(r + 1):
    c, rank = preserve_split(m, n, r, dr, budget)
    print(f"{dr:>7} {c:>3} {rank:>4} {reconstruction_error(w, gram, cl.order, r, dr, budget):>8.3f}")

# build_hybrid searches that curve with a handful of evaluations.
hyb = build_hybrid(w, gram, budget)
best_dr, best = exhaustive_search(w, gram, cl.order, r, budget)
print(f"search: delta_r={hyb.delta_r} c={hyb.c} rank={hyb.rank} loss={hyb.loss:.3f} "
      f"({len(hyb.evaluations)} of {r + 1} points evaluated)")
print(f"exhaustive: delta_r={best_dr} loss={best:.3f}; plain loss {hyb.plain_loss:.3f}")
print(f"params {hyb.params} <= budget {budget}")

# The hybrid is a drop-in linear map.
xt = rng.standard_normal((n, 5))
print("apply matches dense:", np.allclose(apply_hybrid(hyb, xt), dense_reassemble(hyb) @ xt))
