#!/usr/bin/env python3
"""Preserving columns does not change the cost at a fixed budget.

With ``d`` tokens, the hybrid costs d*(m*c + rank*(n - c + m)) multiply-adds,
which is d times its parameter count.  Choosing the largest rank the budget
allows keeps that within one rank unit of the dense-equivalent figure.
"""
from cpsvd.oracle import budget_exact_rank, cost

m = n = 100
d = 512
rho = 0.5
print(f"target flops {rho * m * n * d:.0f}")
print(f"{'c':>3} {'rank':>4} {'params':>6} {'flops':>9} {'slack':>7}")
for c in range(0, 51, 10):
    k = budget_exact_rank(m, n, rho, c)
    cm = cost(m, n, d, c, k)
    print(f"{c:>3} {k:>4} {cm.params:>6} {cm.flops:>9} {rho * m * n * d - cm.flops:>7.0f}")
