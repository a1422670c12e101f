"""Brute-force references and the analytic cost model.

These deliberately avoid the fast paths they check: the exhaustive search
scores every candidate by densifying the hybrid and measuring the output
error against the full Gram matrix.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .columns import HybridFactorization, preserve_split
from .whiten import GramMatrix, svd_whitened, truncate, weighted_loss

EXHAUSTIVE_RANK_LIMIT = 64


class OracleGuardError(ValueError):
    pass


def dense_reassemble(fact: HybridFactorization) -> np.ndarray:
    w = np.zeros((fact.m, fact.n))
    if fact.c:
        w[:, fact.preserved_indices] = fact.preserved_columns
    if fact.rank:
        w[:, fact.complement_indices] = fact.factor_u @ fact.factor_vt
    return w


def candidate_dense(w, gram: GramMatrix, order, c: int, rank: int) -> np.ndarray:
    """Dense hybrid keeping the first ``c`` columns of ``order`` at the given rank."""
    w = np.asarray(w, dtype=np.float64)
    out = np.zeros_like(w)
    keep = np.asarray(order[:c], dtype=np.intp)
    out[:, keep] = w[:, keep]
    rest = np.setdiff1d(np.arange(w.shape[1]), keep)
    if rank and rest.size:
        u, vt = truncate(svd_whitened(w[:, rest], gram.submatrix(rest)), rank)
        out[:, rest] = u @ vt
    return out


def exhaustive_search(w, gram: GramMatrix, order, r: int, budget: int | None = None,
                      limit: int = EXHAUSTIVE_RANK_LIMIT) -> tuple[int, float]:
    """Global minimum of the output loss over every rank trade 0..r."""
    if r > limit:
        raise OracleGuardError(f"rank {r} exceeds exhaustive-search limit {limit}")
    w = np.asarray(w, dtype=np.float64)
    m, n = w.shape
    best = None
    for delta_r in range(r + 1):
        c, rank = preserve_split(m, n, r, delta_r, budget)
        loss = weighted_loss(w, candidate_dense(w, gram, order, c, rank), gram)
        if best is None or loss < best[1]:
            best = (delta_r, loss)
    return best


@dataclass(frozen=True)
class CostModel:
    m: int
    n: int
    d: int
    c: int
    rank: int

    @property
    def params(self) -> int:
        return self.m * self.c + self.rank * (self.m + self.n - self.c)

    @property
    def flops(self) -> int:
        return self.d * (self.m * self.c + self.rank * (self.n - self.c + self.m))


def cost(m: int, n: int, d: int, c: int, rank: int) -> CostModel:
    if min(m, n, d) <= 0:
        raise ValueError("dimensions must be positive")
    if not 0 <= c <= n:
        raise ValueError(f"c={c} outside [0, {n}]")
    if not 0 <= rank <= min(m, n - c):
        raise ValueError(f"rank {rank} infeasible for {m}x{n - c} remainder")
    return CostModel(m, n, d, c, rank)


def budget_exact_rank(m: int, n: int, kept: float, c: int) -> int:
    """Largest rank with ``m*c + rank*(m + n - c) <= kept*m*n``."""
    return max(0, int(np.floor((kept * m * n - m * c) / (m + n - c))))
