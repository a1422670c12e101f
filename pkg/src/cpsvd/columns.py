"""Column-preserving hybrid factorization.

A weight matrix is split into ``c`` columns kept verbatim and a low-rank
factorization of the remaining ``n - c`` columns, under a parameter budget

    m*c + rank*(m + n - c) <= B.

Columns are ranked by their truncation loss under the whole-matrix
factorization, the number of rank units traded for columns is chosen by a
golden-section search, and the kept columns are the top of the ranking.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .whiten import GramMatrix, output_norm, svd_whitened, truncate, weighted_loss

PHI = (math.sqrt(5.0) - 1.0) / 2.0


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class ColumnLossVector:
    losses: np.ndarray
    order: np.ndarray


def column_losses(w, gram: GramMatrix, fact, k: int) -> ColumnLossVector:
    """Per-column output loss of the rank-``k`` truncation of ``fact``.

    Each column's error is a rank-1 product with the matching activation row,
    so ``||W_e[:, i] X[i, :]||_F = ||W_e[:, i]|| * sqrt(H_ii)``.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.shape[1] != gram.n or fact.u_prime.shape[0] != w.shape[0]:
        raise ValueError("weight, Gram and factorization shapes disagree")
    u, vt = truncate(fact, k)
    err = w - u @ vt if k else w
    losses = np.linalg.norm(err, axis=0) * np.sqrt(np.clip(np.diag(gram.h), 0.0, None))
    # descending loss, ties by ascending column index
    order = np.lexsort((np.arange(losses.size), -losses))
    return ColumnLossVector(losses, order)


def exchange(m: int, n: int, r: int, delta_r: int) -> tuple[int, float, int]:
    """Trade ``delta_r`` rank units for columns: returns ``(rank_c, f, delta_c)``.

    ``f = (m + n) / (m - rank_c)`` keeps ``m*delta_c + rank_c*(m + n - delta_c)``
    equal to ``r*(m + n)`` before rounding.
    """
    if not 0 <= delta_r <= r:
        raise ValueError(f"delta_r={delta_r} outside [0, {r}]")
    rank_c = r - delta_r
    if m <= rank_c:
        raise ValueError(f"rank {rank_c} must be below m={m}")
    f = (m + n) / (m - rank_c)
    return rank_c, f, round_half_up(delta_r * f)


def preserve_split(m: int, n: int, r: int, delta_r: int, budget: int | None = None) -> tuple[int, int]:
    """Feasible ``(c, rank)`` for a rank trade of ``delta_r`` under ``budget``.

    Starts from :func:`exchange`; the column count is lowered when rounding
    would overrun the budget or exceed ``n``.  The rank is then the largest
    one the budget affords for that column count, which is never below
    ``r - delta_r`` and equals ``r`` when ``delta_r == 0``.
    """
    budget = r * (m + n) if budget is None else int(budget)
    rank_c, _, delta_c = exchange(m, n, r, delta_r)
    cap = (budget - rank_c * (m + n)) // (m - rank_c)
    c = min(delta_c, cap, n)
    if c == n:
        return n, 0
    rank = (budget - m * c) // (m + n - c)
    return c, max(0, min(rank, m, n - c))


def _split_fit(w, gram: GramMatrix, order, c: int, rank: int, full_fact=None):
    """Keep the first ``c`` columns of ``order``, factor the rest at ``rank``."""
    m, n = w.shape
    keep = np.sort(np.asarray(order[:c], dtype=np.intp))
    rest = np.setdiff1d(np.arange(n), keep)
    if rest.size == 0:
        return 0.0, keep, rest, np.zeros((m, 0)), np.zeros((0, 0))
    if c == 0:
        sub_w, sub_gram = w, gram
    else:
        sub_w, sub_gram = w[:, rest], gram.submatrix(rest)
    if rank == 0:
        return output_norm(sub_w, sub_gram), keep, rest, np.zeros((m, 0)), np.zeros((0, rest.size))
    fact = full_fact if (c == 0 and full_fact is not None) else svd_whitened(sub_w, sub_gram)
    u, vt = truncate(fact, rank)
    return weighted_loss(sub_w, (u, vt), sub_gram), keep, rest, u, vt


def reconstruction_error(w, gram: GramMatrix, order, r: int, delta_r: int, budget: int | None = None) -> float:
    """Output loss after trading ``delta_r`` rank units for preserved columns."""
    w = np.asarray(w, dtype=np.float64)
    m, n = w.shape
    c, rank = preserve_split(m, n, r, delta_r, budget)
    return _split_fit(w, gram, order, c, rank)[0]


class SearchResult(NamedTuple):
    delta_r: int
    c: int
    loss: float
    rank: int
    evaluations: dict


def golden_section_search(f: Callable[[int], float], low: int, high: int) -> tuple[int, float, dict]:
    """Integer golden-section narrowing of ``[low, high]`` plus a final window scan.

    The two probes are kept strictly inside the bracket and distinct, which
    rounding alone does not guarantee on short integer brackets.  Both
    endpoints are always evaluated and the best point seen anywhere is
    returned (ties go to the smaller argument), so the result is never worse
    than ``f(low)`` or ``f(high)`` even when ``f`` is not unimodal.
    """
    seen: dict[int, float] = {}

    def ev(x):
        if x not in seen:
            seen[x] = float(f(x))
        return seen[x]

    def place(frac, keep=None):
        # strictly interior and distinct from the retained probe
        x = min(max(low + round_half_up(frac * (high - low)), low + 1), high - 1)
        if x == keep:
            x = keep + 1 if keep + 1 < high else keep - 1
        return x

    ev(low)
    ev(high)
    if high - low >= 3:
        p1 = place(PHI**2)
        p2 = place(PHI, keep=p1)
        (p1, e1), (p2, e2) = sorted([(p1, ev(p1)), (p2, ev(p2))])
        while True:
            if e1 < e2:
                high, kept = p2, (p1, e1)
                frac = PHI**2
            else:
                low, kept = p1, (p2, e2)
                frac = PHI
            if high - low < 3:
                break
            x = place(frac, keep=kept[0])
            (p1, e1), (p2, e2) = sorted([kept, (x, ev(x))])
    for x in range(low, high + 1):
        ev(x)
    best = min(seen, key=lambda x: (seen[x], x))
    return best, seen[best], seen


def search_preserve_count(w, gram: GramMatrix, order, r: int, budget: int | None = None) -> SearchResult:
    w = np.asarray(w, dtype=np.float64)
    m, n = w.shape
    best, loss, seen = golden_section_search(
        lambda d: reconstruction_error(w, gram, order, r, d, budget), 0, r
    )
    c, rank = preserve_split(m, n, r, best, budget)
    return SearchResult(best, c, loss, rank, seen)


@dataclass
class HybridFactorization:
    m: int
    n: int
    preserved_indices: np.ndarray
    preserved_columns: np.ndarray
    factor_u: np.ndarray
    factor_vt: np.ndarray
    budget: int
    loss: float = 0.0
    plain_loss: float = 0.0
    delta_r: int = 0
    degenerate: bool = False
    evaluations: dict = field(default_factory=dict, repr=False)

    @property
    def c(self) -> int:
        return int(self.preserved_indices.size)

    @property
    def rank(self) -> int:
        return int(self.factor_u.shape[1])

    @property
    def complement_indices(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n), self.preserved_indices)

    @property
    def params(self) -> int:
        return self.m * self.c + self.rank * (self.m + self.n - self.c)


def build_hybrid(w, gram: GramMatrix, budget: int, preserve: bool = True) -> HybridFactorization:
    """Best column/rank split of ``w`` within ``budget`` stored entries.

    With ``preserve=False`` this is the plain whitened truncation at rank
    ``budget // (m + n)``.
    """
    w = np.asarray(w, dtype=np.float64)
    m, n = w.shape
    budget = int(budget)
    if budget < 0:
        raise ValueError(f"budget must be nonnegative, got {budget}")

    if budget >= m * n:
        # dense storage fits: keep every column
        return HybridFactorization(
            m, n, np.arange(n), w.copy(), np.zeros((m, 0)), np.zeros((0, 0)),
            budget, 0.0, 0.0, 0,
        )

    r = budget // (m + n)
    fact = svd_whitened(w, gram)
    plain_loss = weighted_loss(w, truncate(fact, r), gram) if r else output_norm(w, gram)

    if r == 0:
        c = min(n, budget // m) if preserve else 0
        if c == 0:
            warnings.warn(
                f"budget {budget} too small for one rank unit or column of a {m}x{n} matrix; "
                "emitting a zero factorization",
                RuntimeWarning,
                stacklevel=2,
            )
        order = column_losses(w, gram, fact, 0).order
        loss, keep, rest, u, vt = _split_fit(w, gram, order, c, 0)
        return HybridFactorization(
            m, n, keep, w[:, keep], u, vt, budget, loss, plain_loss, 0, degenerate=c == 0,
        )

    if preserve:
        order = column_losses(w, gram, fact, r).order
        found = search_preserve_count(w, gram, order, r, budget)
        delta_r, c, rank, seen = found.delta_r, found.c, found.rank, found.evaluations
    else:
        order, delta_r, c, rank, seen = np.arange(n), 0, 0, r, {0: plain_loss}

    loss, keep, rest, u, vt = _split_fit(w, gram, order, c, rank, full_fact=fact)
    return HybridFactorization(
        m, n, keep, w[:, keep], np.ascontiguousarray(u), np.ascontiguousarray(vt),
        budget, loss, plain_loss, delta_r, evaluations=seen,
    )


def apply_hybrid(fact: HybridFactorization, x) -> np.ndarray:
    """``W' x`` computed as ``W_S x_S + U (V^T x_rest)`` without densifying."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != fact.n:
        raise ValueError(f"input has shape {x.shape}, expected ({fact.n}, d)")
    out = np.zeros((fact.m, x.shape[1]))
    if fact.c:
        out += fact.preserved_columns @ x[fact.preserved_indices]
    if fact.rank:
        out += fact.factor_u @ (fact.factor_vt @ x[fact.complement_indices])
    return out
