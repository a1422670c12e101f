"""Layer-wise and module-wise compression ratio allocation.

Ratios here are always the fraction of parameters REMOVED.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import softmax
from scipy.stats import rankdata

from .columns import round_half_up
from .whiten import GramMatrix, output_norm, weighted_loss

R_MAX = 0.95


def layer_importance(x_in, x_out) -> float:
    """Mean over token columns of ``1 - cos(x_in[:, j], x_out[:, j])``."""
    a = np.asarray(x_in, dtype=np.float64)
    b = np.asarray(x_out, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"x_in {a.shape} and x_out {b.shape} differ")
    if a.ndim == 1:
        a, b = a[:, None], b[:, None]
    na = np.linalg.norm(a, axis=0)
    nb = np.linalg.norm(b, axis=0)
    ok = (na > 0) & (nb > 0)
    if not ok.any():
        raise ValueError("every token column has zero norm")
    if not ok.all():
        warnings.warn(f"skipping {int((~ok).sum())} zero-norm token columns", RuntimeWarning, stacklevel=2)
    cos = np.sum(a[:, ok] * b[:, ok], axis=0) / (na[ok] * nb[ok])
    return float(np.mean(1.0 - np.clip(cos, -1.0, 1.0)))


def clamp_redistribute(values, cap: float = R_MAX, weights=None) -> np.ndarray:
    """Clip ``values`` at ``cap`` and hand the excess to unclipped entries.

    Excess goes to the free entries in proportion to their current values,
    measured in units of ``weights`` (``sum(values * weights)`` is conserved
    whenever it fits under the cap).
    """
    v = np.asarray(values, dtype=np.float64).copy()
    wts = np.ones_like(v) if weights is None else np.asarray(weights, dtype=np.float64)
    total = float(np.sum(v * wts))
    fixed = np.zeros(v.shape, dtype=bool)
    for _ in range(v.size + 1):
        over = (v > cap) & ~fixed
        if not over.any():
            break
        fixed |= over
        v[fixed] = cap
        free = ~fixed
        if not free.any():
            warnings.warn("every entry hit the ratio cap; total not conserved", RuntimeWarning, stacklevel=2)
            break
        excess = total - float(np.sum(v * wts))
        share = v[free] * wts[free]
        if share.sum() <= 0:
            share = wts[free].copy()
        v[free] += excess * share / share.sum() / wts[free]
    return v


def layer_ratios(importances, r: float, t: float = 0.1, r_max: float | None = R_MAX) -> np.ndarray:
    """``N * r * softmax(-s / t)``, then capped at ``r_max`` (None disables the cap)."""
    s = np.asarray(importances, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("need a non-empty vector of layer importances")
    if not 0.0 <= r < 1.0:
        raise ValueError(f"target ratio {r} outside [0, 1)")
    if t <= 0:
        raise ValueError(f"temperature must be positive, got {t}")
    raw = s.size * r * softmax(-s / t)
    return raw if r_max is None else clamp_redistribute(raw, r_max)


def alpha_for(r: float) -> float:
    r = min(max(r, 0.0), R_MAX)
    return 1.0 + 10.0 * math.tan(math.pi * r / 2.0)


def module_relative_error(w, gram: GramMatrix, approx) -> float:
    denom = output_norm(w, gram)
    if denom == 0:
        raise ZeroDivisionError("module output ||W X|| is zero")
    return weighted_loss(w, approx, gram) / denom


@dataclass
class ModuleAllocation:
    error_rank: np.ndarray
    weight: np.ndarray
    alpha: float
    removed: np.ndarray
    ratios: np.ndarray

    @property
    def removed_total(self) -> int:
        return int(self.removed.sum())


def module_ratios(errors, params, r: float, r_max: float = R_MAX, alpha: float | None = None) -> ModuleAllocation:
    """Split a layer's removal quota ``r * sum(P)`` across its modules.

    Modules are ranked by ascending relative error (rank 0 = smallest error),
    weighted by ``P_i * exp(-I_i / alpha)`` and the quota is shared in
    proportion to the weights, so low-error modules absorb more of it.
    Tied errors share their average rank.
    """
    e = np.asarray(errors, dtype=np.float64)
    p = np.asarray(params, dtype=np.float64)
    if e.shape != p.shape or e.ndim != 1 or e.size == 0:
        raise ValueError("errors and params must be equal-length non-empty vectors")
    if np.any(p <= 0):
        raise ValueError("parameter counts must be positive")
    ranks = rankdata(e, method="average") - 1.0
    a = alpha_for(r) if alpha is None else float(alpha)
    v = p / np.exp(ranks / a)
    total = r * p.sum()
    share = total * v / v.sum()
    ratios = clamp_redistribute(share / p, r_max, weights=p)
    removed = np.array([round_half_up(x) for x in ratios * p], dtype=np.int64)
    return ModuleAllocation(ranks, v, a, removed, ratios)
