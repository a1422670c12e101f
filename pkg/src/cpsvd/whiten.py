"""Gram accumulation, damped Cholesky, and activation-aware (whitened) SVD.

For a weight ``W`` (m x n) and calibration activations ``X`` (n x d) the
output error of an approximation is ``||(W - W_hat) X||_F``.  With
``H = X X^T = L L^T`` this equals ``||(W - W_hat) L||_F``, so truncating the
SVD of ``W L`` and mapping back through ``L^{-1}`` gives the output-optimal
rank-k approximation.  Only ``H`` is ever needed after calibration.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

DAMPING_REL = 1e-6
DAMPING_ABS = 1e-12
DAMPING_GROWTH = 10.0
DAMPING_RETRIES = 8
PIVOT_GUARD = 1e-12
PIVOT_SHIFT = 1e-10


class SingularGramError(np.linalg.LinAlgError):
    pass


@dataclass
class GramMatrix:
    h: np.ndarray
    sample_count: int = 0

    @property
    def n(self) -> int:
        return self.h.shape[0]

    @classmethod
    def zeros(cls, n: int) -> "GramMatrix":
        return cls(np.zeros((n, n)), 0)

    @classmethod
    def from_activations(cls, *batches) -> "GramMatrix":
        gram = None
        for batch in batches:
            gram = accumulate_gram(gram, batch)
        if gram is None:
            raise ValueError("at least one activation batch is required")
        return gram

    def merge(self, other: "GramMatrix") -> "GramMatrix":
        if other.n != self.n:
            raise ValueError(f"cannot merge Gram matrices of size {self.n} and {other.n}")
        h = self.h + other.h
        return GramMatrix(0.5 * (h + h.T), self.sample_count + other.sample_count)

    def submatrix(self, idx) -> "GramMatrix":
        idx = np.asarray(idx, dtype=np.intp)
        return GramMatrix(self.h[np.ix_(idx, idx)], self.sample_count)


def accumulate_gram(existing: GramMatrix | None, batch) -> GramMatrix:
    """Add ``batch @ batch.T`` to ``existing`` (a fresh zero Gram if None)."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"activation batch must be 2-D, got shape {x.shape}")
    if existing is None:
        existing = GramMatrix.zeros(x.shape[0])
    if x.shape[0] != existing.n:
        raise ValueError(f"batch has {x.shape[0]} rows, Gram is {existing.n}x{existing.n}")
    h = existing.h + x @ x.T
    return GramMatrix(0.5 * (h + h.T), existing.sample_count + x.shape[1])


def damping_schedule(h: np.ndarray) -> list[float]:
    mean_diag = float(np.mean(np.diag(h))) if h.size else 0.0
    base = DAMPING_REL * mean_diag if mean_diag > 0 else DAMPING_ABS
    return [0.0] + [base * DAMPING_GROWTH**i for i in range(DAMPING_RETRIES)]


def damped_cholesky(gram: GramMatrix) -> tuple[np.ndarray, float]:
    """Cholesky factor of ``H + delta*I`` for the first delta in the schedule that works."""
    h = gram.h if isinstance(gram, GramMatrix) else np.asarray(gram, dtype=np.float64)
    eye = np.eye(h.shape[0])
    for delta in damping_schedule(h):
        try:
            return np.linalg.cholesky(h + delta * eye), delta
        except np.linalg.LinAlgError:
            continue
    raise SingularGramError(
        f"Cholesky failed after {DAMPING_RETRIES} damping retries "
        f"(largest delta {damping_schedule(h)[-1]:.3g})"
    )


def guard_pivots(chol: np.ndarray) -> np.ndarray:
    """Shift ``L`` by ``eps*I`` when a pivot is too small for a stable solve."""
    d = np.abs(np.diag(chol))
    top = d.max() if d.size else 0.0
    if top == 0.0:
        raise SingularGramError("Cholesky factor is identically zero")
    if np.any(d < PIVOT_GUARD * top):
        return chol + PIVOT_SHIFT * top * np.eye(chol.shape[0])
    return chol


@dataclass
class WhitenedFactorization:
    u_prime: np.ndarray
    v_prime_t: np.ndarray
    singular_values: np.ndarray
    cholesky_l: np.ndarray
    damping_used: float = 0.0

    @property
    def max_rank(self) -> int:
        return self.singular_values.shape[0]

    def truncate(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        return truncate(self, k)


def svd_whitened(w, gram: GramMatrix) -> WhitenedFactorization:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[1] != gram.n:
        raise ValueError(f"weight shape {w.shape} incompatible with Gram of size {gram.n}")
    chol, delta = damped_cholesky(gram)
    chol = guard_pivots(chol)
    u, s, vt = np.linalg.svd(w @ chol, full_matrices=False)
    root = np.sqrt(s)
    # (root * vt) @ L^{-1}, via a transposed triangular solve
    vpt = solve_triangular(chol, (root[:, None] * vt).T, trans="T", lower=True).T
    return WhitenedFactorization(u * root, np.ascontiguousarray(vpt), s, chol, delta)


def truncate(fact: WhitenedFactorization, k: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0 <= k <= fact.max_rank:
        raise ValueError(f"rank {k} outside [0, {fact.max_rank}]")
    return fact.u_prime[:, :k], fact.v_prime_t[:k, :]


def _as_dense(approx, shape):
    if isinstance(approx, tuple):
        u, vt = approx
        if u.shape[1] == 0:
            return np.zeros(shape)
        return u @ vt
    return np.asarray(approx, dtype=np.float64)


def weighted_loss(w, approx, gram: GramMatrix) -> float:
    """``||(W - approx) X||_F`` evaluated as ``sqrt(trace(D H D^T))``.

    ``approx`` is a dense matrix or a ``(U, Vt)`` factor pair.
    """
    w = np.asarray(w, dtype=np.float64)
    delta = w - _as_dense(approx, w.shape)
    if delta.shape != w.shape or delta.shape[1] != gram.n:
        raise ValueError(f"shape mismatch: {delta.shape} vs Gram {gram.n}")
    return float(np.sqrt(max(np.sum((delta @ gram.h) * delta), 0.0)))


def output_norm(w, gram: GramMatrix) -> float:
    """``||W X||_F`` from the Gram matrix."""
    w = np.asarray(w, dtype=np.float64)
    return float(np.sqrt(max(np.sum((w @ gram.h) * w), 0.0)))
