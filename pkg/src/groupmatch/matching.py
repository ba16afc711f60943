"""Soft person correspondence between two graphs."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Var

LOGIT_CLAMP = 30.0
PCE_EPS = 1e-7
MAX_EXACT = 8


@dataclass
class SinkhornResult:
    matrix: Var
    iterations: int
    residual: float

    @property
    def values(self) -> np.ndarray:
        return self.matrix.value


def affinity(h_s, h_r, weight, tau: float = 1.0) -> Var:
    """exp(h_si^T A h_rj / tau) over node-level (part-concatenated) features.

    The logit is clamped to [-30, 30] before exponentiation.
    """
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    h_s, h_r = ad.as_var(h_s), ad.as_var(h_r)
    xs = ad.reshape(h_s, (h_s.shape[0], -1))
    xr = ad.reshape(h_r, (h_r.shape[0], -1))
    logits = ad.einsum("ik,jk->ij", ad.einsum("ia,ab->ib", xs, weight), xr) * (1.0 / tau)
    return ad.exp(ad.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP))


def _residual(s: np.ndarray) -> float:
    return float(max(np.abs(s.sum(axis=1) - 1).max(), np.abs(s.sum(axis=0) - 1).max()))


def sinkhorn(m, max_iters: int = 100, tol: float | None = 1e-6) -> SinkhornResult:
    """Alternate row and column normalisation of a positive square matrix.

    Stops once every row and column sum is within ``tol`` of 1, or after
    ``max_iters`` rounds.  ``tol=None`` runs a fixed unroll, which keeps the
    recorded graph identical from step to step during training.
    """
    m = ad.as_var(m)
    v = m.value
    if v.ndim != 2 or v.shape[0] != v.shape[1]:
        raise ShapeError(f"sinkhorn needs a square matrix, got {v.shape}")
    if not np.all(v > 0):
        raise ValueError("sinkhorn needs strictly positive entries")
    s = m
    it = 0
    for it in range(1, max_iters + 1):
        s = s / ad.vsum(s, axis=1, keepdims=True)
        s = s / ad.vsum(s, axis=0, keepdims=True)
        if tol is not None and _residual(s.value) < tol:
            break
    return SinkhornResult(s, it, _residual(s.value))


def permutation_ce(s, gt: np.ndarray, mask_s=None, mask_r=None) -> Var:
    """Binary cross-entropy between soft and ground-truth assignments.

    ``s`` is clamped into [1e-7, 1 - 1e-7]; only real rows and columns count.
    """
    s = ad.as_var(s)
    gt = np.asarray(gt, dtype=float)
    if s.shape != gt.shape:
        raise ShapeError(f"permutation_ce: {s.shape} vs {gt.shape}")
    n_s, n_r = gt.shape
    rows = np.ones(n_s, bool) if mask_s is None else np.asarray(mask_s, bool)
    cols = np.ones(n_r, bool) if mask_r is None else np.asarray(mask_r, bool)
    w = (rows[:, None] & cols[None, :]).astype(float)
    sc = ad.clip(s, PCE_EPS, 1.0 - PCE_EPS)
    terms = gt * ad.log(sc) + (1.0 - gt) * ad.log(1.0 - sc)
    return -ad.vsum(terms * w)


def ground_truth_permutation(ids_s, ids_r, dummy=None) -> np.ndarray:
    """1 where the two slots hold the same (non-dummy) person id."""
    gt = np.zeros((len(ids_s), len(ids_r)))
    for i, a in enumerate(ids_s):
        if a == dummy:
            continue
        for j, b in enumerate(ids_r):
            if b != dummy and a == b:
                gt[i, j] = 1.0
    return gt


def exact_assignment(m) -> np.ndarray:
    """Maximum-sum permutation by exhaustive search (n <= 8)."""
    m = np.asarray(ad.value_of(m))
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"exact_assignment needs a square matrix, got {m.shape}")
    n = m.shape[0]
    if n > MAX_EXACT:
        raise ValueError(f"exhaustive assignment limited to n <= {MAX_EXACT}, got {n}")
    rows = np.arange(n)
    best, best_perm = -np.inf, None
    for perm in itertools.permutations(range(n)):
        total = m[rows, perm].sum()
        if total > best:
            best, best_perm = total, perm
    out = np.zeros((n, n))
    out[rows, best_perm] = 1.0
    return out
