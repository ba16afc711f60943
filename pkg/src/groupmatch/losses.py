"""Pairwise hinge objectives and their sum."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Var


@dataclass(frozen=True)
class PairLabels:
    """Group label (+1/-1) and, for positive pairs only, person agreement (+1/-1)."""

    y_group: int
    y_person: np.ndarray | None = None
    margin: float = 1.0

    def __post_init__(self):
        if self.y_group not in (1, -1):
            raise ValueError(f"group label must be +1 or -1, got {self.y_group}")
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.y_person is not None and self.y_group != 1:
            raise ValueError("person labels only exist for positive group pairs")


@dataclass(frozen=True)
class LossReport:
    group: float
    person: float
    pce: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return {"group": self.group, "person": self.person, "pce": self.pce, "total": self.total}


def sq_dist(a, b) -> Var:
    d = ad.sub(a, b)
    return ad.vsum(ad.square(d))


def group_pair_loss(h_s, h_r, y_group: int, margin: float = 1.0) -> Var:
    """max(0, m - y (1 - |h_s - h_r|^2))."""
    if ad.value_of(h_s).shape != ad.value_of(h_r).shape:
        raise ShapeError("group embeddings differ in width")
    return ad.relu(margin - y_group * (1.0 - sq_dist(h_s, h_r)))


def person_pair_loss(h_s, h_r, labels: PairLabels, mask_s=None, mask_r=None) -> Var:
    """Sum over real cross-graph node pairs and parts of the part-level hinge.

    ``h_s`` is ``(N_s, P, d)``, ``h_r`` is ``(N_r, P, d)`` and
    ``labels.y_person`` is ``(N_s, N_r)`` over the same (padded) slots.
    """
    if labels.y_group != 1 or labels.y_person is None:
        raise ValueError("person pair loss is defined on positive group pairs only")
    h_s, h_r = ad.as_var(h_s), ad.as_var(h_r)
    n_s, n_r = h_s.shape[0], h_r.shape[0]
    y = np.asarray(labels.y_person, dtype=float)
    if y.shape != (n_s, n_r):
        raise ShapeError(f"person labels {y.shape} vs nodes ({n_s}, {n_r})")
    rows = np.ones(n_s, bool) if mask_s is None else np.asarray(mask_s, bool)
    cols = np.ones(n_r, bool) if mask_r is None else np.asarray(mask_r, bool)
    w = (rows[:, None] & cols[None, :]).astype(float)
    diff = ad.reshape(h_s, (n_s, 1) + h_s.shape[1:]) - ad.reshape(h_r, (1, n_r) + h_r.shape[1:])
    d2 = ad.vsum(ad.square(diff), axis=3)  # (N_s, N_r, P)
    hinge = ad.relu(labels.margin - y[:, :, None] * (1.0 - d2))
    return ad.vsum(hinge * w[:, :, None])


def total_loss(group, person, pce):
    """Unweighted sum; returns the tape value and a float report."""
    parts = [group, person, pce]
    vals = [float(ad.value_of(p)) for p in parts]
    if not all(math.isfinite(v) for v in vals):
        raise FloatingPointError(f"non-finite loss component {vals}")
    total = ad.add(ad.add(group, person), pce)
    return total, LossReport(*vals, float(total.value))
