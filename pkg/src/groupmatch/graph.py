"""Fully connected context graphs over group members."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

#: person id carried by padding nodes
DUMMY_ID = None


@dataclass(frozen=True)
class GroupView:
    """Part features of every member of one group seen from one view.

    ``parts[i]`` is a ``(P, D)`` array for ``person_ids[i]``.
    """

    group_id: Hashable
    view_id: Hashable
    person_ids: tuple
    parts: np.ndarray  # (N, P, D)

    def __post_init__(self):
        arr = np.asarray(self.parts, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"parts must be (N, P, D), got shape {arr.shape}")
        if arr.shape[0] < 1:
            raise ValueError("a group view needs at least one person")
        if arr.shape[1] < 1 or arr.shape[2] < 1:
            raise ValueError(f"degenerate part layout {arr.shape[1:]}")
        if len(self.person_ids) != arr.shape[0]:
            raise ValueError("person_ids and parts disagree on member count")
        object.__setattr__(self, "parts", arr)
        object.__setattr__(self, "person_ids", tuple(self.person_ids))

    @classmethod
    def from_persons(cls, group_id, view_id, persons: Sequence[tuple]) -> "GroupView":
        """Build from ``[(person_id, P x D parts), ...]``, validating shapes."""
        if not persons:
            raise ValueError("a group view needs at least one person")
        arrays = [np.asarray(p, dtype=np.float64) for _, p in persons]
        ref = arrays[0].shape
        for (pid, _), a in zip(persons, arrays):
            if a.ndim != 2 or a.shape != ref:
                raise ValueError(f"person {pid!r}: parts shape {a.shape} != {ref}")
        return cls(group_id, view_id, tuple(pid for pid, _ in persons), np.stack(arrays))

    @property
    def n_persons(self) -> int:
        return self.parts.shape[0]

    @property
    def n_parts(self) -> int:
        return self.parts.shape[1]

    @property
    def dim(self) -> int:
        return self.parts.shape[2]


# the record type used by the data layer is the same structure
PartFeatureSet = GroupView


@dataclass(frozen=True)
class NodeStates:
    layer: int
    values: np.ndarray  # (N, P, d)


@dataclass(frozen=True)
class ContextGraph:
    states: NodeStates
    adjacency: np.ndarray
    real_mask: np.ndarray
    person_ids: tuple
    group_id: Hashable = None
    view_id: Hashable = None
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def node_count(self) -> int:
        return self.states.values.shape[0]

    @property
    def part_count(self) -> int:
        return self.states.values.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.states.values.shape[2]

    @property
    def features(self) -> np.ndarray:
        return self.states.values

    @property
    def n_real(self) -> int:
        return int(self.real_mask.sum())


def build_context_graph(features: GroupView) -> ContextGraph:
    """One node per member, every pair (self included) joined by a unit edge."""
    n = features.n_persons
    return ContextGraph(
        states=NodeStates(0, features.parts.copy()),
        adjacency=np.ones((n, n)),
        real_mask=np.ones(n, dtype=bool),
        person_ids=features.person_ids,
        group_id=features.group_id,
        view_id=features.view_id,
    )


def pad_to_size(g: ContextGraph, n: int) -> ContextGraph:
    """Append zero-feature dummy nodes until the graph has ``n`` nodes.

    Dummies stay fully connected; attention excludes them through ``real_mask``.
    """
    if n < g.node_count:
        raise ValueError(f"cannot pad {g.node_count} nodes down to {n}")
    extra = n - g.node_count
    if extra == 0:
        return g
    h = g.states.values
    pad = np.zeros((extra,) + h.shape[1:])
    return ContextGraph(
        states=NodeStates(g.states.layer, np.concatenate([h, pad])),
        adjacency=np.ones((n, n)),
        real_mask=np.concatenate([g.real_mask, np.zeros(extra, dtype=bool)]),
        person_ids=g.person_ids + (DUMMY_ID,) * extra,
        group_id=g.group_id,
        view_id=g.view_id,
    )


def pad_pair(g_s: ContextGraph, g_r: ContextGraph, n: int | None = None) -> tuple[ContextGraph, ContextGraph]:
    """Pad both graphs to a common node count (the larger of the two by default)."""
    size = max(g_s.node_count, g_r.node_count) if n is None else n
    return pad_to_size(g_s, size), pad_to_size(g_r, size)


def permute_nodes(g: ContextGraph, perm: Sequence[int]) -> ContextGraph:
    perm = np.asarray(perm)
    return ContextGraph(
        states=NodeStates(g.states.layer, g.states.values[perm]),
        adjacency=g.adjacency[np.ix_(perm, perm)],
        real_mask=g.real_mask[perm],
        person_ids=tuple(g.person_ids[k] for k in perm),
        group_id=g.group_id,
        view_id=g.view_id,
    )
