"""Retrieval metrics over probe/gallery episodes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import Episode
from .graph import GroupView, build_context_graph
from .model import ParameterSet, forward_pair

DEFAULT_K = 20


@dataclass
class RankedProbe:
    probe: object
    gallery_ids: list
    scores: np.ndarray        # sorted, non-increasing
    correct: np.ndarray       # bool, aligned with scores

    @property
    def first_correct(self) -> int:
        """0-based rank of the first correct match."""
        hits = np.flatnonzero(self.correct)
        if hits.size == 0:
            raise ValueError(f"probe {self.probe!r} has no correct gallery match")
        return int(hits[0])


@dataclass
class RankTable:
    rows: list[RankedProbe] = field(default_factory=list)
    skipped: int = 0

    def add(self, probe, gallery_ids: Sequence, scores: Sequence[float], correct: Sequence[bool]):
        scores = np.asarray(scores, dtype=float)
        order = np.argsort(-scores, kind="stable")
        self.rows.append(RankedProbe(
            probe,
            [gallery_ids[k] for k in order],
            scores[order],
            np.asarray(correct, dtype=bool)[order],
        ))

    def __len__(self):
        return len(self.rows)

    @classmethod
    def from_first_ranks(cls, ranks: Sequence[int], gallery_size: int | None = None) -> "RankTable":
        """Synthetic table whose probes hit first at the given 1-based ranks."""
        table = cls()
        for p, r in enumerate(ranks):
            n = gallery_size or max(ranks)
            correct = np.zeros(n, bool)
            correct[r - 1] = True
            table.add(p, list(range(n)), -np.arange(n, dtype=float), correct)
        return table


def cmc(table: RankTable, k: int = DEFAULT_K) -> np.ndarray:
    """Rank-1..k accuracies: fraction of probes whose first hit is within rank k."""
    if not table.rows:
        raise ValueError("empty rank table")
    first = np.array([row.first_correct for row in table.rows])
    return np.array([(first < r).mean() for r in range(1, k + 1)])


def average_precision(correct: np.ndarray) -> float:
    hits = np.flatnonzero(correct)
    if hits.size == 0:
        raise ValueError("no correct match")
    return float(np.mean(np.arange(1, hits.size + 1) / (hits + 1)))


def mean_average_precision(table: RankTable) -> float:
    if not table.rows:
        raise ValueError("empty rank table")
    return float(np.mean([average_precision(row.correct) for row in table.rows]))


# -- scorers ---------------------------------------------------------------------------

GroupScorer = Callable[[GroupView, GroupView], float]
PersonScorer = Callable[[GroupView, GroupView], np.ndarray]


def mean_pool_group_score(a: GroupView, b: GroupView) -> float:
    """Context-free baseline: negative squared distance of mean member features."""
    d = a.parts.mean(axis=0) - b.parts.mean(axis=0)
    return -float(np.sum(d * d))


def part_distance_person_scores(a: GroupView, b: GroupView) -> np.ndarray:
    """Context-free baseline: -sum_p |x_ip - y_jp|^2 on the raw part features."""
    d = a.parts[:, None] - b.parts[None, :]
    return -np.einsum("ijpk,ijpk->ij", d, d)


class ModelScorer:
    """Scores group and person pairs with a trained network.

    One paired forward pass serves both the group score and the person
    similarity matrix; results are cached per (probe, gallery) pair.
    """

    def __init__(self, params: ParameterSet, *, use_matching: bool = False, cache: bool = True):
        self.params = params
        self.use_matching = use_matching
        self._cache: dict | None = {} if cache else None
        self._graphs: dict = {}

    def _graph(self, view: GroupView):
        key = id(view)
        if key not in self._graphs:
            self._graphs[key] = (view, build_context_graph(view))
        return self._graphs[key][1]

    def _run(self, a: GroupView, b: GroupView):
        key = (id(a), id(b))
        if self._cache is not None and key in self._cache:
            return self._cache[key]
        out = forward_pair(self._graph(a), self._graph(b), self.params, matching=self.use_matching)
        hs, hr = out.states_s.value, out.states_r.value
        d = hs[:, None] - hr[None, :]
        sim = -np.einsum("ijpk,ijpk->ij", d, d)[: a.n_persons, : b.n_persons]
        if self.use_matching:
            sim = sim + np.log(np.clip(out.matching.values[: a.n_persons, : b.n_persons], 1e-12, None))
        res = (-out.distance, sim)
        if self._cache is not None:
            self._cache[key] = res
        return res

    def group(self, a: GroupView, b: GroupView) -> float:
        return self._run(a, b)[0]

    def persons(self, a: GroupView, b: GroupView) -> np.ndarray:
        return self._run(a, b)[1]


# -- protocols -------------------------------------------------------------------------

def run_group_reid(episodes: Sequence[Episode], scorer: GroupScorer) -> RankTable:
    table = RankTable()
    for ep in episodes:
        if not ep.gallery:
            raise ValueError("empty gallery")
        scores = [scorer(ep.probe, g) for g in ep.gallery]
        ids = [(g.group_id, g.view_id) for g in ep.gallery]
        correct = [g.group_id == ep.probe.group_id for g in ep.gallery]
        table.add((ep.probe.group_id, ep.probe.view_id), ids, scores, correct)
    return table


def run_person_reid(episodes: Sequence[Episode], scorer: PersonScorer) -> RankTable:
    """Each probe member is ranked against every member of every gallery view.

    Scores come from the enclosing group pair, so context can shape them.
    Probe persons with no occurrence in the gallery are counted in
    ``table.skipped`` rather than ranked.
    """
    table = RankTable()
    for ep in episodes:
        if not ep.gallery:
            raise ValueError("empty gallery")
        blocks = [np.asarray(scorer(ep.probe, g), dtype=float) for g in ep.gallery]
        scores = np.concatenate(blocks, axis=1)
        ids = [(g.group_id, g.view_id, pid) for g in ep.gallery for pid in g.person_ids]
        pids = [pid for g in ep.gallery for pid in g.person_ids]
        for i, pid in enumerate(ep.probe.person_ids):
            correct = [q == pid for q in pids]
            if not any(correct):
                table.skipped += 1
                continue
            table.add((ep.probe.group_id, ep.probe.view_id, pid), ids, scores[i], correct)
    return table


def summarize(table: RankTable, k: int = DEFAULT_K) -> dict:
    curve = cmc(table, k)
    out = {f"R-{r}": float(curve[r - 1]) for r in (1, 5, 10, 20) if r <= k}
    out["mAP"] = mean_average_precision(table)
    out["probes"] = len(table)
    out["skipped"] = table.skipped
    return out
