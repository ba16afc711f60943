"""Epoch loop over sampled group pairs."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .graph import GroupView, build_context_graph, pad_pair
from .losses import LossReport
from .model import ModelConfig, OptimizerState, ParameterSet, init_params, pair_labels, train_step

log = logging.getLogger(__name__)


def positive_pairs(records: Sequence[GroupView]) -> list[tuple[int, int]]:
    by_group: dict = {}
    for k, r in enumerate(records):
        by_group.setdefault(r.group_id, []).append(k)
    return [pair for idx in by_group.values() for pair in itertools.combinations(idx, 2)]


def sample_pairs(records: Sequence[GroupView], rng: np.random.Generator) -> list[tuple[int, int]]:
    """All positive view pairs plus as many random negative pairs, shuffled."""
    pos = positive_pairs(records)
    n = len(records)
    neg = []
    while len(neg) < len(pos):
        a, b = (int(x) for x in rng.integers(n, size=2))
        if records[a].group_id != records[b].group_id:
            neg.append((a, b))
    pairs = pos + neg
    order = rng.permutation(len(pairs))
    return [pairs[k] for k in order]


@dataclass
class TrainResult:
    params: ParameterSet
    opt: OptimizerState
    history: list[dict] = field(default_factory=list)


def train(records: Sequence[GroupView], config: ModelConfig, *, seed: int = 0,
          epochs: int | None = None, lr: float | None = None,
          params: ParameterSet | None = None,
          on_epoch: Callable[[int, dict], None] | None = None) -> TrainResult:
    """Train on every positive pair and a matched number of negatives per epoch.

    Pairs are sampled from a generator seeded by ``seed``, so a fixed seed and
    dataset give an identical loss trajectory.
    """
    epochs = config.epochs if epochs is None else epochs
    params = init_params(config, seed) if params is None else params
    opt = OptimizerState.from_config(config, lr)
    rng = np.random.default_rng(seed + 1)
    graphs = [build_context_graph(r) for r in records]
    result = TrainResult(params, opt)
    for epoch in range(epochs):
        opt.epoch = epoch
        totals = np.zeros(4)
        pairs = sample_pairs(records, rng)
        for a, b in pairs:
            g_s, g_r = pad_pair(graphs[a], graphs[b])
            labels = pair_labels(g_s, g_r, config.margin)
            rep: LossReport = train_step((g_s, g_r), labels, params, opt)
            totals += (rep.group, rep.person, rep.pce, rep.total)
        mean = totals / max(len(pairs), 1)
        entry = {"epoch": epoch, "lr": opt.current_lr(), "group": mean[0], "person": mean[1],
                 "pce": mean[2], "total": mean[3]}
        result.history.append(entry)
        log.info("epoch %d lr %.2e total %.4f (group %.4f person %.4f pce %.4f)",
                 epoch, entry["lr"], mean[3], mean[0], mean[1], mean[2])
        if on_epoch is not None:
            on_epoch(epoch, entry)
    return result
