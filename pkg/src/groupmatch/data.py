"""Synthetic group views and the line-delimited record format.

Each line of a dataset file is one JSON object::

    {"group_id": 3, "view_id": 1,
     "persons": [{"person_id": 17, "parts": [[...D floats], ...P rows]}, ...]}

Floats are written with 17 significant digits so a write/read round trip
reproduces every value bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .graph import GroupView

DatasetRecord = GroupView

#: minimum share of members two views of one group have in common
MIN_SHARED = 0.6


class DatasetError(ValueError):
    """A dataset file is malformed or violates a record invariant."""


@dataclass(frozen=True)
class SynthConfig:
    identities: int = 50
    groups: int = 20
    min_members: int = 2
    max_members: int = 8
    views: int = 2
    dim: int = 16
    parts: int = 4
    noise: float = 0.15
    occlusion: float = 0.1
    replacement: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("identities", "groups", "min_members", "max_members", "views", "dim", "parts"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.min_members > self.max_members:
            raise ValueError("min_members > max_members")
        if self.max_members > self.identities:
            raise ValueError("groups cannot be larger than the identity pool")
        for name in ("occlusion", "replacement"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be a probability")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")


def shared_fraction(a: Sequence, b: Sequence) -> float:
    """Members in common over the larger of the two member lists."""
    return len(set(a) & set(b)) / max(len(a), len(b))


def identity_bank(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Unit-norm latent vector per identity and part, shape (identities, P, D)."""
    z = rng.normal(size=(cfg.identities, cfg.parts, cfg.dim))
    return z / np.linalg.norm(z, axis=-1, keepdims=True)


@dataclass(frozen=True)
class SyntheticWorld:
    """Identity latents and group memberships shared by every rendered view."""

    cfg: SynthConfig
    bank: np.ndarray                     # (identities, P, D)
    members: tuple[tuple[int, ...], ...]  # per group


def make_world(cfg: SynthConfig) -> SyntheticWorld:
    rng = np.random.default_rng([cfg.seed, 0])
    bank = identity_bank(cfg, rng)
    members = []
    for _ in range(cfg.groups):
        size = int(rng.integers(cfg.min_members, cfg.max_members + 1))
        members.append(tuple(int(k) for k in rng.choice(cfg.identities, size=size, replace=False)))
    return SyntheticWorld(cfg, bank, tuple(members))


def swappable_members(world: SyntheticWorld, group: int) -> tuple[int, ...]:
    """Member slots that may be replaced in any view of ``group``.

    At most ``size - ceil(0.6 * size)`` slots are eligible, so any two views
    still share at least 60% of their members whatever each view swaps.
    """
    size = len(world.members[group])
    k = size - math.ceil(MIN_SHARED * size - 1e-9)
    rng = np.random.default_rng([world.cfg.seed, 2, group])
    return tuple(sorted(int(i) for i in rng.choice(size, size=k, replace=False)))


def render_view(world: SyntheticWorld, group: int, view: int, stats: dict | None = None) -> GroupView:
    """One view of one group, drawn from a stream keyed by (seed, group, view)."""
    cfg = world.cfg
    rng = np.random.default_rng([cfg.seed, 1, group, view])
    members = world.members[group]
    size = len(members)
    ids = list(members)
    eligible = swappable_members(world, group)
    outsiders = [k for k in range(cfg.identities) if k not in members]
    # eligible slots swap with a raised probability so the per-member rate stays cfg.replacement
    p_swap = min(1.0, cfg.replacement * size / len(eligible)) if eligible else 0.0
    draws = rng.random(len(eligible)) < p_swap
    swaps = 0
    for slot in np.asarray(eligible, dtype=int)[draws]:
        if not outsiders:
            break
        ids[slot] = outsiders.pop(int(rng.integers(len(outsiders))))
        swaps += 1
    parts = world.bank[ids].copy()
    if cfg.noise > 0:
        parts += cfg.noise * rng.normal(size=parts.shape)
    occluded = rng.random(size) < cfg.occlusion
    which = rng.integers(cfg.parts, size=size)
    parts[np.flatnonzero(occluded), which[occluded]] = 0.0
    if stats is not None:
        stats["slots"] = stats.get("slots", 0) + size
        stats["replaced"] = stats.get("replaced", 0) + swaps
    return GroupView(group, view, tuple(ids), parts)


def generate_synthetic(cfg: SynthConfig, *, views: Sequence[int] | None = None,
                       return_stats: bool = False):
    """Draw groups of identities and render noisy views of each.

    Per view, members are swapped for outside identities at an average rate
    of ``cfg.replacement`` per member.  Swaps are confined to a fixed subset
    of each group's slots so that any two views share at least 60% of their
    members; groups too small to allow that (two members) never swap.  One random
    part of each member is zeroed with probability ``cfg.occlusion``, and
    Gaussian noise of scale ``cfg.noise`` is added after normalisation.

    ``views`` selects which view indices to render (default ``range(cfg.views)``);
    a given (group, view) always renders identically, so extra held-out views
    can be drawn later without disturbing the rest.
    """
    world = make_world(cfg)
    view_ids = range(cfg.views) if views is None else views
    stats: dict = {}
    records = [render_view(world, g, v, stats) for g in range(cfg.groups) for v in view_ids]
    if return_stats:
        return records, stats
    return records


# -- file format ---------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def record_to_line(rec: GroupView) -> str:
    persons = []
    for pid, parts in zip(rec.person_ids, rec.parts):
        rows = ",".join("[" + ",".join(_fmt(x) for x in row) + "]" for row in parts)
        persons.append(f'{{"person_id":{json.dumps(pid)},"parts":[{rows}]}}')
    return (f'{{"group_id":{json.dumps(rec.group_id)},"view_id":{json.dumps(rec.view_id)},'
            f'"persons":[{",".join(persons)}]}}')


def write_dataset(path, records: Iterable[GroupView]) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(record_to_line(rec) + "\n")
    return path


def _parse_line(obj, lineno: int) -> GroupView:
    try:
        persons = obj["persons"]
        group_id, view_id = obj["group_id"], obj["view_id"]
    except (KeyError, TypeError):
        raise DatasetError(f"line {lineno}: record needs group_id, view_id and persons") from None
    if not isinstance(persons, list) or not persons:
        raise DatasetError(f"line {lineno}: persons must be a non-empty list")
    ids, arrays = [], []
    for k, person in enumerate(persons):
        try:
            pid, parts = person["person_id"], np.asarray(person["parts"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as err:
            raise DatasetError(f"line {lineno}: person {k}: {err}") from None
        if parts.ndim != 2 or 0 in parts.shape:
            raise DatasetError(f"line {lineno}: person {pid!r} parts must be a P x D list of lists")
        if not np.all(np.isfinite(parts)):
            raise DatasetError(f"line {lineno}: person {pid!r} has non-finite features")
        if arrays and parts.shape != arrays[0].shape:
            raise DatasetError(f"line {lineno}: person {pid!r} parts shape {parts.shape} != {arrays[0].shape}")
        ids.append(pid)
        arrays.append(parts)
    if len(set(map(json.dumps, ids))) != len(ids):
        raise DatasetError(f"line {lineno}: duplicate person_id within a view")
    return GroupView(group_id, view_id, tuple(ids), np.stack(arrays))


def load_dataset(path) -> list[GroupView]:
    """Read and validate a dataset file; errors name the offending line."""
    records: list[GroupView] = []
    shape = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise DatasetError(f"line {lineno}: {err.msg}") from None
            rec = _parse_line(obj, lineno)
            if shape is None:
                shape = rec.parts.shape[1:]
            elif rec.parts.shape[1:] != shape:
                raise DatasetError(
                    f"line {lineno}: parts layout {rec.parts.shape[1:]} differs from dataset layout {shape}")
            records.append(rec)
    if not records:
        raise DatasetError(f"{path}: no records")
    return records


# -- probe / gallery ---------------------------------------------------------------------

@dataclass(frozen=True)
class Episode:
    probe: GroupView
    gallery: tuple[GroupView, ...]


def split_probe_gallery(records: Sequence[GroupView],
                        distractors: Sequence[GroupView] = ()) -> list[Episode]:
    """Every record is a probe once, against all other records plus the distractors.

    Records whose group has no second view would have no true match; they
    still sit in every other probe's gallery but are not used as probes.
    """
    counts: dict = {}
    for r in records:
        counts[r.group_id] = counts.get(r.group_id, 0) + 1
    if not any(c >= 2 for c in counts.values()):
        raise ValueError("no group has two or more views")
    episodes = []
    for k, probe in enumerate(records):
        if counts[probe.group_id] < 2:
            continue
        gallery = tuple(records[:k]) + tuple(records[k + 1:]) + tuple(distractors)
        episodes.append(Episode(probe, gallery))
    return episodes


def relabel(records: Sequence[GroupView], prefix: str) -> list[GroupView]:
    """Prefix group ids (e.g. to turn a second synthetic draw into distractors)."""
    return [GroupView(f"{prefix}{r.group_id}", r.view_id, tuple(f"{prefix}{p}" for p in r.person_ids), r.parts)
            for r in records]
