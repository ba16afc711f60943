"""The paired context-graph network: parameters, forward pass, training, scoring."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .attention import (
    AttentionRecord,
    LayerParams,
    ReadoutParams,
    inter_graph_messages,
    inter_part_multihead,
    intra_part_multihead,
    readout,
    update_nodes,
)
from .autodiff import Tape, Var
from .graph import DUMMY_ID, ContextGraph, NodeStates, pad_pair
from .losses import LossReport, PairLabels, group_pair_loss, person_pair_loss, total_loss
from .matching import SinkhornResult, affinity, permutation_ce, sinkhorn

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
ABLATIONS = ("intra_part", "inter_part", "inter_graph", "readout_attention")


@dataclass(frozen=True)
class ModelConfig:
    parts: int = 4
    in_dim: int = 16
    hidden: int = 16
    embed_dim: int = 16
    layers: int = 2
    heads: int = 1
    tau: float = 1.0
    margin: float = 1.0
    slope: float = 0.2
    sinkhorn_train_iters: int = 20
    sinkhorn_eval_iters: int = 100
    sinkhorn_tol: float = 1e-6
    intra_part: bool = True
    inter_part: bool = True
    inter_graph: bool = True
    readout_attention: bool = True
    normalize: bool = False
    lr: float = 3e-4
    lr_milestones: tuple[int, ...] = (80, 160)
    lr_gamma: float = 0.1
    epochs: int = 200

    def __post_init__(self):
        for name in ("parts", "in_dim", "hidden", "embed_dim", "layers", "heads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.inter_part and self.parts < 2:
            raise ValueError("inter-part attention needs parts >= 2; disable it for parts == 1")
        if self.tau <= 0 or self.margin <= 0:
            raise ValueError("tau and margin must be positive")
        object.__setattr__(self, "lr_milestones", tuple(self.lr_milestones))

    def ablate(self, *names: str) -> "ModelConfig":
        """Copy with the named attention switches off."""
        for n in names:
            if n not in ABLATIONS:
                raise ValueError(f"unknown ablation {n!r}; choose from {ABLATIONS}")
        return replace(self, **{n: False for n in names})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lr_milestones"] = list(self.lr_milestones)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class ParameterSet:
    """Named weight arrays in a fixed enumeration order."""

    config: ModelConfig
    seed: int | None
    arrays: dict[str, np.ndarray]

    def names(self) -> list[str]:
        return list(self.arrays)

    def copy(self) -> "ParameterSet":
        return ParameterSet(self.config, self.seed, {k: v.copy() for k, v in self.arrays.items()})

    def watch(self, tape: Tape) -> dict[str, Var]:
        return {k: tape.watch(k, v) for k, v in self.arrays.items()}

    def __getitem__(self, name):
        return self.arrays[name]


def _shapes(cfg: ModelConfig) -> dict[str, tuple[tuple[int, ...], tuple[int, int] | None]]:
    """name -> (shape, (fan_in, fan_out) or None for zero-initialised biases)."""
    out = {}
    d, dp = cfg.hidden, cfg.hidden
    for t in range(1, cfg.layers + 1):
        d_in = cfg.in_dim if t == 1 else d
        pre = f"layer{t}."
        out[pre + "w_e"] = ((cfg.heads, dp, d_in), (d_in, dp))
        out[pre + "a_e"] = ((cfg.heads, 2 * dp), (2 * dp, 1))
        out[pre + "w_z"] = ((dp, d_in), (d_in, dp))
        out[pre + "w1"] = ((d, d_in + 3 * dp), (d_in + 3 * dp, d))
        out[pre + "b1"] = ((d,), None)
        out[pre + "w2"] = ((d, d), (d, d))
        out[pre + "b2"] = ((d,), None)
    node = cfg.parts * d
    out["readout.w_u"] = ((cfg.embed_dim, node), (node, cfg.embed_dim))
    out["readout.v_u"] = ((cfg.embed_dim,), (cfg.embed_dim, 1))
    out["match.A"] = ((node, node), (node, node))
    return out


def init_params(config: ModelConfig, seed: int = 0) -> ParameterSet:
    """Glorot-uniform weights, zero biases, fully determined by ``seed``."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, (shape, fans) in _shapes(config).items():
        if fans is None:
            arrays[name] = np.zeros(shape)
        else:
            bound = math.sqrt(6.0 / (fans[0] + fans[1]))
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    return ParameterSet(config, seed, arrays)


def layer_params(p: Mapping, t: int) -> LayerParams:
    pre = f"layer{t}."
    return LayerParams(*(p[pre + k] for k in ("w_e", "a_e", "w_z", "w1", "b1", "w2", "b2")))


def _unit(x, axis=-1):
    norm = ad.sqrt(ad.vsum(ad.square(x), axis=axis, keepdims=True) + 1e-12)
    return x / norm


@dataclass
class PairOutput:
    h_s: Var
    h_r: Var
    states_s: Var
    states_r: Var
    mask_s: np.ndarray
    mask_r: np.ndarray
    records_s: list[AttentionRecord] = field(default_factory=list)
    records_r: list[AttentionRecord] = field(default_factory=list)
    matching: SinkhornResult | None = None
    affinity: Var | None = None

    @property
    def distance(self) -> float:
        d = self.h_s.value - self.h_r.value
        return float(d @ d)

    def final_states(self) -> tuple[NodeStates, NodeStates]:
        t = len(self.records_s)
        return NodeStates(t, self.states_s.value), NodeStates(t, self.states_r.value)


def forward_pair(g_s: ContextGraph, g_r: ContextGraph, params, config: ModelConfig | None = None,
                 *, matching: bool = True, train: bool = False) -> PairOutput:
    """Run every layer on both graphs, read out embeddings, and match nodes.

    ``params`` is a :class:`ParameterSet` or a mapping of names to arrays or
    tape handles.  Graphs of unequal size are padded to a common node count.
    With ``train=True`` Sinkhorn runs a fixed unroll; otherwise it iterates
    to the evaluation tolerance.
    """
    if isinstance(params, ParameterSet):
        config = config or params.config
        params = params.arrays
    if config is None:
        raise ValueError("a ModelConfig is required with a raw parameter mapping")
    if g_s.part_count != config.parts or g_r.part_count != config.parts:
        raise ad.ShapeError(f"graphs carry {g_s.part_count}/{g_r.part_count} parts, config expects {config.parts}")
    if g_s.feature_dim != config.in_dim or g_r.feature_dim != config.in_dim:
        raise ad.ShapeError(f"feature width {g_s.feature_dim}/{g_r.feature_dim} != config in_dim {config.in_dim}")
    if g_s.node_count != g_r.node_count:
        g_s, g_r = pad_pair(g_s, g_r)
    ms, mr = g_s.real_mask, g_r.real_mask
    hs, hr = ad.as_var(g_s.features), ad.as_var(g_r.features)
    kw = dict(slope=config.slope)
    out = PairOutput(hs, hr, hs, hr, ms, mr)
    for t in range(1, config.layers + 1):
        lp = layer_params(params, t)
        m_s, a_ms = intra_part_multihead(hs, ms, lp, attend=config.intra_part, **kw)
        m_r, a_mr = intra_part_multihead(hr, mr, lp, attend=config.intra_part, **kw)
        if config.parts >= 2:
            n_s, a_ns = inter_part_multihead(hs, ms, lp, attend=config.inter_part, **kw)
            n_r, a_nr = inter_part_multihead(hr, mr, lp, attend=config.inter_part, **kw)
        else:
            n_s, n_r, a_ns, a_nr = m_s * 0.0, m_r * 0.0, [], []
        mu_s, b_s = inter_graph_messages(hs, hr, ms, mr, lp.w_z, attend=config.inter_graph)
        mu_r, b_r = inter_graph_messages(hr, hs, mr, ms, lp.w_z, attend=config.inter_graph)
        hs, hr = update_nodes(hs, m_s, n_s, mu_s, ms, lp), update_nodes(hr, m_r, n_r, mu_r, mr, lp)
        out.records_s.append(AttentionRecord(a_ms, a_ns, b_s))
        out.records_r.append(AttentionRecord(a_mr, a_nr, b_r))
    if config.normalize:
        hs = _unit(hs) * ms[:, None, None].astype(float)
        hr = _unit(hr) * mr[:, None, None].astype(float)
    rp = ReadoutParams(params["readout.w_u"], params["readout.v_u"])
    emb_s, g_s_w = readout(hs, ms, rp, attend=config.readout_attention)
    emb_r, g_r_w = readout(hr, mr, rp, attend=config.readout_attention)
    if config.normalize:
        emb_s, emb_r = _unit(emb_s), _unit(emb_r)
    out.records_s[-1].readout = g_s_w
    out.records_r[-1].readout = g_r_w
    out.h_s, out.h_r, out.states_s, out.states_r = emb_s, emb_r, hs, hr
    if matching:
        # the symmetric part of A, so that swapping the pair transposes the affinity
        a = params["match.A"]
        m = affinity(hs, hr, (a + ad.transpose(a)) * 0.5, config.tau)
        out.affinity = m
        if train:
            out.matching = sinkhorn(m, config.sinkhorn_train_iters, tol=None)
        else:
            out.matching = sinkhorn(m, config.sinkhorn_eval_iters, tol=config.sinkhorn_tol)
    return out


# -- training --------------------------------------------------------------------

def pair_labels(g_s: ContextGraph, g_r: ContextGraph, margin: float = 1.0) -> PairLabels:
    """Labels from ids: same group id is positive; persons agree by person id."""
    if g_s.group_id != g_r.group_id:
        return PairLabels(-1, None, margin)
    if g_s.node_count != g_r.node_count:
        g_s, g_r = pad_pair(g_s, g_r)
    y = -np.ones((g_s.node_count, g_r.node_count))
    for i, a in enumerate(g_s.person_ids):
        for j, b in enumerate(g_r.person_ids):
            if a is not DUMMY_ID and a == b:
                y[i, j] = 1.0
    return PairLabels(1, y, margin)


def pair_loss(out: PairOutput, labels: PairLabels, margin: float | None = None):
    """Total pair objective on the tape plus its float report.

    Person and correspondence terms apply to positive pairs only.
    """
    m = labels.margin if margin is None else margin
    lg = group_pair_loss(out.h_s, out.h_r, labels.y_group, m)
    if labels.y_group == 1:
        lp = person_pair_loss(out.states_s, out.states_r, labels, out.mask_s, out.mask_r)
        gt = (np.asarray(labels.y_person) > 0).astype(float)
        lc = permutation_ce(out.matching.matrix, gt, out.mask_s, out.mask_r)
    else:
        lp, lc = Var(0.0), Var(0.0)
    return total_loss(lg, lp, lc)


@dataclass
class OptimizerState:
    """Adaptive-moment state and the stepped learning-rate schedule."""

    lr: float = 3e-4
    milestones: tuple[int, ...] = (80, 160)
    gamma: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    epoch: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_config(cls, cfg: ModelConfig, lr: float | None = None) -> "OptimizerState":
        return cls(lr=cfg.lr if lr is None else lr, milestones=cfg.lr_milestones, gamma=cfg.lr_gamma)

    def current_lr(self) -> float:
        return self.lr * self.gamma ** sum(self.epoch >= e for e in self.milestones)

    def apply(self, params: ParameterSet, grads: Mapping[str, np.ndarray]) -> None:
        self.step += 1
        lr = self.current_lr()
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step
        c2 = 1.0 - b2 ** self.step
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            if lr:
                params.arrays[name] = params.arrays[name] - lr * (self.m[name] / c1) / (
                    np.sqrt(self.v[name] / c2) + self.eps)


def loss_and_grads(pair: tuple[ContextGraph, ContextGraph], labels: PairLabels,
                   params: ParameterSet) -> tuple[LossReport, dict[str, np.ndarray]]:
    g_s, g_r = pair
    with Tape() as tape:
        handles = params.watch(tape)
        out = forward_pair(g_s, g_r, handles, params.config, matching=labels.y_group == 1, train=True)
        total, report = pair_loss(out, labels)
        if total.tape is not tape:  # no tracked path, e.g. a zero hinge on a constant
            return report, {k: np.zeros_like(v) for k, v in params.arrays.items()}
        grads = tape.backward(total)
    return report, grads


def train_step(pair: tuple[ContextGraph, ContextGraph], labels: PairLabels,
               params: ParameterSet, opt: OptimizerState) -> LossReport:
    """One forward/backward/update on a single group pair; returns pre-update losses."""
    try:
        report, grads = loss_and_grads(pair, labels, params)
    except FloatingPointError as err:
        raise FloatingPointError(
            f"non-finite loss at step {opt.step} (groups {pair[0].group_id!r}/{pair[1].group_id!r}): {err}"
        ) from None
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise FloatingPointError(f"non-finite gradient at step {opt.step} for {bad}")
    opt.apply(params, grads)
    return report


# -- inference -------------------------------------------------------------------

def score_group_pair(g_s: ContextGraph, g_r: ContextGraph, params: ParameterSet,
                     config: ModelConfig | None = None) -> float:
    """Negative squared embedding distance (0 is the best score)."""
    out = forward_pair(g_s, g_r, params, config, matching=False)
    return -out.distance


def score_person_pairs(g_s: ContextGraph, g_r: ContextGraph, params: ParameterSet,
                       config: ModelConfig | None = None, *, with_matching: bool = False):
    """-sum_p |h_sip - h_rjp|^2 over final node states; -inf on dummy slots.

    Shape follows the input graphs' node counts.  With ``with_matching``
    the Sinkhorn assignment is returned alongside.
    """
    out = forward_pair(g_s, g_r, params, config, matching=with_matching)
    hs, hr = out.states_s.value, out.states_r.value
    diff = hs[:, None] - hr[None, :]
    sim = -np.einsum("ijpk,ijpk->ij", diff, diff)
    sim[~(out.mask_s[:, None] & out.mask_r[None, :])] = -np.inf
    sim = sim[: g_s.node_count, : g_r.node_count]
    if with_matching:
        return sim, out.matching.values[: g_s.node_count, : g_r.node_count]
    return sim


# -- checkpoints -----------------------------------------------------------------

def save_checkpoint(path, params: ParameterSet, extra: Mapping | None = None) -> Path:
    """Write config, seed, format version and float64 parameter arrays to an ``.npz``."""
    path = Path(path)
    payload = {
        "format_version": np.array(CHECKPOINT_VERSION),
        "config": np.array(json.dumps(params.config.to_dict(), sort_keys=True)),
        "seed": np.array(-1 if params.seed is None else params.seed),
        "names": np.array(params.names()),
        "extra": np.array(json.dumps(dict(extra or {}), sort_keys=True)),
    }
    for k, v in params.arrays.items():
        payload["param/" + k] = np.ascontiguousarray(v, dtype=np.float64)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)
    return path


def load_checkpoint(path) -> ParameterSet:
    with np.load(Path(path), allow_pickle=False) as z:
        version = int(z["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        cfg = ModelConfig.from_dict(json.loads(str(z["config"])))
        seed = int(z["seed"])
        arrays = {str(k): z["param/" + str(k)].copy() for k in z["names"]}
    expected = _shapes(cfg)
    if list(arrays) != list(expected) or any(arrays[k].shape != expected[k][0] for k in arrays):
        raise ValueError("checkpoint parameters do not match its config")
    return ParameterSet(cfg, None if seed < 0 else seed, arrays)
