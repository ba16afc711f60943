"""Message passing over part-level node states.

All functions take node states as ``(N, P, d)`` arrays or tape values and a
boolean ``mask`` of real (non-dummy) nodes.  Attention weights are returned
as plain arrays for inspection; messages stay on the tape.

With ``attend=False`` an operation falls back to masked mean pooling over the
same support, which is how the ablation switches are realised.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Var


@dataclass
class LayerParams:
    """Weights of one message-passing layer.

    ``w_e`` is ``(heads, d', d_in)`` and shared by intra- and inter-part
    attention; ``a_e`` is ``(heads, 2 d')``; ``w_z`` is ``(d', d_in)``;
    the update MLP maps ``d_in + 3 d'`` to ``d`` through one hidden layer.
    """

    w_e: object
    a_e: object
    w_z: object
    w1: object
    b1: object
    w2: object
    b2: object

    @property
    def heads(self) -> int:
        return ad.value_of(self.w_e).shape[0]


@dataclass
class ReadoutParams:
    w_u: object  # (E, P*d)
    v_u: object  # (E,) scores projected nodes


@dataclass
class AttentionRecord:
    intra_part: list = field(default_factory=list)   # per head (N, N, P): [i, j, p]
    inter_part: list = field(default_factory=list)   # per head (N, N, P, P): [i, j, p, q]
    inter_graph: np.ndarray | None = None            # (N_s, N_r)
    readout: np.ndarray | None = None                # (N,)


def _check_width(h, w, name):
    d_in = ad.value_of(w).shape[-1]
    if h.shape[-1] != d_in:
        raise ShapeError(f"{name}: state width {h.shape[-1]} != projection input {d_in}")


def project_parts(h, w) -> Var:
    """Apply ``w`` (d', d) to every part vector of ``h`` (N, P, d)."""
    return ad.einsum("npi,ki->npk", h, w)


def _pair_scores(x, a, slope):
    """Split the GAT scorer a^T [x_i ; x_j] into source and target terms."""
    dp = x.shape[-1]
    a_src = ad.getitem(a, slice(0, dp))
    a_dst = ad.getitem(a, slice(dp, 2 * dp))
    return ad.einsum("npk,k->np", x, a_src), ad.einsum("npk,k->np", x, a_dst)


def intra_part_messages(h, mask, w_e, a_e, *, slope=0.2, attend=True):
    """Messages from the same part of every real node (self included).

    Returns ``(messages (N, P, d'), alpha (N, N, P))``.
    """
    h = ad.as_var(h)
    _check_width(h, w_e, "intra_part_messages")
    mask = np.asarray(mask, dtype=bool)
    n, p, _ = h.shape
    x = project_parts(h, w_e)
    if attend:
        src, dst = _pair_scores(x, a_e, slope)
        e = ad.leaky_relu(ad.reshape(src, (n, 1, p)) + ad.reshape(dst, (1, n, p)), slope)
    else:
        e = np.zeros((n, n, p))
    alpha = ad.masked_softmax(e, mask[None, :, None], axis=1)
    alpha = alpha * mask[:, None, None]
    msg = ad.einsum("ijp,jpk->ipk", alpha, x)
    return msg, alpha.value


def inter_part_messages(h, mask, w_e, a_e, *, slope=0.2, attend=True):
    """Messages from the other parts of every real node, normalised jointly over (node, part).

    Returns ``(messages (N, P, d'), alpha (N, N, P, P))`` with ``alpha[i, j, p, q]``;
    the ``p == q`` diagonal is zero.
    """
    h = ad.as_var(h)
    _check_width(h, w_e, "inter_part_messages")
    mask = np.asarray(mask, dtype=bool)
    n, p, _ = h.shape
    if p < 2:
        raise ValueError("inter-part attention needs at least two parts")
    x = project_parts(h, w_e)
    # support[p, j, q]: real j and q != p
    support = mask[None, :, None] & ~np.eye(p, dtype=bool)[:, None, :]
    support = support.reshape(1, p, n * p)
    if attend:
        src, dst = _pair_scores(x, a_e, slope)
        e = ad.leaky_relu(ad.reshape(src, (n, p, 1)) + ad.reshape(dst, (1, 1, n * p)), slope)
    else:
        e = np.zeros((n, p, n * p))
    alpha = ad.masked_softmax(e, support, axis=2)
    alpha = alpha * mask[:, None, None]
    msg = ad.einsum("ipm,mk->ipk", alpha, ad.reshape(x, (n * p, x.shape[-1])))
    return msg, alpha.value.reshape(n, p, n, p).transpose(0, 2, 1, 3)


def _multihead(fn, h, mask, lp: LayerParams, **kw):
    heads = lp.heads
    if heads == 1:
        msg, a = fn(h, mask, ad.getitem(lp.w_e, 0), ad.getitem(lp.a_e, 0), **kw)
        return msg, [a]
    msgs, records = [], []
    for k in range(heads):
        msg, a = fn(h, mask, ad.getitem(lp.w_e, k), ad.getitem(lp.a_e, k), **kw)
        msgs.append(msg)
        records.append(a)
    total = msgs[0]
    for m in msgs[1:]:
        total = total + m
    return total * (1.0 / heads), records


def intra_part_multihead(h, mask, lp: LayerParams, **kw):
    """Average of per-head intra-part messages."""
    return _multihead(intra_part_messages, h, mask, lp, **kw)


def inter_part_multihead(h, mask, lp: LayerParams, **kw):
    return _multihead(inter_part_messages, h, mask, lp, **kw)


def inter_graph_messages(h_s, h_r, mask_s, mask_r, w_z, *, attend=True):
    """Messages into graph s from the real nodes of graph r.

    Node similarity is the inner product of part-wise projected, concatenated
    features.  Every part of node i receives the same message: the
    attention-weighted sum over partner nodes of their summed projected parts.
    Returns ``(messages (N_s, P, d'), beta (N_s, N_r))``.
    """
    h_s, h_r = ad.as_var(h_s), ad.as_var(h_r)
    _check_width(h_s, w_z, "inter_graph_messages")
    _check_width(h_r, w_z, "inter_graph_messages")
    if h_s.shape[1] != h_r.shape[1]:
        raise ShapeError("graphs disagree on part count")
    mask_s = np.asarray(mask_s, dtype=bool)
    mask_r = np.asarray(mask_r, dtype=bool)
    n_s, p, _ = h_s.shape
    zs = project_parts(h_s, w_z)
    zr = project_parts(h_r, w_z)
    if attend:
        z = ad.einsum("ipk,jpk->ij", zs, zr)
    else:
        z = np.zeros((n_s, h_r.shape[0]))
    beta = ad.masked_softmax(z, mask_r[None, :], axis=1)
    beta = beta * mask_s[:, None]
    pooled = ad.einsum("ij,jk->ik", beta, ad.vsum(zr, axis=1))
    msg = ad.broadcast_to(ad.reshape(pooled, (n_s, 1, zs.shape[-1])), (n_s, p, zs.shape[-1]))
    return msg, beta.value


def update_nodes(h, m, n, mu, mask, lp: LayerParams):
    """MLP over [h ; m ; n ; mu] per part; dummy rows are zeroed afterwards."""
    h = ad.as_var(h)
    shapes = {ad.value_of(v).shape[:2] for v in (h, m, n, mu)}
    if len(shapes) != 1:
        raise ShapeError(f"update_nodes: node/part shapes disagree {shapes}")
    x = ad.concat([h, m, n, mu], axis=-1)
    _check_width(x, lp.w1, "update_nodes")
    hidden = ad.relu(ad.einsum("npi,ki->npk", x, lp.w1) + lp.b1)
    out = ad.einsum("npi,ki->npk", hidden, lp.w2) + lp.b2
    return out * np.asarray(mask, dtype=float)[:, None, None]


def readout(h, mask, rp: ReadoutParams, *, attend=True):
    """Self-attention pooling of projected node features into one group vector.

    Returns ``(embedding (E,), gamma (N,))``.
    """
    h = ad.as_var(h)
    n = h.shape[0]
    flat = ad.reshape(h, (n, -1))
    _check_width(flat, rp.w_u, "readout")
    proj = ad.einsum("ni,ki->nk", flat, rp.w_u)
    if attend:
        u = ad.einsum("nk,k->n", proj, rp.v_u)
    else:
        u = np.zeros(n)
    gamma = ad.masked_softmax(u, mask)
    return ad.einsum("n,nk->k", gamma, proj), gamma.value
