"""Reverse-mode differentiation over float64 numpy arrays.

A :class:`Tape` records every primitive applied to tracked :class:`Var`
values while it is active.  ``tape.backward(root)`` replays the records in
reverse order and returns gradients for every watched parameter.

Outside an active tape the same primitives simply compute values, which is
what inference uses.

    >>> with Tape() as tape:
    ...     x = tape.watch("x", np.array([1.0, 2.0]))
    ...     loss = vsum(x * x)
    >>> tape.backward(loss)["x"]
    array([2., 4.])
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float64

_state = threading.local()


class ShapeError(ValueError):
    """Operand shapes do not compose."""


class EmptySupportError(ValueError):
    """A masked reduction has no active entries."""


def _active_tape() -> "Tape | None":
    return getattr(_state, "tape", None)


class Var:
    """An array value, optionally tracked on a tape slot."""

    __slots__ = ("value", "slot", "tape")
    __array_priority__ = 100

    def __init__(self, value, slot: int | None = None, tape: "Tape | None" = None):
        self.value = np.asarray(value, dtype=DTYPE)
        self.slot = slot
        self.tape = tape

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        tag = "" if self.slot is None else f", slot={self.slot}"
        return f"Var({self.value!r}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)


@dataclass
class _Record:
    out: int
    inputs: tuple[int | None, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Single-writer record of primitive applications."""

    values: list[np.ndarray] = field(default_factory=list)
    records: list[_Record] = field(default_factory=list)
    params: dict[str, int] = field(default_factory=dict)

    def __enter__(self):
        self._prev = _active_tape()
        _state.tape = self
        return self

    def __exit__(self, *exc):
        _state.tape = self._prev
        return False

    def _push(self, value: np.ndarray) -> int:
        self.values.append(value)
        return len(self.values) - 1

    def watch(self, name: str, value) -> Var:
        """Register a parameter leaf and return its tracked handle."""
        if name in self.params:
            raise KeyError(f"parameter {name!r} already watched")
        arr = np.array(value, dtype=DTYPE)
        slot = self._push(arr)
        self.params[name] = slot
        return Var(arr, slot, self)

    def backward(self, root: Var) -> dict[str, np.ndarray]:
        """Gradients of scalar ``root`` with respect to every watched parameter."""
        if not isinstance(root, Var) or root.tape is not self:
            raise ValueError("root is not recorded on this tape")
        if root.value.size != 1:
            raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
        grads: list[np.ndarray | None] = [None] * len(self.values)
        grads[root.slot] = np.ones_like(root.value)
        for rec in reversed(self.records):
            g = grads[rec.out]
            if g is None:
                continue
            for slot, gi in zip(rec.inputs, rec.vjp(g)):
                if slot is None or gi is None:
                    continue
                if grads[slot] is None:
                    grads[slot] = np.array(gi, dtype=DTYPE)
                else:
                    grads[slot] = grads[slot] + gi
        out = {}
        for name, slot in self.params.items():
            g = grads[slot]
            out[name] = np.zeros_like(self.values[slot]) if g is None else g.reshape(self.values[slot].shape)
        return out


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=DTYPE)


def _emit(value, inputs: Sequence[Var], vjp) -> Var:
    """Wrap ``value``; record it if any input lives on the active tape."""
    tape = _active_tape()
    if tape is None:
        return Var(value)
    slots = tuple(v.slot if v.tape is tape else None for v in inputs)
    if all(s is None for s in slots):
        return Var(value)
    slot = tape._push(np.asarray(value, dtype=DTYPE))
    tape.records.append(_Record(slot, slots, vjp))
    return Var(tape.values[slot], slot, tape)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    sa, sb = a.shape, b.shape
    return _emit(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    sa, sb = a.shape, b.shape
    return _emit(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value
    return _emit(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value
    out = av / bv
    return _emit(out, (a, b),
                 lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)))


def square(a) -> Var:
    a = as_var(a)
    av = a.value
    return _emit(av * av, (a,), lambda g: (2.0 * av * g,))


def exp(a) -> Var:
    a = as_var(a)
    out = np.exp(a.value)
    return _emit(out, (a,), lambda g: (g * out,))


def log(a) -> Var:
    a = as_var(a)
    av = a.value
    return _emit(np.log(av), (a,), lambda g: (g / av,))


def sqrt(a) -> Var:
    a = as_var(a)
    out = np.sqrt(a.value)
    return _emit(out, (a,), lambda g: (g * 0.5 / out,))


def relu(a) -> Var:
    """max(0, a); the subgradient at 0 is taken as 0."""
    a = as_var(a)
    pos = a.value > 0
    return _emit(np.where(pos, a.value, 0.0), (a,), lambda g: (g * pos,))


def leaky_relu(a, slope: float = 0.2) -> Var:
    a = as_var(a)
    pos = a.value > 0
    scale = np.where(pos, 1.0, slope)
    return _emit(a.value * scale, (a,), lambda g: (g * scale,))


def clip(a, lo: float, hi: float) -> Var:
    """Clamp into [lo, hi]; gradient is zero where the clamp is active."""
    a = as_var(a)
    inside = (a.value >= lo) & (a.value <= hi)
    return _emit(np.clip(a.value, lo, hi), (a,), lambda g: (g * inside,))


# -- reductions and layout -----------------------------------------------------

def vsum(a, axis=None, keepdims: bool = False) -> Var:
    a = as_var(a)
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit(a.value.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def reshape(a, shape) -> Var:
    a = as_var(a)
    old = a.shape
    return _emit(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Var:
    a = as_var(a)
    inv = None if axes is None else tuple(np.argsort(axes))
    return _emit(np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inv),))


def broadcast_to(a, shape) -> Var:
    a = as_var(a)
    old = a.shape
    return _emit(np.broadcast_to(a.value, shape).copy(), (a,), lambda g: (_unbroadcast(g, old),))


def getitem(a, idx) -> Var:
    a = as_var(a)
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape, dtype=DTYPE)
        np.add.at(full, idx, g)
        return (full,)

    return _emit(a.value[idx], (a,), vjp)


def concat(parts: Sequence, axis: int = 0) -> Var:
    """Stack ``parts`` contiguously along ``axis`` in argument order."""
    parts = [as_var(p) for p in parts]
    if not parts:
        raise ShapeError("concat of nothing")
    ref = parts[0].shape
    ax = axis % len(ref)
    for p in parts[1:]:
        if len(p.shape) != len(ref) or any(
            p.shape[k] != ref[k] for k in range(len(ref)) if k != ax
        ):
            raise ShapeError(f"concat: shapes {ref} and {p.shape} disagree off axis {axis}")
    cuts = np.cumsum([p.shape[ax] for p in parts])[:-1]
    return _emit(np.concatenate([p.value for p in parts], axis=ax), parts,
                 lambda g: np.split(g, cuts, axis=ax))


# -- products ------------------------------------------------------------------

def matmul(a, b) -> Var:
    """Matrix product; 1-D operands follow numpy's promotion rules."""
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value
    if av.ndim == 0 or bv.ndim == 0:
        raise ShapeError("matmul needs at least 1-D operands")
    k_a = av.shape[-1]
    k_b = bv.shape[0] if bv.ndim == 1 else bv.shape[-2]
    if k_a != k_b:
        raise ShapeError(f"matmul: {av.shape} @ {bv.shape}")

    def vjp(g):
        a2 = av if av.ndim > 1 else av[None, :]
        b2 = bv if bv.ndim > 1 else bv[:, None]
        g2 = g
        if av.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if bv.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = g2 @ np.swapaxes(b2, -1, -2)
        gb = np.swapaxes(a2, -1, -2) @ g2
        if av.ndim == 1:
            ga = ga.reshape(ga.shape[:-2] + (ga.shape[-1],))
        if bv.ndim == 1:
            gb = gb.reshape(gb.shape[:-1])
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return _emit(av @ bv, (a, b), vjp)


def linear(w, x) -> Var:
    """``w @ x``: projection of column-stacked inputs by weight ``w``."""
    return matmul(w, x)


def einsum(subscripts: str, a, b) -> Var:
    """Two-operand einsum without repeated or operand-private summed indices."""
    a, b = as_var(a), as_var(b)
    ins, out = subscripts.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    for s, other in ((sa, sb), (sb, sa)):
        if len(set(s)) != len(s):
            raise ValueError(f"einsum: repeated index in {s!r}")
        if set(s) - set(other) - set(out):
            raise ValueError(f"einsum: index summed within one operand in {subscripts!r}")
    try:
        val = np.einsum(subscripts, a.value, b.value)
    except ValueError as err:
        raise ShapeError(str(err)) from None
    av, bv = a.value, b.value
    return _emit(val, (a, b), lambda g: (
        np.einsum(f"{out},{sb}->{sa}", g, bv),
        np.einsum(f"{sa},{out}->{sb}", av, g),
    ))


# -- normalisation -------------------------------------------------------------

def masked_softmax(logits, mask=None, axis: int = -1) -> Var:
    """Softmax along ``axis`` restricted to ``mask``; masked entries are exactly 0.

    ``mask`` broadcasts against ``logits``.  Every slice along ``axis`` must
    have at least one active entry.
    """
    logits = as_var(logits)
    x = logits.value
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if not mask.any(axis=axis).all():
        raise EmptySupportError("masked_softmax: a slice has no active entries")
    shifted = np.where(mask, x, -np.inf)
    shifted = shifted - shifted.max(axis=axis, keepdims=True)
    e = np.where(mask, np.exp(shifted), 0.0)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _emit(y, (logits,), vjp)
