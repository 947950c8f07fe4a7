"""Dense-tensor reverse-mode differentiation at desk scale.

A :class:`Tensor` wraps a float64 numpy array plus a gradient slot and a
tape edge; ops build the tape as they run, :func:`backward` replays it in
reverse topological order.  Rank <= 3 only.  The op set covers exactly what
the model needs: linear maps, ReLU, concatenation, means, softmax, (batched)
matmul for attention, Huber and token cross-entropy, plus structural
gather/reshape/slice helpers whose gradients are scatter/reshape/pad.

Ops never mutate their inputs; identical inputs produce bit-identical
outputs.  ReLU's gradient at exactly 0 is 0.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ContractError, ShapeError, StructureError

Array = np.ndarray


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False,
                 parents: tuple = (), backward: Optional[Callable] = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 3:
            raise ShapeError(f"rank {arr.ndim} > 3 unsupported")
        self.data = arr
        self.grad: Optional[Array] = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def accumulate(self, g: Array) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def item(self) -> float:
        return float(self.data)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, scalar: float) -> "Tensor":
        return scale(self, scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar: float) -> "Tensor":
        return scale(self, 1.0 / scalar)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, grad={'set' if self.grad is not None else 'none'})"


class Param(Tensor):
    """Trainable (or deliberately frozen) tensor."""

    __slots__ = ("trainable",)

    def __init__(self, data, trainable: bool = True):
        super().__init__(data, requires_grad=True)
        self.trainable = trainable


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _make(out_data: Array, parents: Sequence[Tensor],
          backward: Callable[[Array], None]) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(out_data, requires_grad=needs,
                  parents=tuple(p for p in parents if p.requires_grad),
                  backward=backward if needs else None)


# ---------------------------------------------------------------------------
# Elementwise and structural ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shapes {a.shape} vs {b.shape}")
    out_data = a.data + b.data

    def backward(g: Array) -> None:
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(g)

    return _make(out_data, (a, b), backward)


def add_const(x: Tensor, arr: Array) -> Tensor:
    out_data = x.data + arr

    def backward(g: Array) -> None:
        if x.requires_grad:
            x.accumulate(g if g.shape == x.shape else
                         g.sum(axis=0) if g.ndim == x.data.ndim + 1 else g)

    return _make(out_data, (x,), backward)


def scale(x: Tensor, s: float) -> Tensor:
    out_data = x.data * s

    def backward(g: Array) -> None:
        if x.requires_grad:
            x.accumulate(g * s)

    return _make(out_data, (x,), backward)


def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, 0.0)

    def backward(g: Array) -> None:
        if x.requires_grad:
            x.accumulate(g * (x.data > 0.0))

    return _make(out_data, (x,), backward)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out_data = x.data.reshape(shape)

    def backward(g: Array) -> None:
        if x.requires_grad:
            x.accumulate(g.reshape(x.data.shape))

    return _make(out_data, (x,), backward)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not xs:
        raise ShapeError("concat of nothing")
    out_data = np.concatenate([t.data for t in xs], axis=axis)
    sizes = [t.data.shape[axis] for t in xs]
    splits = np.cumsum(sizes)[:-1]

    def backward(g: Array) -> None:
        for t, piece in zip(xs, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t.accumulate(piece)

    return _make(out_data, tuple(xs), backward)


def gather_rows(x: Tensor, idx: Array) -> Tensor:
    """Select rows (axis 0); gradient scatter-adds back."""
    indices = np.asarray(idx, dtype=np.int64)
    out_data = x.data[indices]

    def backward(g: Array) -> None:
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            np.add.at(gx, indices, g)
            x.accumulate(gx)

    return _make(out_data, (x,), backward)


def slice_axis1(x: Tensor, start: int, stop: int) -> Tensor:
    """x[:, start:stop, ...] for rank >= 2; gradient zero-pads."""
    out_data = x.data[:, start:stop]

    def backward(g: Array) -> None:
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[:, start:stop] = g
            x.accumulate(gx)

    return _make(out_data, (x,), backward)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    """x[start:stop] along axis 0; gradient zero-pads."""
    out_data = x.data[start:stop]

    def backward(g: Array) -> None:
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[start:stop] = g
            x.accumulate(gx)

    return _make(out_data, (x,), backward)


def tile_rows(x: Tensor, reps: int) -> Tensor:
    """Stack reps copies of a (m, D) tensor -> (reps*m, D); gradient sums copies."""
    m = x.data.shape[0]
    out_data = np.tile(x.data, (reps,) + (1,) * (x.data.ndim - 1))

    def backward(g: Array) -> None:
        if x.requires_grad:
            x.accumulate(g.reshape((reps, m) + x.data.shape[1:]).sum(axis=0))

    return _make(out_data, (x,), backward)


def repeat_rows(x: Tensor, reps: int) -> Tensor:
    """Repeat each row reps times -> (m*reps, D); gradient sums each row's copies."""
    m = x.data.shape[0]
    out_data = np.repeat(x.data, reps, axis=0)

    def backward(g: Array) -> None:
        if x.requires_grad:
            x.accumulate(g.reshape((m, reps) + x.data.shape[1:]).sum(axis=1))

    return _make(out_data, (x,), backward)


def mean_axis(x: Tensor, axis: int) -> Tensor:
    out_data = x.data.mean(axis=axis)
    size = x.data.shape[axis]

    def backward(g: Array) -> None:
        if x.requires_grad:
            expanded = np.expand_dims(g, axis=axis) / size
            x.accumulate(np.broadcast_to(expanded, x.data.shape))

    return _make(out_data, (x,), backward)


def mean_rows(x: Tensor) -> Tensor:
    """Mean over the leading axis (set aggregation)."""
    return mean_axis(x, 0)


def sum_all(x: Tensor) -> Tensor:
    out_data = np.asarray(x.data.sum())

    def backward(g: Array) -> None:
        if x.requires_grad:
            x.accumulate(np.broadcast_to(g, x.data.shape))

    return _make(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.shape[-1] != bd.shape[-2 if bd.ndim > 1 else 0]:
        raise ShapeError(f"matmul inner dims {ad.shape} @ {bd.shape}")
    out_data = ad @ bd

    def backward(g: Array) -> None:
        if a.requires_grad:
            if bd.ndim == 2:
                a.accumulate(g @ bd.T)
            else:
                a.accumulate(g @ bd.swapaxes(-1, -2))
        if b.requires_grad:
            if ad.ndim == 2 and bd.ndim == 2:
                b.accumulate(ad.T @ g)
            elif ad.ndim == 3 and bd.ndim == 2:
                b.accumulate(np.tensordot(ad, g, axes=([0, 1], [0, 1])))
            else:
                b.accumulate(ad.swapaxes(-1, -2) @ g)

    return _make(out_data, (a, b), backward)


def swap_last(x: Tensor) -> Tensor:
    out_data = x.data.swapaxes(-1, -2)

    def backward(g: Array) -> None:
        if x.requires_grad:
            x.accumulate(g.swapaxes(-1, -2))

    return _make(out_data, (x,), backward)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """x @ w + b with b broadcast over leading axes."""
    out = matmul(x, w)
    if b is None:
        return out
    if b.data.shape != (w.data.shape[-1],):
        raise ShapeError(f"bias shape {b.data.shape} for weight {w.data.shape}")
    out_data = out.data + b.data

    def backward(g: Array) -> None:
        if out.requires_grad:
            out.accumulate(g)
        if b.requires_grad:
            b.accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))

    return _make(out_data, (out, b), backward)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax along the last axis; each row sums to 1."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def backward(g: Array) -> None:
        if x.requires_grad:
            dot = (g * out_data).sum(axis=-1, keepdims=True)
            x.accumulate(out_data * (g - dot))

    return _make(out_data, (x,), backward)


_NEG = -1e30


def causal_bias(s: int) -> Array:
    """Additive mask forbidding attention to future positions."""
    return np.triu(np.full((s, s), _NEG), k=1)


def attention(q: Tensor, k: Tensor, v: Tensor, w: Optional[Tensor] = None,
              causal: bool = False) -> Tensor:
    """w . Softmax(q kT / sqrt(d_k)) v, optionally causally masked.

    Accepts rank-2 (s, D) or rank-3 (B, s, D) inputs; the trailing weight w
    right-multiplies the mixed values.
    """
    dk = k.data.shape[-1]
    if dk < 1:
        raise ShapeError("attention needs d_k > 0")
    scores = scale(matmul(q, swap_last(k)), 1.0 / np.sqrt(dk))
    if causal:
        sq, sk = scores.data.shape[-2], scores.data.shape[-1]
        if sq != sk:
            raise ShapeError("causal attention needs square scores")
        scores = add_const(scores, causal_bias(sq))
    mixed = matmul(softmax_rows(scores), v)
    if w is None:
        return mixed
    return matmul(mixed, w)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def huber(pred: Tensor, target: Array, delta: float = 1.0) -> Tensor:
    """Sum of elementwise Huber losses against a constant target."""
    t = np.asarray(target, dtype=np.float64)
    if t.shape != pred.data.shape:
        raise ShapeError(f"huber target {t.shape} vs pred {pred.data.shape}")
    err = pred.data - t
    small = np.abs(err) <= delta
    vals = np.where(small, 0.5 * err * err, delta * np.abs(err) - 0.5 * delta * delta)
    out_data = np.asarray(vals.sum())

    def backward(g: Array) -> None:
        if pred.requires_grad:
            pred.accumulate(g * np.where(small, err, delta * np.sign(err)))

    return _make(out_data, (pred,), backward)


def cross_entropy(logits: Tensor, targets: Array) -> Tensor:
    """Mean over rows of -log softmax(logits)[target]."""
    ids = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2 or ids.shape != (logits.data.shape[0],):
        raise ContractError(
            f"cross_entropy wants (R,V) logits and (R,) targets, got "
            f"{logits.data.shape} and {ids.shape}")
    rows = logits.data.shape[0]
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(rows), ids]
    out_data = np.asarray((logz - picked).mean())

    def backward(g: Array) -> None:
        if logits.requires_grad:
            soft = np.exp(shifted)
            soft /= soft.sum(axis=1, keepdims=True)
            soft[np.arange(rows), ids] -= 1.0
            logits.accumulate(g * soft / rows)

    return _make(out_data, (logits,), backward)


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Populate grads of every reachable tensor with d loss / d tensor."""
    if loss.data.shape not in ((), (1,)):
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[int, Array] = field(default_factory=dict)
    v: dict[int, Array] = field(default_factory=dict)


def adam_step(params: Sequence[Param], grads: Sequence[Optional[Array]],
              state: AdamState, lr: float) -> None:
    """One Adam update; frozen params and missing grads are untouched."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    correction = np.sqrt(1.0 - b2 ** state.t) / (1.0 - b1 ** state.t)
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None or not getattr(p, "trainable", True):
            continue
        m = state.m.get(i)
        if m is None:
            m = state.m[i] = np.zeros_like(p.data)
            state.v[i] = np.zeros_like(p.data)
        v = state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * correction * m / (np.sqrt(v) + state.eps)


# ---------------------------------------------------------------------------
# Checkpoint format: text header (names, shapes) + little-endian f64 payload.
# ---------------------------------------------------------------------------

_MAGIC = b"UNIMPCKPT1\n"


def save_checkpoint(path: str, arrays: dict[str, np.ndarray]) -> None:
    import os
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(f"{len(arrays)}\n".encode())
        for name, arr in arrays.items():
            dims = " ".join(str(s) for s in np.asarray(arr).shape)
            fh.write(f"{name}\t{dims}\n".encode())
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise StructureError(f"{path}: not a checkpoint file")
        count = int(fh.readline().decode().strip())
        specs: list[tuple[str, tuple[int, ...]]] = []
        for _ in range(count):
            line = fh.readline().decode().rstrip("\n")
            name, _, dims = line.partition("\t")
            shape = tuple(int(x) for x in dims.split()) if dims else ()
            specs.append((name, shape))
        out: dict[str, np.ndarray] = {}
        for name, shape in specs:
            size = int(np.prod(shape)) if shape else 1
            buf = fh.read(size * 8)
            if len(buf) != size * 8:
                raise StructureError(f"{path}: truncated payload for {name}")
            out[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return out
