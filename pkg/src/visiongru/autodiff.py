"""Reverse-mode differentiation on a linear tape.

Operations append :class:`Node` records to the active :class:`Tape` in
execution order, which is already a topological order; :func:`backward`
walks it once in reverse.  Outside a tape, operations just compute values.
Each op's vector-Jacobian product is a closure over the saved activations.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from visiongru import tensor as T
from visiongru.mingru import MinGRUCell, mingru_backward_cached, mingru_forward_cached

_active: list["Tape"] = []


class TapeError(RuntimeError):
    pass


class Node:
    __slots__ = ("value", "parents", "vjp", "name", "requires_grad", "__weakref__")

    def __init__(self, value, parents=(), vjp=None, name=None, requires_grad=False):
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.name = name
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node({self.name or 'op'}, shape={self.value.shape})"


class Tape:
    """Records differentiable operations executed inside ``with tape:``."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}
        self.visits = 0

    def __enter__(self):
        _active.append(self)
        return self

    def __exit__(self, *exc):
        _active.pop()

    def param(self, value: np.ndarray, name: str) -> Node:
        node = Node(value, name=name, requires_grad=True)
        self.params[name] = node
        return node


def current_tape() -> Tape | None:
    return _active[-1] if _active else None


def const(x) -> Node:
    return x if isinstance(x, Node) else Node(np.asarray(x))


def _record(value, parents: Sequence[Node], vjp: Callable, name: str) -> Node:
    tape = current_tape()
    if tape is None or not any(p.requires_grad for p in parents):
        return Node(value, name=name)
    node = Node(value, tuple(parents), vjp, name, True)
    tape.nodes.append(node)
    return node


def backward(tape: Tape, output: Node, loss_grad=None) -> dict[str, np.ndarray]:
    """Accumulate d(output)/d(param) for every param registered on ``tape``.

    ``loss_grad`` seeds the output adjoint (defaults to ones).  Parameters
    the output does not depend on get zero gradients.
    """
    if output.vjp is None or not any(n is output for n in tape.nodes):
        raise TapeError("backward called without a recorded forward pass for this output")
    seed = np.ones_like(output.value) if loss_grad is None else np.asarray(loss_grad, dtype=output.value.dtype)
    grads: dict[int, np.ndarray] = {id(output): np.broadcast_to(seed, output.value.shape)}
    stop = tape.nodes.index(output)
    for node in reversed(tape.nodes[: stop + 1]):
        g = grads.pop(id(node), None)
        tape.visits += 1
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    out = {}
    for name, p in tape.params.items():
        g = grads.get(id(p))
        out[name] = np.zeros_like(p.value) if g is None else np.ascontiguousarray(g)
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# --- differentiable operations -----------------------------------------------


def add(*xs) -> Node:
    xs = [const(x) for x in xs]
    value = xs[0].value
    for x in xs[1:]:
        value = value + x.value
    shapes = [x.value.shape for x in xs]
    return _record(value, xs, lambda g: [_unbroadcast(g, s) for s in shapes], "add")


def linear(x, w, b=None) -> Node:
    x, w = const(x), const(w)
    parents = [x, w] if b is None else [x, w, const(b)]
    value = T.linear(x.value, w.value, None if b is None else parents[2].value)

    def vjp(g):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = x.value.reshape(-1, x.value.shape[-1])
        gx = (g2 @ w.value.T).reshape(x.value.shape)
        grads = [gx, x2.T @ g2]
        if b is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return _record(value, parents, vjp, "linear")


def layer_norm(x, gamma, beta) -> Node:
    x, gamma, beta = const(x), const(gamma), const(beta)
    value, xhat, rstd = T.layer_norm_fwd(x.value, gamma.value, beta.value)
    return _record(
        value, [x, gamma, beta], lambda g: T.layer_norm_bwd(g, xhat, rstd, gamma.value), "layer_norm"
    )


def gelu(x) -> Node:
    x = const(x)
    value, t = T.gelu_fwd(x.value)
    return _record(value, [x], lambda g: [T.gelu_bwd(g, x.value, t)], "gelu")


def depthwise_conv2d(x, k, bias) -> Node:
    x, k, bias = const(x), const(k), const(bias)
    value = T.depthwise_conv2d(x.value, k.value, bias.value)
    return _record(
        value, [x, k, bias], lambda g: T.depthwise_conv2d_bwd(g, x.value, k.value), "depthwise_conv2d"
    )


def conv2d(x, w, bias, stride=1) -> Node:
    x, w, bias = const(x), const(w), const(bias)
    value, cols = T.conv2d_fwd(x.value, w.value, bias.value, stride)
    return _record(value, [x, w, bias], lambda g: T.conv2d_bwd(g, x.value, w.value, cols, stride), "conv2d")


def mingru(x, w_z, b_z, w_h, b_h) -> Node:
    """Fused minGRU over a (T, B, C) sequence; see :mod:`visiongru.mingru`."""
    parents = [const(v) for v in (x, w_z, b_z, w_h, b_h)]
    cell = MinGRUCell(*(p.value for p in parents[1:]))
    value, cache = mingru_forward_cached(cell, parents[0].value)

    def vjp(g):
        gx, gp = mingru_backward_cached(cell, parents[0].value, g, cache)
        return [gx, gp["w_z"], gp["b_z"], gp["w_h"], gp["b_h"]]

    return _record(value, parents, vjp, "mingru")


def raster_flatten(x, reverse=False) -> Node:
    """(B, H, W, C) -> (H*W, B, C) in raster order (or its reversal)."""
    x = const(x)
    b, h, w, c = x.value.shape
    seq = x.value.reshape(b, h * w, c).transpose(1, 0, 2)
    if reverse:
        seq = seq[::-1]
    value = np.ascontiguousarray(seq)

    def vjp(g):
        if reverse:
            g = g[::-1]
        return [np.ascontiguousarray(g.transpose(1, 0, 2)).reshape(b, h, w, c)]

    return _record(value, [x], vjp, "raster_flatten")


def raster_unflatten(seq, h, w, reverse=False) -> Node:
    seq = const(seq)
    t, b, c = seq.value.shape
    s = seq.value[::-1] if reverse else seq.value
    value = np.ascontiguousarray(s.transpose(1, 0, 2)).reshape(b, h, w, c)

    def vjp(g):
        gs = g.reshape(b, h * w, c).transpose(1, 0, 2)
        if reverse:
            gs = gs[::-1]
        return [np.ascontiguousarray(gs)]

    return _record(value, [seq], vjp, "raster_unflatten")


def patch_merge(x) -> Node:
    """(B, H, W, C) -> (B, H/2, W/2, 4C); children of each 2x2 cell in
    raster order (0,0), (0,1), (1,0), (1,1)."""
    x = const(x)
    b, h, w, c = x.value.shape
    if h % 2 or w % 2:
        raise T.ShapeError(f"patch merge needs even spatial extents, got {h}x{w}")
    v = x.value.reshape(b, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 2, 4, 5)
    value = np.ascontiguousarray(v).reshape(b, h // 2, w // 2, 4 * c)

    def vjp(g):
        g = g.reshape(b, h // 2, w // 2, 2, 2, c).transpose(0, 1, 3, 2, 4, 5)
        return [np.ascontiguousarray(g).reshape(b, h, w, c)]

    return _record(value, [x], vjp, "patch_merge")


def resize_table(table, h, w) -> Node:
    """Bilinearly resample a (H0, W0, C) table to (h, w, C)."""
    table = const(table)
    h0, w0, _ = table.value.shape
    if (h0, w0) == (h, w):
        return table
    ry = T.interp_matrix(h, h0, table.value.dtype)
    rx = T.interp_matrix(w, w0, table.value.dtype)
    value = np.einsum("ih,hwc,jw->ijc", ry, table.value, rx)
    return _record(value, [table], lambda g: [np.einsum("ih,ijc,jw->hwc", ry, g, rx)], "resize_table")


def mean_pool(x) -> Node:
    x = const(x)
    b, h, w, c = x.value.shape
    return _record(
        T.avg_pool_global(x.value),
        [x],
        lambda g: [np.broadcast_to(g[:, None, None, :] / (h * w), x.value.shape)],
        "mean_pool",
    )


def cross_entropy(logits, labels: np.ndarray, smoothing: float = 0.0) -> Node:
    """Mean softmax cross-entropy against label-smoothed targets (scalar node)."""
    logits = const(logits)
    n, k = logits.value.shape
    q = T.smoothed_targets(labels, k, smoothing, logits.value.dtype)
    logp = T.log_softmax(logits.value)
    value = np.asarray(-(q * logp).sum(axis=-1).mean(), dtype=logits.value.dtype)
    return _record(value, [logits], lambda g: [g * (np.exp(logp) - q) / n], "cross_entropy")


def total(x) -> Node:
    x = const(x)
    return _record(np.asarray(x.value.sum()), [x], lambda g: [np.broadcast_to(g, x.value.shape)], "sum")
