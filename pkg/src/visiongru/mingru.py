"""minGRU cell: gates and candidates depend only on the current input.

    z_t  = sigmoid(x_t W_z + b_z)
    h~_t = x_t W_h + b_h                 (no tanh)
    h_t  = (1 - z_t) * h_{t-1} + z_t * h~_t,   h_0 = 0

which is the affine scan with a_t = 1 - z_t and b_t = z_t * h~_t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from visiongru import tensor as T
from visiongru.scan import ScanPair, scan_parallel, scan_vjp


@dataclass
class MinGRUCell:
    w_z: np.ndarray  # (C_in, C_h)
    b_z: np.ndarray  # (C_h,)
    w_h: np.ndarray  # (C_in, C_h)
    b_h: np.ndarray  # (C_h,)

    def __post_init__(self):
        if self.w_z.shape != self.w_h.shape or self.b_z.shape != self.b_h.shape:
            raise T.ShapeError(
                f"gate and candidate maps disagree: {self.w_z.shape}/{self.b_z.shape} vs {self.w_h.shape}/{self.b_h.shape}"
            )
        if self.b_z.shape != (self.w_z.shape[1],):
            raise T.ShapeError(f"bias {self.b_z.shape} does not match output width {self.w_z.shape[1]}")

    @classmethod
    def init(cls, c_in: int, c_h: int | None = None, rng: np.random.Generator | None = None, dtype=None):
        """Uniform(+-sqrt(1/c_in)) weights, zero biases."""
        c_h = c_in if c_h is None else c_h
        rng = rng or np.random.default_rng(0)
        dtype = dtype or T.get_dtype()
        bound = math.sqrt(1.0 / c_in)
        return cls(
            rng.uniform(-bound, bound, (c_in, c_h)).astype(dtype),
            np.zeros(c_h, dtype),
            rng.uniform(-bound, bound, (c_in, c_h)).astype(dtype),
            np.zeros(c_h, dtype),
        )

    @classmethod
    def zeros(cls, c_in: int, c_h: int | None = None, dtype=None):
        c_h = c_in if c_h is None else c_h
        dtype = dtype or T.get_dtype()
        return cls(np.zeros((c_in, c_h), dtype), np.zeros(c_h, dtype), np.zeros((c_in, c_h), dtype), np.zeros(c_h, dtype))

    @property
    def c_in(self) -> int:
        return self.w_z.shape[0]

    @property
    def c_h(self) -> int:
        return self.w_z.shape[1]

    @property
    def num_params(self) -> int:
        return 2 * (self.c_in * self.c_h + self.c_h)

    def params(self) -> dict[str, np.ndarray]:
        return {"w_z": self.w_z, "b_z": self.b_z, "w_h": self.w_h, "b_h": self.b_h}


def gates(cell: MinGRUCell, x: np.ndarray):
    """Update gate z and candidate h~ for every step of ``x`` (..., C_in)."""
    return T.sigmoid(T.linear(x, cell.w_z, cell.b_z)), T.linear(x, cell.w_h, cell.b_h)


def mingru_forward_cached(cell: MinGRUCell, x: np.ndarray):
    if x.ndim != 3 or x.shape[-1] != cell.c_in:
        raise T.ShapeError(f"minGRU expects (T, B, {cell.c_in}) input, got {x.shape}")
    t, b, _ = x.shape
    z, cand = gates(cell, x)
    pairs = ScanPair((1.0 - z).reshape(t, -1), (z * cand).reshape(t, -1))
    h = scan_parallel(pairs)
    return h.reshape(t, b, cell.c_h), (z, cand, pairs, h)


def mingru_forward(cell: MinGRUCell, x: np.ndarray) -> np.ndarray:
    """Hidden-state sequence (T, B, C_h) for input (T, B, C_in), zero initial state."""
    return mingru_forward_cached(cell, x)[0]


def mingru_backward_cached(cell, x, grad_out, cache):
    z, cand, pairs, h = cache
    t, b, _ = x.shape
    ga, gb, _ = scan_vjp(pairs, None, h, grad_out.reshape(t, -1))
    ga = ga.reshape(z.shape)
    gb = gb.reshape(z.shape)
    g_cand = gb * z
    g_zpre = (gb * cand - ga) * z * (1.0 - z)
    x2 = x.reshape(-1, cell.c_in)
    gz2 = g_zpre.reshape(-1, cell.c_h)
    gh2 = g_cand.reshape(-1, cell.c_h)
    grads = {
        "w_z": x2.T @ gz2,
        "b_z": gz2.sum(axis=0),
        "w_h": x2.T @ gh2,
        "b_h": gh2.sum(axis=0),
    }
    gx = (gz2 @ cell.w_z.T + gh2 @ cell.w_h.T).reshape(x.shape)
    return gx, grads


def mingru_backward(cell: MinGRUCell, x: np.ndarray, grad_out: np.ndarray):
    """Exact gradients of ``sum(grad_out * mingru_forward(cell, x))``.

    Returns ``(grad_x, {"w_z", "b_z", "w_h", "b_h"})``.
    """
    _, cache = mingru_forward_cached(cell, x)
    return mingru_backward_cached(cell, x, grad_out, cache)
