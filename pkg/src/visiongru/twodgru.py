"""2DGRU block: bidirectional raster-scan minGRUs over a feature map.

    core = f_in + sum_p unflatten_p(minGRU_p(flatten_p(dwconv(norm(f_in)))))
    out  = core + FFN(norm2(core))          (FFN sub-layer can be disabled)

:func:`closed_form_oracle` evaluates ``core`` by explicit double sums over
the scan positions instead of running any recurrence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from visiongru import autodiff as ad
from visiongru import tensor as T
from visiongru.mingru import MinGRUCell, gates

PATHS = ("forward", "backward")


@dataclass(frozen=True)
class BlockSpec:
    c: int
    dw_kernel: int = 3
    ffn_ratio: float = 4
    ffn_enabled: bool = True
    paths: tuple[str, ...] = PATHS

    def __post_init__(self):
        if self.dw_kernel % 2 == 0:
            raise ValueError(f"dw_kernel must be odd, got {self.dw_kernel}")
        if self.ffn_ratio < 1:
            raise ValueError(f"ffn_ratio must be >= 1, got {self.ffn_ratio}")
        if not set(self.paths) <= set(PATHS):
            raise ValueError(f"unknown scan path in {self.paths}")

    @property
    def hidden(self) -> int:
        return int(round(self.c * self.ffn_ratio))


def block_param_shapes(spec: BlockSpec) -> dict[str, tuple[int, ...]]:
    c, k = spec.c, spec.dw_kernel
    shapes = {"norm1.gamma": (c,), "norm1.beta": (c,), "dw.k": (k, k, c), "dw.b": (c,)}
    for p in spec.paths:
        shapes.update({f"{p}.w_z": (c, c), f"{p}.b_z": (c,), f"{p}.w_h": (c, c), f"{p}.b_h": (c,)})
    if spec.ffn_enabled:
        hid = spec.hidden
        shapes.update(
            {
                "norm2.gamma": (c,),
                "norm2.beta": (c,),
                "ffn.w1": (c, hid),
                "ffn.b1": (hid,),
                "ffn.w2": (hid, c),
                "ffn.b2": (c,),
            }
        )
    return shapes


def init_block_params(spec: BlockSpec, rng: np.random.Generator, dtype=None) -> dict[str, np.ndarray]:
    dtype = dtype or T.get_dtype()
    out = {}
    for name, shape in block_param_shapes(spec).items():
        leaf = name.rsplit(".", 1)[1]
        if leaf == "gamma":
            v = np.ones(shape)
        elif leaf in ("beta", "b", "b_z", "b_h", "b1", "b2"):
            v = np.zeros(shape)
        elif leaf == "k":
            bound = 1.0 / spec.dw_kernel
            v = rng.uniform(-bound, bound, shape)
        else:
            bound = math.sqrt(1.0 / shape[0])
            v = rng.uniform(-bound, bound, shape)
        out[name] = v.astype(dtype)
    return out


@dataclass
class TwoDGRUBlock:
    spec: BlockSpec
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        want = block_param_shapes(self.spec)
        got = {k: tuple(v.shape) for k, v in self.params.items()}
        if got != want:
            raise T.ShapeError(f"block parameters do not match spec: missing/extra/mis-shaped {set(want.items()) ^ set(got.items())}")

    @classmethod
    def init(cls, spec: BlockSpec, rng: np.random.Generator | None = None, dtype=None):
        return cls(spec, init_block_params(spec, rng or np.random.default_rng(0), dtype))

    def cell(self, path: str) -> MinGRUCell:
        p = self.params
        return MinGRUCell(p[f"{path}.w_z"], p[f"{path}.b_z"], p[f"{path}.w_h"], p[f"{path}.b_h"])


# --- raster order ------------------------------------------------------------


def raster_flatten(x: np.ndarray, direction: str = "forward") -> np.ndarray:
    """(B, H, W, C) -> (H*W, B, C); token L(i, j) = i*W + j, reversed for 'backward'."""
    return ad.raster_flatten(x, reverse=_reverse(direction)).value


def raster_unflatten(seq: np.ndarray, h: int, w: int, direction: str = "forward") -> np.ndarray:
    return ad.raster_unflatten(seq, h, w, reverse=_reverse(direction)).value


def _reverse(direction: str) -> bool:
    if direction not in PATHS:
        raise ValueError(f"direction must be one of {PATHS}, got {direction!r}")
    return direction == "backward"


# --- block -------------------------------------------------------------------


def apply_block(spec: BlockSpec, p: Mapping, f_in):
    """Differentiable block; ``p`` maps local names to arrays or tape nodes.

    Returns (out, core) nodes, ``core`` being the pre-FFN residual sum.
    """
    f_in = ad.const(f_in)
    b, h, w, c = T.Shape4.of(f_in.value)
    if c != spec.c:
        raise T.ShapeError(f"block expects {spec.c} channels, got input {f_in.value.shape}")
    f_norm = ad.layer_norm(f_in, p["norm1.gamma"], p["norm1.beta"])
    f_conv = ad.depthwise_conv2d(f_norm, p["dw.k"], p["dw.b"])
    terms = [f_in]
    for path in spec.paths:
        rev = path == "backward"
        seq = ad.raster_flatten(f_conv, reverse=rev)
        hs = ad.mingru(seq, p[f"{path}.w_z"], p[f"{path}.b_z"], p[f"{path}.w_h"], p[f"{path}.b_h"])
        terms.append(ad.raster_unflatten(hs, h, w, reverse=rev))
    core = ad.add(*terms)
    if not spec.ffn_enabled:
        return core, core
    y = ad.layer_norm(core, p["norm2.gamma"], p["norm2.beta"])
    y = ad.linear(ad.gelu(ad.linear(y, p["ffn.w1"], p["ffn.b1"])), p["ffn.w2"], p["ffn.b2"])
    return ad.add(core, y), core


def block_forward(block: TwoDGRUBlock, f_in: np.ndarray) -> np.ndarray:
    return apply_block(block.spec, block.params, f_in)[0].value


def block_core(block: TwoDGRUBlock, f_in: np.ndarray) -> np.ndarray:
    """Pre-FFN output: residual plus both directional scans."""
    return apply_block(block.spec, block.params, f_in)[1].value


def closed_form_oracle(block: TwoDGRUBlock, f_in: np.ndarray) -> np.ndarray:
    """Direct double-sum evaluation of the pre-FFN block output.

    With zero initial state, position L receives from the forward scan
        sum_{m <= L} prod_{k=m+1}^{L} (1 - z_k) * z_m * h~_m
    and from the backward scan
        sum_{m >= L} prod_{k=L}^{m-1} (1 - z_k) * z_m * h~_m,
    with every index in forward raster order.  Costs O((H*W)^2); small inputs only.
    """
    b, h, w, c = T.Shape4.of(f_in)
    p = block.params
    f_conv = T.depthwise_conv2d(T.layer_norm(f_in, p["norm1.gamma"], p["norm1.beta"]), p["dw.k"], p["dw.b"])
    tokens = f_conv.reshape(b, h * w, c)
    m_len = h * w
    out = f_in.reshape(b, m_len, c).copy()
    for path in block.spec.paths:
        z, cand = gates(block.cell(path), tokens)
        keep = 1.0 - z
        for pos in range(m_len):
            if path == "forward":
                ms = range(0, pos + 1)
            else:
                ms = range(pos, m_len)
            for m in ms:
                term = z[:, m] * cand[:, m]
                ks = range(m + 1, pos + 1) if path == "forward" else range(pos, m)
                for k in ks:
                    term = term * keep[:, k]
                out[:, pos] += term
    return out.reshape(b, h, w, c)
