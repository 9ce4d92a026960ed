"""VisionGRU backbone: stem, positional embedding, four 2DGRU stages joined
by patch-merging downsamples, global average pool and a linear head.

Parameters live in a flat ``dict[str, ndarray]``; :func:`param_shapes` is
the single source of truth for names and shapes, so counting, init and
checkpointing cannot disagree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from visiongru import autodiff as ad
from visiongru import tensor as T
from visiongru.twodgru import BlockSpec, apply_block, block_param_shapes, init_block_params

ALIGN = 32
WIDTH_MULTS = (1, 2, 4, 4)


def check_resolution(h: int, w: int) -> None:
    if h % ALIGN or w % ALIGN or h <= 0 or w <= 0:
        raise T.ShapeError(f"input resolution {h}x{w} must be a positive multiple of {ALIGN} on each side")


@dataclass(frozen=True)
class ModelSpec:
    depths: tuple[int, ...] = (2, 2, 8, 2)
    base_width: int = 112
    num_classes: int = 1000
    input_resolution: tuple[int, int] = (224, 224)
    variant: str = "tiny"
    ffn_ratio: float = 4
    dw_kernel: int = 3
    ffn_enabled: bool = True
    width_mults: tuple[int, ...] = WIDTH_MULTS
    in_chans: int = 3

    def __post_init__(self):
        object.__setattr__(self, "depths", tuple(int(d) for d in self.depths))
        object.__setattr__(self, "input_resolution", tuple(int(r) for r in self.input_resolution))
        object.__setattr__(self, "width_mults", tuple(int(m) for m in self.width_mults))
        if len(self.depths) != 4 or min(self.depths) < 0:
            raise ValueError(f"depths must be 4 non-negative block counts, got {self.depths}")
        if len(self.width_mults) != 4 or self.width_mults[0] != 1 or self.width_mults[-1] != 4:
            raise ValueError(f"stage widths must start at D and end at 4D, got multipliers {self.width_mults}")
        if self.base_width < 2 or self.base_width % 2:
            raise ValueError(f"base width must be even (stem halves it), got {self.base_width}")
        check_resolution(*self.input_resolution)

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(self.base_width * m for m in self.width_mults)

    def block_spec(self, stage: int) -> BlockSpec:
        return BlockSpec(self.widths[stage], self.dw_kernel, self.ffn_ratio, self.ffn_enabled)

    def with_(self, **kw) -> "ModelSpec":
        return replace(self, **kw)


# widths for tiny/base are the outcome of calibrate_width() against 30M / 86M
VARIANTS: dict[str, ModelSpec] = {
    "tiny": ModelSpec((2, 2, 8, 2), 112, 1000, (224, 224), "tiny"),
    "base": ModelSpec((2, 2, 15, 2), 160, 1000, (224, 224), "base"),
    "tiny-mini": ModelSpec((2, 2, 8, 2), 32, 10, (64, 64), "tiny-mini"),
    "micro": ModelSpec((1, 0, 0, 1), 8, 10, (64, 64), "micro"),
}

PARAM_TARGETS = {"tiny": 30_000_000, "base": 86_000_000}


def get_variant(name: str) -> ModelSpec:
    try:
        return VARIANTS[name]
    except KeyError:
        raise KeyError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}") from None


# --- parameters --------------------------------------------------------------


def param_shapes(spec: ModelSpec) -> dict[str, tuple[int, ...]]:
    d, half = spec.base_width, spec.base_width // 2
    h, w = spec.input_resolution
    shapes: dict[str, tuple[int, ...]] = {
        "stem.conv1.w": (3, 3, spec.in_chans, half),
        "stem.conv1.b": (half,),
        "stem.conv2.w": (3, 3, half, d),
        "stem.conv2.b": (d,),
        "pos_embed": (h // 4, w // 4, d),
    }
    widths = spec.widths
    for s in range(4):
        for i in range(spec.depths[s]):
            for name, shape in block_param_shapes(spec.block_spec(s)).items():
                shapes[f"stages.{s}.{i}.{name}"] = shape
        if s < 3:
            c, c2 = widths[s], widths[s + 1]
            shapes[f"down.{s}.norm.gamma"] = (4 * c,)
            shapes[f"down.{s}.norm.beta"] = (4 * c,)
            shapes[f"down.{s}.w"] = (4 * c, c2)
    shapes["head.w"] = (widths[-1], spec.num_classes)
    shapes["head.b"] = (spec.num_classes,)
    return shapes


def init_params(spec: ModelSpec, seed: int = 0, dtype=None) -> dict[str, np.ndarray]:
    dtype = dtype or T.get_dtype()
    ss = np.random.SeedSequence([seed, 0x5647])
    rng = np.random.default_rng(ss)
    shapes = param_shapes(spec)
    params: dict[str, np.ndarray] = {}
    for name in ("stem.conv1", "stem.conv2"):
        wshape = shapes[f"{name}.w"]
        bound = math.sqrt(1.0 / (wshape[0] * wshape[1] * wshape[2]))
        params[f"{name}.w"] = rng.uniform(-bound, bound, wshape).astype(dtype)
        params[f"{name}.b"] = np.zeros(shapes[f"{name}.b"], dtype)
    params["pos_embed"] = (0.02 * rng.standard_normal(shapes["pos_embed"])).astype(dtype)
    for s in range(4):
        for i in range(spec.depths[s]):
            for name, v in init_block_params(spec.block_spec(s), rng, dtype).items():
                params[f"stages.{s}.{i}.{name}"] = v
        if s < 3:
            wshape = shapes[f"down.{s}.w"]
            params[f"down.{s}.norm.gamma"] = np.ones(wshape[0], dtype)
            params[f"down.{s}.norm.beta"] = np.zeros(wshape[0], dtype)
            bound = math.sqrt(1.0 / wshape[0])
            params[f"down.{s}.w"] = rng.uniform(-bound, bound, wshape).astype(dtype)
    params["head.w"] = (0.02 * rng.standard_normal(shapes["head.w"])).astype(dtype)
    params["head.b"] = np.zeros(shapes["head.b"], dtype)
    return {k: params[k] for k in shapes}


def _group(name: str) -> str:
    parts = name.split(".")
    if parts[0] == "stages":
        return f"stage{int(parts[1]) + 1}"
    if parts[0] == "down":
        return f"downsample{int(parts[1]) + 1}"
    return parts[0]


def param_breakdown(spec: ModelSpec) -> dict[str, int]:
    """Parameter counts per module group, in model order."""
    out: dict[str, int] = {}
    for name, shape in param_shapes(spec).items():
        g = _group(name)
        out[g] = out.get(g, 0) + math.prod(shape)
    return out


def count_params(spec: ModelSpec) -> int:
    return sum(param_breakdown(spec).values())


def calibrate_width(
    depths, target: int, num_classes: int = 1000, resolution=(224, 224), candidates=range(16, 1025, 16)
) -> tuple[int, list[tuple[int, int]]]:
    """Pick the base width (a multiple of 16) whose count is closest to ``target``.

    Returns ``(D, [(candidate, count), ...])``; the list is the sweep log.
    """
    log = []
    for d in candidates:
        spec = ModelSpec(tuple(depths), d, num_classes, tuple(resolution), "calibration")
        log.append((d, count_params(spec)))
    best = min(log, key=lambda row: abs(row[1] - target))
    return best[0], log


# --- forward -----------------------------------------------------------------


def apply_stem(p: Mapping, image):
    x = ad.conv2d(image, p["stem.conv1.w"], p["stem.conv1.b"], stride=2)
    return ad.conv2d(ad.gelu(x), p["stem.conv2.w"], p["stem.conv2.b"], stride=2)


def apply_downsample(p: Mapping, s: int, x):
    y = ad.layer_norm(ad.patch_merge(x), p[f"down.{s}.norm.gamma"], p[f"down.{s}.norm.beta"])
    return ad.linear(y, p[f"down.{s}.w"])


def apply_model(spec: ModelSpec, p: Mapping, image):
    """Differentiable forward; returns (logits, [stage1..stage4 feature maps])."""
    image = ad.const(image)
    shape = T.Shape4.of(image.value)
    check_resolution(shape.h, shape.w)
    if shape.c != spec.in_chans:
        raise T.ShapeError(f"expected {spec.in_chans} input channels, got {shape.c}")
    x = apply_stem(p, image)
    x = ad.add(x, ad.resize_table(p["pos_embed"], shape.h // 4, shape.w // 4))
    feats = []
    for s in range(4):
        sub = spec.block_spec(s)
        for i in range(spec.depths[s]):
            prefix = f"stages.{s}.{i}."
            local = {k: p[prefix + k] for k in block_param_shapes(sub)}
            x = apply_block(sub, local, x)[0]
        feats.append(x)
        if s < 3:
            x = apply_downsample(p, s, x)
    logits = ad.linear(ad.mean_pool(x), p["head.w"], p["head.b"])
    return logits, feats


def stem(params: Mapping, image: np.ndarray) -> np.ndarray:
    shape = T.Shape4.of(image)
    check_resolution(shape.h, shape.w)
    return apply_stem(params, image).value


def downsample(params: Mapping, stage: int, x: np.ndarray) -> np.ndarray:
    return apply_downsample(params, stage, x).value


def forward(spec: ModelSpec, params: Mapping, image: np.ndarray, return_features: bool = False):
    """Logits (B, num_classes); with ``return_features`` also the four stage maps."""
    logits, feats = apply_model(spec, params, image)
    if return_features:
        return logits.value, [f.value for f in feats]
    return logits.value


# --- FLOPs -------------------------------------------------------------------
# Convention: one multiply-accumulate counts as one FLOP (the usual vision
# "GFLOPs"), every elementwise/reduction op as one FLOP per element.  Use
# macs_as=2 for the strict 2-FLOPs-per-MAC count.

LN_OPS = 5  # mean, centre, variance, scale, affine


@dataclass
class FlopReport:
    resolution: tuple[int, int]
    items: dict[str, float] = field(default_factory=dict)

    def add(self, key: str, value: float) -> None:
        self.items[key] = self.items.get(key, 0.0) + float(value)

    @property
    def total(self) -> float:
        return sum(self.items.values())

    @property
    def without_head(self) -> float:
        return self.total - self.items.get("head", 0.0)

    @property
    def gflops(self) -> float:
        return self.total / 1e9


def block_flops(spec: BlockSpec, tokens: int, macs_as: int = 1) -> dict[str, float]:
    n, c = tokens, spec.c
    out = {
        "norm": LN_OPS * n * c,
        "dwconv": macs_as * n * c * spec.dw_kernel**2 + n * c,
        "scan_linears": 0.0,
        "scan": 0.0,
        "residual": n * c * len(spec.paths),
    }
    for _ in spec.paths:
        out["scan_linears"] += macs_as * 2 * n * c * c + 2 * n * c
        # sigmoid, 1-z, z*h~, then one multiply-add per recurrence step
        out["scan"] += 3 * n * c + 2 * n * c
    if spec.ffn_enabled:
        hid = spec.hidden
        out["norm"] += LN_OPS * n * c
        out["ffn"] = macs_as * 2 * n * c * hid + n * (hid + c) + n * hid + n * c
    return out


def count_flops(spec: ModelSpec, resolution=None, macs_as: int = 1) -> FlopReport:
    """Analytic forward FLOPs for one image, itemized by component."""
    if resolution is None:
        resolution = spec.input_resolution
    if isinstance(resolution, int):
        resolution = (resolution, resolution)
    h, w = resolution
    check_resolution(h, w)
    rep = FlopReport((h, w))
    d, half = spec.base_width, spec.base_width // 2
    n2 = (h // 2) * (w // 2)
    n4 = (h // 4) * (w // 4)
    rep.add("stem", macs_as * n2 * 9 * spec.in_chans * half + n2 * half * 2)
    rep.add("stem", macs_as * n4 * 9 * half * d + n4 * d)
    rep.add("pos_embed", n4 * d)
    tokens = n4
    widths = spec.widths
    for s in range(4):
        sub = spec.block_spec(s)
        for _ in range(spec.depths[s]):
            for k, v in block_flops(sub, tokens, macs_as).items():
                rep.add(f"stage{s + 1}.{k}", v)
        if s < 3:
            tokens //= 4
            c4 = 4 * widths[s]
            rep.add(f"downsample{s + 1}", LN_OPS * tokens * c4 + macs_as * tokens * c4 * widths[s + 1])
    rep.add("head", tokens * widths[-1] + macs_as * widths[-1] * spec.num_classes + spec.num_classes)
    return rep


def baseline_attention_flops(embed_dim: int, depth: int, patch: int, resolution) -> float:
    """Quadratic comparator: per layer 4nd^2 + 2n^2 d + 8nd^2 with n = (res/patch)^2.

    Counts multiply-accumulates, like :func:`count_flops` by default.
    """
    if isinstance(resolution, int):
        resolution = (resolution, resolution)
    n = (resolution[0] // patch) * (resolution[1] // patch)
    d = embed_dim
    return float(depth * (4 * n * d * d + 2 * n * n * d + 8 * n * d * d))


DEIT_S = {"embed_dim": 384, "depth": 12, "patch": 16}
