"""Oracle suites behind ``vgru verify``.

Each suite compares a production code path against an independent
evaluation and reports its worst error.  Reports contain no timings, so the
same seed always produces the same bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from visiongru import autodiff as ad
from visiongru import tensor as T
from visiongru.backbone import ModelSpec, apply_model, get_variant, init_params
from visiongru.scan import ScanPair, scan_parallel, scan_sequential
from visiongru.twodgru import BlockSpec, TwoDGRUBlock, block_core, closed_form_oracle

SCAN_LENGTHS = (1, 2, 3, 17, 256, 4096)
TOL = {
    "scan": {"float64": 1e-10, "float32": 1e-5},
    "closed_form": {"float64": 1e-10, "float32": 1e-4},
    "gradients": {"float64": 1e-4, "float32": 1e-4},
}


@dataclass
class SuiteResult:
    name: str
    cases: int
    max_error: float
    tolerance: float
    failure: dict | None = field(default=None, repr=False)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def rel_error(got: np.ndarray, want: np.ndarray) -> float:
    """max |got - want| scaled by max |want| (floored at 1)."""
    return float(np.max(np.abs(got - want)) / max(1.0, float(np.max(np.abs(want)))))


def scan_suite(rng: np.random.Generator, cases: int = 240, precision: str = "float64") -> SuiteResult:
    dtype = np.dtype(precision)
    worst, failure = 0.0, None
    tol = TOL["scan"][precision]
    for i in range(cases):
        t = SCAN_LENGTHS[i % len(SCAN_LENGTHS)]
        lanes = int(rng.integers(1, 9))
        pairs = ScanPair(rng.uniform(0, 1, (t, lanes)).astype(dtype), rng.standard_normal((t, lanes)).astype(dtype))
        h0 = rng.standard_normal(lanes).astype(dtype) if i % 2 else None
        err = rel_error(scan_parallel(pairs, h0), scan_sequential(pairs, h0))
        if err > worst:
            worst = err
            if err > tol and failure is None:
                failure = {"a": pairs.a, "b": pairs.b, "h0": np.zeros(lanes) if h0 is None else h0}
    return SuiteResult("scan_equivalence", cases, worst, tol, failure)


def random_block(rng: np.random.Generator, c: int, dtype) -> TwoDGRUBlock:
    """Block with every parameter randomized (biases included) to exercise all terms."""
    block = TwoDGRUBlock.init(BlockSpec(c), rng, dtype)
    for k, v in block.params.items():
        block.params[k] = (v + 0.3 * rng.standard_normal(v.shape)).astype(dtype)
    return block


def closed_form_suite(rng: np.random.Generator, cases: int = 60, precision: str = "float64") -> SuiteResult:
    dtype = np.dtype(precision)
    worst, failure = 0.0, None
    tol = TOL["closed_form"][precision]
    with T.precision(precision):
        for _ in range(cases):
            h, w = int(rng.integers(1, 5)), int(rng.integers(1, 6))
            c, b = int(rng.integers(1, 5)), int(rng.integers(1, 3))
            block = random_block(rng, c, dtype)
            x = rng.standard_normal((b, h, w, c)).astype(dtype)
            err = rel_error(block_core(block, x), closed_form_oracle(block, x))
            if err > worst:
                worst = err
                if err > tol and failure is None:
                    failure = {"x": x, **{f"param.{k}": v for k, v in block.params.items()}}
    return SuiteResult("closed_form_2dgru", cases, worst, tol, failure)


def param_class(name: str) -> str:
    parts = name.split(".")
    if parts[0] in ("stem", "pos_embed", "head"):
        return parts[0]
    if parts[0] == "down":
        return "downsample.norm" if parts[2] == "norm" else "downsample.linear"
    local = parts[3]
    if local in ("forward", "backward"):
        kind = "gate" if parts[4] in ("w_z", "b_z") else "candidate"
        return f"{kind}.{local}"
    return {"norm1": "norm", "norm2": "norm", "dw": "dwconv", "ffn": "ffn"}[local]


def model_loss(spec: ModelSpec, params, images, labels, smoothing=0.1) -> float:
    logits, _ = apply_model(spec, params, images)
    return float(ad.cross_entropy(logits, labels, smoothing).value)


def finite_difference_check(spec, params, images, labels, rng, entries: int = 3, step: float = 1e-5):
    """Relative error per parameter tensor between tape gradients and
    central differences on ``entries`` random coordinates."""
    with ad.Tape() as tape:
        nodes = {k: tape.param(v, k) for k, v in params.items()}
        logits, _ = apply_model(spec, nodes, images)
        loss = ad.cross_entropy(logits, labels, 0.1)
    grads = ad.backward(tape, loss)
    errors = {}
    for name, value in params.items():
        flat_idx = rng.choice(value.size, size=min(entries, value.size), replace=False)
        fd, an = [], []
        for fi in flat_idx:
            idx = np.unravel_index(fi, value.shape)
            probe = dict(params)
            bumped = value.copy()
            bumped[idx] += step
            probe[name] = bumped
            up = model_loss(spec, probe, images, labels)
            bumped[idx] -= 2 * step
            down = model_loss(spec, probe, images, labels)
            fd.append((up - down) / (2 * step))
            an.append(grads[name][idx])
        fd, an = np.array(fd), np.array(an)
        errors[name] = float(np.linalg.norm(fd - an) / max(np.linalg.norm(fd), np.linalg.norm(an), 1e-8))
    return errors


def mini_model(rng: np.random.Generator) -> tuple[ModelSpec, dict, np.ndarray, np.ndarray]:
    """Two-block model touching every parameter class, with perturbed params."""
    spec = get_variant("micro")
    params = init_params(spec, int(rng.integers(1 << 30)), np.float64)
    for k, v in params.items():
        params[k] = v + 0.1 * rng.standard_normal(v.shape)
    images = rng.standard_normal((2,) + spec.input_resolution + (3,))
    labels = rng.integers(0, spec.num_classes, 2)
    return spec, params, images, labels


def gradient_suite(rng: np.random.Generator, models: int = 2, entries: int = 3) -> SuiteResult:
    worst, failure, cases = 0.0, None, 0
    tol = TOL["gradients"]["float64"]
    with T.precision("float64"):
        for _ in range(models):
            spec, params, images, labels = mini_model(rng)
            errs = finite_difference_check(spec, params, images, labels, rng, entries)
            cases += len(errs)
            name, err = max(errs.items(), key=lambda kv: kv[1])
            if err > worst:
                worst = err
                if err > tol and failure is None:
                    failure = {"images": images, "labels": labels, **{f"param.{k}": v for k, v in params.items()}}
    return SuiteResult("finite_difference_gradients", cases, worst, tol, failure)


def run_all(precision: str = "float64", seed: int = 0, quick: bool = False) -> list[SuiteResult]:
    rng = np.random.default_rng(seed)
    return [
        scan_suite(rng, 60 if quick else 240, precision),
        closed_form_suite(rng, 20 if quick else 60, precision),
        gradient_suite(rng, 1 if quick else 2),
    ]


def format_report(results: list[SuiteResult], precision: str, seed: int) -> str:
    lines = [f"verify precision={precision} seed={seed}", f"{'suite':<30}{'cases':>7}{'max_error':>14}{'tolerance':>12}  status"]
    for r in results:
        lines.append(f"{r.name:<30}{r.cases:>7}{r.max_error:>14.3e}{r.tolerance:>12.1e}  {'PASS' if r.passed else 'FAIL'}")
    lines.append("ALL PASS" if all(r.passed for r in results) else "FAILED")
    return "\n".join(lines) + "\n"


def write_repro(result: SuiteResult, directory: str | Path, seed: int) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    path = d / f"repro-{result.name}-seed{seed}.npz"
    np.savez(path, **(result.failure or {}))
    return path
