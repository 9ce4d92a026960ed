"""Complexity benchmarks: resolution sweeps (analytic FLOPs + wall time)
against a quadratic self-attention comparator, and scan-kernel timings."""

from __future__ import annotations

import csv
import io
import math
import os
import platform
import time
import tracemalloc
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from visiongru import tensor as T
from visiongru.backbone import DEIT_S, ModelSpec, baseline_attention_flops, count_flops, forward, init_params
from visiongru.scan import ScanPair, default_workers, scan_parallel, scan_sequential

REPORT_COLUMNS = ("model", "resolution", "tokens", "gflops", "ms_mean", "ms_std", "workspace_bytes", "gflops_nohead", "status")
SCAN_COLUMNS = ("kernel", "length", "lanes", "ms_mean", "ms_std", "ns_per_step", "max_abs_diff")


def environment() -> dict[str, str]:
    return {
        "cores": str(os.cpu_count()),
        "workers": str(default_workers()),
        "precision": T.get_dtype().name,
        "numpy": np.__version__,
        "python": platform.python_version(),
        "flops_convention": "1 multiply-accumulate = 1 FLOP; elementwise ops 1 FLOP each",
    }


@dataclass
class BenchReport:
    columns: tuple[str, ...]
    rows: list[dict] = field(default_factory=list)
    meta: dict[str, str] = field(default_factory=environment)

    def to_csv(self) -> str:
        buf = io.StringIO()
        for k, v in self.meta.items():
            buf.write(f"# {k}: {v}\n")
        w = csv.DictWriter(buf, fieldnames=self.columns, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: _fmt(r.get(k)) for k in self.columns})
        return buf.getvalue()

    def to_gnuplot(self) -> str:
        """Whitespace-separated blocks, one per model, separated by two blank
        lines (gnuplot ``index`` order follows first appearance)."""
        key = self.columns[0]
        blocks = []
        for name in dict.fromkeys(r[key] for r in self.rows):
            lines = [f"# {key}={name}", f"# {' '.join(self.columns[1:])}"]
            lines += [" ".join(_gp(r.get(c)) for c in self.columns[1:]) for r in self.rows if r[key] == name]
            blocks.append("\n".join(lines))
        return "\n\n\n".join(blocks) + "\n"


def _gp(v) -> str:
    s = _fmt(v, nan="?")
    return f'"{s}"' if " " in s else s


def _fmt(v, nan=""):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return nan
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def time_call(fn: Callable[[], object], reps: int = 10, warmup: int = 3, groups: int = 5) -> tuple[float, float]:
    """(median of group means, std over all reps) in milliseconds."""
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    groups = max(1, min(groups, reps))
    means = [float(np.mean(c)) for c in np.array_split(np.asarray(times), groups)]
    return float(np.median(means)), float(np.std(times))


def peak_workspace(fn: Callable[[], object]) -> int:
    tracemalloc.start()
    try:
        fn()
        return tracemalloc.get_traced_memory()[1]
    finally:
        tracemalloc.stop()


# --- quadratic comparator -------------------------------------------------------


def vit_params(embed_dim: int = 384, depth: int = 12, patch: int = 16, seed: int = 0, dtype=None) -> dict:
    rng = np.random.default_rng(seed)
    dtype = dtype or T.get_dtype()
    d = embed_dim

    def w(*shape):
        return (rng.standard_normal(shape) * 0.02).astype(dtype)

    p = {"patch.w": w(patch * patch * 3, d), "patch": patch, "depth": depth}
    for i in range(depth):
        p[f"{i}.qkv"] = w(d, 3 * d)
        p[f"{i}.proj"] = w(d, d)
        p[f"{i}.fc1"] = w(d, 4 * d)
        p[f"{i}.fc2"] = w(4 * d, d)
    return p


def vit_forward(p: dict, image: np.ndarray, heads: int = 6) -> np.ndarray:
    """Plain pre-norm ViT encoder forward (timing comparator only)."""
    b, h, w, c = image.shape
    ps = p["patch"]
    x = image.reshape(b, h // ps, ps, w // ps, ps, c).transpose(0, 1, 3, 2, 4, 5).reshape(b, -1, ps * ps * c)
    x = x @ p["patch.w"]
    n, d = x.shape[1], x.shape[2]
    one, zero = np.ones(d, x.dtype), np.zeros(d, x.dtype)
    for i in range(p["depth"]):
        y = T.layer_norm(x, one, zero)
        qkv = (y @ p[f"{i}.qkv"]).reshape(b, n, 3, heads, d // heads).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        att = np.empty((b, heads, n, d // heads), dtype=x.dtype)
        for hd in range(heads):  # one head at a time keeps the n x n buffer small
            s = q[:, hd] @ k[:, hd].transpose(0, 2, 1) / math.sqrt(d // heads)
            s = np.exp(s - s.max(axis=-1, keepdims=True))
            att[:, hd] = (s / s.sum(axis=-1, keepdims=True)) @ v[:, hd]
        x = x + att.transpose(0, 2, 1, 3).reshape(b, n, d) @ p[f"{i}.proj"]
        y = T.layer_norm(x, one, zero)
        x = x + T.gelu(y @ p[f"{i}.fc1"]) @ p[f"{i}.fc2"]
    return x.mean(axis=1)


def vit_workspace_estimate(resolution: int, embed_dim: int = 384, patch: int = 16, batch: int = 1) -> int:
    n = (resolution // patch) ** 2
    itemsize = T.get_dtype().itemsize
    return int(batch * itemsize * (3 * n * n + 12 * n * embed_dim))


# --- sweeps ------------------------------------------------------------------


def run_resolution_sweep(
    spec: ModelSpec,
    resolutions: Sequence[int],
    reps: int = 10,
    warmup: int = 3,
    batch: int = 1,
    measure: bool = True,
    baseline: bool = True,
    max_workspace_bytes: int = 2 << 30,
    seed: int = 0,
) -> BenchReport:
    """Forward-only timing + analytic FLOPs per resolution, both models.

    Rows whose estimated workspace exceeds ``max_workspace_bytes`` keep
    their analytic columns and carry ``status='skipped: memory'``.
    """
    report = BenchReport(REPORT_COLUMNS)
    report.meta["batch"] = str(batch)
    params = init_params(spec, seed) if measure else None
    vit = vit_params(**DEIT_S, seed=seed) if measure and baseline else None
    rng = np.random.default_rng(seed)
    name = f"visiongru-{spec.variant}"
    for r in resolutions:
        fl = count_flops(spec, r)
        row = dict(model=name, resolution=r, tokens=(r // 4) ** 2, gflops=fl.total / 1e9,
                   gflops_nohead=fl.without_head / 1e9, ms_mean=float("nan"), ms_std=float("nan"),
                   workspace_bytes=None, status="analytic")
        if measure:
            image = rng.standard_normal((batch, r, r, spec.in_chans)).astype(T.get_dtype())
            fn = lambda: forward(spec, params, image)  # noqa: E731
            row["workspace_bytes"] = peak_workspace(fn)
            row["ms_mean"], row["ms_std"] = time_call(fn, reps, warmup)
            row["status"] = "measured"
        report.rows.append(row)
        if baseline:
            bf = baseline_attention_flops(DEIT_S["embed_dim"], DEIT_S["depth"], DEIT_S["patch"], r)
            brow = dict(model="attention-baseline", resolution=r, tokens=(r // DEIT_S["patch"]) ** 2,
                        gflops=bf / 1e9, gflops_nohead=bf / 1e9, ms_mean=float("nan"), ms_std=float("nan"),
                        workspace_bytes=None, status="analytic")
            if measure:
                if vit_workspace_estimate(r, batch=batch) > max_workspace_bytes:
                    brow["status"] = "skipped: memory"
                else:
                    image = rng.standard_normal((batch, r, r, 3)).astype(T.get_dtype())
                    fn = lambda: vit_forward(vit, image)  # noqa: E731
                    brow["workspace_bytes"] = peak_workspace(fn)
                    brow["ms_mean"], brow["ms_std"] = time_call(fn, reps, warmup)
                    brow["status"] = "measured"
            report.rows.append(brow)
    return report


def run_scan_microbench(
    lengths: Sequence[int] = (256, 1024, 4096, 16384, 65536),
    lanes: int = 64,
    reps: int = 10,
    warmup: int = 3,
    seed: int = 0,
    workers: int | None = None,
) -> BenchReport:
    """Sequential vs tree scan wall time; outputs are cross-checked per length."""
    report = BenchReport(SCAN_COLUMNS)
    report.meta["lanes"] = str(lanes)
    rng = np.random.default_rng(seed)
    dtype = T.get_dtype()
    for t in lengths:
        pairs = ScanPair(rng.uniform(0.01, 0.99, (t, lanes)).astype(dtype), rng.standard_normal((t, lanes)).astype(dtype))
        ref = scan_sequential(pairs)
        par = scan_parallel(pairs, workers=workers)
        diff = float(np.max(np.abs(ref - par)))
        for kernel, fn in (
            ("sequential", lambda: scan_sequential(pairs)),
            ("parallel", lambda: scan_parallel(pairs, workers=workers)),
        ):
            ms, sd = time_call(fn, reps, warmup)
            report.rows.append(dict(kernel=kernel, length=t, lanes=lanes, ms_mean=ms, ms_std=sd,
                                    ns_per_step=ms * 1e6 / t, max_abs_diff=diff))
    return report
