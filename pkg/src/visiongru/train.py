"""Training: AdamW with warmup + cosine schedule, EMA shadow weights,
label-smoothed cross-entropy, deterministic epoch loop with checkpoints."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import time
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping

import numpy as np

from visiongru import autodiff as ad
from visiongru import checkpoint as ckpt
from visiongru import tensor as T
from visiongru.backbone import ModelSpec, apply_model, init_params, param_shapes
from visiongru.data import Dataset

log = logging.getLogger(__name__)

METRICS_HEADER = ("epoch", "split", "loss", "top1", "lr", "seconds")


class TrainingError(RuntimeError):
    pass


def rng_stream(seed: int, site: str, *keys: int) -> np.random.Generator:
    """Independent generator per (seed, use-site, keys); adding a site never
    shifts the draws of another."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(site.encode()), *keys]))


# --- schedule / optimizer / EMA ----------------------------------------------


def scaled_lr(batch: int, base: float = 1e-3) -> float:
    """Linear scaling rule: base * batch / 1024."""
    return base * batch / 1024


def cosine_lr(step: int, total: int, lr_max: float, lr_min: float = 0.0, warmup: int = 0) -> float:
    if warmup and step < warmup:
        return lr_max * (step + 1) / warmup
    span = max(total - warmup, 1)
    t = min(step - warmup, span)
    return lr_min + 0.5 * (lr_max - lr_min) * (1 + math.cos(math.pi * t / span))


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.05
    no_decay: frozenset[str] = frozenset()

    @classmethod
    def zeros(cls, params: Mapping[str, np.ndarray], **kw) -> "OptimizerState":
        return cls({k: np.zeros_like(v) for k, v in params.items()}, {k: np.zeros_like(v) for k, v in params.items()}, **kw)


def adamw_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: OptimizerState, lr: float | None = None):
    """One decoupled-weight-decay Adam update with bias correction.

    Returns new parameter arrays; ``state`` is advanced in place.
    """
    lr = state.lr if lr is None else lr
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1**state.step
    c2 = 1 - b2**state.step
    out = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise T.ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m[name] = b1 * state.m[name] + (1 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        wd = 0.0 if name in state.no_decay else state.weight_decay
        new = p * (1 - lr * wd) if wd else p
        out[name] = (new - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)
    return out


@dataclass
class EmaState:
    shadow: dict[str, np.ndarray]
    decay: float = 0.9999

    @classmethod
    def of(cls, params: Mapping[str, np.ndarray], decay: float = 0.9999) -> "EmaState":
        return cls({k: v.copy() for k, v in params.items()}, decay)


def ema_update(ema: EmaState, params: Mapping[str, np.ndarray]) -> EmaState:
    d = ema.decay
    for k, p in params.items():
        ema.shadow[k] = (d * ema.shadow[k] + (1 - d) * p).astype(p.dtype, copy=False)
    return ema


def no_decay_names(params: Mapping[str, np.ndarray]) -> frozenset[str]:
    """Biases, norm affines and the positional table are not decayed."""
    return frozenset(k for k, v in params.items() if v.ndim <= 1 or k == "pos_embed")


# --- steps -------------------------------------------------------------------


def loss_and_grads(spec: ModelSpec, params: Mapping[str, np.ndarray], x: np.ndarray, y: np.ndarray, smoothing: float = 0.0):
    with ad.Tape() as tape:
        nodes = {k: tape.param(v, k) for k, v in params.items()}
        logits, _ = apply_model(spec, nodes, x)
        loss = ad.cross_entropy(logits, y, smoothing)
    grads = ad.backward(tape, loss)
    return float(loss.value), logits.value, grads


def evaluate(spec: ModelSpec, params: Mapping[str, np.ndarray], x: np.ndarray, y: np.ndarray, batch: int = 128, smoothing: float = 0.0):
    """(mean loss, top-1 accuracy) over a dataset, fixed batch partition."""
    total_loss, correct = 0.0, 0
    for i in range(0, len(y), batch):
        logits, _ = apply_model(spec, params, x[i : i + batch])
        lg = logits.value
        yb = y[i : i + batch]
        total_loss += T.cross_entropy(lg, yb, smoothing) * len(yb)
        correct += int((lg.argmax(axis=-1) == yb).sum())
    return total_loss / len(y), correct / len(y)


# --- loop --------------------------------------------------------------------


@dataclass
class HyperParams:
    lr: float | None = None  # None -> scaled_lr(batch)
    min_lr: float = 0.0
    batch: int = 128
    epochs: int = 50
    warmup_epochs: int = 5
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    label_smoothing: float = 0.1
    ema_decay: float = 0.9999
    log_seconds: bool = True

    @property
    def peak_lr(self) -> float:
        return scaled_lr(self.batch) if self.lr is None else self.lr


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    opt: OptimizerState
    ema: EmaState
    metrics: list[dict] = field(default_factory=list)
    best_top1: float = -1.0
    best_epoch: int = -1
    out_dir: Path | None = None

    def metrics_csv(self) -> str:
        return format_metrics(self.metrics)


def format_metrics(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in rows:
        w.writerow([r["epoch"], r["split"], f"{r['loss']:.6f}", f"{r['top1']:.4f}", f"{r['lr']:.6e}", f"{r['seconds']:.3f}"])
    return buf.getvalue()


def config_hash(spec: ModelSpec, hp: HyperParams, seed: int) -> str:
    doc = json.dumps({"spec": asdict(spec), "hp": asdict(hp), "seed": seed}, sort_keys=True)
    return hashlib.sha256(doc.encode()).hexdigest()[:16]


def save_training_state(path, res: TrainResult, spec: ModelSpec, hp: HyperParams, seed: int, epoch: int) -> None:
    tensors = {}
    for k, v in res.params.items():
        tensors[f"param/{k}"] = v
        tensors[f"adam.m/{k}"] = res.opt.m[k]
        tensors[f"adam.v/{k}"] = res.opt.v[k]
        tensors[f"ema/{k}"] = res.ema.shadow[k]
    meta = {
        "epoch": epoch,
        "step": res.opt.step,
        "seed": seed,
        "config_hash": config_hash(spec, hp, seed),
        "spec": asdict(spec),
        "hp": asdict(hp),
        "ema_decay": res.ema.decay,
        "best_top1": res.best_top1,
        "best_epoch": res.best_epoch,
        "metrics": res.metrics,
        "precision": T.get_dtype().name,
    }
    ckpt.save(path, tensors, meta)


def load_training_state(path) -> tuple[TrainResult, ModelSpec, HyperParams, dict]:
    tensors, meta = ckpt.load(path)
    spec_doc = dict(meta["spec"])
    spec = ModelSpec(**spec_doc)
    hp = HyperParams(**{f.name: meta["hp"][f.name] for f in fields(HyperParams) if f.name in meta["hp"]})
    names = list(param_shapes(spec))
    params = {k: tensors[f"param/{k}"] for k in names}
    opt = OptimizerState(
        {k: tensors[f"adam.m/{k}"] for k in names},
        {k: tensors[f"adam.v/{k}"] for k in names},
        step=meta["step"],
        lr=hp.peak_lr,
        beta1=hp.beta1,
        beta2=hp.beta2,
        eps=hp.eps,
        weight_decay=hp.weight_decay,
        no_decay=no_decay_names(params),
    )
    ema = EmaState({k: tensors[f"ema/{k}"] for k in names}, meta["ema_decay"])
    res = TrainResult(params, opt, ema, list(meta["metrics"]), meta["best_top1"], meta["best_epoch"])
    return res, spec, hp, meta


def train_loop(
    spec: ModelSpec,
    train: Dataset,
    val: Dataset | None,
    hp: HyperParams,
    seed: int = 0,
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
    stop_after: int | None = None,
) -> TrainResult:
    """Deterministic training run.

    Writes ``metrics.csv``, ``last.vgru`` and ``best.vgru`` into ``out_dir``
    (when given).  ``resume`` continues from a ``last.vgru``; ``stop_after``
    ends the run early after that many epochs (for resume testing).
    """
    res_hw = spec.input_resolution
    x_train = train.normalized(res_hw[0])
    y_train = train.labels
    x_val = val.normalized(res_hw[0]) if val is not None else None
    steps_per_epoch = math.ceil(len(y_train) / hp.batch)
    total_steps = steps_per_epoch * hp.epochs
    warmup = steps_per_epoch * hp.warmup_epochs

    if resume is not None:
        res, _, _, meta = load_training_state(resume)
        start = meta["epoch"] + 1
    else:
        params = init_params(spec, seed)
        opt = OptimizerState.zeros(
            params,
            lr=hp.peak_lr,
            beta1=hp.beta1,
            beta2=hp.beta2,
            eps=hp.eps,
            weight_decay=hp.weight_decay,
            no_decay=no_decay_names(params),
        )
        res = TrainResult(params, opt, EmaState.of(params, hp.ema_decay))
        start = 0
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        res.out_dir = out

    for epoch in range(start, hp.epochs):
        t0 = time.perf_counter()
        order = rng_stream(seed, "shuffle", epoch).permutation(len(y_train))
        lr = hp.peak_lr
        for i in range(steps_per_epoch):
            idx = order[i * hp.batch : (i + 1) * hp.batch]
            lr = cosine_lr(res.opt.step, total_steps, hp.peak_lr, hp.min_lr, warmup)
            loss, _, grads = loss_and_grads(spec, res.params, x_train[idx], y_train[idx], hp.label_smoothing)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss} at epoch {epoch}, step {res.opt.step}")
            res.params = adamw_step(res.params, grads, res.opt, lr)
            ema_update(res.ema, res.params)
        seconds = time.perf_counter() - t0 if hp.log_seconds else 0.0
        tr_loss, tr_top1 = evaluate(spec, res.params, x_train, y_train, hp.batch, hp.label_smoothing)
        res.metrics.append(dict(epoch=epoch, split="train", loss=tr_loss, top1=tr_top1, lr=lr, seconds=seconds))
        score = tr_top1
        if x_val is not None:
            va_loss, va_top1 = evaluate(spec, res.params, x_val, val.labels, hp.batch, hp.label_smoothing)
            res.metrics.append(dict(epoch=epoch, split="val", loss=va_loss, top1=va_top1, lr=lr, seconds=seconds))
            score = va_top1
        log.info("epoch %d train loss %.4f top1 %.4f%s", epoch, tr_loss, tr_top1, f" val top1 {score:.4f}" if x_val is not None else "")
        improved = score > res.best_top1
        if improved:
            res.best_top1, res.best_epoch = score, epoch
        if out is not None:
            save_training_state(out / "last.vgru", res, spec, hp, seed, epoch)
            if improved:
                save_training_state(out / "best.vgru", res, spec, hp, seed, epoch)
            (out / "metrics.csv").write_text(res.metrics_csv())
        if stop_after is not None and epoch + 1 - start >= stop_after:
            break
    return res
