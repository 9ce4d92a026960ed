"""Run configuration: a ``key = value`` text file.

Keys belong to the ``model``, ``train`` or ``bench`` section, either via a
``[section]`` header or a dotted ``section.key`` name.  ``#`` starts a
comment.  Unknown keys and malformed values are errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

from visiongru.backbone import ModelSpec, get_variant
from visiongru.train import HyperParams


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.replace("[", "").replace("]", "").split(",") if x.strip())


def _opt_float(s: str) -> float | None:
    return None if s.strip().lower() in ("", "auto", "none") else float(s)


def _opt_int(s: str) -> int | None:
    return None if s.strip().lower() in ("", "all", "none", "0") else int(s)


SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any]]] = {
    "model": {
        "variant": (str, "tiny-mini"),
        "D": (_opt_int, None),
        "depths": (_ints, None),
        "ffn_ratio": (float, None),
        "dw_kernel": (_opt_int, None),
        "ffn_enabled": (_bool, None),
        "num_classes": (_opt_int, None),
        "resolution": (_opt_int, None),
    },
    "train": {
        "data": (str, "data/cifar-10-batches-bin"),
        "n_train": (_opt_int, None),
        "n_val": (_opt_int, None),
        "out_dir": (str, "runs/default"),
        "seed": (int, 0),
        "precision": (str, "float32"),
        "lr": (_opt_float, None),
        "min_lr": (float, 0.0),
        "batch": (int, 128),
        "epochs": (int, 50),
        "warmup_epochs": (int, 5),
        "weight_decay": (float, 0.05),
        "beta2": (float, 0.999),
        "label_smoothing": (float, 0.1),
        "ema_decay": (float, 0.9999),
        "log_seconds": (_bool, True),
    },
    "bench": {
        "resolutions": (_ints, (224, 448)),
        "reps": (int, 10),
        "warmup": (int, 3),
        "batch": (int, 1),
        "scan_lengths": (_ints, (256, 1024, 4096, 16384, 65536)),
        "scan_lanes": (int, 64),
    },
}


@dataclass
class Config:
    values: dict[str, dict[str, Any]] = field(
        default_factory=lambda: {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    )
    source: str | None = None

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    def set(self, dotted: str, raw: str, where: str = "override") -> None:
        if "." not in dotted:
            raise ConfigError(f"{where}: key {dotted!r} needs a section (model./train./bench.)")
        section, key = dotted.split(".", 1)
        if section not in SCHEMA:
            raise ConfigError(f"{where}: unknown section {section!r}")
        if key not in SCHEMA[section]:
            raise ConfigError(f"{where}: unknown key {dotted!r}; valid keys: {', '.join(SCHEMA[section])}")
        parse = SCHEMA[section][key][0]
        try:
            self.values[section][key] = parse(raw.strip())
        except ValueError as e:
            raise ConfigError(f"{where}: bad value for {dotted}: {e}") from None

    def echo(self) -> list[str]:
        return [f"{s}.{k} = {_show(v)}" for s, keys in self.values.items() for k, v in keys.items()]

    def model_spec(self) -> ModelSpec:
        m = self.values["model"]
        try:
            spec = get_variant(m["variant"])
        except KeyError as e:
            raise ConfigError(str(e)) from None
        kw = {}
        for key, attr in (("D", "base_width"), ("depths", "depths"), ("ffn_ratio", "ffn_ratio"),
                          ("dw_kernel", "dw_kernel"), ("ffn_enabled", "ffn_enabled"), ("num_classes", "num_classes")):
            if m[key] is not None:
                kw[attr] = m[key]
        if m["resolution"] is not None:
            kw["input_resolution"] = (m["resolution"], m["resolution"])
        try:
            return spec.with_(**kw)
        except ValueError as e:
            raise ConfigError(f"invalid model config: {e}") from None

    def hyperparams(self) -> HyperParams:
        t = self.values["train"]
        return HyperParams(
            lr=t["lr"], min_lr=t["min_lr"], batch=t["batch"], epochs=t["epochs"], warmup_epochs=t["warmup_epochs"],
            weight_decay=t["weight_decay"], beta2=t["beta2"], label_smoothing=t["label_smoothing"],
            ema_decay=t["ema_decay"], log_seconds=t["log_seconds"],
        )


def _show(v) -> str:
    if isinstance(v, tuple):
        return ",".join(map(str, v))
    return "auto" if v is None else str(v)


def parse_config(text: str, source: str = "<config>") -> Config:
    cfg = Config(source=source)
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"{where}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if "." not in key and section is not None:
            key = f"{section}.{key}"
        cfg.set(key, value, where)
    return cfg


def load_config(path: str | Path | None, overrides: Iterable[tuple[str, str]] = ()) -> Config:
    if path is None:
        cfg = Config()
    else:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} not found")
        cfg = parse_config(p.read_text(), str(p))
    for key, value in overrides:
        cfg.set(key, value)
    return cfg
