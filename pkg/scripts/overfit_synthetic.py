"""Memorization run: train the D=32 model on 500 images at 64x64, twice with
the same seed, and report the first epoch with train top-1 >= 99% plus
whether the two metric logs are byte-identical.

    python scripts/overfit_synthetic.py [--data DIR] [--epochs N]

Without ``--data`` a synthetic CIFAR-format set is generated first.
"""

import argparse
import logging
import tempfile
import time
from pathlib import Path

from visiongru import tensor as T
from visiongru.config import load_config
from visiongru.data import load_splits, write_synthetic
from visiongru.train import train_loop

HERE = Path(__file__).resolve().parent


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", default=str(HERE.parent / "configs" / "overfit.cfg"))
    p.add_argument("--data")
    p.add_argument("--epochs", type=int)
    p.add_argument("--runs", type=int, default=2)
    p.add_argument("--out", default="runs/overfit")
    a = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    overrides = [("train.epochs", str(a.epochs))] if a.epochs else []
    cfg = load_config(a.config, overrides)
    T.set_precision(cfg["train"]["precision"])
    t = cfg["train"]
    data = a.data or write_synthetic(Path(tempfile.mkdtemp()) / "cifar", t["n_train"], t["n_val"], seed=0)
    train, val = load_splits(data, t["n_train"], t["n_val"])
    spec, hp = cfg.model_spec(), cfg.hyperparams()

    logs = []
    for run in range(a.runs):
        t0 = time.perf_counter()
        res = train_loop(spec, train, val, hp, t["seed"], Path(a.out) / f"run{run}")
        rows = [m for m in res.metrics if m["split"] == "train"]
        hit = next((m["epoch"] for m in rows if m["top1"] >= 0.99), None)
        print(f"run {run}: final train top1 {rows[-1]['top1']:.4f}, first epoch >= 99%: {hit}, "
              f"{time.perf_counter() - t0:.0f}s")
        logs.append(res.metrics_csv())
    if len(logs) > 1:
        print("metric logs byte-identical:", all(s == logs[0] for s in logs))


if __name__ == "__main__":
    main()
