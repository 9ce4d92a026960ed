"""``vgru`` command line: verify | train | eval | params | flops | bench."""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from pathlib import Path

from visiongru import tensor as T
from visiongru.backbone import (
    DEIT_S,
    PARAM_TARGETS,
    VARIANTS,
    baseline_attention_flops,
    calibrate_width,
    count_flops,
    count_params,
    get_variant,
    init_params,
    param_breakdown,
)
from visiongru.config import ConfigError, load_config
from visiongru.data import DataError, load_splits

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_VERIFY = 0, 3, 4, 5

log = logging.getLogger("vgru")


def split_overrides(argv: list[str]) -> tuple[list[str], list[tuple[str, str]]]:
    """Pull ``--section.key value`` / ``--section.key=value`` pairs out of argv."""
    rest, pairs, i = [], [], 0
    while i < len(argv):
        tok = argv[i]
        name = tok[2:].split("=", 1)[0]
        if not (tok.startswith("--") and "." in name):
            rest.append(tok)
            i += 1
            continue
        if "=" in tok:
            pairs.append(tuple(tok[2:].split("=", 1)))
            i += 1
        else:
            if i + 1 >= len(argv):
                raise ConfigError(f"override {tok} needs a value")
            pairs.append((name, argv[i + 1]))
            i += 2
    return rest, pairs


def cmd_verify(args) -> int:
    from visiongru.scan import inject_fault
    from visiongru.verify import format_report, run_all, write_repro

    ctx = inject_fault("compose_sign") if args.fault == "compose-sign" else contextlib.nullcontext()
    with ctx:
        results = run_all(args.precision, args.seed, args.quick)
    sys.stdout.write(format_report(results, args.precision, args.seed))
    failed = [r for r in results if not r.passed]
    for r in failed:
        path = write_repro(r, args.repro_dir, args.seed)
        print(f"reproduction case for {r.name}: {path}")
    return EXIT_VERIFY if failed else EXIT_OK


def _load(args, overrides):
    cfg = load_config(args.config, overrides)
    for line in cfg.echo():
        log.info("config %s", line)
    T.set_precision(cfg["train"]["precision"])
    return cfg


def cmd_train(args, overrides) -> int:
    from visiongru.train import train_loop

    cfg = _load(args, overrides)
    spec, hp, t = cfg.model_spec(), cfg.hyperparams(), cfg["train"]
    train, val = load_splits(t["data"], t["n_train"], t["n_val"])
    log.info("training %s (D=%d, %d params) on %d images", spec.variant, spec.base_width, count_params(spec), len(train))
    res = train_loop(spec, train, val, hp, t["seed"], t["out_dir"], resume=args.resume)
    last = res.metrics[-1]
    print(f"best top1 {res.best_top1:.4f} at epoch {res.best_epoch}; last {last['split']} top1 {last['top1']:.4f}")
    print(f"outputs in {res.out_dir}")
    return EXIT_OK


def cmd_eval(args, overrides) -> int:
    from visiongru.train import evaluate, load_training_state

    cfg = _load(args, overrides)
    spec, batch, t = cfg.model_spec(), cfg.hyperparams().batch, cfg["train"]
    train, val = load_splits(t["data"], t["n_train"], t["n_val"])
    if args.checkpoint:
        res, spec, hp, meta = load_training_state(args.checkpoint)
        params = res.ema.shadow if args.ema else res.params
        batch = hp.batch
        log.info("checkpoint epoch %d (config %s)", meta["epoch"], meta["config_hash"])
    else:
        params = init_params(spec, t["seed"])
        log.info("no checkpoint given: evaluating an untrained model")
    data = val if (val is not None and args.split == "val") else train
    split = "val" if data is val else "train"
    loss, top1 = evaluate(spec, params, data.normalized(spec.input_resolution[0]), data.labels, batch)
    print(f"split={split} n={len(data)} loss={loss:.6f} top1={top1:.4f}{' (ema)' if args.ema else ''}")
    return EXIT_OK


def cmd_params(args) -> int:
    spec = get_variant(args.variant)
    if args.calibrate and args.variant in PARAM_TARGETS:
        d, sweep = calibrate_width(spec.depths, PARAM_TARGETS[args.variant], spec.num_classes, spec.input_resolution)
        for cand, n in sweep:
            if abs(cand - d) <= 64:
                print(f"calibration D={cand:<5d} params={n:>12,d}{'  <- chosen' if cand == d else ''}")
        spec = spec.with_(base_width=d)
    print(f"variant {spec.variant}: D={spec.base_width} widths={spec.widths} depths={spec.depths}")
    for group, n in param_breakdown(spec).items():
        print(f"  {group:<14}{n:>14,d}")
    total = count_params(spec)
    print(f"  {'total':<14}{total:>14,d}")
    if args.variant in PARAM_TARGETS:
        target = PARAM_TARGETS[args.variant]
        print(f"  target {target:,d} ({(total - target) / target:+.1%})")
    return EXIT_OK


def cmd_flops(args) -> int:
    spec = get_variant(args.variant)
    rep = count_flops(spec, args.resolution, args.macs_as)
    print(f"# {spec.variant} @ {args.resolution}x{args.resolution}; 1 MAC = {args.macs_as} FLOP(s), elementwise 1 FLOP")
    for k, v in rep.items.items():
        print(f"  {k:<22}{v / 1e9:>12.4f} GFLOPs")
    print(f"  {'total':<22}{rep.total / 1e9:>12.4f} GFLOPs")
    print(f"  {'total (no head)':<22}{rep.without_head / 1e9:>12.4f} GFLOPs")
    base = baseline_attention_flops(DEIT_S["embed_dim"], DEIT_S["depth"], DEIT_S["patch"], args.resolution)
    print(f"  {'attention baseline':<22}{base * args.macs_as / 1e9:>12.4f} GFLOPs (d=384, depth=12, patch=16)")
    return EXIT_OK


def cmd_bench(args, overrides) -> int:
    from visiongru.bench import run_resolution_sweep, run_scan_microbench

    cfg = _load(args, overrides)
    b = cfg["bench"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind in ("sweep", "all"):
        spec = get_variant(args.variant)
        rep = run_resolution_sweep(spec, b["resolutions"], b["reps"], b["warmup"], b["batch"], measure=not args.analytic)
        (out / "resolution_sweep.csv").write_text(rep.to_csv())
        (out / "resolution_sweep.dat").write_text(rep.to_gnuplot())
        sys.stdout.write(rep.to_csv())
    if args.kind in ("scan", "all"):
        rep = run_scan_microbench(b["scan_lengths"], b["scan_lanes"], b["reps"], b["warmup"])
        (out / "scan_microbench.csv").write_text(rep.to_csv())
        (out / "scan_microbench.dat").write_text(rep.to_gnuplot())
        sys.stdout.write(rep.to_csv())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vgru", description="VisionGRU numerics, training and benchmarks")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="run the oracle suites")
    v.add_argument("--precision", choices=("float64", "float32"), default="float64")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--quick", action="store_true", help="fewer cases per suite")
    v.add_argument("--repro-dir", default=".")
    v.add_argument("--fault", choices=("compose-sign",), help=argparse.SUPPRESS)

    t = sub.add_parser("train", help="train from a config file; --section.key value overrides")
    t.add_argument("config", nargs="?")
    t.add_argument("--resume", help="continue from a last.vgru checkpoint")

    e = sub.add_parser("eval", help="top-1 of a checkpoint (or an untrained model)")
    e.add_argument("config", nargs="?")
    e.add_argument("checkpoint", nargs="?")
    e.add_argument("--ema", action="store_true", help="score the EMA shadow weights")
    e.add_argument("--split", choices=("val", "train"), default="val")

    pa = sub.add_parser("params", help="itemized parameter count")
    pa.add_argument("variant", choices=sorted(VARIANTS))
    pa.add_argument("--calibrate", action="store_true", help="rerun the width sweep")

    f = sub.add_parser("flops", help="itemized analytic FLOPs")
    f.add_argument("variant", choices=sorted(VARIANTS))
    f.add_argument("resolution", type=int)
    f.add_argument("--macs-as", type=int, default=1, choices=(1, 2))

    b = sub.add_parser("bench", help="resolution sweep and scan microbenchmarks")
    b.add_argument("config", nargs="?")
    b.add_argument("--kind", choices=("sweep", "scan", "all"), default="all")
    b.add_argument("--variant", default="tiny", choices=sorted(VARIANTS))
    b.add_argument("--analytic", action="store_true", help="skip wall-clock measurements")
    b.add_argument("--out", default="bench-out")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        rest, overrides = split_overrides(list(sys.argv[1:] if argv is None else argv))
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    args = parser.parse_args(rest)
    logging.basicConfig(level=logging.INFO if args.verbose or args.command == "train" else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if overrides and args.command not in ("train", "eval", "bench"):
        parser.error(f"config overrides are not accepted by {args.command}")
    try:
        if args.command == "verify":
            return cmd_verify(args)
        if args.command == "params":
            return cmd_params(args)
        if args.command == "flops":
            return cmd_flops(args)
        return {"train": cmd_train, "eval": cmd_eval, "bench": cmd_bench}[args.command](args, overrides)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, T.ShapeError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
