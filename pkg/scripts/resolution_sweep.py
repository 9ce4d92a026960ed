"""Resolution sweep: analytic GFLOPs of the Tiny model and the attention
comparator from 224 to 1248, plus measured forward times at resolutions
that fit in memory.  Writes CSV and gnuplot-ready .dat files.

    python scripts/resolution_sweep.py --out bench-out --measure 128,256
"""

import argparse
from pathlib import Path

from visiongru import tensor as T
from visiongru.backbone import get_variant
from visiongru.bench import run_resolution_sweep

ANALYTIC = (224, 384, 448, 512, 640, 768, 896, 1024, 1248)


def ints(s):
    return tuple(int(x) for x in s.split(",") if x)


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--variant", default="tiny")
    p.add_argument("--resolutions", type=ints, default=ANALYTIC)
    p.add_argument("--measure", type=ints, default=(128, 256), help="resolutions to time (empty: none)")
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--out", default="bench-out")
    a = p.parse_args()
    T.set_precision("float32")
    spec = get_variant(a.variant)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)

    rep = run_resolution_sweep(spec, a.resolutions, measure=False)
    (out / "sweep_analytic.csv").write_text(rep.to_csv())
    (out / "sweep_analytic.dat").write_text(rep.to_gnuplot())
    print(f"{'resolution':>10} {'model GFLOPs':>13} {'baseline GFLOPs':>16} {'ratio':>7}")
    rows = {(r["model"], r["resolution"]): r["gflops"] for r in rep.rows}
    for r in a.resolutions:
        g, b = rows[(f"visiongru-{spec.variant}", r)], rows[("attention-baseline", r)]
        print(f"{r:>10} {g:>13.2f} {b:>16.2f} {b / g:>7.2f}")

    if a.measure:
        timed = run_resolution_sweep(spec, a.measure, reps=a.reps)
        (out / "sweep_measured.csv").write_text(timed.to_csv())
        (out / "sweep_measured.dat").write_text(timed.to_gnuplot())
        for r in timed.rows:
            print(f"{r['model']:<22} {r['resolution']:>5} {r['ms_mean']:>10.1f} ms  {r['status']}")
    print(f"wrote {out}/")


if __name__ == "__main__":
    main()
