"""Sequential vs tree scan timings over T = 256 .. 65536 with 64 lanes."""

import argparse

from visiongru import tensor as T
from visiongru.bench import run_scan_microbench


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--lanes", type=int, default=64)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--precision", default="float32", choices=("float32", "float64"))
    a = p.parse_args()
    T.set_precision(a.precision)
    rep = run_scan_microbench(lanes=a.lanes, reps=a.reps)
    print(rep.to_csv(), end="")
    par = [r["ns_per_step"] for r in rep.rows if r["kernel"] == "parallel"]
    print(f"# parallel time/T spread: {max(par) / min(par):.2f}x")


if __name__ == "__main__":
    main()
