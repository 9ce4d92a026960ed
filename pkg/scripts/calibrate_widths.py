"""Sweep the base width D for the Tiny and Base depth schedules and print
the counts around the value closest to each parameter target."""

import argparse

from visiongru.backbone import PARAM_TARGETS, calibrate_width, count_params, get_variant


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--window", type=int, default=48, help="show candidates within this distance of the pick")
    a = p.parse_args()
    for name, target in PARAM_TARGETS.items():
        spec = get_variant(name)
        d, log = calibrate_width(spec.depths, target, spec.num_classes, spec.input_resolution)
        print(f"{name}: depths={spec.depths} target={target:,}")
        for cand, n in log:
            if abs(cand - d) <= a.window:
                print(f"  D={cand:<4d} {n:>12,d}  {(n - target) / target:+6.1%}{'  <- chosen' if cand == d else ''}")
        print(f"  registered D={spec.base_width} -> {count_params(spec):,} parameters")


if __name__ == "__main__":
    main()
