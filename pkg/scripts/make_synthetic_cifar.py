"""Write a CIFAR-10-layout directory of synthetic images (for offline runs)."""

import argparse

from visiongru.data import write_synthetic


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("out", nargs="?", default="data/synthetic-cifar")
    p.add_argument("--n-train", type=int, default=5000)
    p.add_argument("--n-test", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    d = write_synthetic(a.out, a.n_train, a.n_test, a.seed)
    print(f"wrote {a.n_train} training and {a.n_test} test records to {d}")


if __name__ == "__main__":
    main()
