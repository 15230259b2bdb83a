"""Vanilla vs shared-coefficient (siamese) training on the two-population lamp family."""
import argparse
import logging

from funcdict import experiments as exp


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    for seed in args.seeds:
        plain, twin = exp.siamese_comparison(seed)
        print(f"seed {seed}: per-category mIoU vanilla {plain.category_miou:.3f} -> siamese {twin.category_miou:.3f}"
              f"  (per-shape {plain.mean_shape_miou:.3f} / {twin.mean_shape_miou:.3f})")


if __name__ == "__main__":
    main()
