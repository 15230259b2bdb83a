"""Sweep k and gamma on table segmentation; prints mIoU and the number of near-empty atoms."""
import argparse
from dataclasses import replace

from funcdict import experiments as exp


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ks", type=int, nargs="+", default=[5, 10, 20])
    ap.add_argument("--gammas", type=float, nargs="+", default=[0.0, 0.5, 1.0, 2.0])
    ap.add_argument("--steps", type=int, default=exp.SEG_BASE.steps)
    args = ap.parse_args()
    train, test = exp.table4_split()
    print("k\tgamma\tshape\tcategory\tsmall")
    for k in args.ks:
        for g in args.gammas:
            r = exp.run_segmentation(train, test, replace(exp.SEG_BASE, k=k, gamma=g, steps=args.steps))
            print(f"{k}\t{g:g}\t{r.mean_shape_miou:.3f}\t{r.category_miou:.3f}\t{r.small_atoms}", flush=True)


if __name__ == "__main__":
    main()
