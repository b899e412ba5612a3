"""Train the toy backbone on the synthetic tasks and print the ordering table.

    python scripts/toy_ordering.py --seeds 0 1 2 --csv ordering.csv
"""

import argparse
import csv

from posmlp_video.experiments import ordering_study


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=4)
    ap.add_argument("--csv")
    args = ap.parse_args()
    res = ordering_study(args.seeds, epochs=args.epochs, log=lambda s: print(s, flush=True))
    print(f"total {res.seconds:.0f}s")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["task", "variant", "seed", "val_top1"])
            w.writeheader()
            w.writerows(res.rows())


if __name__ == "__main__":
    main()
