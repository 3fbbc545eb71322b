#!/usr/bin/env python3
"""Write one of the synthetic 30x30 PNG datasets for smoke runs.

Example:
    python scripts/make_synthetic_dataset.py --task overfit --out /tmp/demo-data
    xcnn split --data /tmp/demo-data --seed 0 --manifest /tmp/demo-manifest.csv
"""

import argparse

from xcnn.synthetic import write_imbalanced_dataset, write_overfit_dataset


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--task", choices=("overfit", "imbalanced"), default="overfit")
    parser.add_argument("--out", required=True, help="output data root (gets COVID/ and Normal/)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    if args.task == "overfit":
        root = write_overfit_dataset(args.out, seed=args.seed)
    else:
        root = write_imbalanced_dataset(args.out, seed=args.seed)
    print(f"wrote {args.task} dataset under {root}")


if __name__ == "__main__":
    main()
