#!/usr/bin/env python3
"""Full-scale run on the real radiography dataset: split, train every
architecture with and without augmentation, evaluate on the test split, and
print the six-row summary table.

Expects --data to point at a directory containing COVID/ and Normal/ PNG
subdirectories (see README for where to fetch the dataset).  Each (arch,
augmentation) cell trains for the full 10 + 50 epoch schedule; on one CPU
this takes hours per cell, so pick --archs accordingly.

Example:
    python scripts/run_full_reproduction.py --data /data/radiography \\
        --out /tmp/full-run --archs cnn3 --augment on
"""

import argparse
import sys
from pathlib import Path

from xcnn.cli import main as xcnn_main
from xcnn.data import DatasetManifest
from xcnn.models import load_checkpoint
from xcnn.training import evaluate


def run():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--data", required=True, help="radiography dataset root")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--archs", nargs="+", default=["cnn1", "cnn3", "cnn4"],
                        choices=("cnn1", "cnn3", "cnn4"))
    parser.add_argument("--augment", nargs="+", default=["on", "off"], choices=("on", "off"))
    parser.add_argument("--threads", type=int, default=None)
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.csv"
    code = xcnn_main(["split", "--data", args.data, "--seed", str(args.seed),
                      "--manifest", str(manifest_path)])
    if code != 0:
        return code

    results = []
    for augment in args.augment:
        for arch in args.archs:
            run_dir = out / f"{arch}_aug_{augment}"
            argv = ["train", "--arch", arch, "--manifest", str(manifest_path),
                    "--augment", augment, "--seed", str(args.seed), "--out", str(run_dir)]
            if args.threads is not None:
                argv += ["--threads", str(args.threads)]
            code = xcnn_main(argv)
            if code != 0:
                return code
            net = load_checkpoint(run_dir / "model_final.ckpt")
            metrics, _ = evaluate(net, DatasetManifest.read_csv(manifest_path), "test",
                                  threads=args.threads)
            results.append((augment, arch, metrics))
            print(f"[done] {arch} augment={augment}: accuracy={metrics.accuracy:.4f}")

    print("\naugment  arch  accuracy  precision  recall  f1")
    for augment, arch, m in results:
        print(f"{augment:7s}  {arch:4s}  {m.accuracy:.4f}    {m.precision:.4f}     {m.recall:.4f}  {m.f1:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(run())
