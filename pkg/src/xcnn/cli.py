"""Command-line entry point: split, train, evaluate, predict, gradcheck, report.

Exit codes: 0 success, 2 usage/configuration problems, 3 runtime/numeric
failures (training divergence, corrupt checkpoints, failed gradient check).
All artifacts land under the command's --out directory.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import DatasetManifest, POSITIVE_CLASS, CLASSES, preprocess_image, scan_data_root, split_dataset
from .errors import (
    ArchitectureMismatchError,
    CheckpointCorruptionError,
    CheckpointVersionError,
    DataError,
    FormatError,
    NumericError,
    ParameterError,
)
from .models import ARCHITECTURES, build_network, load_checkpoint
from .optim import gradient_check
from .rng import derive_rng
from .training import TrainingSchedule, evaluate, load_history_csv, render_curves_svg, train, write_predictions_csv

USAGE_ERRORS = (ParameterError, DataError, FormatError, ArchitectureMismatchError, FileNotFoundError)
RUNTIME_ERRORS = (NumericError, CheckpointCorruptionError, CheckpointVersionError)


@dataclass(frozen=True)
class RunConfig:
    """Effective training configuration, echoed to out_dir/config.txt.

    The echo is itself a valid --config file.  Execution details that
    cannot affect results (worker threads, output location) are
    deliberately not part of it, so runs that differ only in those produce
    byte-identical artifact sets.
    """

    arch: str
    manifest: str
    augment: str  # on|off
    seed: int
    epochs1: int
    epochs2: int
    batch_size: int
    learning_rate: float

    def write(self, path: Path) -> None:
        pairs = sorted(vars(self).items())
        path.write_text("".join(f"{k}={v}\n" for k, v in pairs), encoding="utf-8")


# Keys a --config file may set, with their parsers.  Run identity (arch,
# manifest, out) stays flag-only; precedence is flags > file > built-ins.
CONFIG_FILE_KEYS = {
    "augment": str,
    "seed": int,
    "epochs1": int,
    "epochs2": int,
    "batch_size": int,
    "learning_rate": float,
}


def _read_config_file(path: str) -> dict:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParameterError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key not in CONFIG_FILE_KEYS:
            continue  # echo files carry extra keys like arch/manifest
        try:
            values[key] = CONFIG_FILE_KEYS[key](value.strip())
        except ValueError as exc:
            raise ParameterError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    if "augment" in values and values["augment"] not in ("on", "off"):
        raise ParameterError(f"{path}: augment must be on or off, got {values['augment']!r}")
    return values


def _flag_given(argv: list[str], *names: str) -> bool:
    return any(name in argv or any(a.startswith(name + "=") for a in argv) for name in names)


def _unsigned(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"must be an unsigned 64-bit integer, got {text}")
    return value


def _resolve_threads(flag_value: int | None) -> int:
    if flag_value is not None:
        return flag_value
    env = os.environ.get("XCNN_THREADS")
    if env is not None:
        return int(env)
    return os.cpu_count() or 1


def cmd_split(args, argv: list[str]) -> int:
    manifest = split_dataset(scan_data_root(args.data), seed=args.seed)
    Path(args.manifest).parent.mkdir(parents=True, exist_ok=True)
    manifest.write_csv(args.manifest)
    counts = manifest.class_counts()
    for split in ("train", "test", "val"):
        per_class = " ".join(f"{c}={counts[split][c]}" for c in CLASSES)
        print(f"{split} {per_class} total={sum(counts[split].values())}")
    return 0


def cmd_train(args, argv: list[str]) -> int:
    manifest = DatasetManifest.read_csv(args.manifest)
    file_cfg = _read_config_file(args.config) if args.config else {}

    def pick(key: str, *flags: str):
        # Flags beat the config file, which beats the built-in defaults
        # (already baked into args as argparse defaults).
        if key in file_cfg and not _flag_given(argv, *flags):
            return file_cfg[key]
        return getattr(args, key if key != "learning_rate" else "lr")

    config = RunConfig(
        arch=args.arch,
        manifest=str(args.manifest),
        augment=pick("augment", "--augment"),
        seed=pick("seed", "--seed"),
        epochs1=pick("epochs1", "--epochs1"),
        epochs2=pick("epochs2", "--epochs2"),
        batch_size=pick("batch_size", "--batch-size"),
        learning_rate=pick("learning_rate", "--lr"),
    )
    schedule = TrainingSchedule(
        phase1_epochs=config.epochs1,
        phase2_epochs=config.epochs2,
        batch_size=config.batch_size,
        seed=config.seed,
        learning_rate=config.learning_rate,
    )
    threads = _resolve_threads(args.threads)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config.write(out_dir / "config.txt")
    _, history = train(
        args.arch, manifest, schedule, augment=config.augment == "on", out_dir=out_dir, threads=threads
    )
    last = history.rows[-1]
    print(
        f"trained {args.arch} for {len(history.rows)} epochs: "
        f"train_acc={last.train_acc:.4f} val_acc={last.val_acc:.4f}"
    )
    print(f"artifacts written under {out_dir}")
    return 0


def cmd_evaluate(args, argv: list[str]) -> int:
    net = load_checkpoint(args.model, expect_arch=args.arch)
    manifest = DatasetManifest.read_csv(args.manifest)
    metrics, listing = evaluate(
        net, manifest, args.split, batch_size=args.batch_size, threads=_resolve_threads(args.threads)
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    listing_path = out_dir / f"predictions_{args.split}.csv"
    write_predictions_csv(listing, listing_path)
    print(f"arch={net.arch.arch_id} split={args.split} size={len(listing)} positive={POSITIVE_CLASS}")
    print(f"tp={metrics.tp} fp={metrics.fp} fn={metrics.fn} tn={metrics.tn}")
    for name in ("accuracy", "precision", "recall", "f1"):
        print(f"{name}={getattr(metrics, name):.4f}")
    print(f"listing written to {listing_path}")
    return 0


def cmd_predict(args, argv: list[str]) -> int:
    net = load_checkpoint(args.model)
    image = preprocess_image(args.image)[None, :, :, :]
    probs = net.predict_probs(image)[0]
    label = CLASSES[int(np.argmax(probs))]
    print(f"{label} p_covid={probs[CLASSES.index(POSITIVE_CLASS)]:.6f}")
    return 0


def cmd_gradcheck(args, argv: list[str]) -> int:
    net = build_network(args.arch, seed=args.seed)
    rng = derive_rng(args.seed, "gradcheck-probe")
    x = rng.uniform(0.0, 1.0, size=(1, 30, 30, 1))
    labels = np.zeros((1, 2))
    labels[0, int(rng.integers(0, 2))] = 1.0
    report = gradient_check(net, x, labels, max_probes=args.max_probes, probe_seed=args.seed)
    for line in report.lines():
        print(line)
    if report.passed:
        print(f"gradcheck {args.arch}: PASS ({len(report.entries)} parameter tensors)")
        return 0
    print(f"gradcheck {args.arch}: FAIL", file=sys.stderr)
    return 3


def cmd_report(args, argv: list[str]) -> int:
    history = load_history_csv(args.history)
    render_curves_svg(history, args.out)
    print(f"curves written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xcnn",
        description="From-scratch CNN toolkit for two-class chest X-ray classification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("split", help="scan a data root and write the split manifest", formatter_class=fmt)
    p.add_argument("--data", required=True, help="root directory with COVID/ and Normal/ PNG subdirs")
    p.add_argument("--seed", type=_unsigned, default=0, help="split shuffle seed")
    p.add_argument("--manifest", required=True, help="output manifest CSV path")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="run the two-phase training schedule", formatter_class=fmt)
    p.add_argument("--arch", required=True, choices=sorted(ARCHITECTURES), help="architecture id")
    p.add_argument("--manifest", required=True, help="manifest CSV from the split command")
    p.add_argument("--augment", choices=("on", "off"), default="on", help="balance + warp in phase 2")
    p.add_argument("--seed", type=_unsigned, default=0, help="run seed; controls all randomness")
    p.add_argument("--config", default=None, help="key=value config file; flags override it")
    p.add_argument("--out", required=True, help="output directory for all artifacts")
    p.add_argument("--epochs1", type=int, default=10, help="phase-1 epochs (no augmentation)")
    p.add_argument("--epochs2", type=int, default=50, help="phase-2 epochs")
    p.add_argument("--batch-size", type=int, default=256, help="minibatch size")
    p.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate")
    p.add_argument("--threads", type=int, default=None, help="image-loading workers (default: XCNN_THREADS or CPU count)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a split", formatter_class=fmt)
    p.add_argument("--model", required=True, help="checkpoint file")
    p.add_argument("--manifest", required=True, help="manifest CSV")
    p.add_argument("--split", choices=("train", "test", "val"), default="test", help="split to score")
    p.add_argument("--arch", choices=sorted(ARCHITECTURES), default=None, help="require this architecture id")
    p.add_argument("--out", default=".", help="directory for the prediction listing CSV")
    p.add_argument("--batch-size", type=int, default=256, help="inference batch size")
    p.add_argument("--threads", type=int, default=None, help="image-loading workers (default: XCNN_THREADS or CPU count)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="classify a single image", formatter_class=fmt)
    p.add_argument("--model", required=True, help="checkpoint file")
    p.add_argument("--image", required=True, help="PNG image path")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference check of all parameter gradients", formatter_class=fmt)
    p.add_argument("--arch", required=True, choices=sorted(ARCHITECTURES), help="architecture id")
    p.add_argument("--seed", type=_unsigned, default=0, help="init and probe seed")
    p.add_argument("--max-probes", type=int, default=100, help="probed elements per parameter tensor")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="re-render the curves SVG from a history CSV", formatter_class=fmt)
    p.add_argument("--history", required=True, help="history CSV written by train")
    p.add_argument("--out", required=True, help="output SVG path")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    raw_argv = list(sys.argv[1:] if argv is None else argv)
    try:
        return args.func(args, raw_argv)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
