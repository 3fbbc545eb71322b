"""Two-phase training loop, evaluation, confusion metrics, and report export.

The schedule follows the 10 + 50 regimen: phase 1 trains on the original
(unbalanced) train split with no warping; phase 2 either trains on the
augmentation-balanced train split with augmented records re-warped every
epoch (augment on), or spends the same 50-epoch budget on plain data
(augment off) so the two settings stay comparable.  Everything downstream
of (architecture, manifest, schedule, seed) is deterministic.
"""

from __future__ import annotations

import csv
import io
import math
import os
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (
    CLASSES,
    POSITIVE_CLASS,
    AugmentParams,
    DatasetManifest,
    SampleRecord,
    augment_sample,
    balance_by_augmentation,
    preprocess_image,
)
from .errors import DataError, NumericError, ParameterError
from .layers import Mode
from .models import Network, build_network, save_checkpoint
from .optim import AdamState, adam_step, cross_entropy, softmax_xent_grad
from .rng import derive_rng
from .tensor import Tensor


@dataclass(frozen=True)
class TrainingSchedule:
    phase1_epochs: int = 10
    phase2_epochs: int = 50
    batch_size: int = 256
    seed: int = 0
    learning_rate: float = 1e-3

    def __post_init__(self):
        if self.phase1_epochs < 0 or self.phase2_epochs < 0:
            raise ParameterError("epoch counts must be >= 0")
        if self.batch_size < 1:
            raise ParameterError("batch size must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ParameterError("seed must fit an unsigned 64-bit integer")

    @property
    def total_epochs(self) -> int:
        return self.phase1_epochs + self.phase2_epochs


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    phase: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass(frozen=True)
class TrainingHistory:
    rows: tuple[EpochRecord, ...]

    def __post_init__(self):
        for i, row in enumerate(self.rows):
            if row.epoch != i + 1:
                raise DataError(f"history epochs must run 1..N, got {row.epoch} at position {i}")
            if row.train_loss < 0 or row.val_loss < 0:
                raise DataError(f"negative loss in epoch {row.epoch}")
            if not (0 <= row.train_acc <= 1 and 0 <= row.val_acc <= 1):
                raise DataError(f"accuracy outside [0, 1] in epoch {row.epoch}")


@dataclass(frozen=True)
class Metrics:
    """Confusion counts with COVID as the positive class, plus derived scores."""

    tp: int
    fp: int
    fn: int
    tn: int
    accuracy: float
    precision: float
    recall: float
    f1: float

    @staticmethod
    def from_counts(tp: int, fp: int, fn: int, tn: int) -> "Metrics":
        total = tp + fp + fn + tn
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return Metrics(
            tp=tp, fp=fp, fn=fn, tn=tn,
            accuracy=(tp + tn) / total,
            precision=precision,
            recall=recall,
            f1=f1,
        )


@dataclass(frozen=True)
class PredictionRow:
    path: str
    true: str
    predicted: str
    p_covid: float


def confusion_and_scores(predictions, truths, positive: str = POSITIVE_CLASS) -> Metrics:
    if len(predictions) != len(truths):
        raise DataError(f"got {len(predictions)} predictions for {len(truths)} truths")
    if not predictions:
        raise DataError("need at least one prediction/truth pair")
    pred = np.asarray(predictions) == positive
    true = np.asarray(truths) == positive
    tp = int(np.sum(pred & true))
    fp = int(np.sum(pred & ~true))
    fn = int(np.sum(~pred & true))
    tn = int(np.sum(~pred & ~true))
    return Metrics.from_counts(tp, fp, fn, tn)


def one_hot_labels(records: list[SampleRecord]) -> Tensor:
    out = np.zeros((len(records), len(CLASSES)))
    for i, r in enumerate(records):
        out[i, CLASSES.index(r.label)] = 1.0
    return out


def load_images(paths, threads: int | None = None) -> dict[str, Tensor]:
    """Decode/resize/normalize each distinct path; thread count never
    changes the result (per-path work is independent, order preserved)."""
    paths = list(dict.fromkeys(paths))
    workers = threads if threads is not None else (os.cpu_count() or 1)
    if workers <= 1 or len(paths) < 2:
        return {p: preprocess_image(p) for p in paths}
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return dict(zip(paths, ex.map(preprocess_image, paths)))


def _record_image(
    record: SampleRecord, index: int, epoch: int, seed: int, cache: dict[str, Tensor], rewarp: bool
) -> Tensor:
    base = cache[record.path]
    if not record.is_augmented:
        return base
    if rewarp:
        params = AugmentParams.draw(derive_rng(seed, "augment", epoch, index))
    else:
        params = record.params
    return augment_sample(base, params)


def _infer_pass(net: Network, images: Tensor, labels: Tensor, batch_size: int) -> tuple[float, float, Tensor]:
    """Batched inference; returns (mean loss, accuracy, probs)."""
    losses = np.zeros(len(images))
    probs = np.zeros((len(images), len(CLASSES)))
    for start in range(0, len(images), batch_size):
        stop = min(start + batch_size, len(images))
        p = net.forward(images[start:stop], Mode.INFER)
        probs[start:stop] = p
        losses[start:stop] = cross_entropy(p, labels[start:stop]).per_sample
    acc = float(np.mean(probs.argmax(axis=1) == labels.argmax(axis=1)))
    return float(losses.mean()), acc, probs


def train(
    arch_id: str,
    manifest: DatasetManifest,
    schedule: TrainingSchedule,
    augment: bool,
    out_dir: str | Path,
    threads: int | None = None,
) -> tuple[Network, TrainingHistory]:
    """Run the full two-phase schedule; writes per-epoch checkpoints,
    ``history.csv`` and ``curves.svg`` under out_dir."""
    train_records = manifest.for_split("train")
    val_records = manifest.for_split("val")
    if not train_records or not val_records:
        raise DataError("train and val splits must be non-empty")

    out_dir = Path(out_dir)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)

    seed = schedule.seed
    balanced_records = train_records
    if augment:
        balanced = balance_by_augmentation(manifest, derive_rng(seed, "balance"))
        balanced.write_csv(out_dir / "manifest_balanced.csv")
        balanced_records = balanced.for_split("train")

    cache = load_images(
        [r.path for r in train_records] + [r.path for r in val_records], threads=threads
    )
    val_images = np.stack([cache[r.path] for r in val_records])
    val_labels = one_hot_labels(val_records)

    net = build_network(arch_id, seed)
    adam = AdamState(lr=schedule.learning_rate)
    rows: list[EpochRecord] = []
    best_val_acc = -1.0

    for epoch in range(1, schedule.total_epochs + 1):
        phase = 1 if epoch <= schedule.phase1_epochs else 2
        use_augmented = augment and phase == 2
        records = balanced_records if use_augmented else train_records
        labels = one_hot_labels(records)
        order = derive_rng(seed, "shuffle", epoch).permutation(len(records))

        seen = 0
        loss_sum = 0.0
        correct = 0
        for start in range(0, len(order), schedule.batch_size):
            idx = order[start : start + schedule.batch_size]
            batch_x = np.stack(
                [_record_image(records[i], int(i), epoch, seed, cache, rewarp=use_augmented) for i in idx]
            )
            batch_y = labels[idx]
            probs = net.forward(batch_x, Mode.TRAIN, rng_key=(epoch, start))
            loss = cross_entropy(probs, batch_y)
            if not math.isfinite(loss.mean):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            grads = net.backward_from_logits(softmax_xent_grad(probs, batch_y))
            adam_step(net.parameters(), grads, adam)
            seen += len(idx)
            loss_sum += loss.mean * len(idx)
            correct += int(np.sum(probs.argmax(axis=1) == batch_y.argmax(axis=1)))

        val_loss, val_acc, _ = _infer_pass(net, val_images, val_labels, schedule.batch_size)
        if not math.isfinite(val_loss):
            raise NumericError(f"non-finite validation loss at epoch {epoch}")
        rows.append(
            EpochRecord(
                epoch=epoch,
                phase=phase,
                train_loss=loss_sum / seen,
                train_acc=correct / seen,
                val_loss=val_loss,
                val_acc=val_acc,
            )
        )

        net.epoch = epoch
        epoch_path = ckpt_dir / f"epoch_{epoch:03d}.ckpt"
        save_checkpoint(net, epoch_path)
        if val_acc > best_val_acc:
            best_val_acc = val_acc
            shutil.copyfile(epoch_path, ckpt_dir / "best.ckpt")

    history = TrainingHistory(rows=tuple(rows))
    save_checkpoint(net, out_dir / "model_final.ckpt")
    export_history_csv(history, out_dir / "history.csv")
    render_curves_svg(history, out_dir / "curves.svg")
    return net, history


def evaluate(
    net: Network,
    manifest: DatasetManifest,
    split: str,
    batch_size: int = 256,
    threads: int | None = None,
) -> tuple[Metrics, list[PredictionRow]]:
    """Inference-mode pass over a split; parameters and running statistics
    are never touched, so repeated calls are bit-identical.

    Augmented records (train split of a balanced manifest) are warped with
    the parameters stored in the manifest.
    """
    records = manifest.for_split(split)
    if not records:
        raise DataError(f"split {split!r} is empty")
    cache = load_images([r.path for r in records], threads=threads)
    images = np.stack(
        [_record_image(r, i, 0, 0, cache, rewarp=False) for i, r in enumerate(records)]
    )
    labels = one_hot_labels(records)
    _, _, probs = _infer_pass(net, images, labels, batch_size)
    predicted = [CLASSES[i] for i in probs.argmax(axis=1)]
    truths = [r.label for r in records]
    metrics = confusion_and_scores(predicted, truths)
    listing = [
        PredictionRow(path=r.path, true=r.label, predicted=p, p_covid=float(pr[CLASSES.index(POSITIVE_CLASS)]))
        for r, p, pr in zip(records, predicted, probs)
    ]
    return metrics, listing


HISTORY_HEADER = "epoch,phase,train_loss,train_acc,val_loss,val_acc"


def export_history_csv(history: TrainingHistory, path: str | Path) -> None:
    """Floats are written with repr(), which round-trips exactly."""
    lines = [HISTORY_HEADER]
    for r in history.rows:
        lines.append(
            f"{r.epoch},{r.phase},{r.train_loss!r},{r.train_acc!r},{r.val_loss!r},{r.val_acc!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_history_csv(path: str | Path) -> TrainingHistory:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.strip().split("\n")
    if not lines or lines[0] != HISTORY_HEADER:
        raise DataError(f"bad history header in {path}")
    rows = []
    for line in lines[1:]:
        epoch, phase, tl, ta, vl, va = line.split(",")
        rows.append(
            EpochRecord(
                epoch=int(epoch), phase=int(phase),
                train_loss=float(tl), train_acc=float(ta),
                val_loss=float(vl), val_acc=float(va),
            )
        )
    return TrainingHistory(rows=tuple(rows))


def write_predictions_csv(listing: list[PredictionRow], path: str | Path) -> None:
    """Prediction listing plus macro-averaged scores in a comment footer."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["path", "true", "predicted", "p_covid"])
    for row in listing:
        writer.writerow([row.path, row.true, row.predicted, repr(row.p_covid)])
    preds = [r.predicted for r in listing]
    truths = [r.true for r in listing]
    as_pos = confusion_and_scores(preds, truths, positive=CLASSES[0])
    as_neg = confusion_and_scores(preds, truths, positive=CLASSES[1])
    buf.write(f"# macro_precision={(as_pos.precision + as_neg.precision) / 2!r}\n")
    buf.write(f"# macro_recall={(as_pos.recall + as_neg.recall) / 2!r}\n")
    buf.write(f"# macro_f1={(as_pos.f1 + as_neg.f1) / 2!r}\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _chart_svg(
    x_origin: float,
    y_origin: float,
    width: float,
    height: float,
    title: str,
    epochs: list[int],
    train_series: list[float],
    val_series: list[float],
) -> str:
    lo = min(min(train_series), min(val_series))
    hi = max(max(train_series), max(val_series))
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    x_min, x_max = epochs[0], epochs[-1]
    x_span = max(x_max - x_min, 1)

    def sx(e):
        return x_origin + (e - x_min) / x_span * width

    def sy(v):
        return y_origin + height - (v - lo) / (hi - lo) * height

    parts = [
        f'<text x="{x_origin + width / 2:.1f}" y="{y_origin - 10:.1f}" text-anchor="middle" '
        f'font-size="14">{title}</text>',
        f'<line x1="{x_origin}" y1="{y_origin + height}" x2="{x_origin + width}" '
        f'y2="{y_origin + height}" stroke="black"/>',
        f'<line x1="{x_origin}" y1="{y_origin}" x2="{x_origin}" y2="{y_origin + height}" stroke="black"/>',
    ]
    for tick in np.linspace(lo, hi, 5):
        y = sy(tick)
        parts.append(f'<line x1="{x_origin - 4}" y1="{y:.1f}" x2="{x_origin}" y2="{y:.1f}" stroke="black"/>')
        parts.append(
            f'<text x="{x_origin - 8}" y="{y + 4:.1f}" text-anchor="end" font-size="10">{tick:.3g}</text>'
        )
    n_xticks = min(len(epochs), 6)
    for e in sorted({epochs[int(round(i))] for i in np.linspace(0, len(epochs) - 1, n_xticks)}):
        x = sx(e)
        parts.append(
            f'<line x1="{x:.1f}" y1="{y_origin + height}" x2="{x:.1f}" '
            f'y2="{y_origin + height + 4}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{x:.1f}" y="{y_origin + height + 16}" text-anchor="middle" font-size="10">{e}</text>'
        )
    for series, color, label, dy in (
        (train_series, "#1f77b4", "train", 0),
        (val_series, "#d62728", "validation", 16),
    ):
        points = " ".join(f"{sx(e):.2f},{sy(v):.2f}" for e, v in zip(epochs, series))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{points}"/>')
        ly = y_origin + 12 + dy
        lx = x_origin + width - 110
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{lx + 24}" y="{ly}" font-size="11">{label}</text>')
    return "\n".join(parts)


def render_curves_svg(history: TrainingHistory, path: str | Path) -> None:
    """Two charts (accuracy, loss), each with labeled train/validation series."""
    if not history.rows:
        raise DataError("history is empty")
    epochs = [r.epoch for r in history.rows]
    acc_chart = _chart_svg(
        60, 40, 360, 280, "Training and Validation Accuracy",
        epochs, [r.train_acc for r in history.rows], [r.val_acc for r in history.rows],
    )
    loss_chart = _chart_svg(
        540, 40, 360, 280, "Training and Validation Loss",
        epochs, [r.train_loss for r in history.rows], [r.val_loss for r in history.rows],
    )
    svg = (
        '<svg xmlns="http://www.w3.org/2000/svg" width="960" height="380" '
        'font-family="sans-serif">\n'
        f'<g id="accuracy-chart">\n{acc_chart}\n</g>\n'
        f'<g id="loss-chart">\n{loss_chart}\n</g>\n'
        "</svg>\n"
    )
    Path(path).write_text(svg, encoding="utf-8")
