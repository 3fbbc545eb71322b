"""Cross-entropy loss, the Adam update, and finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DimensionError, NumericError
from .rng import derive_rng
from .tensor import Tensor

PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class LossValue:
    """Mean batch loss plus the per-sample values it averages."""

    mean: float
    per_sample: Tensor


def _check_one_hot(labels: Tensor) -> None:
    if labels.ndim != 2:
        raise DataError(f"labels must be (n, k) one-hot rows, got shape {labels.shape}")
    ok = np.isin(labels, (0.0, 1.0)).all() and (labels.sum(axis=1) == 1.0).all()
    if not ok:
        raise DataError("labels must be one-hot rows (a single 1 per row)")


def cross_entropy(probs: Tensor, labels: Tensor) -> LossValue:
    """Mean of per-sample -sum(y * log(clamp(p))) over one-hot targets."""
    _check_one_hot(labels)
    if probs.shape != labels.shape:
        raise DimensionError(f"probs shape {probs.shape} != labels shape {labels.shape}")
    if np.abs(probs.sum(axis=1) - 1.0).max() > 1e-6:
        raise DataError("probability rows must sum to 1")
    clamped = np.clip(probs, PROB_CLAMP, 1.0)
    per_sample = -(labels * np.log(clamped)).sum(axis=1)
    return LossValue(mean=float(per_sample.mean()), per_sample=per_sample)


def softmax_xent_grad(probs: Tensor, labels: Tensor) -> Tensor:
    """Fused gradient of mean cross-entropy through softmax: (p - y) / n."""
    _check_one_hot(labels)
    if probs.shape != labels.shape:
        raise DimensionError(f"probs shape {probs.shape} != labels shape {labels.shape}")
    return (probs - labels) / probs.shape[0]


@dataclass
class AdamState:
    """First/second moments per named parameter plus the step counter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict[str, Tensor] = field(default_factory=dict)
    v: dict[str, Tensor] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update, applied to params in place."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, theta in params.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise DimensionError(f"grad shape {g.shape} != param shape {theta.shape} for {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        theta -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)


@dataclass(frozen=True)
class GradCheckEntry:
    name: str
    max_rel_err: float
    passed: bool
    probed: int


@dataclass(frozen=True)
class GradCheckReport:
    entries: tuple[GradCheckEntry, ...]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def lines(self) -> list[str]:
        return [
            f"{e.name} {e.max_rel_err:.3e} {'PASS' if e.passed else 'FAIL'}"
            for e in self.entries
        ]


def gradient_check(
    net,
    x: Tensor,
    labels: Tensor,
    *,
    perturbation: float = 1e-5,
    tolerance: float = 1e-4,
    max_probes: int | None = 100,
    probe_seed: int = 0,
) -> GradCheckReport:
    """Compare analytic parameter gradients against central finite differences.

    ``net`` must expose ``loss(x, labels)``, ``loss_and_grads(x, labels)``
    and ``parameters()``; both paths are evaluated deterministically
    (inference mode), so the result does not depend on dropout draws.
    Tensors larger than ``max_probes`` are probed at a seeded sample of
    elements, smaller ones exhaustively.  Relative error per element is
    ``|a - n| / max(|a|, |n|, 1e-8)`` with n the central difference at the
    stated perturbation.

    A central difference is only meaningful where the loss is smooth over
    the probed interval; near a ReLU/max-pool kink it measures a secant
    mixing the two subgradients, not the derivative the backward pass
    follows.  Each probe is therefore validated on function values alone:
    the estimate is recomputed at half the step (straddled kinks and
    roundoff-dominated probes disagree beyond O(h^2)), and the two
    one-sided slopes are compared (a kink at the evaluation point itself
    leaves an h-independent gap between them).  Failing probes are replaced
    by the next candidate element.  The validation never consults the
    analytic gradient, so it cannot mask a backpropagation bug.
    """
    _, analytic = net.loss_and_grads(x, labels)
    params = net.parameters()
    f0 = net.loss(x, labels)
    if not np.isfinite(f0):
        raise NumericError("non-finite loss at the unperturbed point")

    def probe(flat, i, h):
        orig = flat[i]
        flat[i] = orig + h
        fp = net.loss(x, labels)
        flat[i] = orig - h
        fm = net.loss(x, labels)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError("non-finite loss while probing")
        return fp, fm

    entries = []
    for name in sorted(params):
        flat = params[name].reshape(-1)
        if max_probes is None or flat.size <= max_probes:
            wanted = flat.size
            candidates = np.arange(flat.size)
        else:
            wanted = max_probes
            pool = min(flat.size, 8 * max_probes)
            candidates = derive_rng(probe_seed, "gradcheck", name).choice(
                flat.size, size=pool, replace=False
            )
        worst = 0.0
        kept = 0
        a_flat = analytic[name].reshape(-1)
        half = perturbation / 2.0
        for i in candidates:
            if kept == wanted:
                break
            fp1, fm1 = probe(flat, i, perturbation)
            fp2, fm2 = probe(flat, i, half)
            n1 = (fp1 - fm1) / (2.0 * perturbation)
            n2 = (fp2 - fm2) / (2.0 * half)
            if abs(n1 - n2) > 0.5 * tolerance * max(abs(n1), abs(n2), 1e-8):
                continue
            slope_up = (fp2 - f0) / half
            slope_down = (f0 - fm2) / half
            if abs(slope_up - slope_down) > tolerance * max(abs(n2), 1e-8):
                continue
            kept += 1
            a = a_flat[i]
            rel = abs(a - n1) / max(abs(a), abs(n1), 1e-8)
            worst = max(worst, rel)
        entries.append(
            GradCheckEntry(name=name, max_rel_err=worst, passed=worst < tolerance, probed=kept)
        )
    return GradCheckReport(entries=tuple(entries), tolerance=tolerance)
