"""The three objective terms and their weighted combination."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ContractError, ShapeError, Tensor, clip, log, mul, tsum
from .data import PAD

PROB_FLOOR = 1e-12


@dataclass
class LossBreakdown:
    ce: float
    bce: float
    mse: float
    lam: float
    delta: float

    @property
    def total(self) -> float:
        return self.ce + self.lam * self.bce + self.delta * self.mse

    def as_dict(self) -> dict:
        return {"ce": self.ce, "bce": self.bce, "mse": self.mse, "total": self.total}


def report_cross_entropy(dists: Tensor, targets, pad_id: int = PAD) -> Tensor:
    """Mean -log p(target) over non-pad positions (teacher forcing)."""
    targets = np.asarray(targets, dtype=np.int64)
    if dists.ndim != 2 or dists.shape[0] != targets.shape[0]:
        raise ShapeError(f"distributions {dists.shape} vs targets {targets.shape}")
    keep = targets != pad_id
    if not keep.any():
        raise ContractError("cross entropy over an all-pad target")
    hot = np.zeros(dists.shape)
    hot[np.arange(targets.size)[keep], targets[keep]] = 1.0
    picked = tsum(mul(dists, Tensor(hot)), axis=1)          # (T,), zeros at pads
    picked = picked + Tensor((~keep).astype(np.float64))    # pads contribute log(1) = 0
    return -tsum(log(clip(picked, PROB_FLOOR, 1.0))) * (1.0 / keep.sum())


def label_bce(probs: Tensor, labels) -> Tensor:
    """Mean binary cross entropy over classes, probabilities clamped."""
    labels = np.asarray(labels, dtype=np.float64)
    if probs.shape != labels.shape:
        raise ShapeError(f"probabilities {probs.shape} vs labels {labels.shape}")
    p = clip(probs, PROB_FLOOR, 1.0 - PROB_FLOOR)
    y = Tensor(labels)
    per_class = mul(y, log(p)) + mul(1.0 - y, log(1.0 - p))
    return -tsum(per_class) * (1.0 / labels.size)


def composite_loss(ce: Tensor, bce, mse, lam: float, delta: float):
    """Weighted total as a graph node plus a float breakdown.

    ``bce``/``mse`` may be None when the variant gates the term off.
    """
    total = ce
    if bce is not None and lam != 0.0:
        total = total + lam * bce
    if mse is not None and delta != 0.0:
        total = total + delta * mse
    breakdown = LossBreakdown(
        ce=float(ce.data), bce=float(bce.data) if bce is not None else 0.0,
        mse=float(mse.data) if mse is not None else 0.0, lam=lam, delta=delta)
    return total, breakdown
