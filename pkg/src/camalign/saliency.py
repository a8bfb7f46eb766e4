"""Multi-label classification over pooled patch features and the class
activation map pipeline that turns its weights into a visual saliency map.

The map aggregation (ReLU, min-max per class, elementwise max over present
classes) runs on plain arrays: the aggregated map is consumed everywhere as
a constant target, so no gradient flows through it.  The classification
probabilities themselves stay on the autodiff graph for the label loss.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, matmul, mean, sigmoid, transpose

PRESENCE_THRESHOLD = 0.5


@dataclass
class ClassProbabilities:
    probs: Tensor            # (classes,) on-graph sigmoid outputs
    logits: Tensor           # (classes,) pre-sigmoid
    presence: np.ndarray     # (classes,) 0/1, strictly-above-threshold rule


def classify_global(tokens: Tensor, class_head: Tensor) -> ClassProbabilities:
    """Global average pool over patches, then a bias-free linear head.

    Presence is 1 only for probability strictly above 0.5; exactly 0.5 maps
    to absent.
    """
    pooled = mean(tokens, axis=0, keepdims=True)            # (1, C)
    logits = matmul(pooled, transpose(class_head))          # (1, classes)
    probs = sigmoid(logits)
    presence = (probs.data[0] > PRESENCE_THRESHOLD).astype(np.int64)
    return ClassProbabilities(probs=probs[0, :], logits=logits[0, :], presence=presence)


def class_activation_map(feats: np.ndarray, class_head: np.ndarray, class_idx: int) -> np.ndarray:
    """Per-patch evidence for one class: patch features dotted with its head row.

    The mean of this map over patches equals the class's pooled logit (the
    global-average-pooling decomposition).
    """
    if not 0 <= class_idx < class_head.shape[0]:
        raise IndexError(f"class index {class_idx} out of range [0, {class_head.shape[0]})")
    return feats @ class_head[class_idx]


def normalize_map(raw: np.ndarray) -> np.ndarray:
    """ReLU then min-max to [0, 1]; constant-after-ReLU maps become all zeros."""
    m = np.maximum(raw, 0.0)
    lo, hi = m.min(), m.max()
    if hi == lo:
        return np.zeros_like(m)
    return (m - lo) / (hi - lo)


def aggregate_visual_map(maps) -> np.ndarray:
    """Elementwise maximum over a non-empty set of equal-length maps."""
    maps = list(maps)
    if not maps:
        raise ShapeError("cannot aggregate an empty set of maps")
    lengths = {len(m) for m in maps}
    if len(lengths) != 1:
        raise ShapeError(f"maps disagree on length: {sorted(lengths)}")
    return np.maximum.reduce([np.asarray(m, dtype=np.float64) for m in maps])


@dataclass
class VisualMapResult:
    visual_map: np.ndarray   # (N,) in [0, 1]
    cams: np.ndarray         # (classes, N) raw per-class maps
    presence: np.ndarray
    probs: ClassProbabilities


def visual_map_from_features(tokens: Tensor, class_head: Tensor) -> VisualMapResult:
    """Full pipeline: classify, per-class maps, normalise, max-pool present set.

    When no class clears the threshold, the argmax-probability class supplies
    the map so the alignment target never vanishes.
    """
    result = classify_global(tokens, class_head)
    feats = tokens.data
    head = class_head.data
    cams = feats @ head.T                                    # (N, classes)
    cams = cams.T.copy()                                     # (classes, N)
    chosen = np.flatnonzero(result.presence)
    if chosen.size == 0:
        chosen = np.array([int(np.argmax(result.probs.data))])
    visual = aggregate_visual_map([normalize_map(cams[i]) for i in chosen])
    return VisualMapResult(visual_map=visual, cams=cams, presence=result.presence, probs=result)
