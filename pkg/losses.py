"""
Training losses for the NeRF-ID toolkit
Reconstruction error, greedy proposal matching and balanced importance classification
"""

import logging
from typing import Optional, Tuple, Union

import numpy as np

import gradcore as gc
from gradcore import Tensor
from render import SamplePositions

logger = logging.getLogger(__name__)

IMPORTANCE_WEIGHT_THRESHOLD = 0.03

ArrayLike = Union[Tensor, np.ndarray, SamplePositions]


def _values(x: ArrayLike) -> np.ndarray:
    if isinstance(x, SamplePositions):
        return x.values
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


def _rows(x: Tensor) -> Tensor:
    return x if x.ndim >= 2 else gc.reshape(x, (1,) + x.shape)


def mse_loss(prediction: Tensor, target: np.ndarray, scale: float = 1.0) -> Tensor:
    """Mean squared error; ``scale`` reweights a chunk's share of a larger batch"""
    target = np.asarray(target)
    if prediction.shape != target.shape:
        raise gc.ShapeError(f"mse_loss: prediction {prediction.shape} vs target {target.shape}")
    diff = gc.sub(prediction, gc.constant(target))
    return gc.mul(gc.mean(gc.square(diff)), scale)


def greedy_match(heuristic: np.ndarray, learnt: np.ndarray) -> np.ndarray:
    """For each heuristic sample, the index of its closest proposal (ties go to the lowest index)"""
    distance = np.abs(heuristic[..., :, None] - learnt[..., None, :])
    return np.argmin(distance, axis=-1)


def greedy_match_loss(heuristic: ArrayLike, learnt: Tensor, distance: str = 'squared',
                      scale: float = 1.0) -> Tuple[Tensor, np.ndarray]:
    """
    Pull the closest learnt proposal towards every heuristic sample

    Matching is many-to-one: several heuristic samples may claim the same
    proposal, and proposals nobody claims receive no gradient.

    Args:
        heuristic: Heuristic samples (R, N_f) or (N_f,); treated as targets
        learnt: Raw, unsorted proposals with the same shape
        distance: 'squared' or 'absolute'
        scale: Multiplier applied to the per-ray mean

    Returns:
        (loss summed over samples and averaged over rays, match index j(k))
    """
    targets = _values(heuristic)
    if targets.shape != learnt.shape:
        raise gc.ShapeError(f"greedy_match_loss: heuristic {targets.shape} vs learnt {learnt.shape}")
    if distance not in ('squared', 'absolute'):
        raise ValueError(f"Unknown match distance '{distance}', expected 'squared' or 'absolute'")

    rows = targets.reshape(-1, targets.shape[-1])
    proposals = _rows(learnt)
    match = greedy_match(rows, proposals.data)
    diff = gc.sub(gc.gather(proposals, match, axis=-1), gc.constant(rows))
    per_sample = gc.square(diff) if distance == 'squared' else gc.absolute(diff)
    loss = gc.mul(gc.sum(per_sample), scale / rows.shape[0])
    return loss, match.reshape(targets.shape)


def importance_labels(fine_weights: np.ndarray, threshold: float = IMPORTANCE_WEIGHT_THRESHOLD) -> np.ndarray:
    return (np.asarray(fine_weights) > threshold).astype(np.float64)


def importance_loss(logits: Tensor, fine_weights: Union[Tensor, np.ndarray],
                    threshold: float = IMPORTANCE_WEIGHT_THRESHOLD, scale: float = 1.0) -> Tensor:
    """
    Balanced logistic loss: half the mean BCE over positives plus half over negatives

    A sample is positive when its fine rendering weight exceeds ``threshold``.
    On a ray where one class is empty that half contributes 0. The weights
    are targets only.
    """
    weights = _values(fine_weights)
    if weights.shape != logits.shape:
        raise gc.ShapeError(f"importance_loss: logits {logits.shape} vs weights {weights.shape}")

    labels = importance_labels(weights, threshold).reshape(-1, weights.shape[-1])
    z = _rows(logits)
    positives = labels.sum(axis=-1, keepdims=True)
    negatives = labels.shape[-1] - positives
    with np.errstate(divide='ignore', invalid='ignore'):
        coefficient = np.where(labels > 0,
                               np.where(positives > 0, 0.5 / positives, 0.0),
                               np.where(negatives > 0, 0.5 / negatives, 0.0))

    bce = gc.sub(gc.softplus(z), gc.mul(z, gc.constant(labels)))
    return gc.mul(gc.sum(gc.mul(bce, gc.constant(coefficient))), scale / labels.shape[0])


def align_importance(logits: Tensor, layout: str, merged: SamplePositions, n_coarse: int,
                     fine_slot: Optional[np.ndarray] = None) -> Tensor:
    """
    Reorder importance logits to follow the merged, sorted samples

    Args:
        logits: Proposer logits (R, N_c + N_f)
        layout: 'merged' (already in merged order) or 'source' (coarse tokens then proposal slots)
        merged: Merged samples carrying source/source_index maps
        n_coarse: N_c
        fine_slot: For 'source' layout, the proposal slot scoring each fine
            operand sample: the sort order of the proposals, or the greedy
            match j(k) when the fine operand is the heuristic set

    Returns:
        Logits aligned with ``merged``
    """
    if layout == 'merged':
        return logits
    if layout != 'source':
        raise ValueError(f"Unknown importance layout '{layout}'")
    if fine_slot is None or merged.source is None:
        raise ValueError("align_importance: 'source' layout needs merge maps and fine_slot")

    source = merged.source.reshape(-1, merged.source.shape[-1])
    index = merged.source_index.reshape(source.shape)
    slots = np.asarray(fine_slot).reshape(source.shape[0], -1)
    fine_index = np.take_along_axis(slots, np.where(source == 1, index, 0), axis=-1)
    aligned = np.where(source == 1, n_coarse + fine_index, index)
    return gc.reshape(gc.gather(_rows(logits), aligned, axis=-1), logits.shape)
