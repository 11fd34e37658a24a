"""Spatio-temporal mask metrics: track IoU, matching, mIoU and Recall."""

from __future__ import annotations

import numpy as np

from ..errors import InputError
from ..grounding import MaskTrack


def st_iou(pred: MaskTrack, gt: MaskTrack) -> float:
    """Track IoU with intersections and unions pooled over frames.

    Pooling before dividing keeps frames where the object is absent from
    dominating the score. Two empty tracks are defined as IoU 1.0.
    """
    if pred.n_frames != gt.n_frames:
        raise InputError(f"track lengths differ: {pred.n_frames} vs {gt.n_frames}")
    if pred.n_frames and pred.resolution != gt.resolution:
        raise InputError(f"resolutions differ: {pred.resolution} vs {gt.resolution}")
    inter = 0
    union = 0
    for p, g in zip(pred.masks, gt.masks):
        pb = p.astype(bool)
        gb = g.astype(bool)
        inter += int(np.logical_and(pb, gb).sum())
        union += int(np.logical_or(pb, gb).sum())
    if union == 0:
        return 1.0
    return inter / union


def match_tracks(predicted: list[MaskTrack], reference: list[MaskTrack]):
    """Greedy one-to-one matching by descending IoU.

    Returns a list aligned with `reference`: (pred_index or None, iou).
    Ties break deterministically on lower reference then prediction index.
    """
    ious = np.zeros((len(reference), len(predicted)))
    for i, ref in enumerate(reference):
        for j, pred in enumerate(predicted):
            ious[i, j] = st_iou(pred, ref)
    assigned: list[tuple[int | None, float]] = [(None, 0.0)] * len(reference)
    free_refs = set(range(len(reference)))
    free_preds = set(range(len(predicted)))
    while free_refs and free_preds:
        best = max(
            ((ious[i, j], -i, -j, i, j) for i in free_refs for j in free_preds),
        )
        _, _, _, i, j = best
        assigned[i] = (j, float(ious[i, j]))
        free_refs.remove(i)
        free_preds.remove(j)
    return assigned


def grounding_scores(pairs, iou_threshold: float = 0.5) -> tuple[float, float]:
    """(mIoU, Recall) pooled over every reference object in `pairs`.

    mIoU: mean matched IoU over reference objects, unmatched scoring 0;
    Recall: fraction of reference objects matched at IoU >= threshold.
    """
    ious: list[float] = []
    hits = 0
    for pair in pairs:
        preds = [track for _, track in pair.predicted]
        refs = [track for _, track in pair.reference]
        for pred_idx, iou in match_tracks(preds, refs):
            ious.append(iou if pred_idx is not None else 0.0)
            if pred_idx is not None and iou >= iou_threshold:
                hits += 1
    if not ious:
        return 0.0, 0.0
    return sum(ious) / len(ious), hits / len(ious)
