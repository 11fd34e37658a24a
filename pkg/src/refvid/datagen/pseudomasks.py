"""Box-to-mask promotion and source-level filtering."""

from __future__ import annotations

from dataclasses import replace
from typing import Protocol

import numpy as np

from .records import SourceAnnotation


class PromptableSegmenter(Protocol):
    """Seam for a real box-promptable segmenter."""

    def segment(self, frame: np.ndarray, box) -> np.ndarray: ...


def _filled_box(shape, box) -> np.ndarray:
    h, w = shape
    x0, y0, x1, y1 = (int(v) for v in box)
    mask = np.zeros((h, w), dtype=bool)
    mask[max(0, y0):min(h, y1), max(0, x0):min(w, x1)] = True
    return mask


def _dilated_box(shape, box, margin: float):
    h, w = shape
    x0, y0, x1, y1 = box
    mx = (x1 - x0) * margin
    my = (y1 - y0) * margin
    return (max(0, x0 - mx), max(0, y0 - my), min(w, x1 + mx), min(h, y1 + my))


def boxes_to_pseudomasks(source: SourceAnnotation, segmenter: PromptableSegmenter | None = None,
                         margin: float = 0.10):
    """Give every box-tracked object a mask track.

    The segmenter output is clipped to the box dilated by `margin` per side;
    a segmenter failure (or no segmenter) falls back to the filled box.
    Returns (new_source, flags) where flags record fallbacks and clips as
    {"object_id", "frame", "reason"}.
    """
    flags: list[dict] = []
    new_objects = []
    frame_shape = source.frames[0].shape[:2]
    for obj in source.objects:
        if obj.boxes is None:
            new_objects.append(obj)
            continue
        masks: list = []
        for frame_idx, box in enumerate(obj.boxes):
            if box is None:
                masks.append(obj.masks[frame_idx] if obj.masks else None)
                continue
            mask = None
            if segmenter is not None:
                try:
                    mask = np.asarray(
                        segmenter.segment(source.frames[frame_idx], box), dtype=bool
                    )
                except Exception:
                    flags.append({"object_id": obj.object_id, "frame": frame_idx,
                                  "reason": "segmenter_failure"})
            if mask is None:
                mask = _filled_box(frame_shape, box)
            dx0, dy0, dx1, dy1 = _dilated_box(frame_shape, box, margin)
            allowed = _filled_box(frame_shape, (int(dx0), int(dy0), int(np.ceil(dx1)), int(np.ceil(dy1))))
            clipped = mask & allowed
            if clipped.sum() != mask.sum():
                flags.append({"object_id": obj.object_id, "frame": frame_idx,
                              "reason": "clipped_to_box_margin"})
            if not clipped.any():
                clipped = _filled_box(frame_shape, box)
                flags.append({"object_id": obj.object_id, "frame": frame_idx,
                              "reason": "empty_after_clip_fallback"})
            masks.append(clipped)
        new_objects.append(replace(obj, masks=masks))
    return SourceAnnotation(source.video_id, source.frames, new_objects, source.kind), flags


def filter_sources(sources, apply_to_kinds=None) -> list[SourceAnnotation]:
    """Drop single-object videos; `apply_to_kinds` limits the rule to some
    source families (None applies it everywhere)."""
    kept = []
    for source in sources:
        applies = apply_to_kinds is None or source.kind in apply_to_kinds
        if applies and len(source.objects) < 2:
            continue
        kept.append(source)
    return kept
