"""Source annotations, the grounded-dialogue record schema, and JSONL I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DataError
from ..rle import decode_mask
from .validate import validate_markup

# A GroundedDialogueRecord is the JSONL row shape (plain dict):
# {
#   "video_id": str,
#   "sampled_frames": ["<video_id>#<frame_idx>", ...],
#   "objects": [{"object_id", "color_tag", "rle_masks": [rle, ...], "category"?}],
#   "descriptions": [{"object_id", "text"}],
#   "conversation": [{"role": "user"|"assistant", "text": str}, ...],
# }
GroundedDialogueRecord = dict


@dataclass
class SourceObject:
    object_id: str
    masks: list | None = None   # per-frame np.ndarray or None where absent
    boxes: list | None = None   # per-frame (x0, y0, x1, y1) or None
    category: str | None = None
    expression: str | None = None


@dataclass
class SourceAnnotation:
    video_id: str
    frames: list  # np.ndarray [H, W, 3] uint8 per frame
    objects: list[SourceObject] = field(default_factory=list)
    kind: str = "mask"

    def __post_init__(self):
        if not self.objects:
            raise DataError(f"source {self.video_id} has no objects")
        for obj in self.objects:
            for track in (obj.masks, obj.boxes):
                if track is not None and len(track) != len(self.frames):
                    raise DataError(
                        f"object {obj.object_id} track length {len(track)} != {len(self.frames)} frames"
                    )


def emit_jsonl(records, path) -> int:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")
    return len(records)


def load_jsonl(path) -> list[dict]:
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataError(f"malformed JSON: {exc.msg}", line=lineno) from exc
    return records


def validate_record(record: dict) -> list:
    """Whole-record checks: schema presence, color-object bijection,
    referential integrity of every markup tag, mask/frame alignment."""
    from .validate import ValidationIssue

    issues: list[ValidationIssue] = []
    objects = record.get("objects", [])
    if not objects:
        issues.append(ValidationIssue("no_objects", 0, "record declares no objects"))
        return issues
    ids = [o["object_id"] for o in objects]
    colors = [o.get("color_tag") for o in objects]
    if len(set(ids)) != len(ids):
        issues.append(ValidationIssue("duplicate_object", 0, "object ids are not unique"))
    if None in colors or len(set(colors)) != len(colors):
        issues.append(
            ValidationIssue("color_bijection", 0, "colors and objects must map one-to-one")
        )
    n_frames = len(record.get("sampled_frames", []))
    for obj in objects:
        masks = obj.get("rle_masks", [])
        if len(masks) != n_frames:
            issues.append(
                ValidationIssue(
                    "mask_frame_mismatch", 0,
                    f"object {obj['object_id']} has {len(masks)} masks for {n_frames} frames",
                )
            )
            continue
        try:
            for rle in masks:
                decode_mask(rle)
        except DataError as exc:
            issues.append(ValidationIssue("bad_rle", 0, f"{obj['object_id']}: {exc}"))
    declared = set(ids)
    for desc in record.get("descriptions", []):
        if desc["object_id"] not in declared:
            issues.append(
                ValidationIssue("unknown_object", 0,
                                f"description references {desc['object_id']!r}")
            )
    for turn in record.get("conversation", []):
        issues.extend(validate_markup(turn.get("text", ""), declared))
    return issues
