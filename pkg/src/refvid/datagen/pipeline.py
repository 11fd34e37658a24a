"""End-to-end corpus construction: pseudomasks, SoM, dialogue, records."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..rle import encode_mask
from .dialogue import load_templates, synthesize_dialogue
from .pseudomasks import boxes_to_pseudomasks, filter_sources
from .records import SourceAnnotation, validate_record
from .som import render_som_frames

log = logging.getLogger(__name__)


@dataclass
class PipelineLedger:
    """Per-source-kind clip/QA/description counts, printable as a table."""

    per_source: dict = field(default_factory=dict)
    dropped: list = field(default_factory=list)

    def add(self, kind: str, qa_pairs: int, descriptions: int):
        row = self.per_source.setdefault(kind, {"clips": 0, "qa_pairs": 0, "descriptions": 0})
        row["clips"] += 1
        row["qa_pairs"] += qa_pairs
        row["descriptions"] += descriptions

    def totals(self) -> dict:
        total = {"clips": 0, "qa_pairs": 0, "descriptions": 0}
        for row in self.per_source.values():
            for key in total:
                total[key] += row[key]
        return total

    def format_table(self) -> str:
        lines = [f"{'source':<12} {'clips':>8} {'qa_pairs':>10} {'descriptions':>14}"]
        for kind, row in sorted(self.per_source.items()):
            lines.append(
                f"{kind:<12} {row['clips']:>8} {row['qa_pairs']:>10} {row['descriptions']:>14}"
            )
        total = self.totals()
        lines.append(
            f"{'total':<12} {total['clips']:>8} {total['qa_pairs']:>10} {total['descriptions']:>14}"
        )
        if self.dropped:
            lines.append(f"dropped: {len(self.dropped)} video(s)")
        return "\n".join(lines)

    def as_dict(self) -> dict:
        return {"per_source": self.per_source, "totals": self.totals(),
                "dropped": list(self.dropped)}


def source_to_record(source: SourceAnnotation, sample_indices, color_map,
                     descriptions, conversation) -> dict:
    objects = []
    for obj in source.objects:
        rles = []
        for idx in sample_indices:
            mask = obj.masks[idx] if obj.masks is not None else None
            if mask is None:
                mask = np.zeros(source.frames[0].shape[:2], dtype=bool)
            rles.append(encode_mask(mask))
        entry = {
            "object_id": obj.object_id,
            "color_tag": color_map[obj.object_id][0],
            "rle_masks": rles,
        }
        if obj.category:
            entry["category"] = obj.category
        objects.append(entry)
    return {
        "video_id": source.video_id,
        "sampled_frames": [f"{source.video_id}#{idx:02d}" for idx in sample_indices],
        "objects": objects,
        "descriptions": descriptions,
        "conversation": conversation,
    }


def run_pipeline(sources, client, templates=None, palette=None, segmenter=None,
                 filter_single_object: bool = True, filter_kinds=None,
                 n_samples: int = 16):
    """Transform annotated sources into grounded-dialogue records.

    Returns (records, ledger). Videos are dropped (and ledgered) when the
    annotation replies fail validation, when frames are too few to sample,
    or when the produced record fails the whole-record validator.
    """
    templates = templates or load_templates()
    ledger = PipelineLedger()
    prepared = []
    for source in sources:
        if any(obj.boxes is not None for obj in source.objects):
            source, flags = boxes_to_pseudomasks(source, segmenter)
            for flag in flags:
                log.info("pseudomask flag on %s: %s", source.video_id, flag)
        prepared.append(source)
    if filter_single_object:
        before = {s.video_id for s in prepared}
        prepared = filter_sources(prepared, apply_to_kinds=filter_kinds)
        for vid in sorted(before - {s.video_id for s in prepared}):
            ledger.dropped.append({"video_id": vid, "reason": "single_object"})

    records = []
    for source in prepared:
        try:
            annotated, color_map, sample_indices = render_som_frames(
                source, palette=palette, n_samples=n_samples
            )
        except Exception as exc:
            ledger.dropped.append({"video_id": source.video_id, "reason": str(exc)})
            continue
        frame_refs = [f"{source.video_id}#{idx:02d}" for idx in sample_indices]
        result = synthesize_dialogue(frame_refs, color_map, source.objects, client,
                                     templates, source.video_id)
        if result is None:
            ledger.dropped.append({"video_id": source.video_id, "reason": "validation_failed"})
            continue
        descriptions, conversation = result
        record = source_to_record(source, sample_indices, color_map, descriptions, conversation)
        issues = validate_record(record)
        if issues:
            ledger.dropped.append({
                "video_id": source.video_id,
                "reason": f"record_invalid: {[i.kind for i in issues]}",
            })
            continue
        ledger.add(source.kind, qa_pairs=len(conversation) // 2,
                   descriptions=len(descriptions))
        records.append(record)
    return records, ledger
