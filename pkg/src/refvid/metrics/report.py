"""Per-sample evaluation pairs and the corpus metric report."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from ..errors import InputError
from ..grounding import MaskTrack
from ..rle import decode_mask
from .clair import clair_judge
from .masks import grounding_scores
from .text import cider, meteor

_MARKUP_RE = re.compile(r"</?p>|\[SEG(?::[^\]\s]+)?\]|<region(?::[^>\s]+)?>")


def strip_markup(text: str) -> str:
    """Remove grounding markup, leaving the prose for text metrics."""
    return " ".join(_MARKUP_RE.sub(" ", text).split())


@dataclass
class EvalPair:
    """One evaluated unit: an assistant turn's prediction vs reference."""

    sample_id: str
    predicted: list[tuple[str, MaskTrack]]
    reference: list[tuple[str, MaskTrack]]
    pred_text: str
    ref_text: str

    def __post_init__(self):
        tracks = [t for _, t in self.predicted] + [t for _, t in self.reference]
        if tracks:
            frames = tracks[0].n_frames
            resolution = tracks[0].resolution
            for t in tracks[1:]:
                if t.n_frames != frames or t.resolution != resolution:
                    raise InputError(
                        f"sample {self.sample_id}: mask tracks disagree on shape"
                    )


@dataclass
class MetricReport:
    per_sample: list[dict]
    miou: float
    recall: float
    meteor: float
    cider: float
    clair: float | None
    counts: dict = field(default_factory=dict)

    def to_json(self, indent: int = 2) -> str:
        return json.dumps({
            "aggregates": {
                "miou": self.miou,
                "recall": self.recall,
                "meteor": self.meteor,
                "cider": self.cider,
                "clair": self.clair,
            },
            "counts": self.counts,
            "per_sample": self.per_sample,
        }, indent=indent)

    def format_table(self) -> str:
        rows = [
            ("samples", str(self.counts.get("samples", 0))),
            ("mIoU", f"{self.miou:.4f}"),
            ("Recall", f"{self.recall:.4f}"),
            ("METEOR", f"{self.meteor:.4f}"),
            ("CIDEr", f"{self.cider:.4f}"),
        ]
        if self.clair is not None:
            rows.append(("CLAIR", f"{self.clair:.4f}"))
        if self.counts.get("clair_flagged"):
            rows.append(("CLAIR flagged", str(self.counts["clair_flagged"])))
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


def evaluate_pairs(pairs: list[EvalPair], iou_threshold: float = 0.5,
                   clair_client=None) -> MetricReport:
    """Score every pair and aggregate.

    mIoU/Recall/METEOR/CLAIR aggregate as arithmetic means of per-sample
    values (CLAIR over non-null only); CIDEr is computed corpus-level so a
    sample's score depends on the whole reference set.
    """
    if not pairs:
        raise InputError("nothing to evaluate")
    _, cider_scores = cider([p.pred_text for p in pairs], [[p.ref_text] for p in pairs])
    per_sample = []
    flagged = 0
    for pair, cider_score in zip(pairs, cider_scores):
        miou, recall = grounding_scores([pair], iou_threshold)
        row = {
            "sample_id": pair.sample_id,
            "miou": miou,
            "recall": recall,
            "meteor": meteor(pair.pred_text, [pair.ref_text]),
            "cider": cider_score,
        }
        if clair_client is not None:
            result = clair_judge(pair.pred_text, pair.ref_text, clair_client)
            row["clair"] = result.score
            row["clair_flagged"] = result.flagged
            flagged += result.flagged
        per_sample.append(row)

    def mean(key):
        return sum(r[key] for r in per_sample) / len(per_sample)

    clair_values = [r["clair"] for r in per_sample if r.get("clair") is not None]
    counts = {"samples": len(per_sample)}
    if clair_client is not None:
        counts["clair_scored"] = len(clair_values)
        counts["clair_flagged"] = flagged
    return MetricReport(
        per_sample=per_sample,
        miou=mean("miou"),
        recall=mean("recall"),
        meteor=mean("meteor"),
        cider=mean("cider"),
        clair=sum(clair_values) / len(clair_values) if clair_values else None,
        counts=counts,
    )


def _track_from_rles(rles, object_id=None) -> MaskTrack:
    return MaskTrack([decode_mask(r) for r in rles], object_id=object_id)


def pairs_from_record(record: dict, predictions: list[dict] | None = None) -> list[EvalPair]:
    """Build one EvalPair per assistant turn of an evaluation record.

    The reference side comes from the turn's markup and the record's mask
    tracks; predictions align by assistant-turn order and carry
    {"text", "objects": [{"phrase", "rle_masks"}]}. A missing prediction
    entry scores as empty.
    """
    from ..grounding import parse_phrase_seg_pairs
    from ..tokenizer import split_tokens
    from ..tokens import SEG_TOKEN

    predictions = predictions if predictions is not None else record.get("predictions", [])
    masks_by_object = {o["object_id"]: o["rle_masks"] for o in record["objects"]}
    pairs = []
    assistant_idx = 0
    for turn in record["conversation"]:
        if turn["role"] != "assistant":
            continue
        seg_ids = [info.object_id for info in split_tokens(turn["text"])
                   if info.surface == SEG_TOKEN and info.object_id]
        spans = parse_phrase_seg_pairs(re.sub(r"\[SEG:[^\]\s]+\]", "[SEG]", turn["text"]))
        bound = sorted((s for s in spans if s.seg_index is not None), key=lambda s: s.seg_index)
        reference = [
            (span.text, _track_from_rles(masks_by_object[obj_id], obj_id))
            for span, obj_id in zip(bound, seg_ids)
        ]
        prediction = predictions[assistant_idx] if assistant_idx < len(predictions) else {}
        predicted = [
            (obj.get("phrase", ""), _track_from_rles(obj["rle_masks"]))
            for obj in prediction.get("objects", [])
        ]
        pairs.append(EvalPair(
            sample_id=f"{record['video_id']}#turn{assistant_idx}",
            predicted=predicted,
            reference=reference,
            pred_text=strip_markup(prediction.get("text", "")),
            ref_text=strip_markup(turn["text"]),
        ))
        assistant_idx += 1
    return pairs
