"""Grounded-dialogue evaluation: mask IoU/Recall, text metrics, judge."""

from .masks import grounding_scores, match_tracks, st_iou
from .text import cider, meteor, tokenize_text
from .clair import ClairResult, clair_judge, clair_prompt
from .report import EvalPair, MetricReport, evaluate_pairs, pairs_from_record, strip_markup

__all__ = [
    "ClairResult",
    "EvalPair",
    "MetricReport",
    "cider",
    "clair_judge",
    "clair_prompt",
    "evaluate_pairs",
    "grounding_scores",
    "match_tracks",
    "meteor",
    "pairs_from_record",
    "st_iou",
    "strip_markup",
    "tokenize_text",
]
