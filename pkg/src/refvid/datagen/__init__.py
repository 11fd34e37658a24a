"""Grounded-dialogue corpus construction pipeline."""

from .records import (
    GroundedDialogueRecord,
    SourceAnnotation,
    SourceObject,
    emit_jsonl,
    load_jsonl,
    validate_record,
)
from .validate import ValidationIssue, parse_and_validate, validate_markup
from .som import base_palette, extend_palette, render_som_frames
from .pseudomasks import boxes_to_pseudomasks, filter_sources
from .dialogue import load_templates, synthesize_dialogue
from .synthetic import generate_synthetic_corpus, save_frames_archive, load_frames_archive
from .pipeline import run_pipeline

__all__ = [
    "GroundedDialogueRecord",
    "SourceAnnotation",
    "SourceObject",
    "ValidationIssue",
    "base_palette",
    "boxes_to_pseudomasks",
    "emit_jsonl",
    "extend_palette",
    "filter_sources",
    "generate_synthetic_corpus",
    "load_frames_archive",
    "load_jsonl",
    "load_templates",
    "parse_and_validate",
    "render_som_frames",
    "run_pipeline",
    "save_frames_archive",
    "synthesize_dialogue",
    "validate_markup",
    "validate_record",
]
