"""Dialogue synthesis through an annotation-service client."""

from __future__ import annotations

import logging
import re
from importlib import resources
from pathlib import Path

from ..clients import CompletionClient
from .validate import parse_and_validate, validate_markup

log = logging.getLogger(__name__)

_DESC_LINE_RE = re.compile(r"^\s*([A-Za-z0-9_\-]+)\s*:\s*(.+?)\s*$")

MAX_ATTEMPTS = 3  # initial call + 2 re-prompts


def load_templates(template_dir=None) -> dict[str, str]:
    """Load the prompt templates (versioned text assets)."""
    if template_dir is not None:
        base = Path(template_dir)
        return {
            "describe": (base / "describe.txt").read_text(encoding="utf-8"),
            "dialogue": (base / "dialogue.txt").read_text(encoding="utf-8"),
        }
    pkg = resources.files(__package__) / "templates"
    return {
        "describe": (pkg / "describe.txt").read_text(encoding="utf-8"),
        "dialogue": (pkg / "dialogue.txt").read_text(encoding="utf-8"),
    }


def _object_lines(color_map, objects) -> str:
    lines = []
    for obj in objects:
        name, _rgb = color_map[obj.object_id]
        extra = f" ({obj.category})" if obj.category else ""
        lines.append(f"- {obj.object_id}: {name} box{extra}")
    return "\n".join(lines)


def parse_descriptions(raw: str, declared_ids) -> tuple[list[dict], list[str]]:
    """Parse `object_id: text` lines; returns (descriptions, problems)."""
    found: dict[str, str] = {}
    problems: list[str] = []
    for line in raw.splitlines():
        if not line.strip():
            continue
        m = _DESC_LINE_RE.match(line)
        if not m:
            problems.append(f"unparseable description line: {line.strip()[:60]!r}")
            continue
        object_id, text = m.group(1), m.group(2)
        if object_id not in declared_ids:
            problems.append(f"description for undeclared object {object_id!r}")
            continue
        found[object_id] = text
    missing = [i for i in declared_ids if i not in found]
    if missing:
        problems.append(f"missing descriptions for {missing}")
    return [{"object_id": k, "text": v} for k, v in found.items()], problems


def synthesize_dialogue(annotated_frame_refs, color_map, objects,
                        client: CompletionClient, templates: dict[str, str],
                        video_id: str):
    """Two client calls per video: object descriptions, then the dialogue.

    Raw replies pass the grammar validator before acceptance; a failing
    reply is re-prompted up to twice, after which the video is dropped
    (returns None) and logged.
    """
    declared = [obj.object_id for obj in objects]
    object_lines = _object_lines(color_map, objects)
    describe_prompt = templates["describe"].format(
        video_id=video_id, n_frames=len(annotated_frame_refs), object_lines=object_lines
    )

    descriptions = None
    for attempt in range(MAX_ATTEMPTS):
        raw = client.complete(describe_prompt, tuple(annotated_frame_refs))
        parsed, problems = parse_descriptions(raw, declared)
        markup_issues = [
            issue for d in parsed for issue in validate_markup(d["text"], set(declared))
        ]
        if not problems and not markup_issues:
            descriptions = parsed
            break
        log.warning("video %s: description reply attempt %d rejected: %s",
                    video_id, attempt + 1, problems + [i.kind for i in markup_issues])
    if descriptions is None:
        log.warning("video %s dropped: descriptions failed validation", video_id)
        return None

    description_lines = "\n".join(f"- {d['object_id']}: {d['text']}" for d in descriptions)
    dialogue_prompt = templates["dialogue"].format(
        video_id=video_id, n_frames=len(annotated_frame_refs),
        object_lines=object_lines, description_lines=description_lines,
    )
    for attempt in range(MAX_ATTEMPTS):
        raw = client.complete(dialogue_prompt, tuple(annotated_frame_refs))
        conversation, issues = parse_and_validate(raw, set(declared))
        if conversation is not None and not issues:
            return descriptions, conversation
        log.warning("video %s: dialogue reply attempt %d rejected: %s",
                    video_id, attempt + 1, [i.kind for i in issues])
    log.warning("video %s dropped: dialogue failed validation", video_id)
    return None
