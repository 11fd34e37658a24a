"""Grammar validation for generated dialogue text.

The annotation model's raw replies pass through here before a record is
accepted: tag balance over <p>/</p>, referential integrity of every
[SEG:id] and <region:id>, and the reply's role-line structure. Every
violation is reported with its byte offset and a stable kind.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

_TAG_RE = re.compile(
    r"<p>|</p>|\[SEG:([^\]\s]+)\]|\[SEG\]|<region:([^>\s]+)>|<region>"
)
_ROLE_RE = re.compile(r"^(USER|ASSISTANT)\s*:\s*(.*)$", re.IGNORECASE)


@dataclass
class ValidationIssue:
    kind: str
    offset: int
    message: str


def validate_markup_pieces(pieces, declared_ids) -> list[ValidationIssue]:
    """Validate markup over (offset, text) pieces that form one turn.

    Tag balance carries across pieces; offsets refer to the original raw
    text the pieces were cut from.
    """
    issues: list[ValidationIssue] = []
    open_at: int | None = None
    for base, text in pieces:
        for m in _TAG_RE.finditer(text):
            tag = m.group(0)
            at = base + m.start()
            if tag == "<p>":
                if open_at is not None:
                    issues.append(ValidationIssue("nested_tag", at, "nested <p>"))
                open_at = at
            elif tag == "</p>":
                if open_at is None:
                    issues.append(ValidationIssue("unexpected_close", at, "</p> without <p>"))
                open_at = None
            elif tag == "[SEG]":
                issues.append(
                    ValidationIssue("missing_object_ref", at, "[SEG] without :object_id")
                )
            elif tag == "<region>":
                issues.append(
                    ValidationIssue("missing_object_ref", at, "<region> without :object_id")
                )
            elif m.group(1) is not None:
                if m.group(1) not in declared_ids:
                    issues.append(
                        ValidationIssue("unknown_object", at, f"[SEG:{m.group(1)}] undeclared")
                    )
            elif m.group(2) is not None:
                if m.group(2) not in declared_ids:
                    issues.append(
                        ValidationIssue("unknown_object", at, f"<region:{m.group(2)}> undeclared")
                    )
    if open_at is not None:
        issues.append(ValidationIssue("unclosed_tag", open_at, "unclosed <p>"))
    return issues


def validate_markup(text: str, declared_ids, base_offset: int = 0) -> list[ValidationIssue]:
    """Check one turn's markup against the declared object ids."""
    return validate_markup_pieces([(base_offset, text)], declared_ids)


def parse_and_validate(raw_text: str, declared_ids):
    """Parse a raw annotation reply into conversation turns.

    Expected shape: lines starting with ``USER:`` or ``ASSISTANT:``;
    indented or bare continuation lines extend the current turn. Returns
    (conversation, issues); the conversation is None when structural
    problems make it unusable.
    """
    issues: list[ValidationIssue] = []
    turns: list[dict] = []
    turn_pieces: list[list[tuple[int, str]]] = []
    pos = 0
    current: dict | None = None
    for line in raw_text.splitlines(keepends=True):
        content = line.strip()
        if content:
            start = pos + (len(line) - len(line.lstrip()))
            m = _ROLE_RE.match(content)
            if m:
                body = m.group(2).strip()
                current = {"role": m.group(1).lower(), "text": body}
                turns.append(current)
                if body:
                    turn_pieces.append([(start + content.find(body), body)])
                else:
                    turn_pieces.append([])
            elif current is None:
                issues.append(
                    ValidationIssue("malformed_role", start,
                                    "content before any USER:/ASSISTANT: marker")
                )
            else:
                current["text"] = (current["text"] + " " + content).strip()
                turn_pieces[-1].append((start, content))
        pos += len(line)

    if not turns:
        issues.append(ValidationIssue("empty_conversation", 0, "no turns found"))
        return None, issues
    if turns[0]["role"] != "user":
        issues.append(ValidationIssue("malformed_role", 0, "conversation must start with USER"))
    if len(turns) < 2:
        issues.append(ValidationIssue("too_few_turns", 0, "need at least one QA pair"))
    for pieces in turn_pieces:
        issues.extend(validate_markup_pieces(pieces, declared_ids))

    structural = {"empty_conversation", "malformed_role"}
    if any(issue.kind in structural for issue in issues):
        return None, issues
    return turns, issues
