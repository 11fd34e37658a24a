"""LLM-as-judge caption similarity in [0, 1]."""

from __future__ import annotations

import re
from dataclasses import dataclass

PROMPT_TEMPLATE = """You are grading how well a candidate answer matches a reference answer
about the same video.

Reference: {reference}
Candidate: {candidate}

Reply with a single line of the form `Score: N` where N is an integer from
0 (unrelated) to 100 (semantically equivalent)."""

_INT_RE = re.compile(r"-?\d+")

MAX_ATTEMPTS = 3


@dataclass
class ClairResult:
    score: float | None
    flagged: bool
    attempts: int


def clair_prompt(candidate: str, reference: str) -> str:
    return PROMPT_TEMPLATE.format(candidate=candidate, reference=reference)


def parse_judge_reply(reply: str) -> float | None:
    """First integer in [0, 100], scaled to [0, 1]; None when unusable."""
    m = _INT_RE.search(reply)
    if not m:
        return None
    value = int(m.group(0))
    if not 0 <= value <= 100:
        return None
    return value / 100.0


def clair_judge(candidate: str, reference: str, client,
                max_attempts: int = MAX_ATTEMPTS) -> ClairResult:
    """Ask the judge; up to `max_attempts` tries on parse or client failure,
    then a null score with the sample flagged."""
    prompt = clair_prompt(candidate, reference)
    for attempt in range(1, max_attempts + 1):
        try:
            reply = client.complete(prompt)
        except Exception:
            continue
        score = parse_judge_reply(reply)
        if score is not None:
            return ClairResult(score, False, attempt)
    return ClairResult(None, True, max_attempts)
