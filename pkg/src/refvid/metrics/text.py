"""Caption metrics: alignment F-score with fragmentation penalty, and
consensus TF-IDF n-gram scoring."""

from __future__ import annotations

import math
import re
from collections import Counter, defaultdict

from ..errors import ConfigError
from .porter import porter_stem

_WORD_RE = re.compile(r"[a-z0-9']+")


def tokenize_text(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


def _align(candidate: list[str], reference: list[str]):
    """Two-stage in-order alignment: exact matches first, then stems.

    Each token matches at most once. Returns (cand_idx, ref_idx) pairs
    sorted by candidate position.
    """
    matches: list[tuple[int, int]] = []
    used_c = [False] * len(candidate)
    used_r = [False] * len(reference)

    def run_stage(key):
        ref_slots: dict[str, list[int]] = defaultdict(list)
        for j, tok in enumerate(reference):
            if not used_r[j]:
                ref_slots[key(tok)].append(j)
        for i, tok in enumerate(candidate):
            if used_c[i]:
                continue
            slots = ref_slots.get(key(tok))
            if slots:
                j = slots.pop(0)
                used_c[i] = True
                used_r[j] = True
                matches.append((i, j))

    run_stage(lambda t: t)
    run_stage(porter_stem)
    return sorted(matches)


def _count_chunks(matches: list[tuple[int, int]]) -> int:
    chunks = 0
    prev = None
    for ci, rj in matches:
        if prev is None or ci != prev[0] + 1 or rj != prev[1] + 1:
            chunks += 1
        prev = (ci, rj)
    return chunks


def meteor(candidate: str, references, alpha: float = 0.9, beta: float = 3.0,
           gamma: float = 0.5) -> float:
    """Unigram alignment score, the max over the reference set.

    score = F_mean * (1 - gamma * (chunks / matches)^beta) with
    F_mean = P*R / (alpha*P + (1-alpha)*R). Exact and stem matching only.
    """
    if isinstance(references, str):
        references = [references]
    cand_tokens = tokenize_text(candidate)
    if not cand_tokens:
        return 0.0
    best = 0.0
    for reference in references:
        ref_tokens = tokenize_text(reference)
        if not ref_tokens:
            continue
        matches = _align(cand_tokens, ref_tokens)
        m = len(matches)
        if m == 0:
            continue
        precision = m / len(cand_tokens)
        recall = m / len(ref_tokens)
        f_mean = precision * recall / (alpha * precision + (1 - alpha) * recall)
        penalty = gamma * (_count_chunks(matches) / m) ** beta
        best = max(best, f_mean * (1 - penalty))
    return best


def _ngram_counts(tokens: list[str], max_n: int) -> list[Counter]:
    return [
        Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))
        for n in range(1, max_n + 1)
    ]


def cider(candidates: list[str], references: list[list[str]], n: int = 4,
          sigma: float = 6.0) -> tuple[float, list[float]]:
    """Consensus TF-IDF n-gram score, x10, with Gaussian length penalty.

    Document frequencies come from the reference side only; candidate
    n-gram counts are clipped to the reference counts. Returns
    (corpus mean, per-sample scores). Per-sample values depend on the whole
    reference corpus through the document frequencies.
    """
    if len(candidates) != len(references):
        raise ConfigError(f"{len(candidates)} candidates vs {len(references)} reference sets")
    if not references or any(not refs for refs in references):
        raise ConfigError("every sample needs at least one reference")

    ref_counts = [
        [_ngram_counts(tokenize_text(r), n) for r in refs] for refs in references
    ]
    doc_freq: Counter = Counter()
    for refs in ref_counts:
        seen = set()
        for counts in refs:
            for level in counts:
                seen.update(level.keys())
        doc_freq.update(seen)
    log_docs = math.log(len(references))

    def to_vec(counts: list[Counter]):
        vec = [{} for _ in range(n)]
        norm = [0.0] * n
        length = sum(counts[0].values())
        for level, counter in enumerate(counts):
            for ngram, tf in counter.items():
                idf = log_docs - math.log(max(1.0, doc_freq[ngram]))
                weight = tf * idf
                vec[level][ngram] = weight
                norm[level] += weight * weight
        return vec, [math.sqrt(v) for v in norm], length

    scores = []
    for cand, refs in zip(candidates, ref_counts):
        cand_vec, cand_norm, cand_len = to_vec(_ngram_counts(tokenize_text(cand), n))
        acc = [0.0] * n
        for ref in refs:
            ref_vec, ref_norm, ref_len = to_vec(ref)
            delta = cand_len - ref_len
            for level in range(n):
                val = 0.0
                for ngram, weight in cand_vec[level].items():
                    val += min(weight, ref_vec[level].get(ngram, 0.0)) * ref_vec[level].get(ngram, 0.0)
                if cand_norm[level] > 0 and ref_norm[level] > 0:
                    val /= cand_norm[level] * ref_norm[level]
                acc[level] += val * math.exp(-(delta ** 2) / (2 * sigma ** 2))
        per_n = [a / len(refs) for a in acc]
        scores.append(10.0 * sum(per_n) / n)
    corpus = sum(scores) / len(scores)
    return corpus, scores
