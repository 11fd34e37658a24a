"""Run-length codec for binary masks.

Row-major scan, alternating run counts starting with the 0-run (the first
count may be 0 when the mask begins with a foreground pixel). This codec is
shared byte-for-byte by the grounding head, the metrics loader, and the data
pipeline's JSONL records.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError


def encode_mask(mask: np.ndarray) -> dict:
    """Encode a 2D binary mask as ``{"size": [h, w], "counts": [...]}``."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise DataError(f"mask must be 2D, got shape {mask.shape}")
    h, w = mask.shape
    flat = (mask.reshape(-1) != 0).astype(np.int8)
    counts: list[int] = []
    if flat.size == 0:
        return {"size": [h, w], "counts": counts}
    change = np.flatnonzero(np.diff(flat)) + 1
    edges = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(edges)
    if flat[0] == 1:
        counts.append(0)
    counts.extend(int(r) for r in runs)
    return {"size": [h, w], "counts": counts}


def decode_mask(rle: dict) -> np.ndarray:
    """Decode back to a bool array of shape ``size``."""
    try:
        h, w = (int(v) for v in rle["size"])
        counts = [int(c) for c in rle["counts"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed RLE object: {exc}") from exc
    total = sum(counts)
    if total != h * w:
        raise DataError(f"RLE counts sum to {total}, expected {h * w}")
    if any(c < 0 for c in counts):
        raise DataError("negative run count")
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    value = False
    for c in counts:
        if value:
            flat[pos : pos + c] = True
        pos += c
        value = not value
    return flat.reshape(h, w)
