"""Visual object prompts, mask pooling, and token-stream assembly.

An object prompt (box, mask, or point set) on one frame becomes a binary
frame mask, the mask selects patch features to pool into a single region
embedding, and the embedding is spliced into the text region of the
multimodal token stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .aggregator import AggregatedContext
from .errors import ConfigError, InputError, NonFiniteError

PROMPT_KINDS = ("box", "mask", "points")
VALID_POINT_COUNTS = (1, 2, 4, 8)

SEGMENT_KEYFRAME = "keyframe_visual"
SEGMENT_AGGREGATED = "aggregated_visual"
SEGMENT_TEXT = "text"
SEGMENT_OBJECT = "object_ref"
SEGMENT_SEG = "seg_token"


@dataclass
class ObjectPrompt:
    """A visual prompt designating one object on a single frame."""

    kind: str
    frame_index: int = 0
    box: tuple[float, float, float, float] | None = None
    mask: np.ndarray | None = None
    points: list[tuple[float, float]] | None = None

    def __post_init__(self):
        if self.kind not in PROMPT_KINDS:
            raise InputError(f"unknown prompt kind {self.kind!r}")
        if self.kind == "box":
            if self.box is None:
                raise InputError("box prompt needs a box")
            x0, y0, x1, y1 = self.box
            if not (x0 < x1 and y0 < y1):
                raise InputError(f"degenerate box {self.box}")
        elif self.kind == "mask":
            if self.mask is None or not np.any(self.mask):
                raise InputError("mask prompt needs a nonempty mask")
        else:
            if not self.points or len(self.points) not in VALID_POINT_COUNTS:
                raise InputError(
                    f"point prompt needs {VALID_POINT_COUNTS} points, got {0 if not self.points else len(self.points)}"
                )


def prompt_to_mask(prompt: ObjectPrompt, frame_shape: tuple[int, int],
                   point_radius: int = 2) -> np.ndarray:
    """Convert any prompt kind to a binary frame mask.

    box -> filled rectangle over [y0, y1) x [x0, x1); points -> union of
    Euclidean disks of `point_radius`; mask -> identity.
    """
    h, w = frame_shape
    if prompt.kind == "mask":
        if prompt.mask.shape != (h, w):
            raise InputError(
                f"mask prompt shape {prompt.mask.shape} does not match frame {frame_shape}"
            )
        return prompt.mask.astype(bool).copy()
    out = np.zeros((h, w), dtype=bool)
    if prompt.kind == "box":
        x0, y0, x1, y1 = (int(round(v)) for v in prompt.box)
        if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
            raise InputError(f"box {prompt.box} outside frame {frame_shape}")
        out[y0:y1, x0:x1] = True
        return out
    ys, xs = np.mgrid[0:h, 0:w]
    for px, py in prompt.points:
        if not (0 <= px < w and 0 <= py < h):
            raise InputError(f"point ({px}, {py}) outside frame {frame_shape}")
        out |= (xs - px) ** 2 + (ys - py) ** 2 <= point_radius ** 2
    if not out.any():
        raise InputError("point prompt produced an empty mask")
    return out


def mask_to_patch_selection(mask: np.ndarray, patch_grid: tuple[int, int],
                            min_coverage: float = 0.05) -> np.ndarray:
    """Flat indices of patch cells the mask covers.

    A cell is selected when the mask covers at least `min_coverage` of its
    pixels (any-overlap rule); if nothing clears the bar, the single cell
    with maximal overlap is used.
    """
    if not np.any(mask):
        raise InputError("all-zero mask cannot select patches")
    gh, gw = patch_grid
    h, w = mask.shape
    if h % gh != 0 or w % gw != 0:
        raise ConfigError(f"frame {mask.shape} not divisible by patch grid {patch_grid}")
    coverage = mask.astype(np.float64).reshape(gh, h // gh, gw, w // gw).mean(axis=(1, 3))
    flat = coverage.reshape(-1)
    selected = np.flatnonzero(flat >= min_coverage)
    if selected.size == 0:
        selected = np.array([int(flat.argmax())])
    return selected


@dataclass
class ObjectEmbedding:
    """One language-space region embedding plus the prompt it came from."""

    data: torch.Tensor
    source_prompt: ObjectPrompt | None = None

    def __post_init__(self):
        if self.data.ndim != 1:
            raise InputError(f"object embedding must be 1D, got shape {tuple(self.data.shape)}")
        if not torch.isfinite(self.data).all():
            raise NonFiniteError("non-finite object embedding")


def mask_pool(frame_features: torch.Tensor, mask: np.ndarray, patch_grid: tuple[int, int],
              projection, min_coverage: float = 0.05,
              source_prompt: ObjectPrompt | None = None) -> ObjectEmbedding:
    """Mean-pool the mask-selected patch features, then project to D_llm."""
    gh, gw = patch_grid
    if gh * gw != frame_features.shape[0]:
        raise ConfigError(
            f"patch grid {patch_grid} implies {gh * gw} patches, features have {frame_features.shape[0]}"
        )
    selected = mask_to_patch_selection(mask, patch_grid, min_coverage)
    pooled = frame_features[torch.as_tensor(selected, dtype=torch.long)].mean(dim=0)
    return ObjectEmbedding(projection(pooled), source_prompt)


@dataclass
class TokenStream:
    """The ordered multimodal embedding sequence fed to the language model.

    Regions appear in a fixed order: keyframe visual tokens, aggregated
    visual tokens, then text (with object slots spliced in). The attention
    mask is full over the visual prefix and causal over the text region.
    """

    embeddings: torch.Tensor
    segment_map: list[str]
    object_slots: list[int]
    attention_mask: torch.Tensor
    # Token id at each text-region position, -1 at object slots.
    text_token_ids: list[int] = field(default_factory=list)

    def __post_init__(self):
        length = self.embeddings.shape[0]
        if len(self.segment_map) != length:
            raise InputError("segment_map length does not match embeddings")
        if self.attention_mask.shape != (length, length):
            raise InputError("attention mask must be [L, L]")

    @property
    def length(self) -> int:
        return self.embeddings.shape[0]

    @property
    def prefix_length(self) -> int:
        return sum(1 for s in self.segment_map if s in (SEGMENT_KEYFRAME, SEGMENT_AGGREGATED))

    def text_region(self) -> range:
        return range(self.prefix_length, self.length)

    def seg_positions(self) -> list[int]:
        return [i for i, s in enumerate(self.segment_map) if s == SEGMENT_SEG]


def build_attention_mask(prefix_len: int, total_len: int, dtype=torch.bool) -> torch.Tensor:
    """True where position i may attend to position j."""
    mask = torch.zeros(total_len, total_len, dtype=dtype)
    mask[:, :prefix_len] = True
    for i in range(prefix_len, total_len):
        mask[i, prefix_len : i + 1] = True
    return mask


def assemble_stream(keyframe_tokens: torch.Tensor, aggregated: AggregatedContext,
                    text_embeddings: torch.Tensor, text_token_ids: list[int],
                    object_embeds: list[tuple[int, ObjectEmbedding]],
                    seg_vocab_id: int) -> TokenStream:
    """Concatenate [keyframe][aggregated][text with spliced object slots].

    `object_embeds` holds (position, embedding) pairs where position indexes
    into the original text sequence (0..len inclusive); each embedding is
    inserted before that text position, in the given order. Keyframe tokens
    must already live in the language width.
    """
    if keyframe_tokens.ndim == 3:
        keyframe_tokens = keyframe_tokens.reshape(-1, keyframe_tokens.shape[-1])
    d_llm = keyframe_tokens.shape[-1]
    n_text = text_embeddings.shape[0]
    if len(text_token_ids) != n_text:
        raise InputError("text_token_ids length does not match text embeddings")
    if aggregated.data.shape[0] > 0 and aggregated.data.shape[1] != d_llm:
        raise InputError("aggregated tokens and keyframe tokens disagree on width")

    inserts: dict[int, list[ObjectEmbedding]] = {}
    for pos, emb in object_embeds:
        if not 0 <= pos <= n_text:
            raise InputError(f"object insertion position {pos} outside text of length {n_text}")
        inserts.setdefault(pos, []).append(emb)

    rows: list[torch.Tensor] = [keyframe_tokens, aggregated.data]
    segments = [SEGMENT_KEYFRAME] * keyframe_tokens.shape[0]
    segments += [SEGMENT_AGGREGATED] * aggregated.data.shape[0]
    prefix_len = len(segments)

    object_slots: list[int] = []
    text_rows: list[torch.Tensor] = []
    stream_ids: list[int] = []
    for pos in range(n_text + 1):
        for emb in inserts.get(pos, ()):
            object_slots.append(prefix_len + len(text_rows))
            text_rows.append(emb.data.unsqueeze(0))
            segments.append(SEGMENT_OBJECT)
            stream_ids.append(-1)
        if pos < n_text:
            text_rows.append(text_embeddings[pos : pos + 1])
            token_id = text_token_ids[pos]
            segments.append(SEGMENT_SEG if token_id == seg_vocab_id else SEGMENT_TEXT)
            stream_ids.append(token_id)

    rows.extend(text_rows)
    embeddings = torch.cat(rows, dim=0) if rows else torch.zeros(0, d_llm)
    mask = build_attention_mask(prefix_len, embeddings.shape[0])
    return TokenStream(embeddings, segments, object_slots, mask, stream_ids)
