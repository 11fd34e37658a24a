"""[SEG]-token extraction, grounded-markup parsing, and mask decoding.

The language model marks groundable phrases as ``<p>...</p>[SEG]``; each
[SEG] hidden state is handed to a promptable mask decoder that produces a
per-frame mask track. A toy bilinear decoder stands in for a real promptable
segmenter behind the same seam.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np
import torch
from torch import nn

from .aggregator import VideoFeatures
from .errors import ConfigError, InputError, NonFiniteError, ParseError
from .tokens import PHRASE_CLOSE, PHRASE_OPEN, SEG_TOKEN


@dataclass
class SegHiddenState:
    """Hidden state of one generated [SEG] token."""

    data: torch.Tensor
    response_position: int
    turn_index: int = 0

    def __post_init__(self):
        if self.data.ndim != 1:
            raise InputError(f"seg hidden state must be 1D, got {tuple(self.data.shape)}")
        if not torch.isfinite(self.data).all():
            raise NonFiniteError("non-finite seg hidden state")


@dataclass
class MaskTrack:
    """One binary mask per video frame for a single object."""

    masks: list[np.ndarray]
    object_id: str | None = None

    def __post_init__(self):
        if self.masks:
            shape = self.masks[0].shape
            if any(m.shape != shape for m in self.masks):
                raise InputError("all masks in a track must share one resolution")

    @property
    def n_frames(self) -> int:
        return len(self.masks)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.masks[0].shape if self.masks else (0, 0)

    def as_array(self) -> np.ndarray:
        return np.stack(self.masks).astype(bool)


class MaskDecoder(Protocol):
    """Seam for a promptable mask decoder.

    decode() yields the binary track; decode_logits() exposes the
    differentiable per-pixel logits used for the training loss. Gradients
    must flow to hidden.data.
    """

    def decode(self, hidden: SegHiddenState, frame_feats: VideoFeatures) -> MaskTrack: ...

    def decode_logits(self, hidden: SegHiddenState, frame_feats: VideoFeatures) -> torch.Tensor: ...


class ToyMaskDecoder(nn.Module):
    """Bilinear stand-in decoder, exactly hand-verifiable.

    Per frame: patch logits = features @ W_m @ hidden, upsampled to the pixel
    grid by nearest neighbor; binary masks threshold the logits at 0.
    """

    def __init__(self, d_v: int, d_llm: int, patch_grid: tuple[int, int],
                 out_size: tuple[int, int]):
        super().__init__()
        gh, gw = patch_grid
        oh, ow = out_size
        if oh % gh != 0 or ow % gw != 0:
            raise ConfigError(f"output {out_size} not divisible by patch grid {patch_grid}")
        self.patch_grid = patch_grid
        self.out_size = out_size
        self.w_m = nn.Parameter(torch.empty(d_v, d_llm))
        nn.init.xavier_uniform_(self.w_m)

    def decode_logits(self, hidden, frame_feats: VideoFeatures) -> torch.Tensor:
        vec = hidden.data if isinstance(hidden, SegHiddenState) else hidden
        gh, gw = self.patch_grid
        n, p, _ = frame_feats.data.shape
        if p != gh * gw:
            raise ConfigError(f"decoder grid {self.patch_grid} expects {gh * gw} patches, got {p}")
        patch_logits = frame_feats.data @ (self.w_m @ vec)
        patch_logits = patch_logits.view(n, gh, gw)
        oh, ow = self.out_size
        return patch_logits.repeat_interleave(oh // gh, dim=1).repeat_interleave(ow // gw, dim=2)

    def decode(self, hidden, frame_feats: VideoFeatures) -> MaskTrack:
        logits = self.decode_logits(hidden, frame_feats)
        binary = (logits > 0).detach().cpu().numpy()
        return MaskTrack([binary[i] for i in range(binary.shape[0])])

    forward = decode_logits


def extract_seg_states(response_token_ids, hidden_states: torch.Tensor, seg_vocab_id: int,
                       turn_ids=None) -> list[SegHiddenState]:
    """One SegHiddenState per [SEG] occurrence, in generation order.

    Zero occurrences give an empty list — a valid ungrounded answer.
    """
    ids = list(response_token_ids)
    if hidden_states.shape[0] != len(ids):
        raise InputError(
            f"{len(ids)} response tokens but {hidden_states.shape[0]} hidden states"
        )
    states = []
    for pos, token_id in enumerate(ids):
        if token_id == seg_vocab_id:
            turn = int(turn_ids[pos]) if turn_ids is not None else 0
            states.append(SegHiddenState(hidden_states[pos], pos, turn))
    return states


@dataclass
class PhraseSpan:
    """A parsed ``<p>...</p>`` phrase and whether a [SEG] consumed it."""

    text: str
    start: int
    end: int
    seg_index: int | None = None
    dangling: bool = False  # synthesized for a [SEG] with no phrase span


@dataclass
class GroundedPhrase:
    """One (phrase, mask track) pair from a grounded response."""

    phrase: str
    track: MaskTrack
    dangling: bool = False  # [SEG] had no preceding phrase span


def parse_phrase_seg_pairs(text: str) -> list[PhraseSpan]:
    """Scan the 3-symbol markup grammar and bind [SEG]s to phrase spans.

    Each [SEG] consumes the nearest preceding unconsumed span; a [SEG] with
    no span available becomes a dangling empty-phrase entry. Nested or
    unclosed <p> raises ParseError at the offending tag's offset.
    """
    spans: list[PhraseSpan] = []
    open_offset: int | None = None
    phrase_start = 0
    seg_count = 0
    i = 0
    while i < len(text):
        if text.startswith(PHRASE_OPEN, i):
            if open_offset is not None:
                raise ParseError("nested <p>", i, kind="nested_tag")
            open_offset = i
            phrase_start = i + len(PHRASE_OPEN)
            i += len(PHRASE_OPEN)
        elif text.startswith(PHRASE_CLOSE, i):
            if open_offset is None:
                raise ParseError("</p> without open <p>", i, kind="unexpected_close")
            spans.append(PhraseSpan(text[phrase_start:i].strip(), open_offset, i + len(PHRASE_CLOSE)))
            open_offset = None
            i += len(PHRASE_CLOSE)
        elif text.startswith(SEG_TOKEN, i):
            if open_offset is not None:
                raise ParseError("[SEG] inside open <p>", open_offset, kind="unclosed_tag")
            bound = next((s for s in reversed(spans) if s.seg_index is None), None)
            if bound is None:
                spans.append(PhraseSpan("", i, i, seg_index=seg_count, dangling=True))
            else:
                bound.seg_index = seg_count
            seg_count += 1
            i += len(SEG_TOKEN)
        else:
            i += 1
    if open_offset is not None:
        raise ParseError("unclosed <p>", open_offset, kind="unclosed_tag")
    return spans


def ground_response(text: str, seg_states: list[SegHiddenState], decoder,
                    frame_feats: VideoFeatures) -> list[GroundedPhrase]:
    """Decode one mask track per [SEG] and pair it with its phrase.

    Phrases without a [SEG] yield no mask; a dangling [SEG] yields an
    empty-phrase pair flagged `dangling`.
    """
    spans = parse_phrase_seg_pairs(text)
    bound = [s for s in spans if s.seg_index is not None]
    bound.sort(key=lambda s: s.seg_index)
    if len(bound) != len(seg_states):
        raise InputError(
            f"{len(bound)} [SEG] markers in text but {len(seg_states)} hidden states"
        )
    out = []
    for span, state in zip(bound, seg_states):
        track = decoder.decode(state, frame_feats)
        out.append(GroundedPhrase(span.text, track, dangling=span.dangling))
    return out
