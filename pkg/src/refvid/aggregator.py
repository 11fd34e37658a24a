"""Three-stage spatial-temporal-context token aggregator.

Stage 1 compresses each frame's patch features into a fixed number of query
tokens, stage 2 runs a query-conditioned sliding window over the per-frame
tokens, and stage 3 re-injects the temporal summary into the frame features
and pools each frame down to a single language-space token.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn

from .errors import ConfigError, InputError, NonFiniteError


@dataclass
class VideoFeatures:
    """Per-frame patch features, shape [N, P, D_v], plus source-frame indices."""

    data: torch.Tensor
    frame_indices: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.data.ndim != 3:
            raise InputError(f"expected [N, P, D_v] features, got shape {tuple(self.data.shape)}")
        n, p, d = self.data.shape
        if n < 1 or p < 1 or d < 1:
            raise InputError(f"degenerate feature shape {tuple(self.data.shape)}")
        if not torch.isfinite(self.data).all():
            raise NonFiniteError("non-finite values in video features")
        if not self.frame_indices:
            self.frame_indices = list(range(n))
        if len(self.frame_indices) != n:
            raise InputError(f"{len(self.frame_indices)} frame indices for {n} frames")
        if any(b <= a for a, b in zip(self.frame_indices, self.frame_indices[1:])):
            raise InputError("frame_indices must be strictly increasing")

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_patches(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def select(self, indices: list[int]) -> "VideoFeatures":
        """Subset of frames (used for keyframe and long-range selections)."""
        return VideoFeatures(self.data[indices], [self.frame_indices[i] for i in indices])


@dataclass
class AggregatorConfig:
    k_s: int = 32          # spatial queries per frame
    k_t: int = 8           # temporal queries per window
    w_t: int = 4           # window length in frames
    stride: int | None = None  # window stride; defaults to w_t (non-overlapping)
    heads: int = 4         # heads in the spatial/temporal query blocks
    context_heads: int = 1
    d_v: int = 32
    d_llm: int = 128
    ffn_mult: int = 4
    long_stride: int = 1   # every k-th frame enters the long-range path

    def __post_init__(self):
        if self.stride is None:
            self.stride = self.w_t
        if min(self.k_s, self.k_t, self.w_t) < 1:
            raise ConfigError("k_s, k_t and w_t must all be >= 1")
        if not 1 <= self.stride <= self.w_t:
            raise ConfigError(f"stride must be in [1, w_t], got {self.stride} with w_t={self.w_t}")
        if self.d_v % self.heads != 0:
            raise ConfigError(f"d_v={self.d_v} not divisible by heads={self.heads}")
        if self.d_v % self.context_heads != 0:
            raise ConfigError(f"d_v={self.d_v} not divisible by context_heads={self.context_heads}")
        if self.long_stride < 1:
            raise ConfigError("long_stride must be >= 1")


@dataclass
class SpatialTokens:
    """Per-frame compressed tokens, shape [N_L, K_S, D_v]."""

    data: torch.Tensor

    def __post_init__(self):
        if self.data.ndim != 3:
            raise InputError(f"expected [N_L, K_S, D_v] tokens, got shape {tuple(self.data.shape)}")
        if not torch.isfinite(self.data).all():
            raise NonFiniteError("non-finite spatial tokens")


@dataclass
class TemporalTokens:
    """Window-concatenated temporal tokens, shape [num_windows * K_T, D_v].

    window_boundaries are half-open frame ranges [start, end).
    """

    data: torch.Tensor
    window_boundaries: list[tuple[int, int]]

    def __post_init__(self):
        if self.data.ndim != 2:
            raise InputError(f"expected [K_final, D_v] tokens, got shape {tuple(self.data.shape)}")
        if not torch.isfinite(self.data).all():
            raise NonFiniteError("non-finite temporal tokens")


@dataclass
class AggregatedContext:
    """One language-space token per long-range frame, shape [N_L, D_llm]."""

    data: torch.Tensor

    def __post_init__(self):
        if self.data.ndim != 2:
            raise InputError(f"expected [N_L, D_llm] context, got shape {tuple(self.data.shape)}")
        if self.data.shape[0] > 0 and not torch.isfinite(self.data).all():
            raise NonFiniteError("non-finite aggregated context")

    @classmethod
    def empty(cls, d_llm: int, dtype=None, device=None) -> "AggregatedContext":
        """The disabled-aggregator stand-in: zero tokens."""
        return cls(torch.zeros(0, d_llm, dtype=dtype, device=device))

    @property
    def n_tokens(self) -> int:
        return self.data.shape[0]


def enumerate_windows(n_frames: int, w_t: int, stride: int) -> list[tuple[int, int]]:
    """Half-open sliding windows over [0, n_frames).

    Starts at 0, advances by `stride`, keeps the final partial window; every
    start < n_frames yields a nonempty window.
    """
    if n_frames < 1:
        raise InputError("cannot enumerate windows over zero frames")
    windows = []
    start = 0
    while start < n_frames:
        windows.append((start, min(start + w_t, n_frames)))
        start += stride
    return windows


def scaled_dot_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
                         scale: float | None = None):
    """softmax(q kᵀ / scale) v over the last two dims; returns (output, weights).

    scale defaults to sqrt(key width). Weight rows are the probabilities each
    query assigns over keys and sum to 1.
    """
    if scale is None:
        scale = math.sqrt(k.shape[-1])
    logits = q @ k.transpose(-2, -1) / scale
    weights = torch.softmax(logits, dim=-1)
    return weights @ v, weights


class MultiheadCrossAttention(nn.Module):
    """Standard multi-head cross-attention with output projection."""

    def __init__(self, d_model: int, heads: int):
        super().__init__()
        if d_model % heads != 0:
            raise ConfigError(f"d_model={d_model} not divisible by heads={heads}")
        self.heads = heads
        self.d_head = d_model // heads
        self.w_q = nn.Linear(d_model, d_model)
        self.w_k = nn.Linear(d_model, d_model)
        self.w_v = nn.Linear(d_model, d_model)
        self.w_o = nn.Linear(d_model, d_model)
        for lin in (self.w_q, self.w_k, self.w_v, self.w_o):
            nn.init.xavier_uniform_(lin.weight)
            nn.init.zeros_(lin.bias)

    def forward(self, query: torch.Tensor, kv: torch.Tensor, attn_sink: list | None = None):
        b, lq, d = query.shape
        lk = kv.shape[1]

        def split(x, length):
            return x.view(b, length, self.heads, self.d_head).transpose(1, 2)

        q = split(self.w_q(query), lq)
        k = split(self.w_k(kv), lk)
        v = split(self.w_v(kv), lk)
        out, weights = scaled_dot_attention(q, k, v)
        if attn_sink is not None:
            attn_sink.append(weights)
        out = out.transpose(1, 2).reshape(b, lq, d)
        return self.w_o(out)


class QFormerBlock(nn.Module):
    """Query-transformer block with post-layer-norm residuals.

    With `self_attention=True` the query-side sequence first mixes through a
    self-attention sublayer before cross-attending to the key/value set. The
    temporal stage needs this: injected question/object rows can only steer
    the retained query slots if the query rows interact somewhere.
    """

    def __init__(self, d_model: int, heads: int, ffn_mult: int, self_attention: bool = False):
        super().__init__()
        self.self_attn = MultiheadCrossAttention(d_model, heads) if self_attention else None
        self.norm0 = nn.LayerNorm(d_model) if self_attention else None
        self.attn = MultiheadCrossAttention(d_model, heads)
        self.ffn = nn.Sequential(
            nn.Linear(d_model, d_model * ffn_mult),
            nn.GELU(),
            nn.Linear(d_model * ffn_mult, d_model),
        )
        for lin in (self.ffn[0], self.ffn[2]):
            nn.init.xavier_uniform_(lin.weight)
            nn.init.zeros_(lin.bias)
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)

    def forward(self, queries: torch.Tensor, kv: torch.Tensor, attn_sink: list | None = None):
        x = queries
        if self.self_attn is not None:
            x = self.norm0(x + self.self_attn(x, x, attn_sink))
        x = self.norm1(x + self.attn(x, kv, attn_sink))
        return self.norm2(x + self.ffn(x))


def _init_queries(n: int, d: int) -> nn.Parameter:
    return nn.Parameter(torch.randn(n, d) * 0.02)


class SpatialAggregator(nn.Module):
    """Compresses each frame's P patches into K_S tokens with shared queries."""

    def __init__(self, cfg: AggregatorConfig):
        super().__init__()
        self.cfg = cfg
        self.queries = _init_queries(cfg.k_s, cfg.d_v)
        self.block = QFormerBlock(cfg.d_v, cfg.heads, cfg.ffn_mult)

    def forward(self, frames: torch.Tensor, attn_sink: list | None = None) -> torch.Tensor:
        # Frames form the batch dim: each is processed independently with the
        # same queries and weights.
        n = frames.shape[0]
        q = self.queries.unsqueeze(0).expand(n, -1, -1)
        return self.block(q, frames, attn_sink)


class TemporalAggregator(nn.Module):
    """Sliding-window temporal compression conditioned on the question.

    Question and object embeddings ride along on the query side; only the
    K_T query slots survive into the output, so the text steers attention
    without ever becoming a key.
    """

    def __init__(self, cfg: AggregatorConfig):
        super().__init__()
        self.cfg = cfg
        self.queries = _init_queries(cfg.k_t, cfg.d_v)
        self.block = QFormerBlock(cfg.d_v, cfg.heads, cfg.ffn_mult, self_attention=True)

    def forward(self, spatial: torch.Tensor, question: torch.Tensor | None = None,
                object_embeds: torch.Tensor | None = None,
                attn_sink: list | None = None):
        n = spatial.shape[0]
        if n < 1:
            raise InputError("temporal aggregation needs at least one frame of spatial tokens")
        windows = enumerate_windows(n, self.cfg.w_t, self.cfg.stride)
        extras = [e for e in (question, object_embeds) if e is not None and e.shape[0] > 0]
        q_parts = [self.queries] + extras
        q = torch.cat(q_parts, dim=0).unsqueeze(0)
        outputs = []
        for start, end in windows:
            kv = spatial[start:end].reshape(1, -1, self.cfg.d_v)
            out = self.block(q, kv, attn_sink)
            outputs.append(out[0, : self.cfg.k_t])
        return torch.cat(outputs, dim=0), windows


class ContextAggregator(nn.Module):
    """Frame patches attend to the temporal tokens, then mean-pool per frame.

    Computes softmax((F W^Q)(Z W^K)ᵀ / sqrt(C)) (Z W^V) with C the per-head
    key width, pools the P enhanced patch vectors of each frame to one
    vector, and projects to the language width with W^P. No FFN or residual:
    this stage is a single bare attention read.
    """

    def __init__(self, cfg: AggregatorConfig):
        super().__init__()
        self.cfg = cfg
        self.w_q = nn.Linear(cfg.d_v, cfg.d_v, bias=False)
        self.w_k = nn.Linear(cfg.d_v, cfg.d_v, bias=False)
        self.w_v = nn.Linear(cfg.d_v, cfg.d_v, bias=False)
        self.w_p = nn.Linear(cfg.d_v, cfg.d_llm)
        for lin in (self.w_q, self.w_k, self.w_v, self.w_p):
            nn.init.xavier_uniform_(lin.weight)
        nn.init.zeros_(self.w_p.bias)

    def forward(self, frames: torch.Tensor, temporal: torch.Tensor,
                attn_sink: list | None = None) -> torch.Tensor:
        n, p, d = frames.shape
        h = self.cfg.context_heads
        d_head = d // h
        q = self.w_q(frames).view(n, p, h, d_head).transpose(1, 2)
        k = self.w_k(temporal).view(-1, h, d_head).transpose(0, 1)
        v = self.w_v(temporal).view(-1, h, d_head).transpose(0, 1)
        out, weights = scaled_dot_attention(q, k, v)
        if attn_sink is not None:
            attn_sink.append(weights)
        enhanced = out.transpose(1, 2).reshape(n, p, d)
        pooled = enhanced.mean(dim=1)
        return self.w_p(pooled)


class STCAggregator(nn.Module):
    """The three stages composed; a pure function of (inputs, parameters)."""

    def __init__(self, cfg: AggregatorConfig):
        super().__init__()
        self.cfg = cfg
        self.spatial = SpatialAggregator(cfg)
        self.temporal = TemporalAggregator(cfg)
        self.context = ContextAggregator(cfg)

    def _check_frames(self, frames: VideoFeatures):
        if frames.channels != self.cfg.d_v:
            raise ConfigError(
                f"features have {frames.channels} channels, config expects d_v={self.cfg.d_v}"
            )

    def select_long_range(self, frames: VideoFeatures) -> VideoFeatures:
        idx = list(range(0, frames.n_frames, self.cfg.long_stride))
        return frames.select(idx)

    def spatial_aggregate(self, frames: VideoFeatures,
                          attn_sink: list | None = None) -> SpatialTokens:
        self._check_frames(frames)
        return SpatialTokens(self.spatial(frames.data, attn_sink))

    def temporal_aggregate(self, spatial: SpatialTokens,
                           question: torch.Tensor | None = None,
                           object_embeds: torch.Tensor | None = None,
                           attn_sink: list | None = None) -> TemporalTokens:
        if spatial.data.shape[1] != self.cfg.k_s:
            raise ConfigError(
                f"spatial tokens have {spatial.data.shape[1]} slots, config expects k_s={self.cfg.k_s}"
            )
        data, windows = self.temporal(spatial.data, question, object_embeds, attn_sink)
        return TemporalTokens(data, windows)

    def context_aggregate(self, frames: VideoFeatures, temporal: TemporalTokens,
                          attn_sink: list | None = None) -> AggregatedContext:
        self._check_frames(frames)
        if temporal.data.shape[1] != frames.channels:
            raise ConfigError(
                f"temporal tokens are {temporal.data.shape[1]}-wide, frames are {frames.channels}-wide"
            )
        return AggregatedContext(self.context(frames.data, temporal.data, attn_sink))

    def forward(self, frames: VideoFeatures, question: torch.Tensor | None = None,
                object_embeds: torch.Tensor | None = None,
                attn_sink: list | None = None) -> AggregatedContext:
        long_range = self.select_long_range(frames)
        spatial = self.spatial_aggregate(long_range, attn_sink)
        temporal = self.temporal_aggregate(spatial, question, object_embeds, attn_sink)
        return self.context_aggregate(long_range, temporal, attn_sink)

    aggregate = forward
