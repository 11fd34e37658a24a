"""Toy trainable model: encoder stub, causal LM, and the grounded pipeline.

The full path is encoder -> aggregator -> token stream -> causal LM ->
mask decoder, differentiable end to end, sized to train on a laptop CPU in
minutes while exercising every contract of the full-scale design.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .aggregator import AggregatedContext, AggregatorConfig, STCAggregator, VideoFeatures
from .errors import ConfigError, DataError, InputError
from .grounding import (
    GroundedPhrase,
    SegHiddenState,
    ToyMaskDecoder,
    ground_response,
)
from .prompts import (
    ObjectEmbedding,
    ObjectPrompt,
    TokenStream,
    assemble_stream,
    mask_pool,
    prompt_to_mask,
)
from .rle import decode_mask
from .tokenizer import Tokenizer, TokenInfo, split_tokens
from .tokens import REGION_TOKEN, SEG_TOKEN


@dataclass
class ModelConfig:
    patch_grid: tuple[int, int] = (4, 4)
    frame_shape: tuple[int, int] = (32, 32)
    frame_channels: int = 3
    n_keyframes: int = 5
    lm_layers: int = 2
    lm_heads: int = 4
    lm_ffn_mult: int = 4
    prompt_kind: str = "box"   # how object references become prompts
    point_count: int = 4
    encoder_seed: int = 0
    freeze_encoder: bool = True


@dataclass
class TrainConfig:
    # Desk-scale default; full-scale fine-tuning configs set 4e-5.
    lr: float = 1e-3
    max_seq_len: int = 512
    text_loss_weight: float = 1.0   # ablation grid uses 1.0 / 1.25 / 1.5
    bce_weight: float = 1.0
    dice_weight: float = 1.0
    steps: int = 500
    seed: int = 0
    ablate_stc: bool = False
    train_lm: bool = True

    def __post_init__(self):
        if self.text_loss_weight <= 0:
            raise ConfigError("text_loss_weight must be > 0")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if self.max_seq_len < 1:
            raise ConfigError("max_seq_len must be >= 1")


class ToyEncoder(nn.Module):
    """Patchify + linear embed; deterministic given its seed."""

    def __init__(self, patch_grid: tuple[int, int], frame_shape: tuple[int, int],
                 channels: int, d_v: int, seed: int = 0, frozen: bool = True):
        super().__init__()
        gh, gw = patch_grid
        h, w = frame_shape
        if h % gh != 0 or w % gw != 0:
            raise ConfigError(f"frame {frame_shape} not divisible by patch grid {patch_grid}")
        self.patch_grid = patch_grid
        self.frame_shape = frame_shape
        self.channels = channels
        patch_dim = (h // gh) * (w // gw) * channels
        g = torch.Generator().manual_seed(seed)
        bound = 1.0 / math.sqrt(patch_dim)
        self.weight = nn.Parameter(torch.empty(patch_dim, d_v).uniform_(-bound, bound, generator=g))
        self.bias = nn.Parameter(torch.zeros(d_v))
        if frozen:
            self.weight.requires_grad_(False)
            self.bias.requires_grad_(False)

    def forward(self, frames) -> VideoFeatures:
        array = np.asarray(frames)
        scale = 255.0 if np.issubdtype(array.dtype, np.integer) else 1.0
        data = torch.as_tensor(array, dtype=self.weight.dtype) / scale
        if data.ndim == 3:
            data = data.unsqueeze(-1)
        n, h, w, c = data.shape
        if (h, w) != self.frame_shape or c != self.channels:
            raise InputError(
                f"frames are {h}x{w}x{c}, encoder expects {self.frame_shape} x{self.channels}"
            )
        gh, gw = self.patch_grid
        patches = (
            data.view(n, gh, h // gh, gw, w // gw, c)
            .permute(0, 1, 3, 2, 4, 5)
            .reshape(n, gh * gw, -1)
        )
        return VideoFeatures(patches @ self.weight + self.bias)


class CausalSelfAttention(nn.Module):
    def __init__(self, d_model: int, heads: int):
        super().__init__()
        if d_model % heads != 0:
            raise ConfigError(f"d_llm={d_model} not divisible by lm_heads={heads}")
        self.heads = heads
        self.d_head = d_model // heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.out = nn.Linear(d_model, d_model)
        nn.init.xavier_uniform_(self.qkv.weight)
        nn.init.zeros_(self.qkv.bias)
        nn.init.xavier_uniform_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, x: torch.Tensor, attn_mask: torch.Tensor) -> torch.Tensor:
        length, d = x.shape
        q, k, v = self.qkv(x).split(d, dim=-1)

        def split(t):
            return t.view(length, self.heads, self.d_head).transpose(0, 1)

        q, k, v = split(q), split(k), split(v)
        logits = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)
        logits = logits.masked_fill(~attn_mask, float("-inf"))
        weights = torch.softmax(logits, dim=-1)
        out = (weights @ v).transpose(0, 1).reshape(length, d)
        return self.out(out)


class LMBlock(nn.Module):
    def __init__(self, d_model: int, heads: int, ffn_mult: int):
        super().__init__()
        self.attn = CausalSelfAttention(d_model, heads)
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

    def forward(self, x, attn_mask):
        x = self.norm1(x + self.attn(x, attn_mask))
        return self.norm2(x + self.ffn(x))


class ToyCausalLM(nn.Module):
    """Small transformer over an already-assembled embedding stream.

    The attention mask comes from the token stream: full over the visual
    prefix, causal over the text region. The output head is tied to the
    token embedding.
    """

    def __init__(self, vocab_size: int, d_llm: int, n_layers: int = 2, heads: int = 4,
                 max_seq_len: int = 512, ffn_mult: int = 4):
        super().__init__()
        self.max_seq_len = max_seq_len
        self.tok_emb = nn.Embedding(vocab_size, d_llm)
        nn.init.normal_(self.tok_emb.weight, std=0.02)
        self.pos_emb = nn.Parameter(torch.randn(max_seq_len, d_llm) * 0.02)
        self.blocks = nn.ModuleList(LMBlock(d_llm, heads, ffn_mult) for _ in range(n_layers))
        self.final_norm = nn.LayerNorm(d_llm)

    def embed(self, ids) -> torch.Tensor:
        return self.tok_emb(torch.as_tensor(ids, dtype=torch.long))

    def forward(self, embeddings: torch.Tensor, attn_mask: torch.Tensor):
        length = embeddings.shape[0]
        if length > self.max_seq_len:
            raise InputError(f"stream length {length} exceeds max_seq_len {self.max_seq_len}")
        x = embeddings + self.pos_emb[:length]
        for block in self.blocks:
            x = block(x, attn_mask)
        hidden = self.final_norm(x)
        logits = hidden @ self.tok_emb.weight.T
        return hidden, logits


@dataclass
class PreparedText:
    """Tokenized conversation with object bookkeeping, region slots stripped."""

    token_ids: list[int]
    roles: list[str]            # per token: "user" / "assistant"
    turn_ids: list[int]
    response_mask: list[bool]   # True where the token is supervised
    insertions: list[tuple[int, str]]   # (position in token_ids, object_id)
    seg_object_ids: list[str]   # object id per [SEG], in order
    question_positions: list[int]


def prepare_text(conversation, tokenizer: Tokenizer, require_refs: bool = True) -> PreparedText:
    """Serialize turns as `role : text`, strip region tokens to insertions.

    With require_refs (the training path) every <region>/[SEG] must carry an
    object id; generation re-feeds model output where [SEG] is legitimately
    bare.
    """
    infos: list[tuple[TokenInfo, str, int]] = []
    for turn_index, turn in enumerate(conversation):
        role = turn["role"]
        if role not in ("user", "assistant"):
            raise DataError(f"unknown conversation role {role!r}")
        for info in split_tokens(f"{role} : {turn['text']}"):
            infos.append((info, role, turn_index))
    token_ids: list[int] = []
    roles: list[str] = []
    turn_ids: list[int] = []
    response_mask: list[bool] = []
    insertions: list[tuple[int, str]] = []
    seg_object_ids: list[str] = []
    question_positions: list[int] = []
    marker_budget: dict[int, int] = {}
    for info, role, turn_index in infos:
        if info.surface == REGION_TOKEN and info.object_id is not None:
            insertions.append((len(token_ids), info.object_id))
            continue
        if info.surface == REGION_TOKEN and require_refs:
            raise DataError("bare <region> without object id in record text")
        if info.surface == SEG_TOKEN:
            if info.object_id is not None:
                seg_object_ids.append(info.object_id)
            elif require_refs:
                raise DataError("bare [SEG] without object id in record text")
        pos = len(token_ids)
        token_ids.append(tokenizer.index.get(info.surface, tokenizer.unk_id))
        roles.append(role)
        turn_ids.append(turn_index)
        # Role markers ("user :", "assistant :") are prompt scaffolding, not
        # supervised output.
        budget = marker_budget.get(turn_index, 0)
        is_marker = budget < 2
        marker_budget[turn_index] = budget + 1
        response_mask.append(role == "assistant" and not is_marker)
        if role == "user" and not is_marker:
            question_positions.append(pos)
    token_ids.append(tokenizer.eos_id)
    roles.append("assistant")
    turn_ids.append(turn_ids[-1] if turn_ids else 0)
    response_mask.append(True)
    return PreparedText(token_ids, roles, turn_ids, response_mask, insertions,
                        seg_object_ids, question_positions)


def keyframe_indices(n_frames: int, n_keyframes: int) -> list[int]:
    k = min(n_keyframes, n_frames)
    return [(i * n_frames) // k for i in range(k)]


def object_mask_track(record: dict, object_id: str) -> np.ndarray:
    for obj in record["objects"]:
        if obj["object_id"] == object_id:
            return np.stack([decode_mask(r) for r in obj["rle_masks"]])
    raise DataError(f"record references undeclared object {object_id!r}")


def derive_prompt(track: np.ndarray, keyframes: list[int], kind: str,
                  point_count: int) -> ObjectPrompt:
    """Turn a ground-truth mask track into a single-frame prompt.

    Uses the keyframe where the object is largest; if it misses every
    keyframe, falls back to its largest frame anywhere.
    """
    areas = track.reshape(track.shape[0], -1).sum(axis=1)
    key_areas = [(areas[i], i) for i in keyframes]
    best_area, best_frame = max(key_areas)
    if best_area == 0:
        best_frame = int(areas.argmax())
        if areas[best_frame] == 0:
            raise DataError("object mask empty on every frame")
    mask = track[best_frame]
    if kind == "mask":
        return ObjectPrompt(kind="mask", frame_index=best_frame, mask=mask)
    ys, xs = np.nonzero(mask)
    if kind == "box":
        box = (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
        return ObjectPrompt(kind="box", frame_index=best_frame, box=box)
    if kind == "points":
        flat = np.flatnonzero(mask.reshape(-1))
        picks = flat[np.linspace(0, flat.size - 1, point_count).astype(int)]
        w = mask.shape[1]
        points = [(int(p % w), int(p // w)) for p in picks]
        return ObjectPrompt(kind="points", frame_index=best_frame, points=points)
    raise ConfigError(f"unknown prompt kind {kind!r}")


@dataclass
class SegSupervision:
    object_id: str
    stream_position: int
    mask_logits: torch.Tensor   # [N, H, W]
    target: torch.Tensor        # [N, H, W] float


@dataclass
class ForwardResult:
    stream: TokenStream
    hidden: torch.Tensor
    logits: torch.Tensor
    target_positions: list[int]   # stream positions whose logits are supervised
    target_ids: list[int]
    seg_outputs: list[SegSupervision]


class GroundedVideoModel(nn.Module):
    """Orchestrates the grounded-dialogue pipeline over one record."""

    def __init__(self, agg_cfg: AggregatorConfig, model_cfg: ModelConfig,
                 tokenizer: Tokenizer, train_cfg: TrainConfig):
        super().__init__()
        self.agg_cfg = agg_cfg
        self.model_cfg = model_cfg
        self.tokenizer = tokenizer
        self.encoder = ToyEncoder(
            model_cfg.patch_grid, model_cfg.frame_shape, model_cfg.frame_channels,
            agg_cfg.d_v, seed=model_cfg.encoder_seed, frozen=model_cfg.freeze_encoder,
        )
        self.key_proj = nn.Linear(agg_cfg.d_v, agg_cfg.d_llm)
        self.obj_proj = nn.Linear(agg_cfg.d_v, agg_cfg.d_llm)
        self.question_proj = nn.Linear(agg_cfg.d_llm, agg_cfg.d_v)
        for lin in (self.key_proj, self.obj_proj, self.question_proj):
            nn.init.xavier_uniform_(lin.weight)
            nn.init.zeros_(lin.bias)
        self.aggregator = None if train_cfg.ablate_stc else STCAggregator(agg_cfg)
        self.lm = ToyCausalLM(
            tokenizer.vocab_size, agg_cfg.d_llm, model_cfg.lm_layers, model_cfg.lm_heads,
            train_cfg.max_seq_len, model_cfg.lm_ffn_mult,
        )
        self.decoder = ToyMaskDecoder(
            agg_cfg.d_v, agg_cfg.d_llm, model_cfg.patch_grid, model_cfg.frame_shape,
        )

    def set_trainable(self, train_cfg: TrainConfig):
        for p in self.encoder.parameters():
            p.requires_grad_(not self.model_cfg.freeze_encoder)
        for p in self.lm.parameters():
            p.requires_grad_(train_cfg.train_lm)

    def _object_embedding(self, record, track: np.ndarray, feats: VideoFeatures,
                          keyframes: list[int]) -> ObjectEmbedding:
        prompt = derive_prompt(track, keyframes, self.model_cfg.prompt_kind,
                               self.model_cfg.point_count)
        mask = prompt_to_mask(prompt, self.model_cfg.frame_shape)
        return mask_pool(feats.data[prompt.frame_index], mask, self.model_cfg.patch_grid,
                         self.obj_proj, source_prompt=prompt)

    def build_stream(self, record: dict, frames, conversation=None, require_refs: bool = True):
        """Encode frames, pool prompted objects, aggregate, and splice text."""
        prepared = prepare_text(conversation or record["conversation"], self.tokenizer,
                                require_refs=require_refs)
        feats = self.encoder(frames)
        n = feats.n_frames
        if n != len(record["sampled_frames"]):
            raise DataError(
                f"record lists {len(record['sampled_frames'])} frames, got {n} frame images"
            )
        keyframes = keyframe_indices(n, self.model_cfg.n_keyframes)
        key_tokens = self.key_proj(feats.data[keyframes].reshape(-1, self.agg_cfg.d_v))

        object_embeds: list[tuple[int, ObjectEmbedding]] = []
        embed_by_object: dict[str, ObjectEmbedding] = {}
        for pos, object_id in prepared.insertions:
            if object_id not in embed_by_object:
                track = object_mask_track(record, object_id)
                embed_by_object[object_id] = self._object_embedding(record, track, feats, keyframes)
            object_embeds.append((pos, embed_by_object[object_id]))

        text_embeddings = self.lm.embed(prepared.token_ids)
        question_llm = text_embeddings[prepared.question_positions]
        if self.aggregator is None:
            aggregated = AggregatedContext.empty(self.agg_cfg.d_llm, dtype=key_tokens.dtype)
        else:
            question_dv = self.question_proj(question_llm) if question_llm.shape[0] else None
            obj_dv = None
            if embed_by_object:
                stacked = torch.stack([e.data for e in embed_by_object.values()])
                obj_dv = self.question_proj(stacked)
            aggregated = self.aggregator(feats, question=question_dv, object_embeds=obj_dv)
        stream = assemble_stream(key_tokens, aggregated, text_embeddings,
                                 prepared.token_ids, object_embeds, self.tokenizer.seg_id)
        return stream, prepared, feats

    def forward(self, record: dict, frames) -> ForwardResult:
        stream, prepared, feats = self.build_stream(record, frames)
        hidden, logits = self.lm(stream.embeddings, stream.attention_mask)

        prefix = stream.prefix_length
        text_abs = [prefix + j for j, tid in enumerate(stream.text_token_ids) if tid != -1]
        target_positions: list[int] = []
        target_ids: list[int] = []
        for i, token_id in enumerate(prepared.token_ids):
            if i == 0 or not prepared.response_mask[i]:
                continue
            target_positions.append(text_abs[i] - 1)
            target_ids.append(token_id)

        seg_positions = stream.seg_positions()
        if len(seg_positions) != len(prepared.seg_object_ids):
            raise DataError("seg token count does not match record markup")
        seg_outputs = []
        for abs_pos, object_id in zip(seg_positions, prepared.seg_object_ids):
            state = SegHiddenState(hidden[abs_pos], abs_pos)
            mask_logits = self.decoder.decode_logits(state, feats)
            target = torch.as_tensor(
                object_mask_track(record, object_id), dtype=mask_logits.dtype
            )
            seg_outputs.append(SegSupervision(object_id, abs_pos, mask_logits, target))
        return ForwardResult(stream, hidden, logits, target_positions, target_ids, seg_outputs)

    @torch.no_grad()
    def generate(self, record: dict, frames, max_new_tokens: int = 48,
                 prompt_turn_index: int = 0):
        """Greedy decode from one user turn, then ground the response."""
        prompt_turn = record["conversation"][prompt_turn_index]
        if prompt_turn["role"] != "user":
            raise InputError(f"turn {prompt_turn_index} is not a user turn")
        generated: list[int] = []
        feats = None
        for _ in range(max_new_tokens):
            conversation = [prompt_turn,
                            {"role": "assistant", "text": self.tokenizer.decode(generated)}]
            stream, prepared, feats = self.build_stream(record, frames, conversation,
                                                        require_refs=False)
            # Drop the trailing EOS scaffold so the prediction comes from the
            # last real token.
            hidden, logits = self.lm(stream.embeddings[:-1], stream.attention_mask[:-1, :-1])
            next_id = int(logits[-1].argmax())
            if next_id == self.tokenizer.eos_id:
                break
            generated.append(next_id)
        text = self.tokenizer.decode(generated)
        conversation = [prompt_turn, {"role": "assistant", "text": text}]
        stream, prepared, feats = self.build_stream(record, frames, conversation,
                                                    require_refs=False)
        hidden, _ = self.lm(stream.embeddings, stream.attention_mask)
        seg_positions = [p for p in stream.seg_positions()]
        states = [SegHiddenState(hidden[p], p) for p in seg_positions]
        grounded: list[GroundedPhrase] = []
        if states:
            grounded = ground_response(text, states, self.decoder, feats)
        return text, grounded


@dataclass
class LossBreakdown:
    total: torch.Tensor
    ce: torch.Tensor
    bce: torch.Tensor
    dice: torch.Tensor

    def detached(self) -> dict:
        return {k: float(getattr(self, k).detach()) for k in ("total", "ce", "bce", "dice")}


def compute_loss(result: ForwardResult, cfg: TrainConfig) -> LossBreakdown:
    """total = text_loss_weight * CE + bce_weight * BCE + dice_weight * Dice.

    The breakdown reports the raw (unweighted) terms; CE averages per
    supervised token, BCE per pixel, Dice per (object, frame) mask. Records
    without [SEG] targets contribute exact-zero mask terms.
    """
    dtype = result.logits.dtype
    gathered = result.logits[result.target_positions]
    targets = torch.as_tensor(result.target_ids, dtype=torch.long)
    ce = nn.functional.cross_entropy(gathered, targets)

    if result.seg_outputs:
        flat_logits = torch.cat([s.mask_logits.reshape(-1) for s in result.seg_outputs])
        flat_targets = torch.cat([s.target.reshape(-1) for s in result.seg_outputs])
        bce = nn.functional.binary_cross_entropy_with_logits(flat_logits, flat_targets)
        eps = 1e-6
        dice_terms = []
        for s in result.seg_outputs:
            probs = torch.sigmoid(s.mask_logits)
            p = probs.reshape(probs.shape[0], -1)
            t = s.target.reshape(s.target.shape[0], -1)
            inter = (p * t).sum(dim=1)
            denom = p.sum(dim=1) + t.sum(dim=1)
            dice_terms.append(1.0 - (2.0 * inter + eps) / (denom + eps))
        dice = torch.cat(dice_terms).mean()
    else:
        bce = torch.zeros((), dtype=dtype)
        dice = torch.zeros((), dtype=dtype)

    total = cfg.text_loss_weight * ce + cfg.bce_weight * bce + cfg.dice_weight * dice
    return LossBreakdown(total, ce, bce, dice)
