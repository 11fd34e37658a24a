from __future__ import annotations

import numpy as np
import pytest
import torch
from torch import nn

from refvid.aggregator import AggregatedContext
from refvid.errors import InputError
from refvid.prompts import (
    SEGMENT_AGGREGATED,
    SEGMENT_KEYFRAME,
    SEGMENT_OBJECT,
    SEGMENT_SEG,
    SEGMENT_TEXT,
    ObjectEmbedding,
    ObjectPrompt,
    assemble_stream,
    mask_pool,
    mask_to_patch_selection,
    prompt_to_mask,
)

from oracles import disk_pixels_reference


def identity_projection(dim: int) -> nn.Linear:
    lin = nn.Linear(dim, dim, bias=True).double()
    with torch.no_grad():
        lin.weight.copy_(torch.eye(dim, dtype=torch.float64))
        lin.bias.zero_()
    return lin


class TestPromptToMask:
    def test_box_fills_rectangle(self):
        prompt = ObjectPrompt(kind="box", box=(2, 2, 6, 6))
        mask = prompt_to_mask(prompt, (8, 8))
        assert mask.sum() == 16
        assert mask[2:6, 2:6].all()
        assert not mask[0:2].any() and not mask[6:].any()

    def test_mask_identity(self):
        src = np.zeros((8, 8), dtype=bool)
        src[1:3, 4:7] = True
        prompt = ObjectPrompt(kind="mask", mask=src)
        out = prompt_to_mask(prompt, (8, 8))
        assert np.array_equal(out, src)
        assert out is not src

    def test_single_point_disk_matches_enumeration(self):
        prompt = ObjectPrompt(kind="points", points=[(4, 4)])
        mask = prompt_to_mask(prompt, (8, 8), point_radius=1)
        expected = disk_pixels_reference(4, 4, 1, 8, 8)
        got = {(x, y) for y, x in zip(*np.nonzero(mask))}
        assert got == expected
        assert len(expected) == 5

    def test_degenerate_box_rejected(self):
        with pytest.raises(InputError):
            ObjectPrompt(kind="box", box=(3, 3, 3, 6))

    def test_point_count_restricted(self):
        with pytest.raises(InputError):
            ObjectPrompt(kind="points", points=[(1, 1), (2, 2), (3, 3)])

    def test_point_outside_frame_rejected(self):
        prompt = ObjectPrompt(kind="points", points=[(9, 1)])
        with pytest.raises(InputError):
            prompt_to_mask(prompt, (8, 8))


class TestMaskPool:
    def test_mean_of_selected_rows(self):
        feats = torch.arange(16, dtype=torch.float64).reshape(4, 4)
        mask = np.zeros((4, 4), dtype=bool)
        mask[0:2, :] = True  # covers patch cells 0 and 1 of a 2x2 grid
        emb = mask_pool(feats, mask, (2, 2), identity_projection(4))
        expected = (feats[0] + feats[1]) / 2
        assert torch.allclose(emb.data, expected)

    def test_full_mask_is_global_mean(self):
        feats = torch.randn(4, 3, dtype=torch.float64)
        mask = np.ones((6, 6), dtype=bool)
        emb = mask_pool(feats, mask, (2, 2), identity_projection(3))
        assert torch.allclose(emb.data, feats.mean(dim=0))

    def test_coverage_threshold_drops_marginal_patch(self):
        # Patch cell 0 covered 30%, cell 3 covered 2%; 5% floor keeps only 0.
        mask = np.zeros((20, 20), dtype=bool)
        mask[0:3, 0:10] = True        # 30 of cell 0's 100 pixels
        mask[10:11, 10:12] = True     # 2 of cell 3's 100 pixels
        cell0 = int(mask[0:10, 0:10].sum())
        cell3 = int(mask[10:20, 10:20].sum())
        assert (cell0, cell3) == (30, 2)
        selected = mask_to_patch_selection(mask, (2, 2), min_coverage=0.05)
        assert selected.tolist() == [0]

    def test_argmax_fallback_when_nothing_clears_floor(self):
        mask = np.zeros((20, 20), dtype=bool)
        mask[10, 10] = True  # 1% of cell 3
        selected = mask_to_patch_selection(mask, (2, 2), min_coverage=0.05)
        assert selected.tolist() == [3]

    def test_all_zero_mask_rejected(self):
        feats = torch.randn(4, 3, dtype=torch.float64)
        with pytest.raises(InputError):
            mask_pool(feats, np.zeros((4, 4), dtype=bool), (2, 2), identity_projection(3))

    def test_permutation_invariance(self):
        # Permuting patch cells together with their feature rows leaves the
        # pooled embedding unchanged.
        rng = np.random.default_rng(5)
        grid = rng.random((2, 2)) < 0.6
        if not grid.any():
            grid[0, 0] = True
        feats = torch.randn(4, 3, dtype=torch.float64)
        proj = identity_projection(3)
        mask = np.kron(grid, np.ones((5, 5), dtype=bool))
        base = mask_pool(feats, mask, (2, 2), proj).data
        perm = [2, 0, 3, 1]
        grid_p = grid.reshape(-1)[perm].reshape(2, 2)
        mask_p = np.kron(grid_p, np.ones((5, 5), dtype=bool))
        out = mask_pool(feats[perm], mask_p, (2, 2), proj).data
        assert torch.allclose(out, base)

    def test_box_and_equivalent_mask_prompts_agree(self):
        frame_shape = (16, 16)
        box_prompt = ObjectPrompt(kind="box", box=(4, 4, 12, 10))
        box_mask = prompt_to_mask(box_prompt, frame_shape)
        mask_prompt = ObjectPrompt(kind="mask", mask=box_mask)
        feats = torch.randn(16, 8, dtype=torch.float64)
        proj = nn.Linear(8, 6).double()
        emb_box = mask_pool(feats, prompt_to_mask(box_prompt, frame_shape), (4, 4), proj)
        emb_mask = mask_pool(feats, prompt_to_mask(mask_prompt, frame_shape), (4, 4), proj)
        assert torch.allclose(emb_box.data, emb_mask.data, atol=1e-9)


def make_text(n_tokens: int, d_llm: int, seg_at: list[int] | None = None, seg_id: int = 7):
    g = torch.Generator().manual_seed(n_tokens)
    emb = torch.randn(n_tokens, d_llm, generator=g, dtype=torch.float64)
    ids = [100 + i for i in range(n_tokens)]
    for pos in seg_at or []:
        ids[pos] = seg_id
    return emb, ids


class TestAssembleStream:
    def test_length_arithmetic(self):
        d = 16
        key = torch.randn(5 * 16, d, dtype=torch.float64)
        agg = AggregatedContext(torch.randn(8, d, dtype=torch.float64))
        text, ids = make_text(20, d)
        obj = ObjectEmbedding(torch.randn(d, dtype=torch.float64))
        stream = assemble_stream(key, agg, text, ids, [(3, obj)], seg_vocab_id=7)
        assert stream.length == 80 + 8 + 21 == 109
        assert stream.prefix_length == 88
        assert stream.object_slots == [88 + 3]

    def test_empty_aggregated_context(self):
        d = 16
        key = torch.randn(5 * 16, d, dtype=torch.float64)
        agg = AggregatedContext.empty(d, dtype=torch.float64)
        text, ids = make_text(20, d)
        obj = ObjectEmbedding(torch.randn(d, dtype=torch.float64))
        stream = assemble_stream(key, agg, text, ids, [(3, obj)], seg_vocab_id=7)
        assert stream.length == 80 + 0 + 21 == 101
        assert SEGMENT_AGGREGATED not in stream.segment_map

    def test_two_object_slots_in_question_order(self):
        d = 8
        key = torch.randn(4, d, dtype=torch.float64)
        agg = AggregatedContext(torch.randn(2, d, dtype=torch.float64))
        text, ids = make_text(10, d)
        obj_a = ObjectEmbedding(torch.full((d,), 1.0, dtype=torch.float64))
        obj_b = ObjectEmbedding(torch.full((d,), 2.0, dtype=torch.float64))
        stream = assemble_stream(key, agg, text, ids, [(2, obj_a), (6, obj_b)], seg_vocab_id=7)
        assert len(stream.object_slots) == 2
        assert stream.object_slots == sorted(stream.object_slots)
        for slot in stream.object_slots:
            assert slot in stream.text_region()
        assert torch.equal(stream.embeddings[stream.object_slots[0]], obj_a.data)
        assert torch.equal(stream.embeddings[stream.object_slots[1]], obj_b.data)

    def test_splice_then_delete_recovers_text(self):
        d = 8
        key = torch.randn(4, d, dtype=torch.float64)
        agg = AggregatedContext(torch.randn(2, d, dtype=torch.float64))
        text, ids = make_text(10, d)
        objs = [(0, ObjectEmbedding(torch.randn(d, dtype=torch.float64))),
                (5, ObjectEmbedding(torch.randn(d, dtype=torch.float64))),
                (10, ObjectEmbedding(torch.randn(d, dtype=torch.float64)))]
        stream = assemble_stream(key, agg, text, ids, objs, seg_vocab_id=7)
        keep = [i for i in stream.text_region() if i not in stream.object_slots]
        recovered = stream.embeddings[keep]
        assert torch.equal(recovered, text)

    def test_segment_map_partition_and_seg_tracking(self):
        d = 8
        key = torch.randn(4, d, dtype=torch.float64)
        agg = AggregatedContext(torch.randn(2, d, dtype=torch.float64))
        text, ids = make_text(6, d, seg_at=[2, 5])
        stream = assemble_stream(key, agg, text, ids, [], seg_vocab_id=7)
        labels = stream.segment_map
        assert labels[:4] == [SEGMENT_KEYFRAME] * 4
        assert labels[4:6] == [SEGMENT_AGGREGATED] * 2
        assert set(labels[6:]) <= {SEGMENT_TEXT, SEGMENT_SEG, SEGMENT_OBJECT}
        assert stream.seg_positions() == [6 + 2, 6 + 5]
        # Contiguity: keyframe block, aggregated block, then text region.
        first_text = labels.index(SEGMENT_TEXT)
        assert SEGMENT_KEYFRAME not in labels[first_text:]
        assert SEGMENT_AGGREGATED not in labels[first_text:]

    def test_out_of_range_insertion_rejected(self):
        d = 8
        key = torch.randn(4, d, dtype=torch.float64)
        agg = AggregatedContext.empty(d, dtype=torch.float64)
        text, ids = make_text(5, d)
        obj = ObjectEmbedding(torch.randn(d, dtype=torch.float64))
        with pytest.raises(InputError):
            assemble_stream(key, agg, text, ids, [(6, obj)], seg_vocab_id=7)

    def test_attention_mask_structure(self):
        d = 8
        key = torch.randn(3, d, dtype=torch.float64)
        agg = AggregatedContext(torch.randn(1, d, dtype=torch.float64))
        text, ids = make_text(4, d)
        stream = assemble_stream(key, agg, text, ids, [], seg_vocab_id=7)
        mask = stream.attention_mask
        prefix = stream.prefix_length
        # Visual prefix: bidirectional within itself, blind to text.
        assert mask[:prefix, :prefix].all()
        assert not mask[:prefix, prefix:].any()
        # Text: sees the full prefix, causal among itself.
        for i in range(prefix, stream.length):
            assert mask[i, :prefix].all()
            assert mask[i, prefix : i + 1].all()
            assert not mask[i, i + 1 :].any()
