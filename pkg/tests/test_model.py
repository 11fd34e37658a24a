from __future__ import annotations

import math

import numpy as np
import pytest
import torch

from refvid.aggregator import AggregatorConfig
from refvid.datagen import generate_synthetic_corpus
from refvid.errors import TrainingDiverged
from refvid.model import (
    ForwardResult,
    ModelConfig,
    SegSupervision,
    ToyCausalLM,
    TrainConfig,
    compute_loss,
    keyframe_indices,
    prepare_text,
)
from refvid.rle import encode_mask
from refvid.tokenizer import Tokenizer
from refvid.training import (
    build_model,
    load_checkpoint,
    save_checkpoint,
    train,
    write_loss_curve,
)

FRAME_SHAPE = (16, 16)


def tiny_agg_cfg(**overrides):
    base = dict(k_s=2, k_t=2, w_t=2, stride=2, heads=2, context_heads=1,
                d_v=8, d_llm=16, ffn_mult=2)
    base.update(overrides)
    return AggregatorConfig(**base)


def tiny_model_cfg(**overrides):
    base = dict(patch_grid=(2, 2), frame_shape=FRAME_SHAPE, n_keyframes=2,
                lm_layers=2, lm_heads=2, lm_ffn_mult=2)
    base.update(overrides)
    return ModelConfig(**base)


def one_object_record(n_frames=4):
    h, w = FRAME_SHAPE
    masks = []
    frames = np.full((n_frames, h, w, 3), 200, dtype=np.uint8)
    for t in range(n_frames):
        mask = np.zeros((h, w), dtype=bool)
        mask[4:9, 3 + t : 8 + t] = True
        masks.append(mask)
        frames[t][mask] = (220, 40, 40)
    record = {
        "video_id": "unit",
        "sampled_frames": [f"unit#{t:02d}" for t in range(n_frames)],
        "objects": [{
            "object_id": "obj0",
            "color_tag": "red",
            "category": "square",
            "rle_masks": [encode_mask(m) for m in masks],
        }],
        "descriptions": [{"object_id": "obj0", "text": "the red square moving right"}],
        "conversation": [
            {"role": "user", "text": "what is <region:obj0> doing ?"},
            {"role": "assistant", "text": "<p>the red square</p>[SEG:obj0] moves right ."},
        ],
    }
    return record, frames


def make_tokenizer(records):
    texts = [t["text"] for r in records for t in r["conversation"]]
    return Tokenizer.from_texts(texts)


def make_model(seed=0, ablate=False, **train_overrides):
    record, frames = one_object_record()
    tok = make_tokenizer([record])
    train_cfg = TrainConfig(seed=seed, ablate_stc=ablate, max_seq_len=256, **train_overrides)
    model = build_model(tiny_agg_cfg(), tiny_model_cfg(), tok, train_cfg)
    return model, train_cfg, record, frames


class TestPrepareText:
    def test_region_stripped_to_insertion(self):
        record, _ = one_object_record()
        tok = make_tokenizer([record])
        prepared = prepare_text(record["conversation"], tok)
        # "user : what is <region:obj0>" -> insertion after the 4 kept tokens.
        assert prepared.insertions == [(4, "obj0")]
        assert tok.region_id not in prepared.token_ids
        assert prepared.seg_object_ids == ["obj0"]
        assert prepared.token_ids[-1] == tok.eos_id

    def test_role_markers_not_supervised(self):
        record, _ = one_object_record()
        tok = make_tokenizer([record])
        prepared = prepare_text(record["conversation"], tok)
        surfaces = [tok.vocab[i] for i in prepared.token_ids]
        for pos, supervised in enumerate(prepared.response_mask):
            if surfaces[pos] in ("user", "assistant") or (
                surfaces[pos] == ":" and pos > 0 and surfaces[pos - 1] in ("user", "assistant")
            ):
                assert not supervised

    def test_question_positions_are_user_content(self):
        record, _ = one_object_record()
        tok = make_tokenizer([record])
        prepared = prepare_text(record["conversation"], tok)
        for pos in prepared.question_positions:
            assert prepared.roles[pos] == "user"


class TestKeyframes:
    def test_uniform_and_distinct(self):
        assert keyframe_indices(10, 5) == [0, 2, 4, 6, 8]
        assert keyframe_indices(4, 5) == [0, 1, 2, 3]
        assert keyframe_indices(16, 5) == [0, 3, 6, 9, 12]


class TestForward:
    def test_shape_contract_one_object(self):
        model, cfg, record, frames = make_model()
        result = model(record, frames)
        assert result.logits.shape == (result.stream.length, model.tokenizer.vocab_size)
        assert len(result.seg_outputs) == 1
        assert result.seg_outputs[0].mask_logits.shape == (4, *FRAME_SHAPE)
        assert len(result.target_positions) == len(result.target_ids) > 0

    def test_ablation_shortens_prefix_by_aggregated_count(self):
        model, _, record, frames = make_model(seed=3)
        ablated, _, _, _ = make_model(seed=3, ablate=True)
        full = model(record, frames)
        cut = ablated(record, frames)
        n_frames = len(record["sampled_frames"])
        assert full.stream.length - cut.stream.length == n_frames
        assert full.stream.prefix_length - cut.stream.prefix_length == n_frames
        assert len(full.target_ids) == len(cut.target_ids)
        assert len(full.seg_outputs) == len(cut.seg_outputs)

    def test_seed_determinism(self):
        model_a, _, record, frames = make_model(seed=5)
        model_b, _, _, _ = make_model(seed=5)
        model_c, _, _, _ = make_model(seed=6)
        logits_a = model_a(record, frames).logits
        logits_b = model_b(record, frames).logits
        logits_c = model_c(record, frames).logits
        assert torch.equal(logits_a, logits_b)
        assert not torch.allclose(logits_a, logits_c)

    def test_repeat_call_identical(self):
        model, _, record, frames = make_model()
        a = model(record, frames).logits
        b = model(record, frames).logits
        assert torch.equal(a, b)

    def test_missing_frames_is_data_error(self):
        from refvid.errors import DataError

        model, _, record, frames = make_model()
        with pytest.raises(DataError):
            model(record, frames[:-1])


def fake_result(vocab=11, n_targets=6, n_segs=1, frames=2, hw=(4, 4), sharp=1e4,
                perfect=True, dtype=torch.float64):
    g = torch.Generator().manual_seed(0)
    target_ids = [int(torch.randint(0, vocab, (1,), generator=g)) for _ in range(n_targets)]
    logits = torch.zeros(n_targets, vocab, dtype=dtype)
    for i, t in enumerate(target_ids):
        if perfect:
            logits[i, t] = sharp
        # else uniform rows: all zero
    seg_outputs = []
    for _ in range(n_segs):
        target = (torch.rand(frames, *hw, generator=g) > 0.5).to(dtype)
        mask_logits = (target * 2 - 1) * sharp if perfect else torch.zeros_like(target)
        seg_outputs.append(SegSupervision("obj0", 0, mask_logits, target))
    return ForwardResult(None, None, logits, list(range(n_targets)), target_ids, seg_outputs)


class TestLoss:
    def test_perfect_outputs_drive_total_to_zero(self):
        result = fake_result(perfect=True)
        loss = compute_loss(result, TrainConfig())
        assert float(loss.total) == pytest.approx(0.0, abs=1e-6)

    def test_uniform_logits_give_log_vocab_ce(self):
        result = fake_result(vocab=11, perfect=False, n_segs=0)
        loss = compute_loss(result, TrainConfig())
        assert float(loss.ce) == pytest.approx(math.log(11), rel=1e-12)

    def test_loss_weight_identity(self):
        result = fake_result(perfect=False)
        base = compute_loss(result, TrainConfig(text_loss_weight=1.0))
        heavy = compute_loss(result, TrainConfig(text_loss_weight=1.5))
        assert float(heavy.total - base.total) == pytest.approx(0.5 * float(base.ce), abs=1e-9)

    def test_no_seg_targets_mask_terms_exact_zero(self):
        result = fake_result(n_segs=0, perfect=False)
        loss = compute_loss(result, TrainConfig())
        assert float(loss.bce) == 0.0
        assert float(loss.dice) == 0.0

    def test_decomposition_identity_exact(self):
        result = fake_result(perfect=False)
        cfg = TrainConfig(text_loss_weight=1.25, bce_weight=0.5, dice_weight=2.0)
        loss = compute_loss(result, cfg)
        recomposed = (cfg.text_loss_weight * loss.ce + cfg.bce_weight * loss.bce
                      + cfg.dice_weight * loss.dice)
        assert float(loss.total - recomposed) == 0.0


class TestCausality:
    def test_prefix_predictions_unaffected_by_later_tokens(self):
        model, _, record, frames = make_model(seed=2)
        stream, prepared, _ = model.build_stream(record, frames)
        hidden, logits = model.lm(stream.embeddings, stream.attention_mask)
        # Perturb the embedding at a late text position.
        t = stream.length - 3
        bumped = stream.embeddings.clone()
        bumped[t] += 1.0
        hidden_b, logits_b = model.lm(bumped, stream.attention_mask)
        assert torch.allclose(logits[: t], logits_b[: t], atol=1e-10)
        assert not torch.allclose(logits[t:], logits_b[t:])


class TestTrain:
    def dataset(self, n=4):
        pairs = generate_synthetic_corpus(n, seed=13, frame_shape=FRAME_SHAPE,
                                          min_frames=4, max_frames=4)
        return pairs

    def model_for(self, pairs, **overrides):
        tok = make_tokenizer([r for r, _ in pairs])
        train_cfg = TrainConfig(max_seq_len=384, **overrides)
        model = build_model(tiny_agg_cfg(), tiny_model_cfg(n_keyframes=2), tok, train_cfg)
        return model, train_cfg

    def test_zero_lr_leaves_parameters_bitwise_unchanged(self):
        pairs = self.dataset()
        model, cfg = self.model_for(pairs, lr=0.0, steps=3)
        before = {k: v.clone() for k, v in model.state_dict().items()}
        train(pairs, model, cfg)
        after = model.state_dict()
        for key, tensor in before.items():
            assert torch.equal(tensor, after[key]), key

    def test_only_unfrozen_parameter_changes(self):
        pairs = self.dataset()
        model, cfg = self.model_for(pairs, lr=1e-2, steps=1)
        for p in model.parameters():
            p.requires_grad_(False)
        model.aggregator.context.w_p.weight.requires_grad_(True)
        before = {k: v.clone() for k, v in model.state_dict().items()}
        train(pairs, model, cfg)
        after = model.state_dict()
        for key, tensor in before.items():
            if key == "aggregator.context.w_p.weight":
                assert not torch.equal(tensor, after[key])
            else:
                assert torch.equal(tensor, after[key]), key

    def test_divergence_aborts_with_step_index(self):
        pairs = self.dataset()
        model, cfg = self.model_for(pairs, lr=1e-3, steps=5)
        with torch.no_grad():
            model.key_proj.weight.fill_(float("inf"))
        with pytest.raises(TrainingDiverged) as err:
            train(pairs, model, cfg)
        assert err.value.step == 0

    def test_frozen_encoder_never_updates(self):
        pairs = self.dataset()
        model, cfg = self.model_for(pairs, lr=1e-2, steps=2)
        before = model.encoder.weight.clone()
        train(pairs, model, cfg)
        assert torch.equal(before, model.encoder.weight)

    def test_loss_curve_rows_and_csv(self, tmp_path):
        pairs = self.dataset()
        model, cfg = self.model_for(pairs, lr=1e-3, steps=4)
        result = train(pairs, model, cfg)
        assert [r["step"] for r in result.curve] == [0, 1, 2, 3]
        path = tmp_path / "curve.csv"
        write_loss_curve(result.curve, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "step,total,ce,bce,dice"
        assert len(lines) == 5

    def test_frozen_lm_flag(self):
        pairs = self.dataset()
        model, cfg = self.model_for(pairs, lr=1e-2, steps=2, train_lm=False)
        before = {k: v.clone() for k, v in model.lm.state_dict().items()}
        train(pairs, model, cfg)
        for key, tensor in before.items():
            assert torch.equal(tensor, model.lm.state_dict()[key]), key


class TestAblationGradients:
    def test_no_aggregator_tensors_when_ablated(self):
        model, _, record, frames = make_model(ablate=True)
        assert model.aggregator is None
        assert not any(k.startswith("aggregator.") for k in model.state_dict())

    def test_aggregator_receives_gradient_when_enabled(self):
        model, cfg, record, frames = make_model()
        loss = compute_loss(model(record, frames), cfg)
        loss.total.backward()
        grads = [p.grad for p in model.aggregator.parameters()]
        assert any(g is not None and g.abs().sum() > 0 for g in grads)


class TestGenerate:
    def test_type_contract(self):
        model, _, record, frames = make_model()
        text, grounded = model.generate(record, frames, max_new_tokens=6)
        assert isinstance(text, str)
        assert isinstance(grounded, list)

    def test_teacher_forced_seg_count(self):
        model, _, record, frames = make_model()
        result = model(record, frames)
        assert len(result.seg_outputs) == 1


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        model, cfg, record, frames = make_model(seed=4)
        path = tmp_path / "ckpt.pt"
        save_checkpoint(path, model, cfg)
        restored, restored_cfg = load_checkpoint(path)
        assert restored_cfg == cfg
        assert restored.tokenizer.vocab == model.tokenizer.vocab
        for key, tensor in model.state_dict().items():
            assert torch.equal(tensor, restored.state_dict()[key]), key
        a = model(record, frames).logits
        b = restored(record, frames).logits
        assert torch.equal(a, b)

    def test_ablated_checkpoint_lacks_aggregator(self, tmp_path):
        model, cfg, _, _ = make_model(ablate=True)
        path = tmp_path / "ckpt.pt"
        save_checkpoint(path, model, cfg)
        restored, _ = load_checkpoint(path)
        assert restored.aggregator is None
        payload_keys = restored.state_dict().keys()
        assert not any(k.startswith("aggregator.") for k in payload_keys)


class TestToyCausalLM:
    def test_stream_longer_than_max_rejected(self):
        lm = ToyCausalLM(vocab_size=10, d_llm=8, max_seq_len=4)
        from refvid.errors import InputError
        with pytest.raises(InputError):
            lm(torch.randn(5, 8), torch.ones(5, 5, dtype=torch.bool))
