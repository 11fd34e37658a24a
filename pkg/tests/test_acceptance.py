"""Acceptance gate: every criterion at its stated tolerance.

Each test prints one PASS/FAIL line (run with `pytest -s tests/test_acceptance.py`
to watch them stream)."""

from __future__ import annotations

import time

import numpy as np
import pytest
import torch

from refvid.aggregator import (
    AggregatorConfig,
    STCAggregator,
    TemporalTokens,
    VideoFeatures,
    enumerate_windows,
)
from refvid.clients import FixtureCompletionClient
from refvid.datagen import (
    SourceAnnotation,
    SourceObject,
    emit_jsonl,
    generate_synthetic_corpus,
    load_jsonl,
    run_pipeline,
    validate_record,
)
from refvid.grounding import MaskTrack
from refvid.metrics import cider, meteor, st_iou
from refvid.model import ModelConfig, TrainConfig, compute_loss
from refvid.prompts import ObjectPrompt, mask_pool, prompt_to_mask
from refvid.tokenizer import Tokenizer
from refvid.training import build_model, train

from oracles import (
    context_attention_reference,
    enumerate_windows_reference,
    gradcheck_report,
    random_mask_pair,
    track_iou_reference,
)
from test_gradcheck import build_micro_model
from test_model import fake_result


def report(number: int, name: str, passed: bool, detail: str = ""):
    status = "PASS" if passed else "FAIL"
    line = f"ACCEPTANCE {number:02d} {status}  {name}"
    if detail:
        line += f"  [{detail}]"
    print(line)
    assert passed, line


def test_criterion_01_context_attention_oracle():
    started = time.monotonic()
    cfg = AggregatorConfig(k_s=1, k_t=1, w_t=1, stride=1, heads=1, context_heads=1,
                           d_v=2, d_llm=3, ffn_mult=1)
    torch.manual_seed(0)
    agg = STCAggregator(cfg).double()
    frames_data = [[[0.4, -0.9], [1.2, 0.3]], [[-0.6, 0.8], [0.1, -1.1]]]
    z_data = [[0.7, -0.2], [-0.5, 1.0]]
    got = agg.context_aggregate(
        VideoFeatures(torch.tensor(frames_data, dtype=torch.float64)),
        TemporalTokens(torch.tensor(z_data, dtype=torch.float64), [(0, 2)]),
    ).data
    expected = context_attention_reference(
        frames_data, z_data,
        agg.context.w_q.weight.T.tolist(), agg.context.w_k.weight.T.tolist(),
        agg.context.w_v.weight.T.tolist(), agg.context.w_p.weight.T.tolist(),
        agg.context.w_p.bias.tolist(),
    )
    err = (got - torch.tensor(expected, dtype=torch.float64)).abs().max().item()
    elapsed = time.monotonic() - started
    report(1, "context attention: vectorized vs explicit-loop oracle",
           err <= 1e-6 and elapsed < 1.0, f"max err {err:.2e}, {elapsed:.2f}s")


def test_criterion_02_full_stack_gradient_suite():
    model, train_cfg, record, frames = build_micro_model()

    def loss_fn():
        return compute_loss(model(record, frames), train_cfg).total

    started = time.monotonic()
    errors = gradcheck_report(model, loss_fn)
    elapsed = time.monotonic() - started
    worst_name = max(errors, key=errors.get)
    worst = errors[worst_name]
    report(2, "analytic vs central-difference gradients, full stack",
           worst <= 1e-4 and elapsed < 60.0,
           f"{len(errors)} tensors, worst {worst:.2e} ({worst_name}), {elapsed:.1f}s")


def test_criterion_03_attention_normalization_100_configs():
    rng = np.random.default_rng(30)
    worst = 0.0
    rows = 0
    for _ in range(100):
        heads = int(rng.choice([1, 2, 4]))
        d_v = int(rng.choice([8, 12, 16]))
        w_t = int(rng.integers(1, 5))
        cfg = AggregatorConfig(
            k_s=int(rng.integers(1, 5)), k_t=int(rng.integers(1, 4)), w_t=w_t,
            stride=int(rng.integers(1, w_t + 1)), heads=heads, context_heads=1,
            d_v=d_v, d_llm=8, ffn_mult=2,
        )
        torch.manual_seed(int(rng.integers(0, 10_000)))
        agg = STCAggregator(cfg).double()
        frames = VideoFeatures(
            torch.randn(int(rng.integers(1, 7)), int(rng.integers(1, 6)), d_v,
                        dtype=torch.float64)
        )
        question = torch.randn(int(rng.integers(0, 4)), d_v, dtype=torch.float64)
        sink: list = []
        with torch.no_grad():
            agg(frames, question=question, attn_sink=sink)
        for weights in sink:
            rows += weights.numel() // weights.shape[-1]
            worst = max(worst, float((weights.sum(-1) - 1.0).abs().max()))
    report(3, "attention rows sum to 1 across 100 random configurations",
           worst <= 1e-6, f"{rows} rows, worst |sum-1| {worst:.2e}")


def test_criterion_04_window_arithmetic_50_triples():
    rng = np.random.default_rng(40)
    cfg_base = dict(k_s=2, heads=1, context_heads=1, d_v=4, d_llm=4, ffn_mult=1)
    all_match = True
    detail = ""
    for _ in range(50):
        n = int(rng.integers(1, 40))
        w_t = int(rng.integers(1, 9))
        stride = int(rng.integers(1, w_t + 1))
        k_t = int(rng.integers(1, 4))
        expected = enumerate_windows_reference(n, w_t, stride)
        got = enumerate_windows(n, w_t, stride)
        cfg = AggregatorConfig(k_t=k_t, w_t=w_t, stride=stride, **cfg_base)
        torch.manual_seed(0)
        agg = STCAggregator(cfg).double()
        spatial = agg.spatial_aggregate(
            VideoFeatures(torch.randn(n, 3, 4, dtype=torch.float64))
        )
        with torch.no_grad():
            temporal = agg.temporal_aggregate(spatial)
        if (got != expected or temporal.window_boundaries != expected
                or temporal.data.shape[0] != len(expected) * k_t):
            all_match = False
            detail = f"mismatch at n={n} w={w_t} stride={stride}"
            break
    report(4, "window boundaries and K_final vs enumeration oracle",
           all_match, detail or "50 random triples exact")


def test_criterion_05_ablation_contract():
    record_pairs = generate_synthetic_corpus(1, seed=5, frame_shape=(16, 16),
                                             min_frames=4, max_frames=4)
    record, frames = record_pairs[0]
    texts = [t["text"] for t in record["conversation"]]
    tok = Tokenizer.from_texts(texts)
    agg_cfg = AggregatorConfig(k_s=2, k_t=2, w_t=2, stride=2, heads=2, context_heads=1,
                               d_v=8, d_llm=16, ffn_mult=2)
    model_cfg = ModelConfig(patch_grid=(2, 2), frame_shape=(16, 16), n_keyframes=2,
                            lm_layers=1, lm_heads=2, lm_ffn_mult=2)
    full = build_model(agg_cfg, model_cfg, tok, TrainConfig(seed=0, max_seq_len=384))
    ablated = build_model(agg_cfg, model_cfg, tok,
                          TrainConfig(seed=0, max_seq_len=384, ablate_stc=True))
    full_result = full(record, frames)
    cut_result = ablated(record, frames)
    n_aggregated = len(record["sampled_frames"])  # one context token per frame
    delta = full_result.stream.length - cut_result.stream.length
    loss = compute_loss(cut_result, TrainConfig(ablate_stc=True))
    loss.total.backward()
    no_agg_params = not any(k.startswith("aggregator.") for k in ablated.state_dict())
    report(5, "w/o-STC ablation: stream shrinks by aggregated count, no aggregator grads",
           delta == n_aggregated and ablated.aggregator is None and no_agg_params,
           f"delta {delta} == {n_aggregated}, aggregator absent from graph")


def test_criterion_06_toy_training_regression():
    started = time.monotonic()
    pairs = generate_synthetic_corpus(220, seed=0)
    train_pairs, held_out = pairs[:200], pairs[200:]
    texts = [t["text"] for r, _ in train_pairs for t in r["conversation"]]
    tok = Tokenizer.from_texts(texts)
    cfg = TrainConfig(seed=0)  # defaults: 500 steps
    model = build_model(AggregatorConfig(), ModelConfig(), tok, cfg)
    result = train(train_pairs, model, cfg)
    initial, final = result.initial_smoothed(), result.final_smoothed()
    seg_hits = 0
    for record, frames in held_out:
        text, _ = model.generate(record, frames, max_new_tokens=24)
        seg_hits += "[SEG]" in text
    elapsed = time.monotonic() - started
    ratio = final / initial
    seg_rate = seg_hits / len(held_out)
    report(6, "toy training halves smoothed loss and grounds generations",
           ratio <= 0.5 and seg_rate >= 0.8 and elapsed < 600.0,
           f"ratio {ratio:.3f}, [SEG] rate {seg_rate:.0%}, {elapsed:.0f}s")


def test_criterion_07_metric_oracles():
    rng = np.random.default_rng(70)
    iou_exact = True
    for _ in range(100):
        frames = int(rng.integers(1, 4))
        pred, gt = random_mask_pair(rng, frames, int(rng.integers(2, 9)), int(rng.integers(2, 9)))
        got = st_iou(MaskTrack(list(pred)), MaskTrack(list(gt)))
        if got != track_iou_reference(pred.tolist(), gt.tolist()):
            iou_exact = False
            break
    meteor_identity = meteor("cat", ["cat"])
    cands = ["the red square slides right", "different words over here"]
    refs = [["the red square slides right"], ["a blue circle drifts slowly"]]
    _, cider_scores = cider(cands, refs)
    report(7, "metric oracles: st_iou exact x100, METEOR identity, CIDEr identity",
           iou_exact and meteor_identity == 0.5 and abs(cider_scores[0] - 10.0) <= 1e-9,
           f"meteor {meteor_identity}, cider {cider_scores[0]:.12f}")


def test_criterion_08_loss_weight_identity():
    result = fake_result(perfect=False, n_segs=1)
    base = compute_loss(result, TrainConfig(text_loss_weight=1.0))
    heavy = compute_loss(result, TrainConfig(text_loss_weight=1.5))
    diff = float(heavy.total - base.total)
    expected = 0.5 * float(base.ce)
    report(8, "total(1.5) - total(1.0) == 0.5 * CE",
           abs(diff - expected) <= 1e-9, f"|{diff:.12f} - {expected:.12f}|")


def _fixture_sources():
    sources = []
    for v in range(3):
        frames = [np.full((20, 20, 3), 100, dtype=np.uint8) for _ in range(16)]
        objects = []
        for k in range(2):
            mask = np.zeros((20, 20), dtype=bool)
            mask[2 + 7 * k : 7 + 7 * k, 4:9] = True
            objects.append(SourceObject(f"obj{k}", masks=[mask] * 16, category="square"))
        sources.append(SourceAnnotation(f"vid{v}", frames, objects, kind="mask_dir"))
    return sources


_FIXTURE_REPLIES = [
    "obj0: the upper square\nobj1: the lower square",
    "USER: what is <region:obj0> doing ?\n"
    "ASSISTANT: <p>the upper square</p>[SEG:obj0] sits .\n"
    "USER: and <region:obj1> ?\n"
    "ASSISTANT: <p>the lower square</p>[SEG:obj1] waits .",
] * 3


def test_criterion_09_data_pipeline(tmp_path):
    blobs = []
    for run in range(2):
        client = FixtureCompletionClient(replies=list(_FIXTURE_REPLIES))
        records, _ = run_pipeline(_fixture_sources(), client)
        path = tmp_path / f"run{run}.jsonl"
        emit_jsonl(records, path)
        blobs.append(path.read_bytes())
    deterministic = blobs[0] == blobs[1]

    client = FixtureCompletionClient(replies=list(_FIXTURE_REPLIES))
    records, _ = run_pipeline(_fixture_sources(), client)
    all_valid = all(validate_record(r) == [] for r in records)
    bijective = all(
        len({o["color_tag"] for o in r["objects"]}) == len(r["objects"]) for r in records
    )

    pairs = generate_synthetic_corpus(1000, seed=9)
    synth_records = [r for r, _ in pairs]
    synth_path = tmp_path / "synthetic.jsonl"
    emit_jsonl(synth_records, synth_path)
    round_trip = load_jsonl(synth_path) == synth_records
    report(9, "pipeline determinism, validity, bijection; 1000-record round trip",
           deterministic and all_valid and bijective and round_trip,
           f"{len(records)} fixture records, {len(synth_records)} synthetic")


def test_criterion_10_prompt_format_parity():
    g = torch.Generator().manual_seed(100)
    feats = torch.randn(16, 8, generator=g, dtype=torch.float64)
    torch.manual_seed(100)
    projection = torch.nn.Linear(8, 6).double()
    box_prompt = ObjectPrompt(kind="box", box=(4, 4, 12, 10))
    box_mask = prompt_to_mask(box_prompt, (16, 16))
    mask_prompt = ObjectPrompt(kind="mask", mask=box_mask)
    emb_box = mask_pool(feats, prompt_to_mask(box_prompt, (16, 16)), (4, 4), projection)
    emb_mask = mask_pool(feats, prompt_to_mask(mask_prompt, (16, 16)), (4, 4), projection)
    diff = float((emb_box.data - emb_mask.data).detach().abs().max())
    report(10, "box prompt == equivalent filled-box mask prompt embedding",
           diff <= 1e-9, f"max abs diff {diff:.2e}")
