"""Built-in consistency checks runnable from the CLI.

Each check recomputes its expectation from first principles (scalar loops,
central differences, pixel enumeration) so a green run certifies the fast
paths against independent arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .aggregator import (
    AggregatorConfig,
    STCAggregator,
    TemporalTokens,
    VideoFeatures,
    enumerate_windows,
)
from .metrics.text import cider, meteor
from .rle import decode_mask, encode_mask


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def _check_context_attention_bruteforce() -> CheckResult:
    cfg = AggregatorConfig(k_s=1, k_t=1, w_t=1, stride=1, heads=1, context_heads=1,
                           d_v=2, d_llm=3, ffn_mult=1)
    torch.manual_seed(0)
    agg = STCAggregator(cfg).double()
    ctx = agg.context
    frames_data = [[[0.2, -1.0], [0.7, 0.4]], [[-0.3, 0.9], [1.1, -0.5]]]
    z_data = [[0.6, -0.8], [-0.1, 1.2]]
    frames = VideoFeatures(torch.tensor(frames_data, dtype=torch.float64))
    temporal = TemporalTokens(torch.tensor(z_data, dtype=torch.float64), [(0, 2)])
    with torch.no_grad():
        got = agg.context_aggregate(frames, temporal).data

    wq = ctx.w_q.weight.T.tolist()
    wk = ctx.w_k.weight.T.tolist()
    wv = ctx.w_v.weight.T.tolist()
    wp = ctx.w_p.weight.T.tolist()
    bp = ctx.w_p.bias.tolist()

    def matvec(vec, w):
        return [sum(vec[a] * w[a][c] for a in range(len(vec))) for c in range(len(w[0]))]

    scale = math.sqrt(2)
    expected = []
    keys = [matvec(z, wk) for z in z_data]
    vals = [matvec(z, wv) for z in z_data]
    for frame in frames_data:
        acc = [0.0, 0.0]
        for patch in frame:
            q = matvec(patch, wq)
            logits = [sum(qc * kc for qc, kc in zip(q, k)) / scale for k in keys]
            m = max(logits)
            exps = [math.exp(x - m) for x in logits]
            z_norm = sum(exps)
            weights = [e / z_norm for e in exps]
            for c in range(2):
                acc[c] += sum(w * v[c] for w, v in zip(weights, vals))
        pooled = [a / len(frame) for a in acc]
        expected.append([sum(pooled[a] * wp[a][o] for a in range(2)) + bp[o] for o in range(3)])
    err = (got - torch.tensor(expected, dtype=torch.float64)).abs().max().item()
    return CheckResult("context_attention_bruteforce", err <= 1e-6, f"max abs err {err:.2e}")


def _check_attention_rows() -> CheckResult:
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(20):
        heads = int(rng.choice([1, 2, 4]))
        d_v = int(rng.choice([8, 16]))
        cfg = AggregatorConfig(
            k_s=int(rng.integers(1, 5)), k_t=int(rng.integers(1, 4)),
            w_t=int(rng.integers(1, 5)), stride=None, heads=heads,
            context_heads=1, d_v=d_v, d_llm=8, ffn_mult=2,
        )
        torch.manual_seed(int(rng.integers(0, 1000)))
        agg = STCAggregator(cfg).double()
        n = int(rng.integers(1, 7))
        p = int(rng.integers(1, 6))
        frames = VideoFeatures(torch.randn(n, p, d_v, dtype=torch.float64))
        question = torch.randn(int(rng.integers(0, 4)), d_v, dtype=torch.float64)
        sink: list = []
        with torch.no_grad():
            agg(frames, question=question, attn_sink=sink)
        for weights in sink:
            worst = max(worst, float((weights.sum(-1) - 1.0).abs().max()))
    return CheckResult("attention_rows_sum_to_one", worst <= 1e-6, f"worst |sum-1| {worst:.2e}")


def _check_window_enumeration() -> CheckResult:
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(1, 40))
        w = int(rng.integers(1, 10))
        stride = int(rng.integers(1, w + 1))
        got = enumerate_windows(n, w, stride)
        expected = [(s, min(s + w, n)) for s in range(0, n, stride)]
        if got != expected:
            return CheckResult("window_enumeration", False, f"mismatch at n={n} w={w} s={stride}")
    return CheckResult("window_enumeration", True, "50 random triples")


def _check_aggregator_gradients() -> CheckResult:
    cfg = AggregatorConfig(k_s=2, k_t=2, w_t=2, stride=2, heads=2, context_heads=1,
                           d_v=6, d_llm=4, ffn_mult=2)
    torch.manual_seed(3)
    agg = STCAggregator(cfg).double()
    frames = VideoFeatures(torch.randn(3, 4, 6, dtype=torch.float64))
    question = torch.randn(2, 6, dtype=torch.float64)

    def loss_value() -> float:
        with torch.no_grad():
            out = agg(frames, question=question).data
            return float((out * out).sum())

    agg.zero_grad(set_to_none=True)
    out = agg(frames, question=question).data
    (out * out).sum().backward()
    eps = 1e-5
    worst = 0.0
    for name, p in agg.named_parameters():
        analytic = p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
        fd = torch.zeros_like(p)
        flat, fd_flat = p.data.view(-1), fd.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            up = loss_value()
            flat[i] = orig - eps
            down = loss_value()
            flat[i] = orig
            fd_flat[i] = (up - down) / (2 * eps)
        denom = max(analytic.norm().item(), fd.norm().item())
        if denom > 1e-6:
            worst = max(worst, (analytic - fd).norm().item() / denom)
    return CheckResult("aggregator_gradients_vs_fd", worst <= 1e-4, f"worst rel err {worst:.2e}")


def _check_rle_roundtrip() -> CheckResult:
    rng = np.random.default_rng(2)
    for _ in range(200):
        mask = rng.random((int(rng.integers(1, 12)), int(rng.integers(1, 12)))) < 0.4
        if not np.array_equal(decode_mask(encode_mask(mask)), mask):
            return CheckResult("rle_roundtrip", False, "round trip mismatch")
    return CheckResult("rle_roundtrip", True, "200 random masks")


def _check_metric_oracles() -> CheckResult:
    problems = []
    if abs(meteor("cat", ["cat"]) - 0.5) > 1e-12:
        problems.append("meteor identity != 0.5")
    cands = ["the red square slides right", "other words here now"]
    refs = [["the red square slides right"], ["a blue circle drifts slowly"]]
    _, scores = cider(cands, refs)
    if abs(scores[0] - 10.0) > 1e-9:
        problems.append(f"cider identity {scores[0]!r} != 10.0")
    rng = np.random.default_rng(5)
    from .grounding import MaskTrack
    from .metrics.masks import st_iou

    for _ in range(50):
        pred = rng.random((2, 6, 6)) < 0.5
        gt = rng.random((2, 6, 6)) < 0.5
        inter = int(np.logical_and(pred, gt).sum())
        union = int(np.logical_or(pred, gt).sum())
        expected = 1.0 if union == 0 else inter / union
        got = st_iou(MaskTrack(list(pred)), MaskTrack(list(gt)))
        if got != expected:
            problems.append("st_iou mismatch")
            break
    return CheckResult("metric_oracles", not problems, "; ".join(problems) or "ok")


def run_selfcheck() -> list[CheckResult]:
    return [
        _check_context_attention_bruteforce(),
        _check_attention_rows(),
        _check_window_enumeration(),
        _check_aggregator_gradients(),
        _check_rle_roundtrip(),
        _check_metric_oracles(),
    ]
