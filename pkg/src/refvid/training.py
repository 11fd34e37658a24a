"""Training loop, loss-curve bookkeeping, and checkpoint I/O."""

from __future__ import annotations

import csv
import random
from dataclasses import asdict, dataclass
from pathlib import Path

import torch

from .aggregator import AggregatorConfig
from .errors import DataError, NonFiniteError, TrainingDiverged
from .model import (
    GroundedVideoModel,
    ModelConfig,
    TrainConfig,
    compute_loss,
)
from .tokenizer import Tokenizer

SMOOTHING_WINDOW = 50

CURVE_COLUMNS = ("step", "total", "ce", "bce", "dice")


@dataclass
class TrainResult:
    model: GroundedVideoModel
    curve: list[dict]

    def initial_smoothed(self) -> float:
        head = self.curve[:SMOOTHING_WINDOW]
        return sum(r["total"] for r in head) / len(head)

    def final_smoothed(self) -> float:
        tail = self.curve[-SMOOTHING_WINDOW:]
        return sum(r["total"] for r in tail) / len(tail)


def build_model(agg_cfg: AggregatorConfig, model_cfg: ModelConfig, tokenizer: Tokenizer,
                train_cfg: TrainConfig) -> GroundedVideoModel:
    torch.manual_seed(train_cfg.seed)
    model = GroundedVideoModel(agg_cfg, model_cfg, tokenizer, train_cfg)
    model.set_trainable(train_cfg)
    return model


def train(dataset, model: GroundedVideoModel, cfg: TrainConfig) -> TrainResult:
    """Optimize the model on (record, frames) pairs, one sample per step.

    Only parameters currently marked trainable are updated. Raises
    TrainingDiverged with the step index if the loss goes non-finite.
    """
    if not dataset:
        raise DataError("training dataset is empty")
    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(params, lr=cfg.lr)
    order = list(range(len(dataset)))
    rng = random.Random(cfg.seed)
    curve: list[dict] = []
    cursor = 0
    for step in range(cfg.steps):
        if cursor == 0:
            rng.shuffle(order)
        record, frames = dataset[order[cursor]]
        cursor = (cursor + 1) % len(order)
        try:
            result = model(record, frames)
            loss = compute_loss(result, cfg)
        except NonFiniteError as exc:
            # Exploding parameters surface as non-finite activations before
            # the loss itself is computable.
            raise TrainingDiverged(step) from exc
        if not torch.isfinite(loss.total):
            raise TrainingDiverged(step)
        optimizer.zero_grad(set_to_none=True)
        loss.total.backward()
        optimizer.step()
        curve.append({"step": step, **loss.detached()})
    return TrainResult(model, curve)


def write_loss_curve(curve: list[dict], path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CURVE_COLUMNS)
        writer.writeheader()
        for row in curve:
            writer.writerow({k: row[k] for k in CURVE_COLUMNS})


def save_checkpoint(path, model: GroundedVideoModel, train_cfg: TrainConfig) -> None:
    """One archive: every parameter tensor keyed by module path + configs."""
    payload = {
        "state": model.state_dict(),
        "aggregator_config": asdict(model.agg_cfg),
        "model_config": asdict(model.model_cfg),
        "train_config": asdict(train_cfg),
        "vocab": model.tokenizer.vocab,
    }
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[GroundedVideoModel, TrainConfig]:
    payload = torch.load(path, weights_only=False)
    agg_cfg = AggregatorConfig(**payload["aggregator_config"])
    model_kwargs = dict(payload["model_config"])
    for key in ("patch_grid", "frame_shape"):
        model_kwargs[key] = tuple(model_kwargs[key])
    model_cfg = ModelConfig(**model_kwargs)
    train_cfg = TrainConfig(**payload["train_config"])
    # The constructor reproduces specials + sorted(words) exactly, so feeding
    # the stored vocab back restores identical token ids.
    tokenizer = Tokenizer(payload["vocab"])
    model = GroundedVideoModel(agg_cfg, model_cfg, tokenizer, train_cfg)
    model.load_state_dict(payload["state"])
    model.set_trainable(train_cfg)
    return model, train_cfg
