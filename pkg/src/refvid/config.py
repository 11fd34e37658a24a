"""Declarative run configuration: one JSON file, CLI-flag overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .aggregator import AggregatorConfig
from .errors import ConfigError
from .model import ModelConfig, TrainConfig


@dataclass
class DataConfig:
    corpus: str | None = None        # training/eval JSONL
    frames: str | None = None        # frames .npz archive
    mask_index: str | None = None    # mask-track source index.json
    box_csv: str | None = None       # box-track CSV
    frames_root: str | None = None   # frame images for box sources
    frame_interval: int = 1
    synthetic: int = 0               # generate N synthetic videos instead
    palette: str | None = None
    templates: str | None = None
    fixture: str | None = None       # annotation fixture replies
    filter_single_object: bool = True


@dataclass
class MetricConfig:
    iou_threshold: float = 0.5
    clair: bool = False
    clair_fixture: str | None = None
    judge_endpoint: str | None = None
    judge_key_env: str = "REFVID_JUDGE_KEY"


@dataclass
class ClientConfig:
    annotation_endpoint: str | None = None
    annotation_key_env: str = "REFVID_ANNOTATION_KEY"
    max_concurrent: int = 4


@dataclass
class RunConfig:
    aggregator: AggregatorConfig = field(default_factory=AggregatorConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    clients: ClientConfig = field(default_factory=ClientConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {f.name: f for f in fields(RunConfig)}
_TUPLE_FIELDS = {"patch_grid", "frame_shape"}


def _build_section(name: str, cls, payload: dict):
    allowed = {f.name for f in fields(cls)}
    unknown = set(payload) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in section {name!r}: {sorted(unknown)}")
    coerced = {
        k: tuple(v) if k in _TUPLE_FIELDS and isinstance(v, list) else v
        for k, v in payload.items()
    }
    return cls(**coerced)


def build_run_config(raw: dict) -> RunConfig:
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    kwargs = {}
    for name, section_field in _SECTIONS.items():
        payload = raw.get(name, {})
        if not isinstance(payload, dict):
            raise ConfigError(f"section {name!r} must be an object")
        kwargs[name] = _build_section(name, section_field.default_factory, payload)
    return RunConfig(**kwargs)


def apply_overrides(raw: dict, overrides: dict) -> dict:
    """Merge dotted-path overrides (`train.lr`) into the raw config dict."""
    merged = json.loads(json.dumps(raw))
    for dotted, value in overrides.items():
        if value is None:
            continue
        section, _, key = dotted.partition(".")
        if not key:
            raise ConfigError(f"override {dotted!r} must look like section.key")
        merged.setdefault(section, {})[key] = value
    return merged


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
    if overrides:
        raw = apply_overrides(raw, overrides)
    return build_run_config(raw)


def echo_config(cfg: RunConfig, out_dir) -> Path:
    """Write the effective config into the run directory."""
    out = Path(out_dir) / "config.json"
    out.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n",
                   encoding="utf-8")
    return out
