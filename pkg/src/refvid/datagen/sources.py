"""Source adapters: mask-track directories and box-track CSVs."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from ..errors import DataError
from ..rle import decode_mask
from .records import SourceAnnotation, SourceObject


def _load_image(path: Path) -> np.ndarray:
    if path.suffix == ".npy":
        return np.load(path)
    from PIL import Image

    return np.asarray(Image.open(path).convert("RGB"))


def load_mask_dir_source(index_path, kind: str = "mask_dir") -> list[SourceAnnotation]:
    """Mask-track layout: an index.json next to frame/mask files.

    index.json: {"videos": [{"video_id", "frames": [paths], "objects":
    [{"object_id", "rle_masks": [rle or null per frame], "category"?,
    "expression"?}]}]}. Paths are relative to the index file.
    """
    index_path = Path(index_path)
    base = index_path.parent
    try:
        index = json.loads(index_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read index {index_path}: {exc}") from exc
    sources = []
    for video in index.get("videos", []):
        frames = [_load_image(base / f) for f in video["frames"]]
        objects = []
        for obj in video["objects"]:
            masks = [decode_mask(r) if r is not None else None for r in obj["rle_masks"]]
            objects.append(SourceObject(obj["object_id"], masks=masks,
                                        category=obj.get("category"),
                                        expression=obj.get("expression")))
        sources.append(SourceAnnotation(video["video_id"], frames, objects, kind=kind))
    return sources


def load_box_csv_source(csv_path, frames_root, kind: str = "box_csv",
                        frame_interval: int = 1) -> list[SourceAnnotation]:
    """Box-track CSV: video_id,frame_index,object_id,x0,y0,x1,y1[,category].

    Frames live at frames_root/<video_id>/<frame_index>.npy|.png and are
    sampled every `frame_interval` source frames (grounding-style sources
    are typically subsampled this way).
    """
    csv_path = Path(csv_path)
    frames_root = Path(frames_root)
    per_video: dict[str, dict] = {}
    with csv_path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                vid = row["video_id"]
                frame = int(row["frame_index"])
                box = tuple(float(row[k]) for k in ("x0", "y0", "x1", "y1"))
            except (KeyError, ValueError) as exc:
                raise DataError(f"bad CSV row: {exc}", line=lineno) from exc
            entry = per_video.setdefault(vid, {"frames": set(), "objects": {}})
            entry["frames"].add(frame)
            entry["objects"].setdefault(row["object_id"], {}).update(
                {frame: (box, row.get("category") or None)}
            )
    sources = []
    for vid, entry in sorted(per_video.items()):
        frame_ids = sorted(entry["frames"])[::frame_interval]
        frames = []
        for frame_id in frame_ids:
            candidates = [frames_root / vid / f"{frame_id:05d}{ext}" for ext in (".npy", ".png")]
            path = next((p for p in candidates if p.exists()), None)
            if path is None:
                raise DataError(f"no frame image for {vid} frame {frame_id}")
            frames.append(_load_image(path))
        objects = []
        for object_id, track in sorted(entry["objects"].items()):
            boxes = [track.get(f, (None, None))[0] for f in frame_ids]
            category = next((c for _b, c in track.values() if c), None)
            objects.append(SourceObject(object_id, boxes=boxes, category=category))
        sources.append(SourceAnnotation(vid, frames, objects, kind=kind))
    return sources
