"""Synthetic moving-shapes corpus: exact masks, template dialogues.

Desk-scale stand-in training data: each video shows 2-4 colored shapes
translating over a plain background, with grounded template conversations
and pixel-exact mask tracks derived from the same geometry.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import DataError
from ..rle import encode_mask
from ..tokens import region_ref, seg_ref

BACKGROUND = (235, 235, 235)

SHAPE_COLORS = (
    ("red", (220, 40, 40)),
    ("blue", (40, 60, 220)),
    ("green", (40, 170, 70)),
    ("yellow", (235, 215, 50)),
    ("purple", (150, 60, 200)),
    ("orange", (240, 150, 40)),
)

DIRECTIONS = (
    ("right", (1, 0)),
    ("left", (-1, 0)),
    ("down", (0, 1)),
    ("up", (0, -1)),
)

SHAPES = ("square", "circle")


def _shape_mask(shape: str, cx: float, cy: float, size: int, frame_shape) -> np.ndarray:
    h, w = frame_shape
    mask = np.zeros((h, w), dtype=bool)
    if shape == "square":
        x0, y0 = int(round(cx)), int(round(cy))
        mask[max(0, y0):min(h, y0 + size), max(0, x0):min(w, x0 + size)] = True
    else:
        r = size / 2.0
        ys, xs = np.mgrid[0:h, 0:w]
        mask |= (xs - (cx + r - 0.5)) ** 2 + (ys - (cy + r - 0.5)) ** 2 <= r * r
    return mask


def _question(object_id: str) -> str:
    return f"what is {region_ref(object_id)} doing ?"


def _answer(color: str, shape: str, direction: str, object_id: str) -> str:
    return f"<p>the {color} {shape}</p>{seg_ref(object_id)} moves {direction} ."


def generate_synthetic_video(video_id: str, rng: np.random.Generator,
                             frame_shape=(32, 32), min_frames: int = 4,
                             max_frames: int = 8):
    """One record plus its rendered frames; deterministic given the rng state."""
    h, w = frame_shape
    n_frames = int(rng.integers(min_frames, max_frames + 1))
    n_objects = int(rng.integers(2, 5))
    color_picks = rng.choice(len(SHAPE_COLORS), size=n_objects, replace=False)

    objects = []
    for k in range(n_objects):
        color_name, rgb = SHAPE_COLORS[int(color_picks[k])]
        shape = SHAPES[int(rng.integers(0, len(SHAPES)))]
        size = int(rng.integers(5, 9))
        dir_name, (dx, dy) = DIRECTIONS[int(rng.integers(0, len(DIRECTIONS)))]
        speed = int(rng.integers(1, 3))
        travel = speed * (n_frames - 1)
        x_lo = travel if dx < 0 else 0
        x_hi = w - size - (travel if dx > 0 else 0)
        y_lo = travel if dy < 0 else 0
        y_hi = h - size - (travel if dy > 0 else 0)
        if x_hi < x_lo or y_hi < y_lo:
            speed = 1
            travel = n_frames - 1
            x_lo = travel if dx < 0 else 0
            x_hi = w - size - (travel if dx > 0 else 0)
            y_lo = travel if dy < 0 else 0
            y_hi = h - size - (travel if dy > 0 else 0)
        x0 = int(rng.integers(x_lo, x_hi + 1))
        y0 = int(rng.integers(y_lo, y_hi + 1))
        objects.append({
            "object_id": f"obj{k}",
            "color": color_name,
            "rgb": rgb,
            "shape": shape,
            "size": size,
            "direction": dir_name,
            "velocity": (dx * speed, dy * speed),
            "start": (x0, y0),
        })

    frames = np.empty((n_frames, h, w, 3), dtype=np.uint8)
    frames[:] = np.array(BACKGROUND, dtype=np.uint8)
    masks = {obj["object_id"]: [] for obj in objects}
    for t in range(n_frames):
        for obj in objects:
            x = obj["start"][0] + obj["velocity"][0] * t
            y = obj["start"][1] + obj["velocity"][1] * t
            mask = _shape_mask(obj["shape"], x, y, obj["size"], frame_shape)
            masks[obj["object_id"]].append(mask)
            frames[t][mask] = obj["rgb"]

    conversation = []
    for obj in objects:
        conversation.append({"role": "user", "text": _question(obj["object_id"])})
        conversation.append({
            "role": "assistant",
            "text": _answer(obj["color"], obj["shape"], obj["direction"], obj["object_id"]),
        })
    record = {
        "video_id": video_id,
        "sampled_frames": [f"{video_id}#{t:02d}" for t in range(n_frames)],
        "objects": [
            {
                "object_id": obj["object_id"],
                "color_tag": obj["color"],
                "category": obj["shape"],
                "rle_masks": [encode_mask(m) for m in masks[obj["object_id"]]],
            }
            for obj in objects
        ],
        "descriptions": [
            {
                "object_id": obj["object_id"],
                "text": f"the {obj['color']} {obj['shape']} moving {obj['direction']}",
            }
            for obj in objects
        ],
        "conversation": conversation,
    }
    return record, frames


def generate_synthetic_corpus(n_videos: int, seed: int, frame_shape=(32, 32),
                              min_frames: int = 4, max_frames: int = 8):
    """List of (record, frames) pairs; byte-identical for a fixed seed."""
    if n_videos < 1:
        raise DataError("n_videos must be >= 1")
    rng = np.random.default_rng(seed)
    return [
        generate_synthetic_video(f"video_{i:04d}", rng, frame_shape, min_frames, max_frames)
        for i in range(n_videos)
    ]


def save_frames_archive(pairs, path) -> None:
    """Store every video's frames in one .npz keyed by video_id."""
    arrays = {record["video_id"]: frames for record, frames in pairs}
    np.savez_compressed(Path(path), **arrays)


def load_frames_archive(path) -> dict[str, np.ndarray]:
    with np.load(Path(path)) as archive:
        return {key: archive[key] for key in archive.files}
