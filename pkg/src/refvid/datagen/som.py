"""Set-of-mark rendering: distinctly colored boxes over tracked objects."""

from __future__ import annotations

import colorsys

import numpy as np

from ..errors import DataError
from .records import SourceAnnotation

# All base colors sit on the {0, 85, 170, 255} channel grid, so every pair
# differs by >= 85 in some channel.
_BASE_PALETTE: tuple[tuple[str, tuple[int, int, int]], ...] = (
    ("red", (255, 0, 0)),
    ("green", (0, 170, 0)),
    ("blue", (0, 0, 255)),
    ("yellow", (255, 255, 0)),
    ("magenta", (255, 0, 255)),
    ("cyan", (0, 255, 255)),
    ("orange", (255, 170, 0)),
    ("purple", (170, 0, 255)),
    ("teal", (0, 170, 170)),
    ("olive", (170, 170, 0)),
    ("maroon", (170, 0, 0)),
    ("navy", (0, 0, 170)),
    ("lime", (170, 255, 0)),
    ("pink", (255, 170, 170)),
    ("sky", (85, 170, 255)),
    ("brown", (85, 85, 0)),
    ("indigo", (85, 0, 170)),
    ("mint", (85, 255, 170)),
    ("silver", (170, 170, 170)),
    ("charcoal", (85, 85, 85)),
)

GOLDEN_RATIO_CONJUGATE = 0.6180339887498949


def base_palette() -> list[tuple[str, tuple[int, int, int]]]:
    return list(_BASE_PALETTE)


def extend_palette(n_colors: int, palette=None) -> list[tuple[str, tuple[int, int, int]]]:
    """First `n_colors` colors: the base palette, then golden-ratio hue
    stepping with alternating saturation/value tiers. Extended colors are
    guaranteed pairwise distinct (exact collisions skip to the next step)."""
    colors = list(palette) if palette is not None else base_palette()
    used = {rgb for _, rgb in colors}
    step = len(colors)
    while len(colors) < n_colors:
        hue = (step * GOLDEN_RATIO_CONJUGATE) % 1.0
        sat = (1.0, 0.65)[step % 2]
        val = (1.0, 0.72)[(step // 2) % 2]
        r, g, b = colorsys.hsv_to_rgb(hue, sat, val)
        rgb = (int(round(r * 255)), int(round(g * 255)), int(round(b * 255)))
        step += 1
        if rgb in used:
            continue
        used.add(rgb)
        colors.append((f"#{rgb[0]:02x}{rgb[1]:02x}{rgb[2]:02x}", rgb))
    return colors[:n_colors]


def sample_frame_indices(n_frames: int, n_samples: int = 16) -> list[int]:
    if n_frames < n_samples:
        raise DataError(f"need at least {n_samples} frames to sample, have {n_frames}")
    return [(i * n_frames) // n_samples for i in range(n_samples)]


def mask_bounds(mask: np.ndarray):
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return None
    return int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1


def draw_box_border(frame: np.ndarray, box, color, width: int = 3) -> None:
    """Draw a border of `width` pixels just outside the box, clipped to the
    frame; pixels inside the box and elsewhere stay untouched."""
    h, w = frame.shape[:2]
    x0, y0, x1, y1 = box
    ox0, oy0 = max(0, x0 - width), max(0, y0 - width)
    ox1, oy1 = min(w, x1 + width), min(h, y1 + width)
    frame[oy0:y0, ox0:ox1] = color
    frame[y1:oy1, ox0:ox1] = color
    frame[max(0, y0):min(h, y1), ox0:x0] = color
    frame[max(0, y0):min(h, y1), x1:ox1] = color


def render_som_frames(source: SourceAnnotation, palette=None, n_samples: int = 16,
                      box_width: int = 3):
    """Annotate uniformly sampled frames with one distinct color per object.

    Returns (annotated_frames, color_map, sample_indices) where color_map is
    {object_id: (name, rgb)}. Objects absent in a frame draw nothing there.
    """
    colors = extend_palette(len(source.objects), palette)
    indices = sample_frame_indices(len(source.frames), n_samples)
    color_map = {
        obj.object_id: colors[i] for i, obj in enumerate(source.objects)
    }
    annotated = []
    for idx in indices:
        frame = np.array(source.frames[idx], copy=True)
        for obj in source.objects:
            if obj.masks is None or obj.masks[idx] is None:
                continue
            box = mask_bounds(obj.masks[idx])
            if box is None:
                continue
            draw_box_border(frame, box, color_map[obj.object_id][1], box_width)
        annotated.append(frame)
    return annotated, color_map, indices
