"""Attention-map grids with trajectory-box overlays, for run diagnostics."""

from __future__ import annotations

import numpy as np
from PIL import Image, ImageDraw

from .boxes import BoxTrajectory, quantize_box

__all__ = ["attention_grid_image", "grid_geometry"]

_GAP = 2
_BOX_COLOR = (220, 40, 40)


def grid_geometry(
    n_rows: int, n_cols: int, tile_h: int, tile_w: int, scale: int
) -> tuple[int, int]:
    """Pixel size (width, height) of a tile grid with fixed gaps."""
    w = n_cols * tile_w * scale + (n_cols + 1) * _GAP
    h = n_rows * tile_h * scale + (n_rows + 1) * _GAP
    return w, h


def _tile(arr: np.ndarray, scale: int) -> Image.Image:
    lo, hi = float(arr.min()), float(arr.max())
    if hi > lo:
        norm = (arr - lo) / (hi - lo)
    else:
        norm = np.zeros_like(arr)
    img = Image.fromarray((norm * 255.0).round().astype(np.uint8), mode="L")
    img = img.resize((arr.shape[1] * scale, arr.shape[0] * scale), Image.NEAREST)
    return img.convert("RGB")


def attention_grid_image(
    maps: np.ndarray,
    traj: BoxTrajectory,
    frames: list[int],
    scale: int = 6,
) -> Image.Image:
    """Compose a (frames x steps) grid of one token's attention maps.

    ``maps`` has shape (steps, n_frames, H, W). Each tile is min-max mapped
    to grayscale (brightest cell = highest attention) and overlaid with the
    frame's quantized trajectory box.
    """
    if maps.ndim != 4:
        raise ValueError(f"expected (steps, frames, H, W) maps, got {maps.shape}")
    n_steps, n_frames, gh, gw = maps.shape
    for f in frames:
        if not 0 <= f < n_frames:
            raise ValueError(f"frame {f} outside run of {n_frames} frames")
    width, height = grid_geometry(len(frames), n_steps, gh, gw, scale)
    canvas = Image.new("RGB", (width, height), (24, 24, 24))
    draw = ImageDraw.Draw(canvas)
    for row, f in enumerate(frames):
        gbox = quantize_box(traj.boxes[f], gw, gh)
        for col in range(n_steps):
            x0 = _GAP + col * (gw * scale + _GAP)
            y0 = _GAP + row * (gh * scale + _GAP)
            canvas.paste(_tile(maps[col, f], scale), (x0, y0))
            draw.rectangle(
                [
                    x0 + gbox.col_lo * scale,
                    y0 + gbox.row_lo * scale,
                    x0 + gbox.col_hi * scale - 1,
                    y0 + gbox.row_hi * scale - 1,
                ],
                outline=_BOX_COLOR,
                width=1,
            )
    return canvas
