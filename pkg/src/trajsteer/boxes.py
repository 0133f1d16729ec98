"""Bounding-box trajectories on the normalized frame and their latent-grid form.

Boxes live in normalized [0, 1] coordinates so one trajectory file serves any
latent or pixel resolution. Quantization onto a latent grid rounds outward
(floor/ceil) so the grid box never under-covers the requested region.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

__all__ = [
    "Box",
    "BoxTrajectory",
    "GridBox",
    "Mask",
    "quantize_box",
    "quantize_trajectory_uniform",
    "build_mask",
    "simple_trajectories",
    "complex_trajectories",
    "interpolate_trajectory",
    "box_center",
    "center_distance",
    "save_trajectory",
    "load_trajectory",
    "SIMPLE_TRAJECTORY_NAMES",
]


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in normalized frame coordinates.

    (x1, y1) is the upper-left corner, (x2, y2) the lower-right one, with
    0 <= x1 < x2 <= 1 and 0 <= y1 < y2 <= 1.
    """

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (0.0 <= self.x1 < self.x2 <= 1.0):
            raise ValueError(f"box x-extent invalid: x1={self.x1}, x2={self.x2}")
        if not (0.0 <= self.y1 < self.y2 <= 1.0):
            raise ValueError(f"box y-extent invalid: y1={self.y1}, y2={self.y2}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass(frozen=True)
class BoxTrajectory:
    """Per-frame sequence of boxes; the user's control signal."""

    boxes: tuple[Box, ...]

    def __post_init__(self):
        if len(self.boxes) == 0:
            raise ValueError("trajectory must contain at least one box")
        object.__setattr__(self, "boxes", tuple(self.boxes))

    @property
    def n_frames(self) -> int:
        return len(self.boxes)

    def __len__(self) -> int:
        return len(self.boxes)

    def __getitem__(self, f: int) -> Box:
        return self.boxes[f]

    def is_static(self) -> bool:
        return all(b == self.boxes[0] for b in self.boxes)


@dataclass(frozen=True)
class GridBox:
    """Half-open integer cell bounds [lo, hi) on a latent/attention grid."""

    col_lo: int
    row_lo: int
    col_hi: int
    row_hi: int

    def __post_init__(self):
        if not (0 <= self.col_lo < self.col_hi):
            raise ValueError(f"grid box column bounds invalid: {self}")
        if not (0 <= self.row_lo < self.row_hi):
            raise ValueError(f"grid box row bounds invalid: {self}")

    @property
    def width(self) -> int:
        return self.col_hi - self.col_lo

    @property
    def height(self) -> int:
        return self.row_hi - self.row_lo

    @property
    def area(self) -> int:
        return self.width * self.height

    def center(self) -> tuple[float, float]:
        """Box center in continuous cell-index coordinates.

        Cell (r, c) is centred at index (r, c), so a box spanning [lo, hi)
        has its center at (lo + hi) / 2 - 0.5 on each axis.
        """
        return (
            (self.col_lo + self.col_hi) / 2.0 - 0.5,
            (self.row_lo + self.row_hi) / 2.0 - 0.5,
        )

    def cells(self):
        """Iterate (row, col) pairs covered by the box."""
        for r in range(self.row_lo, self.row_hi):
            for c in range(self.col_lo, self.col_hi):
                yield r, c

    def contains_cell(self, row: int, col: int) -> bool:
        return self.row_lo <= row < self.row_hi and self.col_lo <= col < self.col_hi


@dataclass(frozen=True)
class Mask:
    """Binary occupancy grid for one GridBox, shape (grid_h, grid_w)."""

    grid: np.ndarray
    box: GridBox

    def __post_init__(self):
        ones = int(self.grid.sum())
        if ones != self.box.area:
            raise ValueError(
                f"mask has {ones} ones but box area is {self.box.area}"
            )


def quantize_box(box: Box, grid_w: int, grid_h: int) -> GridBox:
    """Map a normalized box onto integer grid cells, rounding outward.

    Degenerate results (possible only through floating-point edge cases)
    are widened to one cell and flagged with a warning.
    """
    if grid_w < 1 or grid_h < 1:
        raise ValueError(f"grid dimensions must be >= 1, got {grid_w}x{grid_h}")
    col_lo = min(max(math.floor(box.x1 * grid_w), 0), grid_w - 1)
    col_hi = min(max(math.ceil(box.x2 * grid_w), 1), grid_w)
    row_lo = min(max(math.floor(box.y1 * grid_h), 0), grid_h - 1)
    row_hi = min(max(math.ceil(box.y2 * grid_h), 1), grid_h)
    if col_lo >= col_hi or row_lo >= row_hi:
        warnings.warn(
            f"box {box} quantized to zero area on {grid_w}x{grid_h} grid; "
            "widening to one cell",
            stacklevel=2,
        )
        col_lo = min(col_lo, grid_w - 1)
        col_hi = col_lo + 1
        row_lo = min(row_lo, grid_h - 1)
        row_hi = row_lo + 1
    return GridBox(col_lo, row_lo, col_hi, row_hi)


def quantize_trajectory_uniform(
    traj: BoxTrajectory, grid_w: int, grid_h: int
) -> list[GridBox]:
    """Quantize a trajectory so every frame's grid box has the same cell size.

    Frame 0 is quantized outward as usual; later frames reuse its cell
    dimensions, translated by the rounded per-frame offset and clamped to the
    grid. Patch-exchange operations (region shifts, noise mixup) require
    equal-shaped boxes, which plain per-frame quantization cannot guarantee
    even for constant-size trajectories.
    """
    g0 = quantize_box(traj.boxes[0], grid_w, grid_h)
    bw, bh = g0.width, g0.height
    out = [g0]
    x0, y0 = traj.boxes[0].x1, traj.boxes[0].y1
    for box in traj.boxes[1:]:
        dc = round((box.x1 - x0) * grid_w)
        dr = round((box.y1 - y0) * grid_h)
        col = min(max(g0.col_lo + dc, 0), grid_w - bw)
        row = min(max(g0.row_lo + dr, 0), grid_h - bh)
        out.append(GridBox(col, row, col + bw, row + bh))
    return out


def build_mask(gbox: GridBox, grid_w: int, grid_h: int) -> Mask:
    """Binary mask with 1 inside the grid box and 0 elsewhere."""
    if gbox.col_hi > grid_w or gbox.row_hi > grid_h:
        raise ValueError(f"grid box {gbox} exceeds {grid_w}x{grid_h} grid")
    grid = np.zeros((grid_h, grid_w), dtype=np.float64)
    grid[gbox.row_lo : gbox.row_hi, gbox.col_lo : gbox.col_hi] = 1.0
    return Mask(grid=grid, box=gbox)


# ---------------------------------------------------------------------------
# Trajectory datasets
# ---------------------------------------------------------------------------

# Constant box size and center travel range shared by the eight linear paths.
_SIMPLE_BOX_SIZE = 0.25
_SIMPLE_LO = 0.2
_SIMPLE_HI = 0.8

SIMPLE_TRAJECTORY_NAMES = (
    "left_to_right",
    "right_to_left",
    "top_to_bottom",
    "bottom_to_top",
    "topleft_to_bottomright",
    "bottomright_to_topleft",
    "topright_to_bottomleft",
    "bottomleft_to_topright",
)

_SIMPLE_ENDPOINTS = {
    "left_to_right": ((_SIMPLE_LO, 0.5), (_SIMPLE_HI, 0.5)),
    "right_to_left": ((_SIMPLE_HI, 0.5), (_SIMPLE_LO, 0.5)),
    "top_to_bottom": ((0.5, _SIMPLE_LO), (0.5, _SIMPLE_HI)),
    "bottom_to_top": ((0.5, _SIMPLE_HI), (0.5, _SIMPLE_LO)),
    "topleft_to_bottomright": ((_SIMPLE_LO, _SIMPLE_LO), (_SIMPLE_HI, _SIMPLE_HI)),
    "bottomright_to_topleft": ((_SIMPLE_HI, _SIMPLE_HI), (_SIMPLE_LO, _SIMPLE_LO)),
    "topright_to_bottomleft": ((_SIMPLE_HI, _SIMPLE_LO), (_SIMPLE_LO, _SIMPLE_HI)),
    "bottomleft_to_topright": ((_SIMPLE_LO, _SIMPLE_HI), (_SIMPLE_HI, _SIMPLE_LO)),
}


def _box_from_center(cx: float, cy: float, w: float, h: float) -> Box:
    """Box of size (w, h) centred at (cx, cy), clamped to stay in-frame."""
    cx = min(max(cx, w / 2), 1.0 - w / 2)
    cy = min(max(cy, h / 2), 1.0 - h / 2)
    return Box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def simple_trajectories(n_frames: int) -> list[BoxTrajectory]:
    """The eight canonical linear paths (axis-aligned moves and diagonals).

    A constant-size box travels between fixed endpoints with its center
    linearly interpolated across ``n_frames``.
    """
    if n_frames < 2:
        raise ValueError("n_frames must be >= 2")
    ts = np.linspace(0.0, 1.0, n_frames)
    out = []
    for name in SIMPLE_TRAJECTORY_NAMES:
        (cx0, cy0), (cx1, cy1) = _SIMPLE_ENDPOINTS[name]
        boxes = [
            _box_from_center(
                cx0 + t * (cx1 - cx0),
                cy0 + t * (cy1 - cy0),
                _SIMPLE_BOX_SIZE,
                _SIMPLE_BOX_SIZE,
            )
            for t in ts
        ]
        out.append(BoxTrajectory(tuple(boxes)))
    return out


_N_COMPLEX = 17
_COMPLEX_CONTROL_POINTS = 5


def complex_trajectories(n_frames: int, seed: int) -> list[BoxTrajectory]:
    """Seventeen seeded smooth motion curves with constant box size.

    Each curve draws control points in the safe interior, fits a cubic
    spline through them, and samples the box center at ``n_frames``
    parameter values. Control points depend only on the seed, so changing
    ``n_frames`` resamples the same curves.
    """
    if n_frames < 2:
        raise ValueError("n_frames must be >= 2")
    out = []
    for i in range(_N_COMPLEX):
        rng = np.random.default_rng([seed, i])
        size = float(rng.uniform(0.18, 0.28))
        half = size / 2
        lo, hi = half + 0.02, 1.0 - half - 0.02
        pts = rng.uniform(lo, hi, size=(_COMPLEX_CONTROL_POINTS, 2))
        knots = np.linspace(0.0, 1.0, _COMPLEX_CONTROL_POINTS)
        spline_x = CubicSpline(knots, pts[:, 0])
        spline_y = CubicSpline(knots, pts[:, 1])
        ts = np.linspace(0.0, 1.0, n_frames)
        boxes = [
            _box_from_center(float(spline_x(t)), float(spline_y(t)), size, size)
            for t in ts
        ]
        out.append(BoxTrajectory(tuple(boxes)))
    return out


def interpolate_trajectory(
    keyframes: list[tuple[int, Box]], n_frames: int
) -> BoxTrajectory:
    """Linearly interpolate all four coordinates between keyframe boxes.

    Keyframe indices must be strictly increasing, starting at 0 and ending
    at ``n_frames - 1``.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    indices = [k for k, _ in keyframes]
    if indices != sorted(set(indices)):
        raise ValueError(f"keyframe indices must be strictly increasing: {indices}")
    if indices[0] != 0 or indices[-1] != n_frames - 1:
        raise ValueError(
            f"keyframes must span frames 0..{n_frames - 1}, got {indices}"
        )
    coords = np.array([b.as_list() for _, b in keyframes])
    frames = np.arange(n_frames)
    interp = np.stack(
        [np.interp(frames, indices, coords[:, j]) for j in range(4)], axis=1
    )
    boxes = [Box(*row) for row in interp]
    return BoxTrajectory(tuple(boxes))


# ---------------------------------------------------------------------------
# Centers and distances
# ---------------------------------------------------------------------------


def box_center(box: Box) -> tuple[float, float]:
    return ((box.x1 + box.x2) / 2.0, (box.y1 + box.y2) / 2.0)


def center_distance(a: Box, b: Box, relative_to: str = "frame") -> float:
    """Euclidean distance between box centers in normalized coordinates.

    ``relative_to="frame"`` leaves the distance in frame units (max sqrt(2));
    ``relative_to="diagonal"`` rescales by the frame diagonal so the maximum
    is 1. Both conventions are exposed because the center-distance metric's
    normalization is a reporting choice.
    """
    (ax, ay), (bx, by) = box_center(a), box_center(b)
    d = math.hypot(ax - bx, ay - by)
    if relative_to == "frame":
        return d
    if relative_to == "diagonal":
        return d / math.sqrt(2.0)
    raise ValueError(f"unknown normalization {relative_to!r}")


# ---------------------------------------------------------------------------
# Trajectory files
# ---------------------------------------------------------------------------


def save_trajectory(path, traj: BoxTrajectory) -> None:
    """Write a trajectory as JSON: {"n_frames": N, "boxes": [[x1,y1,x2,y2],..]}."""
    doc = {
        "n_frames": traj.n_frames,
        "boxes": [b.as_list() for b in traj.boxes],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_trajectory(path) -> BoxTrajectory:
    """Load and validate a trajectory JSON file."""
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or "n_frames" not in doc or "boxes" not in doc:
        raise ValueError(f"{path}: expected keys 'n_frames' and 'boxes'")
    boxes = doc["boxes"]
    if len(boxes) != doc["n_frames"]:
        raise ValueError(
            f"{path}: n_frames={doc['n_frames']} but {len(boxes)} boxes given"
        )
    parsed = []
    for i, entry in enumerate(boxes):
        if len(entry) != 4:
            raise ValueError(f"{path}: box {i} must have 4 coordinates")
        try:
            parsed.append(Box(*[float(v) for v in entry]))
        except ValueError as exc:
            raise ValueError(f"{path}: box {i} invalid: {exc}") from exc
    return BoxTrajectory(tuple(parsed))
