"""Shift temporal attention: align each frame's box region to the first
frame's box before attending across frames, then restore.

Temporal attention mixes features across frames at fixed spatial positions,
so a fast-moving object keeps attending to background cells. Shifting every
frame's box onto the first frame's box lines the object up along the frame
axis; shifting back afterwards restores geometry. The shift is realized as a
cell permutation (content of the source box lands in the destination box,
displaced content cycles back into the vacated cells), so it is lossless and
exactly invertible for any pair of equal-shaped boxes, overlapping included.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .boxes import BoxTrajectory, GridBox, quantize_trajectory_uniform

__all__ = ["ShiftPlan", "shift", "shifted_temporal_attention", "make_stam_wrapper"]


def _shift_gather_indices(src: GridBox, dst: GridBox, grid_h: int, grid_w: int) -> np.ndarray:
    """Flat gather indices g with out.flat[j] = z.flat[g[j]] realizing the shift.

    Cells of ``src`` translate onto ``dst``; each vacated src cell is filled by
    walking the translation forward through the overlap until a displaced dst
    cell is found. The result is a permutation of the grid.
    """
    if (src.width, src.height) != (dst.width, dst.height):
        raise ValueError(
            f"src {src} and dst {dst} must have equal cell dimensions"
        )
    if dst.col_hi > grid_w or dst.row_hi > grid_h or src.col_hi > grid_w or src.row_hi > grid_h:
        raise ValueError("boxes exceed the grid")
    dr = dst.row_lo - src.row_lo
    dc = dst.col_lo - src.col_lo
    gather = np.arange(grid_h * grid_w, dtype=np.int64).reshape(grid_h, grid_w)
    # content arriving in dst comes from src, aligned by the translation
    for r in range(dst.row_lo, dst.row_hi):
        for c in range(dst.col_lo, dst.col_hi):
            gather[r, c] = (r - dr) * grid_w + (c - dc)
    # vacated src cells receive the displaced content from their chain's end
    for r in range(src.row_lo, src.row_hi):
        for c in range(src.col_lo, src.col_hi):
            if dst.contains_cell(r, c):
                continue
            er, ec = r + dr, c + dc
            while src.contains_cell(er, ec):
                er, ec = er + dr, ec + dc
            gather[r, c] = er * grid_w + ec
    return gather.reshape(-1)


@dataclass
class ShiftPlan:
    """Cached cell permutations aligning a trajectory's boxes to frame 0.

    One plan serves one grid resolution; the per-frame source boxes all share
    the destination box's cell dimensions.
    """

    frame_boxes: list[GridBox]
    grid_h: int
    grid_w: int

    def __post_init__(self):
        dst = self.frame_boxes[0]
        self._forward: list[torch.Tensor] = []
        self._backward: list[torch.Tensor] = []
        for src in self.frame_boxes:
            self._forward.append(
                torch.from_numpy(_shift_gather_indices(src, dst, self.grid_h, self.grid_w))
            )
            self._backward.append(
                torch.from_numpy(_shift_gather_indices(dst, src, self.grid_h, self.grid_w))
            )

    def align(self, z: torch.Tensor) -> torch.Tensor:
        """Shift every frame's box onto frame 0's box. z: (F, C, H, W)."""
        return self._apply(z, self._forward)

    def restore(self, z: torch.Tensor) -> torch.Tensor:
        """Inverse of :meth:`align`."""
        return self._apply(z, self._backward)

    def _apply(self, z: torch.Tensor, perms: list[torch.Tensor]) -> torch.Tensor:
        f, c, h, w = z.shape
        if f != len(self.frame_boxes) or (h, w) != (self.grid_h, self.grid_w):
            raise ValueError(
                f"latent shape {tuple(z.shape)} does not match plan "
                f"({len(self.frame_boxes)} frames on {self.grid_h}x{self.grid_w})"
            )
        flat = z.reshape(f, c, h * w)
        out = torch.stack(
            [flat[i].index_select(1, perms[i]) for i in range(f)]
        )
        return out.reshape(f, c, h, w)


def shift(z_f: torch.Tensor, src: GridBox, dst: GridBox) -> torch.Tensor:
    """Move the src region's content to dst on one frame, cycling displaced
    content back into the vacated cells. Accepts (..., H, W) tensors."""
    h, w = z_f.shape[-2], z_f.shape[-1]
    gather = torch.from_numpy(_shift_gather_indices(src, dst, h, w))
    flat = z_f.reshape(*z_f.shape[:-2], h * w)
    return flat.index_select(-1, gather).reshape(z_f.shape)


def shifted_temporal_attention(
    z: torch.Tensor, traj: list[GridBox], attn
) -> torch.Tensor:
    """Sandwich a temporal-attention callable between align and restore.

    ``attn`` maps (F, C, H, W) to (F, C, H, W) attending across frames at
    fixed positions. A static trajectory makes both shifts the identity, so
    the result equals plain temporal attention.
    """
    f = z.shape[0]
    if len(traj) != f:
        raise ValueError(f"trajectory length {len(traj)} != frame count {f}")
    plan = ShiftPlan(list(traj), z.shape[2], z.shape[3])
    return plan.restore(attn(plan.align(z)))


def make_stam_wrapper(traj: BoxTrajectory):
    """Temporal-attention wrapper quantizing the trajectory per resolution.

    The denoiser invokes the wrapper at several spatial resolutions; plans
    are built lazily per (H, W) and cached, with all frames sharing frame 0's
    quantized cell dimensions so the shifts stay exact permutations.
    """
    plans: dict[tuple[int, int], ShiftPlan] = {}

    def wrapper(attn_layer, z: torch.Tensor) -> torch.Tensor:
        h, w = z.shape[2], z.shape[3]
        plan = plans.get((h, w))
        if plan is None:
            plan = ShiftPlan(quantize_trajectory_uniform(traj, w, h), h, w)
            plans[(h, w)] = plan
        return plan.restore(attn_layer(plan.align(z)))

    return wrapper
