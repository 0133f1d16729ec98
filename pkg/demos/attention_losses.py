"""Walk through the four attention losses on hand-built maps.

Shows how each term reacts as a synthetic attention blob moves relative to
its target box: inside-loss falls as the blob enters the box, outside-loss
rises when it leaks, center-loss tracks the L1 offset, and the similarity
loss compares consecutive in-box patches.
"""

import torch

from trajsteer import (
    GuidanceConfig,
    loss_center,
    loss_inside,
    loss_outside,
    loss_similarity,
    total_spatial_loss,
)
from trajsteer.boxes import Box, BoxTrajectory, GridBox, build_mask, quantize_box

H = W = 16
box = Box(0.25, 0.25, 0.625, 0.625)
gbox = quantize_box(box, W, H)
mask = build_mask(gbox, W, H)
cfg = GuidanceConfig()
P = cfg.resolve_top_p(gbox.area)
print(f"box {box} -> grid {gbox}, top-P count {P}")


def blob(center_r, center_c, sigma=1.5):
    rr, cc = torch.meshgrid(
        torch.arange(H, dtype=torch.float64),
        torch.arange(W, dtype=torch.float64),
        indexing="ij",
    )
    return torch.exp(-((rr - center_r) ** 2 + (cc - center_c) ** 2) / (2 * sigma**2))


print("\nblob center sweep (row 7, varying column):")
for col in range(2, 15, 3):
    amap = blob(7.0, float(col))
    li = float(loss_inside(amap, mask, P))
    lo = float(loss_outside(amap, mask, P))
    lc = float(loss_center(amap, gbox))
    print(f"  col={col:2d}: inside={li:.3f} outside={lo:.3f} center={lc:.3f}")

print("\nsimilarity across 4 frames (identical blobs, then one negated):")
maps = torch.stack([blob(7.0, 7.0)] * 4)
g = [gbox] * 4
print(f"  identical patches: {float(loss_similarity(maps, g)):.4f}")
maps_bad = maps.clone()
maps_bad[2] = -maps_bad[2] + maps_bad[2].max()
print(f"  one frame disrupted: {float(loss_similarity(maps_bad, g)):.4f}")

print("\nweighted composition with the default weights:")
traj = BoxTrajectory((box,) * 4)
full = torch.stack([torch.stack([blob(7.0, 7.0), blob(7.0, 2.0)]) for _ in range(4)])
bd = total_spatial_loss(full, traj, cfg, tokens=(0,))
print(f"  token 0 (in-box blob):  total={bd.total:.4f}")
bd = total_spatial_loss(full, traj, cfg, tokens=(1,))
print(f"  token 1 (off-box blob): total={bd.total:.4f}")
