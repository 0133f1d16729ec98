"""Build the bundled trajectory datasets and plot them.

Eight linear paths plus seventeen seeded smooth curves, all with constant
box size. The plot draws each box center path with the first and last boxes
outlined.
"""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from trajsteer import box_center, complex_trajectories, simple_trajectories
from trajsteer.boxes import SIMPLE_TRAJECTORY_NAMES

OUT = os.environ.get("TRAJSTEER_OUTPUT_ROOT", "trajsteer-out")
os.makedirs(OUT, exist_ok=True)

n_frames = 16
simple = simple_trajectories(n_frames)
complex_ = complex_trajectories(n_frames, seed=0)

fig, axes = plt.subplots(1, 2, figsize=(11, 5))
for ax, trajs, title in (
    (axes[0], simple, "8 simple trajectories"),
    (axes[1], complex_, "17 complex trajectories (seed 0)"),
):
    for traj in trajs:
        xs, ys = zip(*(box_center(b) for b in traj.boxes))
        ax.plot(xs, ys, marker=".", linewidth=1)
        for b in (traj.boxes[0], traj.boxes[-1]):
            ax.add_patch(
                plt.Rectangle((b.x1, b.y1), b.width, b.height, fill=False, alpha=0.4)
            )
    ax.set_xlim(0, 1)
    ax.set_ylim(1, 0)  # image convention: y grows downward
    ax.set_aspect("equal")
    ax.set_title(title)

path = os.path.join(OUT, "trajectory_datasets.png")
fig.tight_layout()
fig.savefig(path, dpi=120)
print(f"wrote {path}")

for name, traj in zip(SIMPLE_TRAJECTORY_NAMES, simple):
    c0, c1 = box_center(traj.boxes[0]), box_center(traj.boxes[-1])
    print(f"{name:>24}: center {c0} -> {c1}")
