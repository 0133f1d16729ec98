"""Score synthetic detections against a trajectory.

Sweeps a detector bias from perfect tracking to a fixed offset and prints
how mIoU, AP50, coverage, and center distance respond; also shows the
undefined-marker behavior when nothing is detected.
"""

from trajsteer import Detection, control_metrics, simple_trajectories
from trajsteer.boxes import Box

traj = simple_trajectories(12)[0]

print("offset sweep (detections = trajectory boxes shifted right):")
for dx in (0.0, 0.02, 0.05, 0.1, 0.2):
    dets = []
    for b in traj.boxes:
        x1, x2 = min(b.x1 + dx, 1.0 - b.width), min(b.x2 + dx, 1.0)
        dets.append(Detection(box=Box(x1, b.y1, x2, b.y2), confidence=0.9))
    r = control_metrics(dets, traj)
    print(
        f"  dx={dx:4.2f}: mIoU={r.miou:.3f} AP50={r.ap50:.2f} "
        f"cov={r.coverage:.2f} CD={r.center_distance:.3f} "
        f"(diagonal-relative {r.center_distance_diagonal:.3f})"
    )

print("\nintermittent detector (every other frame missed):")
dets = [
    Detection(box=b, confidence=0.8) if f % 2 == 0 else Detection()
    for f, b in enumerate(traj.boxes)
]
r = control_metrics(dets, traj)
print(f"  cov={r.coverage:.2f} mIoU={r.miou:.3f} AP50={r.ap50:.2f} "
      f"AP50(all frames)={r.ap50_all_frames:.2f}")

print("\nno detections at all:")
r = control_metrics([Detection()] * traj.n_frames, traj)
print(f"  cov={r.coverage:.2f} mIoU={r.miou} AP50={r.ap50} CD={r.center_distance}")
