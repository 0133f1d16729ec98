"""Control-quality metrics: how well detected boxes track the requested ones.

Aggregates follow the detected-frames convention: coverage reports the
detection rate separately, and overlap/center metrics average only over
frames with a detection, so a missed frame never needs a made-up IoU. The
per-frame breakdown carries enough to recompute either convention; the
all-frames variant of the precision metric is reported alongside.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .boxes import Box, BoxTrajectory, box_center
from .testbed import AttentionStack

__all__ = [
    "Detection",
    "ControlReport",
    "iou",
    "control_metrics",
    "detect_from_attention",
    "load_external_detections",
    "save_detections",
]


@dataclass(frozen=True)
class Detection:
    """Optional per-frame detection: a box with a confidence, or nothing."""

    box: Box | None = None
    confidence: float | None = None

    def __post_init__(self):
        if (self.box is None) != (self.confidence is None):
            raise ValueError("confidence must be present iff a box is present")
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def present(self) -> bool:
        return self.box is not None


@dataclass
class ControlReport:
    """Aggregate control metrics with a per-frame breakdown.

    ``miou``, ``ap50`` and ``center_distance`` are None when nothing was
    detected; they are never fabricated zeros.
    """

    coverage: float
    miou: float | None
    ap50: float | None
    center_distance: float | None
    ap50_all_frames: float
    center_distance_diagonal: float | None
    center_distance_pixels: float | None
    n_frames: int
    n_detected: int
    per_frame: list[dict]

    def to_dict(self) -> dict:
        return {
            "coverage": self.coverage,
            "miou": self.miou,
            "ap50": self.ap50,
            "center_distance": self.center_distance,
            "ap50_all_frames": self.ap50_all_frames,
            "center_distance_diagonal": self.center_distance_diagonal,
            "center_distance_pixels": self.center_distance_pixels,
            "n_frames": self.n_frames,
            "n_detected": self.n_detected,
            "per_frame": self.per_frame,
            # reserved for externally computed quality scores
            "text_align": None,
            "consistency": None,
            "pick_score": None,
        }


def iou(a: Box, b: Box) -> float:
    """Intersection-over-union of two normalized boxes."""
    ix = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    iy = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def control_metrics(
    dets: list[Detection],
    traj: BoxTrajectory,
    iou_threshold: float = 0.5,
    frame_size: tuple[int, int] | None = None,
) -> ControlReport:
    """Score detections against the requested trajectory.

    ``frame_size`` (width, height) additionally reports the center distance
    in pixels for comparability with pixel-space tooling.
    """
    if len(dets) != traj.n_frames:
        raise ValueError(
            f"{len(dets)} detections for a {traj.n_frames}-frame trajectory"
        )
    per_frame = []
    ious, cds = [], []
    for f, (det, target) in enumerate(zip(dets, traj.boxes)):
        row: dict = {"frame": f, "detected": det.present}
        if det.present:
            v = float(iou(det.box, target))
            cd = math.dist(box_center(det.box), box_center(target))
            row.update(
                {
                    "iou": v,
                    "hit_at_threshold": bool(v > iou_threshold),
                    "center_distance": cd,
                    "confidence": det.confidence,
                }
            )
            ious.append(v)
            cds.append(cd)
        else:
            row.update(
                {
                    "iou": None,
                    "hit_at_threshold": False,
                    "center_distance": None,
                    "confidence": None,
                }
            )
        per_frame.append(row)

    n_frames = traj.n_frames
    n_detected = len(ious)
    coverage = n_detected / n_frames
    hits = sum(1 for r in per_frame if r["hit_at_threshold"])
    if n_detected:
        miou = float(np.mean(ious))
        ap50 = hits / n_detected
        cd = float(np.mean(cds))
        cd_diag = cd / math.sqrt(2.0)
        cd_px = None
        if frame_size is not None:
            w, h = frame_size
            px = [
                math.hypot(
                    (box_center(d.box)[0] - box_center(t)[0]) * w,
                    (box_center(d.box)[1] - box_center(t)[1]) * h,
                )
                for d, t in zip(dets, traj.boxes)
                if d.present
            ]
            cd_px = float(np.mean(px))
    else:
        miou = ap50 = cd = cd_diag = cd_px = None
    return ControlReport(
        coverage=coverage,
        miou=miou,
        ap50=ap50,
        center_distance=cd,
        ap50_all_frames=hits / n_frames,
        center_distance_diagonal=cd_diag,
        center_distance_pixels=cd_px,
        n_frames=n_frames,
        n_detected=n_detected,
        per_frame=per_frame,
    )


def _token_maps(attn, token: int) -> np.ndarray:
    if isinstance(attn, AttentionStack):
        maps = attn.aggregated().numpy()
    else:
        maps = np.asarray(attn)
    if maps.ndim != 4:
        raise ValueError(f"expected (F, Np, H, W) maps, got shape {maps.shape}")
    if not 0 <= token < maps.shape[1]:
        raise ValueError(f"token index {token} outside {maps.shape[1]} captured tokens")
    return maps[:, token]


def detect_from_attention(
    attn,
    token: int,
    threshold_k: float = 1.0,
) -> list[Detection]:
    """Blob detector over one token's attention maps.

    Per frame: threshold at mean + ``threshold_k`` standard deviations, take
    the largest 4-connected component above threshold, return its bounding
    box in normalized coordinates with confidence equal to the attention
    mass fraction inside the box. No component means no detection.
    """
    maps = _token_maps(attn, token)
    n_frames, gh, gw = maps.shape
    out = []
    for f in range(n_frames):
        arr = maps[f]
        thr = arr.mean() + threshold_k * arr.std()
        above = arr > thr
        if not above.any():
            out.append(Detection())
            continue
        labels, n = ndimage.label(above)
        sizes = ndimage.sum_labels(np.ones_like(arr), labels, index=range(1, n + 1))
        best = int(np.argmax(sizes)) + 1
        rows, cols = np.nonzero(labels == best)
        r0, r1 = rows.min(), rows.max() + 1
        c0, c1 = cols.min(), cols.max() + 1
        box = Box(c0 / gw, r0 / gh, c1 / gw, r1 / gh)
        total = arr.sum()
        conf = float(arr[r0:r1, c0:c1].sum() / total) if total > 0 else 0.0
        out.append(Detection(box=box, confidence=min(max(conf, 0.0), 1.0)))
    return out


# ---------------------------------------------------------------------------
# External detections file format
# ---------------------------------------------------------------------------


def load_external_detections(path) -> list[Detection]:
    """Read detections JSON: {"frames": [{"box": [..]|null, "confidence": ..}]}."""
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or "frames" not in doc:
        raise ValueError(f"{path}: expected a top-level 'frames' list")
    out = []
    for i, rec in enumerate(doc["frames"]):
        if not isinstance(rec, dict) or "box" not in rec or "confidence" not in rec:
            raise ValueError(f"{path}: frame {i} must have 'box' and 'confidence'")
        box, conf = rec["box"], rec["confidence"]
        try:
            if box is not None and len(box) != 4:
                raise ValueError("box must have 4 coordinates")
            out.append(
                Detection(
                    box=None if box is None else Box(*[float(v) for v in box]),
                    confidence=None if conf is None else float(conf),
                )
            )
        except (TypeError, ValueError) as exc:
            raise ValueError(f"{path}: frame {i} invalid: {exc}") from exc
    return out


def save_detections(path, dets: list[Detection]) -> None:
    """Write detections in the canonical JSON form read by the loader."""
    doc = {
        "frames": [
            {
                "box": d.box.as_list() if d.present else None,
                "confidence": d.confidence,
            }
            for d in dets
        ]
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
