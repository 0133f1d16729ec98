"""Initial noise prior: plant the moving object's appearance along the
trajectory before sampling starts.

A meta video is generated with the object held static at the first box
(spatial constraints on, temporal shift off), inverted back to noise, and
its first-box patch is blended into the raw Gaussian draw at every frame's
box position. The blend ratio ``lambda_prior`` controls how much inverted
structure versus fresh noise ends up inside the boxes; everything outside
the boxes stays exactly the raw draw.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .backend import BackendAdapter, ddim_invert
from .boxes import Box, BoxTrajectory, GridBox, quantize_trajectory_uniform
from .constraints import GuidanceConfig
from .sampling import run_guided_sampling
from .testbed import PromptSpec

__all__ = ["NoisePrior", "generate_meta_video", "local_mixup", "build_initial_noise"]


@dataclass
class NoisePrior:
    """Mixed initial noise plus the ingredients that produced it."""

    z_T: torch.Tensor
    z_I: torch.Tensor
    meta_box: GridBox
    lambda_p: float


def generate_meta_video(
    prompt: PromptSpec,
    box0: Box,
    cfg: GuidanceConfig,
    seed: int,
    backend: BackendAdapter,
    sc: bool = True,
    pixel_roundtrip: bool = False,
) -> torch.Tensor:
    """Sample a video with the object held static at ``box0``.

    Runs the full sampler from the seeded draw with spatial constraints
    active and the temporal shift disabled (a static object needs no
    alignment). ``pixel_roundtrip`` optionally pushes the result through the
    backend's decoder and encoder, the path an external pixel-space sampler
    would take; the default keeps the latent as produced.
    """
    n_frames = backend.latent_shape[0]
    static = BoxTrajectory((box0,) * n_frames)
    z_star = backend.initial_latent(seed)
    z_meta, _, _ = run_guided_sampling(
        backend, z_star, prompt, static, cfg, sc=sc, stam=False
    )
    if pixel_roundtrip:
        z_meta = backend.encode(backend.decode(z_meta))
    return z_meta


def local_mixup(
    z_star: torch.Tensor,
    z_I: torch.Tensor,
    box0: GridBox,
    traj: list[GridBox],
    lambda_p: float,
) -> torch.Tensor:
    """Blend the inverted latent's first-box patch into each frame's box.

    Frame f of the output carries
    ``lambda_p * patch(z_I[f], box0) + (1 - lambda_p) * patch(z_star[f], box_f)``
    inside ``box_f`` and is untouched elsewhere. Trajectory boxes normally
    share ``box0``'s cell dimensions; a mismatched box gets the inverted
    patch bilinearly resampled to its shape.
    """
    if not 0.0 <= lambda_p <= 1.0:
        raise ValueError("lambda_p must lie in [0, 1]")
    if z_star.shape != z_I.shape:
        raise ValueError(
            f"shape mismatch: z_star {tuple(z_star.shape)} vs z_I {tuple(z_I.shape)}"
        )
    n_frames = z_star.shape[0]
    if len(traj) != n_frames:
        raise ValueError(f"trajectory length {len(traj)} != frame count {n_frames}")
    out = z_star.clone()
    for f in range(n_frames):
        patch = z_I[f, :, box0.row_lo : box0.row_hi, box0.col_lo : box0.col_hi]
        bf = traj[f]
        if (bf.height, bf.width) != (box0.height, box0.width):
            patch = F.interpolate(
                patch[None],
                size=(bf.height, bf.width),
                mode="bilinear",
                align_corners=False,
            )[0]
        base = z_star[f, :, bf.row_lo : bf.row_hi, bf.col_lo : bf.col_hi]
        if patch.shape != base.shape:
            raise RuntimeError(
                f"mixup patch {tuple(patch.shape)} != target {tuple(base.shape)}"
            )
        out[f, :, bf.row_lo : bf.row_hi, bf.col_lo : bf.col_hi] = (
            lambda_p * patch + (1.0 - lambda_p) * base
        )
    return out


def build_initial_noise(
    prompt: PromptSpec,
    traj: BoxTrajectory,
    cfg: GuidanceConfig,
    seed: int,
    backend: BackendAdapter,
    sc: bool = True,
    pixel_roundtrip: bool = False,
) -> NoisePrior:
    """Full prior construction: meta video, inversion, per-frame mixup.

    Pure function of (prompt, trajectory, config, seed) for a fixed backend.
    """
    n_frames, _, height, width = backend.latent_shape
    if traj.n_frames != n_frames:
        raise ValueError(
            f"trajectory has {traj.n_frames} frames, backend expects {n_frames}"
        )
    z_star = backend.initial_latent(seed)
    z_meta = generate_meta_video(
        prompt, traj.boxes[0], cfg, seed, backend, sc=sc, pixel_roundtrip=pixel_roundtrip
    )
    z_I = ddim_invert(backend, z_meta, prompt, cfg.total_steps)
    gboxes = quantize_trajectory_uniform(traj, width, height)
    z_T = local_mixup(z_star, z_I, gboxes[0], gboxes, cfg.lambda_prior)
    return NoisePrior(z_T=z_T, z_I=z_I, meta_box=gboxes[0], lambda_p=cfg.lambda_prior)
