"""The guided denoising loop shared by the pipeline and the prior builder.

Timesteps run from high noise to low (t = T down to 1). The first
``guided_steps`` iterations optionally apply the spatial-constraint latent
update and wrap temporal attention with the box-aligning shift; the
remaining iterations run the backend unmodified.
"""

from __future__ import annotations

import torch

from .backend import BackendAdapter
from .boxes import BoxTrajectory
from .constraints import GuidanceConfig, guide_latent
from .schedule import ddim_step
from .shift_attention import make_stam_wrapper
from .testbed import PromptSpec

__all__ = ["run_guided_sampling"]


def run_guided_sampling(
    backend: BackendAdapter,
    z_T: torch.Tensor,
    prompt: PromptSpec,
    traj: BoxTrajectory,
    cfg: GuidanceConfig,
    sc: bool = True,
    stam: bool = True,
    capture: str = "none",
    loss_log: list | None = None,
):
    """Run the full denoising loop from ``z_T`` down to the clean latent.

    ``capture`` selects which steps record detached attention maps:
    "none", "final" (the last step only), or "all". Returns
    ``(z0, step_records, captured)`` where ``captured`` maps step index to
    an :class:`AttentionStack`.
    """
    if capture not in ("none", "final", "all"):
        raise ValueError(f"unknown capture mode {capture!r}")
    T = cfg.total_steps
    sched = backend.schedule_for(T)
    use_stam = stam and cfg.effective_stam_steps > 0
    wrapper = make_stam_wrapper(traj) if use_stam else None

    z = z_T
    records = []
    captured = {}
    for i, t in enumerate(range(T, 0, -1)):
        stam_active = use_stam and i < cfg.effective_stam_steps
        active_wrapper = wrapper if stam_active else None
        guided = sc and i < cfg.guided_steps
        sink: list = []
        if guided:
            # the loss sees the plain (unwrapped) forward; the shift wrapper
            # applies to the denoising forward that follows
            z = guide_latent(
                z,
                t,
                prompt,
                traj,
                cfg,
                backend,
                guided_step_index=i,
                log_sink=sink,
            )
        want = capture == "all" or (capture == "final" and i == T - 1)
        eps, stack = backend.denoise(
            z, t, prompt, capture=want, temporal_wrapper=active_wrapper
        )
        if want:
            captured[i] = stack
        z = ddim_step(z, eps, t, t - 1, sched)
        records.append(
            {
                "step_index": i,
                "t": t,
                "stage": "guided" if guided else "plain",
                "stam": stam_active,
                "guidance": sink,
            }
        )
        if loss_log is not None:
            loss_log.extend(sink)
    return z, records, captured
