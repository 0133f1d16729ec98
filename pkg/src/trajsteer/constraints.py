"""Attention-map losses that pin an object to its per-frame box, and the
gradient update they drive on the latent.

Four losses act on the cross-attention map of the controlled token: raise
attention inside the box, suppress it outside, pull the attention centroid
to the box center, and keep consecutive in-box attention patches similar.
Their weighted sum is minimized by nudging the latent along its gradient
before each guided denoising step, with a linearly decaying step size.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import torch
import torch.nn.functional as F

from .boxes import BoxTrajectory, GridBox, Mask, build_mask, quantize_box
from .testbed import AttentionStack, PromptSpec

__all__ = [
    "GuidanceConfig",
    "LossBreakdown",
    "top_p_mean",
    "loss_inside",
    "loss_outside",
    "attention_centroid",
    "loss_center",
    "loss_similarity",
    "total_spatial_loss",
    "guide_latent",
]

logger = logging.getLogger(__name__)

# Unequal in-box patches are resampled to this shape before cosine similarity.
_CANONICAL_PATCH = (8, 8)


@dataclass(frozen=True)
class GuidanceConfig:
    """All guidance hyperparameters in one validated record.

    ``total_steps = guided_steps + plain_steps``; the losses and the shifted
    temporal attention are active during the first ``guided_steps`` sampler
    iterations. ``top_p_fraction`` sets the top-value count as a fraction of
    the box area (at least 1). ``stam_steps`` defaults to the guided window.

    The default step size pairs gradient-norm normalization with
    ``beta0 = 50``: the update then moves the latent by exactly ``beta_t``
    in norm, a scale calibrated on the toy testbed so the guided window
    visibly reshapes attention (unnormalized steps scaled by raw gradient
    norms, which are ~1e-2 here, leave the latent unchanged in practice).
    """

    lambda_inside: float = 1.0
    lambda_outside: float = 1.0
    lambda_center: float = 0.05
    lambda_similarity: float = 0.5
    lambda_prior: float = 0.8
    top_p_fraction: float = 0.2
    total_steps: int = 30
    guided_steps: int = 10
    plain_steps: int = 20
    beta0: float = 50.0
    inner_iters: int = 1
    normalize_grad: bool = True
    stam_steps: int | None = None

    def __post_init__(self):
        for name in ("lambda_inside", "lambda_outside", "lambda_center", "lambda_similarity"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.lambda_prior <= 1.0:
            raise ValueError("lambda_prior must lie in [0, 1]")
        if not 0.0 < self.top_p_fraction <= 1.0:
            raise ValueError("top_p_fraction must lie in (0, 1]")
        if self.guided_steps < 0 or self.plain_steps < 0:
            raise ValueError("step counts must be non-negative")
        if self.total_steps != self.guided_steps + self.plain_steps:
            raise ValueError(
                f"total_steps ({self.total_steps}) must equal guided_steps + "
                f"plain_steps ({self.guided_steps} + {self.plain_steps})"
            )
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.beta0 < 0:
            raise ValueError("beta0 must be >= 0")
        if self.inner_iters < 1:
            raise ValueError("inner_iters must be >= 1")
        if self.stam_steps is not None and self.stam_steps < 0:
            raise ValueError("stam_steps must be >= 0")

    @property
    def effective_stam_steps(self) -> int:
        return self.guided_steps if self.stam_steps is None else self.stam_steps

    def resolve_top_p(self, box_area: int) -> int:
        """Top-value count for a box of the given cell area."""
        return max(1, round(self.top_p_fraction * box_area))

    def with_overrides(self, **kwargs) -> "GuidanceConfig":
        return replace(self, **kwargs)


@dataclass
class LossBreakdown:
    """Per-frame loss components and their weighted total.

    ``total_tensor`` keeps the differentiable scalar when the breakdown was
    produced inside a gradient pass; the float fields are detached copies.
    """

    l_inside: list[float]
    l_outside: list[float]
    l_center: list[float]
    l_sim: float
    total: float
    total_tensor: torch.Tensor | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "l_inside": self.l_inside,
            "l_outside": self.l_outside,
            "l_center": self.l_center,
            "l_sim": self.l_sim,
            "total": self.total,
        }


def top_p_mean(values: torch.Tensor, P: int) -> torch.Tensor:
    """Mean of the P largest entries; P larger than the array uses all of it."""
    flat = values.reshape(-1)
    if flat.numel() == 0:
        raise ValueError("top_p_mean needs a non-empty array")
    if P < 1:
        raise ValueError("P must be >= 1")
    k = min(P, flat.numel())
    return torch.topk(flat, k).values.mean()


def _as_mask_tensor(mask: Mask, like: torch.Tensor) -> torch.Tensor:
    m = torch.as_tensor(mask.grid, dtype=like.dtype)
    if m.shape != like.shape:
        raise ValueError(
            f"mask shape {tuple(m.shape)} does not match map shape {tuple(like.shape)}"
        )
    return m


def loss_inside(A_kf: torch.Tensor, mask: Mask, P: int) -> torch.Tensor:
    """1 minus the top-P mean of the masked map: 0 when the box saturates."""
    m = _as_mask_tensor(mask, A_kf)
    if not m.any():
        raise ValueError("inside-loss mask covers no cells (degenerate box)")
    return 1.0 - top_p_mean(A_kf * m, P)


def loss_outside(A_kf: torch.Tensor, mask: Mask, P: int) -> torch.Tensor:
    """Top-P mean of attention on the box complement; 0 iff it is silent."""
    m = _as_mask_tensor(mask, A_kf)
    if bool(m.all()):
        warnings.warn(
            "box covers the whole frame; outside loss defined as 0", stacklevel=2
        )
        return torch.zeros((), dtype=A_kf.dtype)
    return top_p_mean(A_kf * (1.0 - m), P)


def attention_centroid(A_kf: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Attention-weighted mean (column, row) position in cell-index units."""
    total = A_kf.sum()
    if not bool(total > 0):
        raise ValueError("attention map sums to zero; centroid undefined")
    gh, gw = A_kf.shape
    cols = torch.arange(gw, dtype=A_kf.dtype)
    rows = torch.arange(gh, dtype=A_kf.dtype)
    w_c = (A_kf.sum(dim=0) * cols).sum() / total
    h_c = (A_kf.sum(dim=1) * rows).sum() / total
    return w_c, h_c


def loss_center(A_kf: torch.Tensor, gbox: GridBox) -> torch.Tensor:
    """L1 distance between the attention centroid and the box center, both in
    continuous cell-index coordinates."""
    w_c, h_c = attention_centroid(A_kf)
    cx, cy = gbox.center()
    return (w_c - cx).abs() + (h_c - cy).abs()


def _patch(A_f: torch.Tensor, gbox: GridBox) -> torch.Tensor:
    return A_f[gbox.row_lo : gbox.row_hi, gbox.col_lo : gbox.col_hi]


def _canonicalize(patch: torch.Tensor) -> torch.Tensor:
    if patch.shape == _CANONICAL_PATCH:
        return patch
    return F.interpolate(
        patch[None, None], size=_CANONICAL_PATCH, mode="bilinear", align_corners=False
    )[0, 0]


def _pair_cosine(p: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    na, nb = p.norm(), q.norm()
    if not bool(na > 0) or not bool(nb > 0):
        warnings.warn("zero-norm attention patch; pair similarity taken as 0", stacklevel=3)
        return torch.zeros((), dtype=p.dtype)
    return (p * q).sum() / (na * nb)


def loss_similarity(
    maps_k: torch.Tensor, gboxes: list[GridBox]
) -> torch.Tensor:
    """1 minus the mean cosine similarity of consecutive in-box patches.

    ``maps_k`` holds one token's maps, shape (N_f, H, W). Patches of unequal
    shape are bilinearly resampled to a common canonical patch first.
    """
    n_frames = maps_k.shape[0]
    if n_frames < 2:
        raise ValueError("similarity loss needs at least two frames")
    if len(gboxes) != n_frames:
        raise ValueError("one grid box per frame required")
    patches = [_patch(maps_k[f], gboxes[f]) for f in range(n_frames)]
    if len({p.shape for p in patches}) > 1:
        patches = [_canonicalize(p) for p in patches]
    sims = [
        _pair_cosine(patches[f].reshape(-1), patches[f + 1].reshape(-1))
        for f in range(n_frames - 1)
    ]
    return 1.0 - torch.stack(sims).mean()


def _resolve_maps(attn) -> torch.Tensor:
    if isinstance(attn, AttentionStack):
        return attn.aggregated()
    if isinstance(attn, torch.Tensor) and attn.dim() == 4:
        return attn
    raise ValueError("expected an AttentionStack or a (F, Np, H, W) tensor")


def total_spatial_loss(
    attn,
    traj: BoxTrajectory,
    cfg: GuidanceConfig,
    tokens,
) -> LossBreakdown:
    """Weighted composition of the four losses over all frames.

    Frame losses are computed per target token and averaged across tokens;
    the similarity term is likewise token-averaged. The box for each frame is
    the trajectory box quantized onto the attention grid.
    """
    maps = _resolve_maps(attn)
    n_frames, n_tokens, gh, gw = maps.shape
    if traj.n_frames != n_frames:
        raise ValueError(
            f"trajectory has {traj.n_frames} frames, attention has {n_frames}"
        )
    tokens = sorted(tokens)
    if not tokens:
        raise ValueError("at least one target token required")
    for k in tokens:
        if not 0 <= k < n_tokens:
            raise ValueError(f"token index {k} outside captured maps ({n_tokens})")

    gboxes = [quantize_box(b, gw, gh) for b in traj.boxes]
    masks = [build_mask(g, gw, gh) for g in gboxes]
    ps = [cfg.resolve_top_p(g.area) for g in gboxes]

    dtype = maps.dtype
    li, lo, lc = [], [], []
    for f in range(n_frames):
        li_k = [loss_inside(maps[f, k], masks[f], ps[f]) for k in tokens]
        lo_k = [loss_outside(maps[f, k], masks[f], ps[f]) for k in tokens]
        lc_k = [loss_center(maps[f, k], gboxes[f]) for k in tokens]
        li.append(torch.stack(li_k).mean())
        lo.append(torch.stack(lo_k).mean())
        lc.append(torch.stack(lc_k).mean())
    if n_frames >= 2:
        ls = torch.stack(
            [loss_similarity(maps[:, k], gboxes) for k in tokens]
        ).mean()
    else:
        ls = torch.zeros((), dtype=dtype)

    total = (
        cfg.lambda_inside * torch.stack(li).sum()
        + cfg.lambda_outside * torch.stack(lo).sum()
        + cfg.lambda_center * torch.stack(lc).sum()
        + cfg.lambda_similarity * ls
    )
    return LossBreakdown(
        l_inside=[float(v.detach()) for v in li],
        l_outside=[float(v.detach()) for v in lo],
        l_center=[float(v.detach()) for v in lc],
        l_sim=float(ls.detach()),
        total=float(total.detach()),
        total_tensor=total,
    )


def guide_latent(
    z_t: torch.Tensor,
    t: int,
    prompt: PromptSpec,
    traj: BoxTrajectory,
    cfg: GuidanceConfig,
    backend,
    guided_step_index: int,
    temporal_wrapper=None,
    log_sink: list | None = None,
) -> torch.Tensor:
    """Descend the spatial loss on the latent before a guided denoising step.

    Runs ``inner_iters`` gradient steps with step size
    ``beta0 * (remaining guided steps / guided window)``, so beta reaches 0
    exactly at the window boundary. The loss sees the latent only through a
    dedicated attention-capture forward; the subsequent denoising forward is
    the caller's job. A non-finite gradient skips the update and logs the
    event.
    """
    weights = (
        cfg.lambda_inside,
        cfg.lambda_outside,
        cfg.lambda_center,
        cfg.lambda_similarity,
    )
    if cfg.beta0 == 0.0 or all(w == 0.0 for w in weights):
        return z_t
    if not backend.supports_gradient_guidance:
        raise ValueError(
            "backend does not support gradient guidance but loss weights are nonzero"
        )
    if not 0 <= guided_step_index < cfg.guided_steps:
        raise ValueError(
            f"guided_step_index {guided_step_index} outside window of {cfg.guided_steps}"
        )
    beta = cfg.beta0 * (cfg.guided_steps - guided_step_index) / cfg.guided_steps

    z = z_t
    for it in range(cfg.inner_iters):
        zg = z.detach().clone().requires_grad_(True)
        maps = backend.attention_forward(zg, t, prompt, temporal_wrapper=temporal_wrapper)
        breakdown = total_spatial_loss(maps, traj, cfg, prompt.target_indices)
        (grad,) = torch.autograd.grad(breakdown.total_tensor, zg)
        if not bool(torch.isfinite(grad).all()):
            logger.warning(
                "non-finite guidance gradient at t=%d (inner iter %d); update skipped",
                t,
                it,
            )
            return z_t
        grad_norm = float(grad.norm())
        if cfg.normalize_grad:
            step = beta * grad / (grad_norm + 1e-8)
        else:
            step = beta * grad
        z = (zg - step).detach()
        if log_sink is not None:
            entry = {
                "t": t,
                "guided_step_index": guided_step_index,
                "inner_iter": it,
                "beta": beta,
                "grad_norm": grad_norm,
            }
            entry.update(breakdown.to_dict())
            log_sink.append(entry)
    return z
