"""Noise schedule and the deterministic DDIM update rule."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

__all__ = ["NoiseSchedule", "make_schedule", "add_noise", "ddim_step"]

_ABAR_START = 0.999
_ABAR_END = 0.02


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step coefficients a_t and cumulative products a_bar_t, t = 1..T.

    a_bar_0 is defined as 1. Invariants: 0 < a_t < 1 and a_bar strictly
    decreasing.
    """

    a: torch.Tensor
    a_bar: torch.Tensor
    T: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "T", int(self.a.numel()))
        if self.a_bar.numel() != self.T:
            raise ValueError("a and a_bar must have equal length")
        if not bool(((self.a > 0) & (self.a < 1)).all()):
            raise ValueError("schedule requires 0 < a_t < 1 for all t")
        full = torch.cat([torch.ones(1, dtype=self.a_bar.dtype), self.a_bar])
        if not bool((full[1:] < full[:-1]).all()):
            raise ValueError("a_bar_t must be strictly decreasing")

    def alpha_bar(self, t: int) -> float:
        """a_bar_t with a_bar_0 = 1."""
        if t == 0:
            return 1.0
        if not 1 <= t <= self.T:
            raise ValueError(f"t={t} outside schedule range 1..{self.T}")
        return float(self.a_bar[t - 1])


def make_schedule(T: int, dtype: torch.dtype = torch.float64) -> NoiseSchedule:
    """Linear a_bar schedule from 0.999 down to 0.02 over T steps."""
    if T < 1:
        raise ValueError("T must be >= 1")
    a_bar = torch.linspace(_ABAR_START, _ABAR_END, T, dtype=dtype)
    prev = torch.cat([torch.ones(1, dtype=dtype), a_bar[:-1]])
    a = a_bar / prev
    return NoiseSchedule(a=a, a_bar=a_bar)


def add_noise(
    z0: torch.Tensor, t: int, eps: torch.Tensor, sched: NoiseSchedule
) -> torch.Tensor:
    """Forward noising: sqrt(a_bar_t) * z0 + sqrt(1 - a_bar_t) * eps."""
    if z0.shape != eps.shape:
        raise ValueError(f"shape mismatch: z0 {tuple(z0.shape)} vs eps {tuple(eps.shape)}")
    if not 1 <= t <= sched.T:
        raise ValueError(f"t={t} outside schedule range 1..{sched.T}")
    ab = sched.alpha_bar(t)
    return (ab**0.5) * z0 + ((1.0 - ab) ** 0.5) * eps


def ddim_step(
    z_t: torch.Tensor,
    eps_pred: torch.Tensor,
    t: int,
    t_prev: int,
    sched: NoiseSchedule,
) -> torch.Tensor:
    """One deterministic (eta = 0) DDIM update from level t to t_prev.

    z_prev = sqrt(a_bar_prev) * x0_hat + sqrt(1 - a_bar_prev) * eps_pred,
    with x0_hat = (z_t - sqrt(1 - a_bar_t) * eps_pred) / sqrt(a_bar_t).
    """
    if not t > t_prev >= 0:
        raise ValueError(f"need t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    ab_t = sched.alpha_bar(t)
    ab_prev = sched.alpha_bar(t_prev)
    x0_hat = (z_t - ((1.0 - ab_t) ** 0.5) * eps_pred) / (ab_t**0.5)
    return (ab_prev**0.5) * x0_hat + ((1.0 - ab_prev) ** 0.5) * eps_pred
