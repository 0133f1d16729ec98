"""Backend adapter contract and the bundled toy backend.

The guidance engine talks to a diffusion model only through
:class:`BackendAdapter`, so the same trajectory-control code can drive the
bundled toy stack today and an external pre-trained video model later. A
backend declares its capabilities up front: attention capture resolution,
temporal-attention wrap points, and whether gradient-based latent guidance
is supported.
"""

from __future__ import annotations

import abc
import hashlib

import torch

from .schedule import NoiseSchedule, ddim_step, make_schedule
from .testbed import (
    AttentionStack,
    PromptSpec,
    TestbedConfig,
    ToyVideoDenoiser,
    toy_decode,
    toy_encode,
    validate_latent,
)

__all__ = ["BackendAdapter", "ToyBackend", "sample", "ddim_invert"]


class BackendAdapter(abc.ABC):
    """Capabilities a video diffusion backend must expose.

    ``denoise`` must accept a ``temporal_wrapper`` callable and route every
    temporal-attention invocation through it (the shift mechanism's wrap
    point). ``attention_forward`` must return layer-aggregated cross-attention
    maps that remain connected to the autograd graph when the input latent
    requires grad; backends that cannot provide this set
    ``supports_gradient_guidance`` to False and reject loss-based guidance.
    """

    @property
    @abc.abstractmethod
    def latent_shape(self) -> tuple[int, int, int, int]:
        """(n_frames, channels, height, width) of one sampling run."""

    @property
    @abc.abstractmethod
    def attention_resolution(self) -> tuple[int, int]:
        """(H, W) of the captured cross-attention maps."""

    @property
    @abc.abstractmethod
    def supports_gradient_guidance(self) -> bool:
        """Whether gradients of attention maps w.r.t. the latent exist."""

    @abc.abstractmethod
    def schedule_for(self, T: int) -> NoiseSchedule:
        """The backend's noise schedule for a T-step run."""

    @abc.abstractmethod
    def initial_latent(self, seed: int) -> torch.Tensor:
        """Seeded standard-normal draw of the latent shape."""

    @abc.abstractmethod
    def denoise(
        self,
        z: torch.Tensor,
        t: int,
        prompt: PromptSpec,
        capture: bool = False,
        temporal_wrapper=None,
    ) -> tuple[torch.Tensor, AttentionStack | None]:
        """Predict noise; when ``capture`` is set also return detached
        attention maps at the declared resolution."""

    @abc.abstractmethod
    def attention_forward(
        self, z: torch.Tensor, t: int, prompt: PromptSpec, temporal_wrapper=None
    ) -> torch.Tensor:
        """Aggregated live attention maps (F, Np, H, W) for guidance."""

    @abc.abstractmethod
    def encode(self, video: torch.Tensor) -> torch.Tensor:
        """Pixels to latent."""

    @abc.abstractmethod
    def decode(self, z: torch.Tensor) -> torch.Tensor:
        """Latent to pixels."""

    @abc.abstractmethod
    def weights_checksum(self) -> str:
        """Digest over all frozen weights; must be invariant across runs."""


class ToyBackend(BackendAdapter):
    """The deterministic toy stack behind the adapter contract."""

    def __init__(self, config: TestbedConfig | None = None):
        self.config = config or TestbedConfig()
        self.denoiser = ToyVideoDenoiser(self.config)

    @property
    def latent_shape(self) -> tuple[int, int, int, int]:
        return self.config.latent_shape

    @property
    def attention_resolution(self) -> tuple[int, int]:
        return self.config.attention_resolution

    @property
    def supports_gradient_guidance(self) -> bool:
        return True

    def schedule_for(self, T: int) -> NoiseSchedule:
        return make_schedule(T, dtype=self.config.dtype)

    def initial_latent(self, seed: int) -> torch.Tensor:
        gen = torch.Generator().manual_seed(seed)
        return torch.randn(self.latent_shape, generator=gen, dtype=self.config.dtype)

    def _check_inputs(self, z: torch.Tensor, t: int) -> None:
        validate_latent(z)
        if t < 1:
            raise ValueError(f"denoiser timestep must be >= 1, got {t}")

    def denoise(self, z, t, prompt, capture=False, temporal_wrapper=None):
        self._check_inputs(z, t)
        ids = prompt.padded_ids(self.config.max_tokens)
        with torch.no_grad():
            eps, maps = self.denoiser(
                z, t, ids, temporal_wrapper=temporal_wrapper, capture=capture
            )
        stack = AttentionStack(torch.stack(maps)) if capture else None
        return eps, stack

    def attention_forward(self, z, t, prompt, temporal_wrapper=None):
        self._check_inputs(z, t)
        ids = prompt.padded_ids(self.config.max_tokens)
        with torch.enable_grad():
            _, maps = self.denoiser(
                z, t, ids, temporal_wrapper=temporal_wrapper, capture=True
            )
            return torch.stack(maps).mean(dim=0)

    def encode(self, video):
        return toy_encode(video.to(self.config.dtype))

    def decode(self, z):
        return toy_decode(z)

    def weights_checksum(self) -> str:
        digest = hashlib.sha256()
        for name, p in sorted(self.denoiser.named_parameters()):
            digest.update(name.encode())
            digest.update(p.detach().numpy().tobytes())
        return digest.hexdigest()


def sample(
    backend: BackendAdapter,
    z_T: torch.Tensor,
    prompt: PromptSpec,
    T: int,
    sched: NoiseSchedule | None = None,
) -> torch.Tensor:
    """Plain deterministic DDIM sampling, t = T down to 1, no guidance."""
    sched = sched or backend.schedule_for(T)
    z = z_T
    for t in range(T, 0, -1):
        eps, _ = backend.denoise(z, t, prompt)
        z = ddim_step(z, eps, t, t - 1, sched)
    return z


def ddim_invert(
    backend: BackendAdapter,
    z0: torch.Tensor,
    prompt: PromptSpec,
    T: int,
    sched: NoiseSchedule | None = None,
) -> torch.Tensor:
    """Reversed DDIM recurrence: walk a clean latent back up to noise level T.

    Each step reuses the denoiser's prediction at the current latent for the
    next noise level, the standard first-order inversion approximation.
    """
    validate_latent(z0)
    sched = sched or backend.schedule_for(T)
    z = z0
    for t_next in range(1, T + 1):
        eps, _ = backend.denoise(z, t_next, prompt)
        ab_cur = sched.alpha_bar(t_next - 1)
        ab_next = sched.alpha_bar(t_next)
        x0_hat = (z - ((1.0 - ab_cur) ** 0.5) * eps) / (ab_cur**0.5)
        z = (ab_next**0.5) * x0_hat + ((1.0 - ab_next) ** 0.5) * eps
    return z
