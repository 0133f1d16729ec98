"""A small deterministic latent video diffusion stack.

The denoiser is a 3D U-Net in miniature: per-frame convolutions with
down/mid/up stages, spatial cross-attention against a toy token table, and
temporal self-attention across frames at fixed spatial positions. Weights
are drawn once from a seeded generator and frozen; the stack exists to make
guidance mechanisms runnable and checkable, not to generate good pixels.

Everything here is a pure function of (weight seed, inputs): repeated calls
are bitwise identical on one machine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

__all__ = [
    "TestbedConfig",
    "PromptSpec",
    "PAD_TOKEN_ID",
    "AttentionStack",
    "cross_attention_map",
    "temporal_rearrange",
    "temporal_unrearrange",
    "SpatialCrossAttention",
    "TemporalSelfAttention",
    "ToyVideoDenoiser",
    "toy_encode",
    "toy_decode",
    "validate_latent",
    "sinusoidal_time_embedding",
]

PAD_TOKEN_ID = 0

# Attention maps are captured at this resolution when a stage provides it;
# smaller latents fall back to the largest stage resolution available.
PREFERRED_ATTN_RESOLUTION = 48


@dataclass(frozen=True)
class TestbedConfig:
    """Architecture and conditioning hyperparameters for the toy stack."""

    n_frames: int = 8
    latent_channels: int = 4
    height: int = 48
    width: int = 48
    base_width: int = 16
    vocab_size: int = 64
    max_tokens: int = 8
    token_dim: int = 32
    head_dim: int = 16
    n_heads: int = 2
    time_dim: int = 32
    weight_seed: int = 1
    eps_head_gain: float = 0.05
    temporal_attn_gain: float = 1.0
    dtype: torch.dtype = torch.float64

    def __post_init__(self):
        if self.height % 2 or self.width % 2:
            raise ValueError("latent height and width must be even")
        if self.n_frames < 1 or self.latent_channels < 1:
            raise ValueError("n_frames and latent_channels must be >= 1")

    @property
    def latent_shape(self) -> tuple[int, int, int, int]:
        return (self.n_frames, self.latent_channels, self.height, self.width)

    @property
    def attention_resolution(self) -> tuple[int, int]:
        """Capture resolution: the preferred size if a stage runs at it,
        otherwise the largest stage resolution not exceeding it."""
        hs = [self.height, self.height // 2]
        ws = [self.width, self.width // 2]
        for h, w in zip(hs, ws):
            if max(h, w) <= PREFERRED_ATTN_RESOLUTION:
                return (h, w)
        return (hs[-1], ws[-1])


@dataclass(frozen=True)
class PromptSpec:
    """Token-id prompt with the positions whose object is box-controlled."""

    token_ids: tuple[int, ...]
    target_indices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "token_ids", tuple(int(i) for i in self.token_ids))
        object.__setattr__(
            self, "target_indices", tuple(int(i) for i in self.target_indices)
        )
        if len(self.token_ids) == 0:
            raise ValueError("prompt must contain at least one token")
        if any(i < 0 for i in self.token_ids):
            raise ValueError("token ids must be non-negative")
        if len(self.target_indices) == 0:
            raise ValueError("at least one target token index is required")
        for k in self.target_indices:
            if not 0 <= k < len(self.token_ids):
                raise ValueError(f"target index {k} outside prompt of length {len(self.token_ids)}")
            if self.token_ids[k] == PAD_TOKEN_ID:
                raise ValueError(f"target index {k} points at a padding token")

    def padded_ids(self, max_tokens: int) -> list[int]:
        if len(self.token_ids) > max_tokens:
            raise ValueError(
                f"prompt has {len(self.token_ids)} tokens, backend allows {max_tokens}"
            )
        return list(self.token_ids) + [PAD_TOKEN_ID] * (max_tokens - len(self.token_ids))


def validate_latent(z: torch.Tensor) -> None:
    """A latent video is a finite (n_frames, channels, height, width) tensor."""
    if z.dim() != 4:
        raise ValueError(f"latent video must be 4-D, got shape {tuple(z.shape)}")
    if not bool(torch.isfinite(z).all()):
        raise ValueError("latent video contains non-finite entries")


class AttentionStack:
    """Detached cross-attention maps captured from one denoiser forward.

    ``maps`` has shape (n_layers, n_frames, n_tokens, H, W); for each spatial
    location the softmax row over tokens sums to 1 in every layer.
    """

    def __init__(self, maps: torch.Tensor):
        if maps.dim() != 5:
            raise ValueError(f"expected (L, F, Np, H, W) maps, got {tuple(maps.shape)}")
        self.maps = maps.detach()

    @property
    def n_layers(self) -> int:
        return self.maps.shape[0]

    @property
    def n_frames(self) -> int:
        return self.maps.shape[1]

    @property
    def n_tokens(self) -> int:
        return self.maps.shape[2]

    @property
    def resolution(self) -> tuple[int, int]:
        return (self.maps.shape[3], self.maps.shape[4])

    def aggregated(self) -> torch.Tensor:
        """Layer-averaged maps, shape (n_frames, n_tokens, H, W)."""
        return self.maps.mean(dim=0)

    def map_for(self, frame: int, token: int, layer: int | None = None) -> torch.Tensor:
        if layer is None:
            return self.aggregated()[frame, token]
        return self.maps[layer, frame, token]


def cross_attention_map(Q: torch.Tensor, K: torch.Tensor, d: int) -> torch.Tensor:
    """Scaled dot-product attention weights: softmax(Q K^T / sqrt(d)).

    Rows (one per query position) sum to 1 and entries lie in (0, 1).
    """
    if d <= 0:
        raise ValueError("key dimensionality d must be positive")
    if Q.shape[-1] != K.shape[-1]:
        raise ValueError(
            f"inner dimensions disagree: Q {tuple(Q.shape)} vs K {tuple(K.shape)}"
        )
    logits = Q @ K.transpose(-1, -2) / math.sqrt(d)
    return torch.softmax(logits, dim=-1)


def temporal_rearrange(z: torch.Tensor) -> torch.Tensor:
    """Regroup (F, C, H, W) into (H*W, F, C): row h*W + w holds the per-frame
    feature sequence of spatial cell (h, w), for a batch of one."""
    f, c, h, w = z.shape
    return z.permute(2, 3, 0, 1).reshape(h * w, f, c)


def temporal_unrearrange(zr: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """Inverse of :func:`temporal_rearrange`."""
    hw, f, c = zr.shape
    if hw != height * width:
        raise ValueError(f"row count {hw} does not match {height}x{width}")
    return zr.reshape(height, width, f, c).permute(2, 3, 0, 1)


def sinusoidal_time_embedding(t: int, dim: int, dtype: torch.dtype) -> torch.Tensor:
    """Standard sin/cos timestep embedding of length ``dim``."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=dtype) / max(half - 1, 1)
    )
    angles = t * freqs
    return torch.cat([torch.sin(angles), torch.cos(angles)])


class SpatialCrossAttention(nn.Module):
    """Multi-head cross-attention from spatial positions to prompt tokens.

    The averaged-over-heads attention weights are the maps the guidance
    losses operate on.
    """

    def __init__(self, channels: int, token_dim: int, head_dim: int, n_heads: int):
        super().__init__()
        inner = head_dim * n_heads
        self.head_dim = head_dim
        self.n_heads = n_heads
        self.to_q = nn.Linear(channels, inner, bias=False)
        self.to_k = nn.Linear(token_dim, inner, bias=False)
        self.to_v = nn.Linear(token_dim, inner, bias=False)
        self.to_out = nn.Linear(inner, channels, bias=False)

    def forward(self, h: torch.Tensor, tokens: torch.Tensor, need_maps: bool = False):
        f, c, gh, gw = h.shape
        n_tok = tokens.shape[0]
        x = h.reshape(f, c, gh * gw).transpose(1, 2)  # (F, HW, C)
        q = self.to_q(x).reshape(f, gh * gw, self.n_heads, self.head_dim).transpose(1, 2)
        k = self.to_k(tokens).reshape(n_tok, self.n_heads, self.head_dim).permute(1, 0, 2)
        v = self.to_v(tokens).reshape(n_tok, self.n_heads, self.head_dim).permute(1, 0, 2)
        attn = cross_attention_map(q, k.unsqueeze(0), self.head_dim)  # (F, heads, HW, Np)
        out = attn @ v.unsqueeze(0)  # (F, heads, HW, head_dim)
        out = out.transpose(1, 2).reshape(f, gh * gw, self.n_heads * self.head_dim)
        x = x + self.to_out(out)
        h_out = x.transpose(1, 2).reshape(f, c, gh, gw)
        maps = None
        if need_maps:
            # (F, Np, H, W), averaged over heads; rows over tokens still sum to 1
            maps = attn.mean(dim=1).transpose(1, 2).reshape(f, n_tok, gh, gw)
        return h_out, maps


class TemporalSelfAttention(nn.Module):
    """Self-attention across frames at each fixed spatial position."""

    def __init__(self, channels: int, head_dim: int, n_heads: int):
        super().__init__()
        inner = head_dim * n_heads
        self.head_dim = head_dim
        self.n_heads = n_heads
        self.to_q = nn.Linear(channels, inner, bias=False)
        self.to_k = nn.Linear(channels, inner, bias=False)
        self.to_v = nn.Linear(channels, inner, bias=False)
        self.to_out = nn.Linear(inner, channels, bias=False)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        f, c, gh, gw = z.shape
        x = temporal_rearrange(z)  # (HW, F, C)
        hw = x.shape[0]
        q = self.to_q(x).reshape(hw, f, self.n_heads, self.head_dim).transpose(1, 2)
        k = self.to_k(x).reshape(hw, f, self.n_heads, self.head_dim).transpose(1, 2)
        v = self.to_v(x).reshape(hw, f, self.n_heads, self.head_dim).transpose(1, 2)
        attn = cross_attention_map(q, k, self.head_dim)  # (HW, heads, F, F)
        out = (attn @ v).transpose(1, 2).reshape(hw, f, self.n_heads * self.head_dim)
        x = x + self.to_out(out)
        return temporal_unrearrange(x, gh, gw)


def _apply_temporal(layer, h, wrapper):
    if wrapper is None:
        return layer(h)
    return wrapper(layer, h)


class ToyVideoDenoiser(nn.Module):
    """Frozen seeded noise predictor with capturable cross-attention.

    Stages run at the latent resolution (stage 0), at half resolution
    (stage 1 and middle), and back at the latent resolution (stage 2).
    Cross-attention maps are captured at the stages matching
    ``config.attention_resolution``.
    """

    def __init__(self, config: TestbedConfig):
        super().__init__()
        self.config = config
        cfg = config
        w0, w1 = cfg.base_width, 2 * cfg.base_width
        self.token_table = nn.Parameter(torch.empty(cfg.vocab_size, cfg.token_dim))
        self.time_mlp = nn.Sequential(
            nn.Linear(cfg.time_dim, cfg.time_dim), nn.SiLU(), nn.Linear(cfg.time_dim, cfg.time_dim)
        )
        self.conv_in = nn.Conv2d(cfg.latent_channels, w0, 3, padding=1)
        self.temb0 = nn.Linear(cfg.time_dim, w0)
        self.norm0 = nn.GroupNorm(4, w0)
        self.xattn0 = SpatialCrossAttention(w0, cfg.token_dim, cfg.head_dim, cfg.n_heads)
        self.tattn0 = TemporalSelfAttention(w0, cfg.head_dim, cfg.n_heads)
        self.down = nn.Conv2d(w0, w1, 3, stride=2, padding=1)
        self.temb1 = nn.Linear(cfg.time_dim, w1)
        self.norm1 = nn.GroupNorm(4, w1)
        self.xattn1 = SpatialCrossAttention(w1, cfg.token_dim, cfg.head_dim, cfg.n_heads)
        self.tattn1 = TemporalSelfAttention(w1, cfg.head_dim, cfg.n_heads)
        self.mid_conv = nn.Conv2d(w1, w1, 3, padding=1)
        self.mid_norm = nn.GroupNorm(4, w1)
        self.xattn_mid = SpatialCrossAttention(w1, cfg.token_dim, cfg.head_dim, cfg.n_heads)
        self.tattn_mid = TemporalSelfAttention(w1, cfg.head_dim, cfg.n_heads)
        self.up_conv = nn.Conv2d(w1, w0, 3, padding=1)
        self.temb2 = nn.Linear(cfg.time_dim, w0)
        self.norm2 = nn.GroupNorm(4, w0)
        self.xattn2 = SpatialCrossAttention(w0, cfg.token_dim, cfg.head_dim, cfg.n_heads)
        self.tattn2 = TemporalSelfAttention(w0, cfg.head_dim, cfg.n_heads)
        self.conv_out = nn.Conv2d(w0, cfg.latent_channels, 3, padding=1)

        self.to(cfg.dtype)
        self._init_weights()
        for p in self.parameters():
            p.requires_grad_(False)

    def _init_weights(self):
        gen = torch.Generator().manual_seed(self.config.weight_seed)

        def draw(shape, std):
            return torch.randn(shape, generator=gen, dtype=self.config.dtype) * std

        with torch.no_grad():
            self.token_table.copy_(draw(self.token_table.shape, 1.0))
            for name, p in self.named_parameters():
                if name == "token_table":
                    continue
                if p.dim() >= 2:
                    fan_in = p.shape[1] * (p.shape[2] * p.shape[3] if p.dim() == 4 else 1)
                    p.copy_(draw(p.shape, 1.0 / math.sqrt(fan_in)))
                else:
                    p.zero_()
            # norm affine params start at identity
            for mod in self.modules():
                if isinstance(mod, nn.GroupNorm):
                    mod.weight.fill_(1.0)
                    mod.bias.zero_()
            # cross-frame mixing strength is tunable so alignment effects
            # are visible at toy scale
            for mod in self.modules():
                if isinstance(mod, TemporalSelfAttention):
                    mod.to_out.weight.mul_(self.config.temporal_attn_gain)
            # small epsilon head keeps the frozen dynamics well-conditioned
            self.conv_out.weight.mul_(self.config.eps_head_gain)

    def token_embeddings(self, padded_ids: list[int]) -> torch.Tensor:
        ids = torch.as_tensor(padded_ids, dtype=torch.long)
        if int(ids.max()) >= self.config.vocab_size:
            raise ValueError("token id outside vocabulary")
        return self.token_table[ids]

    def forward(
        self,
        z: torch.Tensor,
        t: int,
        padded_ids: list[int],
        temporal_wrapper=None,
        capture: bool = False,
    ):
        """Predict noise; optionally return live attention maps from the
        capture-resolution stages as a list of (F, Np, H, W) tensors."""
        cfg = self.config
        tok = self.token_embeddings(padded_ids)
        temb = self.time_mlp(sinusoidal_time_embedding(t, cfg.time_dim, cfg.dtype))
        cap_res = cfg.attention_resolution
        maps: list[torch.Tensor] = []

        def want(h):
            return capture and (h.shape[2], h.shape[3]) == cap_res

        h0 = self.conv_in(z) + self.temb0(temb)[None, :, None, None]
        h0 = F.silu(self.norm0(h0))
        h0, m = self.xattn0(h0, tok, need_maps=want(h0))
        if m is not None:
            maps.append(m)
        h0 = _apply_temporal(self.tattn0, h0, temporal_wrapper)

        h1 = self.down(h0) + self.temb1(temb)[None, :, None, None]
        h1 = F.silu(self.norm1(h1))
        h1, m = self.xattn1(h1, tok, need_maps=want(h1))
        if m is not None:
            maps.append(m)
        h1 = _apply_temporal(self.tattn1, h1, temporal_wrapper)

        mid = F.silu(self.mid_norm(self.mid_conv(h1)))
        mid, m = self.xattn_mid(mid, tok, need_maps=want(mid))
        if m is not None:
            maps.append(m)
        mid = _apply_temporal(self.tattn_mid, mid, temporal_wrapper)

        up = F.interpolate(mid, scale_factor=2, mode="nearest")
        up = self.up_conv(up) + h0 + self.temb2(temb)[None, :, None, None]
        up = F.silu(self.norm2(up))
        up, m = self.xattn2(up, tok, need_maps=want(up))
        if m is not None:
            maps.append(m)
        up = _apply_temporal(self.tattn2, up, temporal_wrapper)

        eps = self.conv_out(up)
        return eps, maps


# ---------------------------------------------------------------------------
# Toy autoencoder: fixed 4x spatial compression, parameter-free and frozen
# ---------------------------------------------------------------------------

_AE_FACTOR = 4
_LUMA = (0.299, 0.587, 0.114)


def toy_encode(video: torch.Tensor) -> torch.Tensor:
    """Compress (F, 3, H, W) pixels to a (F, 4, H/4, W/4) latent.

    Channels 0..2 hold 4x4 block means per color; channel 3 holds the block
    mean of luminance.
    """
    if video.dim() != 4 or video.shape[1] != 3:
        raise ValueError(f"expected (F, 3, H, W) pixels, got {tuple(video.shape)}")
    if video.shape[2] % _AE_FACTOR or video.shape[3] % _AE_FACTOR:
        raise ValueError(
            f"pixel resolution {video.shape[2]}x{video.shape[3]} not divisible by {_AE_FACTOR}"
        )
    means = F.avg_pool2d(video, _AE_FACTOR)
    luma = sum(w * video[:, i : i + 1] for i, w in enumerate(_LUMA))
    return torch.cat([means, F.avg_pool2d(luma, _AE_FACTOR)], dim=1)


def toy_decode(z: torch.Tensor) -> torch.Tensor:
    """Expand a (F, 4, h, w) latent to (F, 3, 4h, 4w) pixels by bilinear
    upsampling of the color channels."""
    if z.dim() != 4 or z.shape[1] < 3:
        raise ValueError(f"expected (F, >=3, h, w) latent, got {tuple(z.shape)}")
    return F.interpolate(
        z[:, :3], scale_factor=_AE_FACTOR, mode="bilinear", align_corners=False
    )
