"""Time-conditioned U-Net vector-field predictor and the single-pass baseline.

Both networks share the exact same block code path; the baseline simply has
the time pathway disabled, so architectural comparisons are structural rather
than approximate. Down-sampling is 2x max-pool, up-sampling is 2x nearest
neighbor followed by a 3x3 convolution, skips are channel concatenations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

# t lives in [0,1]; stretching it before the sinusoidal formula restores the
# frequency diversity the embedding was designed for on integer step indices.
TIME_SCALE = 1000.0


@dataclass(frozen=True)
class ModelConfig:
    base_filters: int = 64
    depth: int = 4
    groupnorm_groups: int = 8
    time_embed_dim: int = 128
    mlp_hidden_dim: int = 256
    in_channels: int = 2
    out_channels: int = 1

    def validate(self) -> None:
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.base_filters % self.groupnorm_groups != 0:
            raise ValueError(
                f"base_filters {self.base_filters} must be divisible by "
                f"groupnorm_groups {self.groupnorm_groups}"
            )
        if self.time_embed_dim % 2 != 0 or self.time_embed_dim < 2:
            raise ValueError(f"time_embed_dim must be even and >= 2, got {self.time_embed_dim}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("in_channels and out_channels must be >= 1")


def sinusoidal_embed(t, dim: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Fixed sin/cos featurization of flow time.

    Entry k of the first half is sin(t * w_k), of the second half cos(t * w_k),
    with w_k = exp(-k * ln(10000) / (dim/2 - 1)) * TIME_SCALE. Accepts a scalar
    or a 1-D batch of times; returns (dim,) or (batch, dim).
    """
    if dim % 2 != 0 or dim < 2:
        raise ValueError(f"embedding dim must be even and >= 2, got {dim}")
    tt = torch.as_tensor(t, dtype=dtype)
    scalar_input = tt.ndim == 0
    tt = tt.reshape(-1)
    half = dim // 2
    if half == 1:
        freqs = torch.tensor([TIME_SCALE], dtype=dtype)
    else:
        k = torch.arange(half, dtype=dtype)
        freqs = torch.exp(-k * (math.log(10000.0) / (half - 1))) * TIME_SCALE
    angles = tt[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(angles), torch.cos(angles)], dim=1)
    return emb[0] if scalar_input else emb


class TimeMLP(nn.Module):
    """Two affine layers with SiLU between them, mapping the sinusoidal embedding
    to the feature vector injected into the convolutional blocks."""

    def __init__(self, embed_dim: int, hidden_dim: int):
        super().__init__()
        self.fc1 = nn.Linear(embed_dim, hidden_dim)
        self.fc2 = nn.Linear(hidden_dim, hidden_dim)

    def forward(self, emb: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.silu(self.fc1(emb)))


class ConvBlock(nn.Module):
    """Two 3x3 convolutions, each followed by GroupNorm and SiLU.

    When time-conditioned, a per-block linear projection of the time features
    is added channelwise after the first convolution unit.
    """

    def __init__(self, in_ch: int, out_ch: int, groups: int, time_dim: int | None):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm1 = nn.GroupNorm(groups, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.norm2 = nn.GroupNorm(groups, out_ch)
        self.time_proj = nn.Linear(time_dim, out_ch) if time_dim is not None else None

    def forward(self, x: torch.Tensor, time_feat: torch.Tensor | None = None) -> torch.Tensor:
        h = F.silu(self.norm1(self.conv1(x)))
        if self.time_proj is not None:
            h = h + self.time_proj(time_feat)[:, :, None, None]
        return F.silu(self.norm2(self.conv2(h)))


class FlowUNet(nn.Module):
    """U-Net over (image, flow state) channels, conditioned on flow time.

    Encoder stages carry base_filters * 2^i channels for i in 0..depth-1 with a
    bottleneck at base_filters * 2^depth; the head is a 1x1 convolution with no
    activation, emitting a raw per-pixel displacement field. With
    time_conditioned=False the identical backbone acts as the plain baseline.
    """

    def __init__(self, config: ModelConfig, time_conditioned: bool = True):
        super().__init__()
        config.validate()
        self.config = config
        self.time_conditioned = time_conditioned

        enc_ch = [config.base_filters * 2**i for i in range(config.depth)]
        bottleneck_ch = config.base_filters * 2**config.depth
        time_dim = config.mlp_hidden_dim if time_conditioned else None
        groups = config.groupnorm_groups

        if time_conditioned:
            self.time_mlp = TimeMLP(config.time_embed_dim, config.mlp_hidden_dim)

        ins = [config.in_channels] + enc_ch[:-1]
        self.encoders = nn.ModuleList(
            ConvBlock(ins[i], enc_ch[i], groups, time_dim) for i in range(config.depth)
        )
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = ConvBlock(enc_ch[-1], bottleneck_ch, groups, time_dim)
        # Decoder level i consumes base * 2^(i+1) channels and produces base * 2^i.
        self.upconvs = nn.ModuleList(
            nn.Conv2d(config.base_filters * 2 ** (i + 1), config.base_filters * 2**i, 3, padding=1)
            for i in reversed(range(config.depth))
        )
        self.decoders = nn.ModuleList(
            ConvBlock(config.base_filters * 2 ** (i + 1), config.base_filters * 2**i, groups, time_dim)
            for i in reversed(range(config.depth))
        )
        self.head = nn.Conv2d(config.base_filters, config.out_channels, 1)

    def forward(self, x: torch.Tensor, t: torch.Tensor | None = None) -> torch.Tensor:
        """x: (B, in_channels, H, W); t: (B,) flow times when time-conditioned."""
        h_in, w_in = x.shape[-2], x.shape[-1]
        factor = 2**self.config.depth
        if h_in % factor != 0 or w_in % factor != 0:
            raise ValueError(f"input size {h_in}x{w_in} must be divisible by {factor}")
        time_feat = None
        if self.time_conditioned:
            if t is None:
                raise ValueError("time-conditioned forward requires t")
            emb = sinusoidal_embed(t, self.config.time_embed_dim, dtype=x.dtype)
            if emb.ndim == 1:
                emb = emb[None, :]
            time_feat = self.time_mlp(emb)

        skips = []
        h = x
        for enc in self.encoders:
            h = enc(h, time_feat)
            skips.append(h)
            h = self.pool(h)
        h = self.bottleneck(h, time_feat)
        for up, dec, skip in zip(self.upconvs, self.decoders, reversed(skips)):
            h = up(F.interpolate(h, scale_factor=2, mode="nearest"))
            h = torch.cat([skip, h], dim=1)
            h = dec(h, time_feat)
        return self.head(h)


def forward_mtflow(
    model: FlowUNet, image: torch.Tensor, state: torch.Tensor, t: float
) -> torch.Tensor:
    """Predict the (H, W) vector field for one image/state pair at flow time t."""
    if image.shape != state.shape:
        raise ValueError(f"image shape {tuple(image.shape)} != state shape {tuple(state.shape)}")
    if not (0.0 <= float(t) <= 1.0):
        raise ValueError(f"flow time must be in [0, 1], got {t}")
    x = torch.stack([image, state])[None, :, :, :]
    t_vec = torch.as_tensor([float(t)], dtype=image.dtype)
    return model(x, t_vec)[0, 0]


def forward_baseline(model: FlowUNet, image: torch.Tensor) -> torch.Tensor:
    """Single-pass probability map from the baseline (sigmoid over the raw head)."""
    if model.time_conditioned:
        raise ValueError("baseline forward requires a model built with time_conditioned=False")
    return torch.sigmoid(model(image[None, None, :, :])[0, 0])


def build_model(
    config: ModelConfig,
    seed: int,
    time_conditioned: bool = True,
    dtype: torch.dtype = torch.float32,
) -> FlowUNet:
    """Construct a network and initialize it deterministically from `seed`.

    Convolution and linear kernels get Kaiming fan-in scaling (std sqrt(2/fan_in)),
    biases are zero, normalization scales/shifts are one/zero. Draws happen in
    float64 in sorted parameter order, so a seed pins the weights bit-exactly
    for a given dtype.
    """
    model = FlowUNet(config, time_conditioned=time_conditioned)
    gen = torch.Generator().manual_seed(seed & 0x7FFFFFFFFFFFFFFF)
    with torch.no_grad():
        for name, param in sorted(model.named_parameters()):
            if param.ndim >= 2:
                fan_in = param.shape[1] * (param.shape[2] * param.shape[3] if param.ndim == 4 else 1)
                std = math.sqrt(2.0 / fan_in)
                draw = torch.empty(param.shape, dtype=torch.float64).normal_(0.0, std, generator=gen)
                param.copy_(draw.to(param.dtype))
            elif "norm" in name and name.endswith("weight"):
                param.fill_(1.0)
            else:
                param.zero_()
    return model.to(dtype)


def parameter_count(config: ModelConfig, time_conditioned: bool = True) -> int:
    """Closed-form parameter tally; must agree with the built module exactly."""

    def block(in_ch: int, out_ch: int) -> int:
        n = 9 * in_ch * out_ch + out_ch  # conv1
        n += 2 * out_ch  # norm1
        n += 9 * out_ch * out_ch + out_ch  # conv2
        n += 2 * out_ch  # norm2
        if time_conditioned:
            n += config.mlp_hidden_dim * out_ch + out_ch  # time projection
        return n

    base, depth = config.base_filters, config.depth
    total = 0
    if time_conditioned:
        e, m = config.time_embed_dim, config.mlp_hidden_dim
        total += e * m + m + m * m + m
    ins = [config.in_channels] + [base * 2**i for i in range(depth - 1)]
    for i in range(depth):
        total += block(ins[i], base * 2**i)
    total += block(base * 2 ** (depth - 1), base * 2**depth)
    for i in reversed(range(depth)):
        hi, lo = base * 2 ** (i + 1), base * 2**i
        total += 9 * hi * lo + lo  # up conv
        total += block(hi, lo)
    total += config.base_filters * config.out_channels + config.out_channels  # head
    return total
