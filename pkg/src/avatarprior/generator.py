"""Miniature pose-conditionable tri-plane generator.

A latent code is mapped to three axis-aligned feature planes; 3D points are
featurized by summed bilinear plane lookups and decoded to density and color.
The network is intentionally small (a mapping MLP, a linear plane head, and a
short upsampling conv ladder) so that it trains from scratch on a single
identity and stays cheap enough for exhaustive gradient checking.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError, ShapeError, ValidationError


@dataclass(frozen=True)
class GeneratorConfig:
    latent_dim: int = 64
    latent_layout: str = "flat"  # "flat" or "per_layer"
    num_style_layers: int = 1    # only used by the per_layer layout
    plane_channels: int = 16
    plane_resolution: int = 32
    base_resolution: int = 8
    hidden_dim: int = 64
    decoder_hidden: int = 32
    extent: float = 1.0
    pose_conditioned: bool = False
    view_dependent: bool = False
    density_bias: float = -2.0
    use_upsampler: bool = False
    upsampler_hidden: int = 8

    def __post_init__(self):
        if self.latent_layout not in ("flat", "per_layer"):
            raise ConfigurationError(f"unknown latent layout {self.latent_layout!r}")
        if self.latent_layout == "per_layer" and self.latent_dim % self.num_style_layers != 0:
            raise ConfigurationError(
                f"latent_dim {self.latent_dim} is not divisible by "
                f"num_style_layers {self.num_style_layers}"
            )
        if self.extent <= 0:
            raise ConfigurationError("extent must be positive")

    @property
    def num_stages(self) -> int:
        stages = 0
        r = self.base_resolution
        while r < self.plane_resolution:
            r *= 2
            stages += 1
        if r != self.plane_resolution or self.plane_resolution % self.base_resolution:
            raise ConfigurationError(
                f"plane_resolution {self.plane_resolution} must be base_resolution "
                f"{self.base_resolution} times a power of two"
            )
        return stages


@dataclass(frozen=True)
class TriPlane:
    """Three feature planes of shape (3, C, R, R) spanning a cube of half-width ``extent``."""

    planes: torch.Tensor
    extent: float

    def __post_init__(self):
        if self.planes.ndim != 4 or self.planes.shape[0] != 3 or self.planes.shape[-1] != self.planes.shape[-2]:
            raise ShapeError(f"planes must have shape (3, C, R, R), got {tuple(self.planes.shape)}")
        if self.extent <= 0:
            raise ValidationError("extent must be positive")


def _as_flat_latent(w, latent_dim: int) -> torch.Tensor:
    if not torch.is_tensor(w):
        raise ShapeError("latent code must be a torch tensor")
    flat = w.reshape(-1)
    if flat.shape[0] != latent_dim:
        raise ShapeError(f"latent code has {flat.shape[0]} values, expected {latent_dim}")
    return flat


class TriPlaneGenerator(nn.Module):
    """Latent (+ optional flattened camera) -> tri-plane -> density/color decoder."""

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        config.num_stages  # validates the resolution ladder early
        self.config = config
        in_dim = config.latent_dim + (25 if config.pose_conditioned else 0)
        cp = 3 * config.plane_channels
        self.mapping = nn.Sequential(
            nn.Linear(in_dim, config.hidden_dim),
            nn.GELU(),
            nn.Linear(config.hidden_dim, config.hidden_dim),
            nn.GELU(),
        )
        self.plane_head = nn.Linear(
            config.hidden_dim, cp * config.base_resolution * config.base_resolution
        )
        self.plane_convs = nn.ModuleList(
            nn.Conv2d(cp, cp, kernel_size=3, padding=1) for _ in range(config.num_stages)
        )
        dec_in = config.plane_channels + (3 if config.view_dependent else 0)
        self.decoder = nn.Sequential(
            nn.Linear(dec_in, config.decoder_hidden),
            nn.GELU(),
            nn.Linear(config.decoder_hidden, config.decoder_hidden),
            nn.GELU(),
            nn.Linear(config.decoder_hidden, 4),
        )
        if config.use_upsampler:
            self.upsampler = nn.Sequential(
                nn.Conv2d(3, config.upsampler_hidden, kernel_size=3, padding=1),
                nn.GELU(),
                nn.Conv2d(config.upsampler_hidden, 3, kernel_size=3, padding=1),
            )
        else:
            self.upsampler = None

    @property
    def dtype(self):
        return self.plane_head.weight.dtype

    def synthesize_planes(self, w, cond=None) -> TriPlane:
        """Deterministically map a latent code (and camera vector if conditioned) to planes."""
        cfg = self.config
        flat = _as_flat_latent(w, cfg.latent_dim).to(self.dtype)
        if cfg.pose_conditioned:
            if cond is None:
                raise ConfigurationError("generator is pose conditioned but no camera vector given")
            cond_t = torch.as_tensor(cond, dtype=self.dtype).reshape(-1)
            if cond_t.shape[0] != 25:
                raise ShapeError(f"camera conditioning vector must have 25 values, got {cond_t.shape[0]}")
            flat = torch.cat([flat, cond_t])
        elif cond is not None:
            raise ConfigurationError("camera conditioning vector given but pose conditioning is off")
        h = self.mapping(flat)
        cp = 3 * cfg.plane_channels
        p = self.plane_head(h).reshape(1, cp, cfg.base_resolution, cfg.base_resolution)
        for i, conv in enumerate(self.plane_convs):
            p = F.interpolate(p, scale_factor=2, mode="bilinear", align_corners=False)
            p = conv(p)
            if i + 1 < len(self.plane_convs):
                p = F.gelu(p)
        planes = p.reshape(3, cfg.plane_channels, cfg.plane_resolution, cfg.plane_resolution)
        return TriPlane(planes=planes, extent=cfg.extent)

    def decode(self, features, view_dir=None):
        """Features (N, C) -> (sigma (N,) >= 0, color (N, 3) in [0, 1])."""
        cfg = self.config
        if features.ndim != 2 or features.shape[1] != cfg.plane_channels:
            raise ShapeError(
                f"features must be (N, {cfg.plane_channels}), got {tuple(features.shape)}"
            )
        if cfg.view_dependent:
            if view_dir is None:
                raise ConfigurationError("decoder is view dependent but no view directions given")
            features = torch.cat([features, view_dir.to(features.dtype)], dim=1)
        elif view_dir is not None:
            raise ConfigurationError("view directions given but the decoder is view independent")
        raw = self.decoder(features)
        sigma = F.softplus(raw[:, 0] + cfg.density_bias)
        color = torch.sigmoid(raw[:, 1:4])
        return sigma, color

    def upsample(self, raw, height: int, width: int):
        """Bilinear resize of an (h, w, 3) image, plus a learned residual when configured."""
        h, w = raw.shape[0], raw.shape[1]
        if height == h and width == w and self.upsampler is None:
            return raw
        if height % h or width % w:
            raise ConfigurationError(
                f"output {height}x{width} must be an integer multiple of raw {h}x{w}"
            )
        img = raw.permute(2, 0, 1).unsqueeze(0)
        img = F.interpolate(img, size=(height, width), mode="bilinear", align_corners=False)
        if self.upsampler is not None:
            img = img + self.upsampler(img)
        return img.squeeze(0).permute(1, 2, 0).clamp(0.0, 1.0)


def sample_triplane(planes: TriPlane, points) -> torch.Tensor:
    """Sum of bilinear lookups of each point on the XY, XZ and YZ planes.

    Texel (row, col) of a plane holds the feature at normalized coordinates
    ``col -> first axis``, ``row -> second axis``, with texel centers spanning
    [-extent, extent] inclusive (align-corners grid).  Points outside the cube
    clamp to the border.  Differentiable in both planes and points.
    """
    if not torch.is_tensor(points):
        points = torch.as_tensor(points, dtype=planes.planes.dtype)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ShapeError(f"points must be (N, 3), got {tuple(points.shape)}")
    p = planes.planes
    res = p.shape[-1]
    pts = points.to(p.dtype) / planes.extent  # normalized to [-1, 1] inside the cube
    axes = ((0, 1), (0, 2), (1, 2))  # XY, XZ, YZ
    out = None
    for plane_idx, (au, av) in enumerate(axes):
        u = ((pts[:, au] * 0.5) + 0.5) * (res - 1)
        v = ((pts[:, av] * 0.5) + 0.5) * (res - 1)
        u = u.clamp(0.0, res - 1.0)
        v = v.clamp(0.0, res - 1.0)
        u0 = u.floor().clamp(max=res - 2)
        v0 = v.floor().clamp(max=res - 2)
        fu = (u - u0).unsqueeze(0)
        fv = (v - v0).unsqueeze(0)
        iu0, iv0 = u0.long(), v0.long()
        iu1, iv1 = iu0 + 1, iv0 + 1
        grid = p[plane_idx]  # (C, R, R) indexed [channel, row=v, col=u]
        f00 = grid[:, iv0, iu0]
        f01 = grid[:, iv0, iu1]
        f10 = grid[:, iv1, iu0]
        f11 = grid[:, iv1, iu1]
        feat = (
            f00 * (1 - fu) * (1 - fv)
            + f01 * fu * (1 - fv)
            + f10 * (1 - fu) * fv
            + f11 * fu * fv
        )
        out = feat if out is None else out + feat
    return out.transpose(0, 1)
