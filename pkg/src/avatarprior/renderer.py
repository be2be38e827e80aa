"""Volume rendering of the tri-plane field along camera rays.

Compositing uses the standard emission-absorption quadrature: with per-sample
spacing ``delta_i = depth_{i+1} - depth_i`` (the last interval runs to ``far``),
``alpha_i = 1 - exp(-sigma_i * delta_i)`` and exclusive transmittance
``T_i = prod_{j<i} (1 - alpha_j)``.  The residual transmittance after the last
sample is composited against a constant background, so per-ray weights plus the
residual always sum to one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch

from .camera import CameraPose, RayBundle, flatten_camera, generate_rays
from .errors import ConfigurationError, ValidationError
from .generator import TriPlaneGenerator, sample_triplane
from .nnutil import derive_seed

OPACITY_EPS = 1e-6

BACKGROUNDS = {"black": 0.0, "white": 1.0}


@dataclass(frozen=True)
class RenderConfig:
    n_samples: int = 24
    near: float = 1.2
    far: float = 4.0
    stratified: bool = False
    background: str = "black"
    raw_resolution: tuple[int, int] = (16, 16)
    output_resolution: tuple[int, int] = (64, 64)

    def __post_init__(self):
        if self.n_samples < 2:
            raise ConfigurationError("n_samples must be at least 2")
        if not (self.near < self.far and self.near >= 0):
            raise ConfigurationError(f"need 0 <= near < far, got {self.near}, {self.far}")
        if self.background not in BACKGROUNDS:
            raise ConfigurationError(f"background must be one of {sorted(BACKGROUNDS)}")
        rh, rw = self.raw_resolution
        oh, ow = self.output_resolution
        if rh > oh or rw > ow:
            raise ConfigurationError("raw resolution must not exceed output resolution")


@dataclass(frozen=True)
class RenderOutput:
    rgb: torch.Tensor      # (H, W, 3) in [0, 1]
    depth: torch.Tensor    # (H, W)
    opacity: torch.Tensor  # (H, W) in [0, 1]


class CompositeRows(NamedTuple):
    rgb: torch.Tensor
    depth: torch.Tensor
    opacity: torch.Tensor


def sample_along_rays(rays, config: RenderConfig, seed: int = 0,
                      dtype=torch.float32) -> torch.Tensor:
    """Per-ray sample depths (n_rays, n_samples), strictly increasing.

    ``rays`` may be a :class:`RayBundle` or a plain ray count.  Unstratified
    sampling returns the uniform bin centers; stratified sampling jitters each
    sample uniformly inside its own bin, reproducibly from seed.
    """
    n_rays = rays.shape[0] * rays.shape[1] if isinstance(rays, RayBundle) else int(rays)
    bins = torch.linspace(config.near, config.far, config.n_samples + 1, dtype=dtype)
    lower, width = bins[:-1], bins[1:] - bins[:-1]
    if config.stratified:
        gen = torch.Generator().manual_seed(derive_seed("stratified", seed))
        jitter = torch.rand((n_rays, config.n_samples), generator=gen, dtype=dtype)
    else:
        jitter = torch.full((n_rays, config.n_samples), 0.5, dtype=dtype)
    return lower + jitter * width


def compositing_weights(sigmas: torch.Tensor, depths: torch.Tensor, far: float):
    """Per-sample weights T_i * alpha_i and the residual transmittance after the last sample."""
    if torch.any(depths[:, 1:] <= depths[:, :-1]):
        raise ValidationError("sample depths must be strictly increasing along each ray")
    last = torch.clamp(far - depths[:, -1:], min=0.0)
    deltas = torch.cat([depths[:, 1:] - depths[:, :-1], last], dim=1)
    alphas = 1.0 - torch.exp(-sigmas * deltas)
    trans = torch.cumprod(1.0 - alphas + 0.0, dim=1)
    exclusive = torch.cat([torch.ones_like(trans[:, :1]), trans[:, :-1]], dim=1)
    weights = exclusive * alphas
    return weights, trans[:, -1]


def composite(sigmas: torch.Tensor, colors: torch.Tensor, depths: torch.Tensor,
              config: RenderConfig) -> CompositeRows:
    """Emission-absorption compositing of per-ray samples against the background."""
    weights, residual = compositing_weights(sigmas, depths, config.far)
    background = BACKGROUNDS[config.background]
    rgb = (weights.unsqueeze(-1) * colors).sum(dim=1) + residual.unsqueeze(-1) * background
    opacity = weights.sum(dim=1)
    depth = (weights * depths).sum(dim=1) / torch.clamp(opacity, min=OPACITY_EPS)
    return CompositeRows(rgb=rgb, depth=depth, opacity=opacity)


def _resize_channel(channel: torch.Tensor, height: int, width: int) -> torch.Tensor:
    img = channel.unsqueeze(0).unsqueeze(0)
    img = torch.nn.functional.interpolate(
        img, size=(height, width), mode="bilinear", align_corners=False
    )
    return img.squeeze(0).squeeze(0)


def render(generator: TriPlaneGenerator, w, pose: CameraPose, config: RenderConfig,
           seed: int = 0) -> RenderOutput:
    """Full differentiable pipeline: rays -> planes -> features -> compositing -> upsample."""
    dtype = generator.dtype
    rh, rw = config.raw_resolution
    rays = generate_rays(pose, rh, rw, config.near, config.far)
    origins = torch.as_tensor(rays.origins, dtype=dtype).reshape(-1, 3)
    dirs = torch.as_tensor(rays.directions, dtype=dtype).reshape(-1, 3)
    n_rays = origins.shape[0]

    depths = sample_along_rays(n_rays, config, seed=seed, dtype=dtype)
    points = origins.unsqueeze(1) + dirs.unsqueeze(1) * depths.unsqueeze(-1)

    cond = flatten_camera(pose) if generator.config.pose_conditioned else None
    planes = generator.synthesize_planes(w, cond)
    features = sample_triplane(planes, points.reshape(-1, 3))
    view_dir = (
        dirs.unsqueeze(1).expand(-1, config.n_samples, -1).reshape(-1, 3)
        if generator.config.view_dependent
        else None
    )
    sigma, color = generator.decode(features, view_dir)
    rows = composite(
        sigma.reshape(n_rays, config.n_samples),
        color.reshape(n_rays, config.n_samples, 3),
        depths,
        config,
    )

    raw_rgb = rows.rgb.reshape(rh, rw, 3)
    raw_depth = rows.depth.reshape(rh, rw)
    raw_opacity = rows.opacity.reshape(rh, rw)

    oh, ow = config.output_resolution
    rgb = generator.upsample(raw_rgb, oh, ow)
    if (oh, ow) == (rh, rw):
        depth, opacity = raw_depth, raw_opacity
    else:
        # Resized depth: empty rays carry no depth signal, fill with far and
        # clamp so interpolation cannot drag values outside [near, far].
        filled = torch.where(raw_opacity > OPACITY_EPS, raw_depth,
                             torch.full_like(raw_depth, config.far))
        depth = _resize_channel(filled, oh, ow).clamp(config.near, config.far)
        opacity = _resize_channel(raw_opacity, oh, ow).clamp(0.0, 1.0)
    return RenderOutput(rgb=rgb, depth=depth, opacity=opacity)


def rgb_to_uint8(rgb) -> np.ndarray:
    """Quantize [0,1] floats to 8-bit, rounding half up."""
    arr = np.asarray(rgb.detach().cpu().numpy() if torch.is_tensor(rgb) else rgb, dtype=np.float64)
    return np.clip(np.floor(arr * 255.0 + 0.5), 0, 255).astype(np.uint8)


def depth_to_uint16(depth, near: float, far: float) -> np.ndarray:
    """Quantize depth to 16-bit with linear [near, far] -> [0, 65535] scaling."""
    arr = np.asarray(depth.detach().cpu().numpy() if torch.is_tensor(depth) else depth, dtype=np.float64)
    scaled = (arr - near) / (far - near)
    return np.clip(np.floor(scaled * 65535.0 + 0.5), 0, 65535).astype(np.uint16)
