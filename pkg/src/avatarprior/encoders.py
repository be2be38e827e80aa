"""Encoders mapping driving signals (image / expression / audio) to basis coefficients.

Each branch is a small independent network ending in a linear head of size k,
so an encoder may carry any subset of branches; training one modality builds
only the branch it needs.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .camera import CameraPose
from .errors import ConfigurationError, ShapeError
from .generator import TriPlaneGenerator
from .renderer import RenderConfig, RenderOutput, render
from .subspace import PersonalBasis

EXPRESSION_DIM = 76
AUDIO_WINDOW_STEPS = 16
AUDIO_FEATURE_DIM = 29

MODALITIES = ("image", "expression", "audio")


def _as_float_tensor(value, name):
    t = torch.as_tensor(value)
    if not torch.is_floating_point(t):
        raise ShapeError(f"{name} must be a float tensor")
    return t


@dataclass(frozen=True)
class ImageSignal:
    """RGB frame (H, W, 3) with values in [0, 1]."""

    image: torch.Tensor
    modality = "image"

    def __post_init__(self):
        img = _as_float_tensor(self.image, "image")
        if img.ndim != 3 or img.shape[2] != 3:
            raise ShapeError(f"image must be (H, W, 3), got {tuple(img.shape)}")
        object.__setattr__(self, "image", img)


@dataclass(frozen=True)
class ExpressionSignal:
    """Morphable-model expression coefficients, fixed 76-vector."""

    coeffs: torch.Tensor
    modality = "expression"

    def __post_init__(self):
        c = _as_float_tensor(self.coeffs, "expression coefficients").reshape(-1)
        if c.shape[0] != EXPRESSION_DIM:
            raise ShapeError(f"expression vector must have {EXPRESSION_DIM} values, got {c.shape[0]}")
        object.__setattr__(self, "coeffs", c)


@dataclass(frozen=True)
class AudioSignal:
    """Window of 16 consecutive 29-dimensional audio feature clips."""

    window: torch.Tensor
    modality = "audio"

    def __post_init__(self):
        w = _as_float_tensor(self.window, "audio window")
        if w.shape != (AUDIO_WINDOW_STEPS, AUDIO_FEATURE_DIM):
            raise ShapeError(
                f"audio window must be ({AUDIO_WINDOW_STEPS}, {AUDIO_FEATURE_DIM}), "
                f"got {tuple(w.shape)}"
            )
        object.__setattr__(self, "window", w)


DrivingSignal = ImageSignal | ExpressionSignal | AudioSignal


@dataclass(frozen=True)
class EncoderConfig:
    k: int = 8
    branches: tuple[str, ...] = ("image",)
    image_channels: tuple[int, ...] = (16, 32, 64, 64)
    expr_hidden: int = 128
    audio_channels: tuple[int, ...] = (32, 64)

    def __post_init__(self):
        unknown = set(self.branches) - set(MODALITIES)
        if unknown:
            raise ConfigurationError(f"unknown encoder branches {sorted(unknown)}")
        if not self.branches:
            raise ConfigurationError("encoder needs at least one branch")


class DrivingEncoder(nn.Module):
    """Regresses k subspace coefficients from whichever driving signal it was built for."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.image_branch = None
        self.expression_branch = None
        self.audio_branch = None
        if "image" in config.branches:
            # Strided conv stack to a small grid, kept spatial: blob positions are
            # what the coefficients must carry, so the head flattens a 4x4 map
            # instead of pooling it away.
            layers, prev = [], 3
            for width in config.image_channels:
                layers += [nn.Conv2d(prev, width, kernel_size=3, stride=2, padding=1), nn.GELU()]
                prev = width
            layers += [nn.AdaptiveAvgPool2d(4), nn.Flatten(), nn.Linear(prev * 16, config.k)]
            self.image_branch = nn.Sequential(*layers)
        if "expression" in config.branches:
            self.expression_branch = nn.Sequential(
                nn.Linear(EXPRESSION_DIM, config.expr_hidden),
                nn.GELU(),
                nn.Linear(config.expr_hidden, config.expr_hidden),
                nn.GELU(),
                nn.Linear(config.expr_hidden, config.k),
            )
        if "audio" in config.branches:
            convs, prev = [], AUDIO_FEATURE_DIM
            for width in config.audio_channels:
                convs += [nn.Conv1d(prev, width, kernel_size=3, padding=1), nn.GELU()]
                prev = width
            convs += [nn.AdaptiveAvgPool1d(1), nn.Flatten(), nn.Linear(prev, config.k)]
            self.audio_branch = nn.Sequential(*convs)

    @property
    def dtype(self):
        return next(self.parameters()).dtype

    def encode(self, signal: DrivingSignal) -> torch.Tensor:
        """Deterministic coefficients (k,), differentiable in parameters and signal."""
        if isinstance(signal, ImageSignal):
            if self.image_branch is None:
                raise ConfigurationError("encoder has no image branch")
            x = signal.image.to(self.dtype).permute(2, 0, 1).unsqueeze(0)
            return self.image_branch(x).squeeze(0)
        if isinstance(signal, ExpressionSignal):
            if self.expression_branch is None:
                raise ConfigurationError("encoder has no expression branch")
            return self.expression_branch(signal.coeffs.to(self.dtype))
        if isinstance(signal, AudioSignal):
            if self.audio_branch is None:
                raise ConfigurationError("encoder has no audio branch")
            x = signal.window.to(self.dtype).T.unsqueeze(0)  # (1, 29 channels, 16 steps)
            return self.audio_branch(x).squeeze(0)
        raise ConfigurationError(f"unsupported driving signal {type(signal).__name__}")


def signal_from_sample(sample, modality: str, dtype=torch.float32) -> DrivingSignal:
    """Build the driving signal of the requested modality from a dataset frame."""
    if modality == "image":
        return ImageSignal(torch.as_tensor(sample.image, dtype=dtype))
    if modality == "expression":
        if sample.expression is None:
            raise ConfigurationError(f"frame {sample.frame_id} has no expression data")
        return ExpressionSignal(torch.as_tensor(sample.expression, dtype=dtype))
    if modality == "audio":
        if sample.audio_window is None:
            raise ConfigurationError(f"frame {sample.frame_id} has no audio features")
        return AudioSignal(torch.as_tensor(sample.audio_window, dtype=dtype))
    raise ConfigurationError(f"unknown modality {modality!r}")


def reenact(encoder: DrivingEncoder, basis: PersonalBasis, generator: TriPlaneGenerator,
            signal: DrivingSignal, pose: CameraPose, config: RenderConfig,
            seed: int = 0) -> RenderOutput:
    """Render the avatar driven by ``signal`` under an arbitrary camera pose.

    Image-driven reenactment of a frame under its own camera is exactly the
    reconstruction path; expression and audio signals reuse the same pipeline.
    """
    alpha = encoder.encode(signal)
    w = basis.compose(alpha)
    return render(generator, w, pose, config, seed=seed)
