"""Personalized latent-subspace priors for a miniature 3D-aware face generator."""

import os as _os

import torch as _torch

# Multi-threaded CPU reductions are not bitwise run-to-run deterministic, which
# would break bit-exact checkpoint resume and render reproducibility.  Pin to a
# single thread unless the user explicitly opts out.
_threads = int(_os.environ.get("AVATARPRIOR_THREADS", "1"))
_torch.set_num_threads(_threads)

__version__ = "0.1.0"

from .camera import CameraPose, Extrinsics, Intrinsics, RayBundle, flatten_camera, generate_rays, look_at
from .encoders import AudioSignal, DrivingEncoder, EncoderConfig, ExpressionSignal, ImageSignal, reenact
from .generator import GeneratorConfig, TriPlane, TriPlaneGenerator, sample_triplane
from .metrics import EvalReport, evaluate, psnr, ssim
from .renderer import RenderConfig, RenderOutput, composite, render, sample_along_rays
from .subspace import PersonalBasis, compose_latent, project_to_subspace
from .training import TrainConfig, TrainState, build_state, load_checkpoint, save_checkpoint, train, train_step

__all__ = [
    "AudioSignal",
    "CameraPose",
    "DrivingEncoder",
    "EncoderConfig",
    "EvalReport",
    "ExpressionSignal",
    "Extrinsics",
    "GeneratorConfig",
    "ImageSignal",
    "Intrinsics",
    "PersonalBasis",
    "RayBundle",
    "RenderConfig",
    "RenderOutput",
    "TrainConfig",
    "TrainState",
    "TriPlane",
    "TriPlaneGenerator",
    "build_state",
    "compose_latent",
    "composite",
    "evaluate",
    "flatten_camera",
    "generate_rays",
    "load_checkpoint",
    "look_at",
    "project_to_subspace",
    "psnr",
    "reenact",
    "render",
    "sample_along_rays",
    "sample_triplane",
    "save_checkpoint",
    "ssim",
    "train",
    "train_step",
]
