import numpy as np
import pytest
import torch

from avatarprior.camera import Intrinsics, orbit_pose
from avatarprior.generator import GeneratorConfig, TriPlaneGenerator
from avatarprior.nnutil import seeded_init_

TINY = GeneratorConfig(
    latent_dim=16, plane_channels=4, plane_resolution=8, base_resolution=4,
    hidden_dim=16, decoder_hidden=8,
)


def tiny_generator(seed=0, dtype=torch.float64, config=TINY):
    gen = TriPlaneGenerator(config)
    seeded_init_(gen, seed)
    return gen.to(dtype)


def default_pose(azimuth=0.3, elevation=0.1, radius=2.4, focal=1.8):
    return orbit_pose(Intrinsics(fx=focal, fy=focal), azimuth, elevation, radius)


@pytest.fixture
def rng():
    return np.random.default_rng(123)
