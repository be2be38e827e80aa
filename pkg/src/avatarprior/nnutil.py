"""Seeded, platform-stable initialization and seed derivation helpers."""

from __future__ import annotations

import hashlib

import torch


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from a tuple of ints/strings (independent of PYTHONHASHSEED)."""
    digest = hashlib.sha256(repr(tuple(parts)).encode()).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFFFFFFFFFFFFFF


def seeded_init_(module: torch.nn.Module, seed: int) -> torch.nn.Module:
    """Re-initialize all parameters of ``module`` from one seeded generator.

    Weights get fan-in scaled Gaussians, biases zeros.  Parameters are visited
    in named order, so the result is reproducible for a fixed architecture.
    """
    gen = torch.Generator().manual_seed(derive_seed(seed) % (2**63))
    with torch.no_grad():
        for name, param in sorted(module.named_parameters(), key=lambda kv: kv[0]):
            if name.endswith("bias"):
                param.zero_()
            else:
                fan_in = param.shape[1] * param[0, 0].numel() if param.dim() > 1 else param.numel()
                std = (1.0 / max(fan_in, 1)) ** 0.5
                values = torch.randn(param.shape, generator=gen, dtype=torch.float64)
                param.copy_((values * std).to(param.dtype))
    return module


def zero_weights_(module: torch.nn.Module) -> torch.nn.Module:
    """Zero every weight matrix (biases untouched); used by linear-identity tests."""
    with torch.no_grad():
        for name, param in module.named_parameters():
            if not name.endswith("bias"):
                param.zero_()
    return module
