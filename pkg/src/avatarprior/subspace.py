"""Learnable personalized basis spanning a low-dimensional latent subspace.

The avatar's latent codes are constrained to ``w = alpha @ B`` for a trainable
basis matrix ``B`` (k x d) and per-frame coefficients ``alpha`` (k,).  A soft
penalty drives the rows toward an orthonormal frame; a hard QR retraction is
available as an alternative enforcement mode.
"""

from __future__ import annotations

import torch
from torch import nn

from .errors import RankDeficiencyError, ShapeError

__all__ = ["PersonalBasis", "compose_latent", "project_to_subspace"]


class PersonalBasis(nn.Module):
    """k trainable basis vectors in the d-dimensional generator latent space."""

    def __init__(self, k: int, d: int, seed: int = 0):
        super().__init__()
        if k < 1 or d < 1:
            raise ShapeError(f"need k >= 1 and d >= 1, got k={k}, d={d}")
        gen = torch.Generator().manual_seed(seed)
        rows = torch.randn(k, d, generator=gen, dtype=torch.float64)
        if k <= d:
            rows = _orthonormalized(rows)
        self.vectors = nn.Parameter(rows.to(torch.float32))

    @property
    def k(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    def compose(self, alpha: torch.Tensor) -> torch.Tensor:
        """Linear combination w = sum_i alpha_i b_i; accepts (k,) or batched (n, k)."""
        alpha = torch.as_tensor(alpha, dtype=self.vectors.dtype)
        if alpha.shape[-1] != self.k:
            raise ShapeError(f"coefficient length {alpha.shape[-1]} does not match k={self.k}")
        return alpha @ self.vectors

    def gram(self) -> torch.Tensor:
        """B @ B.T, the k x k matrix of row inner products."""
        return self.vectors @ self.vectors.T

    def ortho_penalty(self) -> torch.Tensor:
        """Off-diagonal Gram suppression plus unit-row-norm anchoring; zero iff rows orthonormal."""
        g = self.gram()
        diag = torch.diagonal(g)
        off = g - torch.diag_embed(diag)
        return (off**2).sum() + ((diag - 1.0) ** 2).sum()

    def project(self, w: torch.Tensor) -> torch.Tensor:
        """Least-squares coefficients alpha minimizing ||alpha @ B - w||_2."""
        w = torch.as_tensor(w, dtype=self.vectors.dtype).reshape(-1)
        if w.shape[0] != self.d:
            raise ShapeError(f"latent length {w.shape[0]} does not match d={self.d}")
        mat = self.vectors.detach().to(torch.float64)
        svals = torch.linalg.svdvals(mat)
        tol = max(self.k, self.d) * torch.finfo(torch.float64).eps * float(svals[0])
        if float(svals[-1]) <= tol:
            raise RankDeficiencyError("basis rows are numerically rank deficient", tolerance=tol)
        alpha = torch.linalg.lstsq(mat.T, w.detach().to(torch.float64)).solution
        return alpha.to(self.vectors.dtype)

    @torch.no_grad()
    def orthonormalize_(self) -> None:
        """Hard QR retraction of the rows onto the orthonormal frame manifold."""
        self.vectors.copy_(_orthonormalized(self.vectors.to(torch.float64)).to(self.vectors.dtype))

    def offdiag_max(self) -> float:
        """Largest absolute off-diagonal Gram entry (orthogonality diagnostic)."""
        g = self.gram().detach()
        off = g - torch.diag_embed(torch.diagonal(g))
        return float(off.abs().max()) if self.k > 1 else 0.0


def _orthonormalized(rows: torch.Tensor) -> torch.Tensor:
    q, r = torch.linalg.qr(rows.T)
    # Fix the sign ambiguity so the result is deterministic.
    signs = torch.sign(torch.diagonal(r))
    signs = torch.where(signs == 0, torch.ones_like(signs), signs)
    return (q * signs).T


def compose_latent(alpha, basis: PersonalBasis) -> torch.Tensor:
    return basis.compose(alpha)


def project_to_subspace(w, basis: PersonalBasis) -> torch.Tensor:
    return basis.project(w)
