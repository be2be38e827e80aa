import numpy as np
import pytest
import torch

from avatarprior.errors import RankDeficiencyError, ShapeError
from avatarprior.subspace import PersonalBasis, compose_latent, project_to_subspace


def double_basis(k, d, seed=0):
    basis = PersonalBasis(k, d, seed=seed).double()
    basis.orthonormalize_()  # exact float64 orthonormal start
    return basis


class TestComposeLatent:
    def test_one_hot_selects_basis_row(self):
        basis = double_basis(4, 10)
        for i in range(4):
            alpha = torch.zeros(4, dtype=torch.float64)
            alpha[i] = 1.0
            assert torch.equal(basis.compose(alpha), basis.vectors[i])

    def test_zero_coefficients_give_zero(self):
        basis = double_basis(3, 8)
        assert torch.equal(basis.compose(torch.zeros(3, dtype=torch.float64)),
                           torch.zeros(8, dtype=torch.float64))

    def test_additivity(self, rng):
        basis = double_basis(5, 12, seed=1)
        a1 = torch.from_numpy(rng.normal(size=5))
        a2 = torch.from_numpy(rng.normal(size=5))
        lhs = basis.compose(a1 + a2)
        rhs = basis.compose(a1) + basis.compose(a2)
        assert torch.allclose(lhs, rhs, atol=1e-12)

    def test_scalar_homogeneity_machine_precision(self, rng):
        basis = double_basis(5, 12, seed=2)
        alpha = torch.from_numpy(rng.normal(size=5))
        for c in (-2.0, 0.5, 8.0):
            assert torch.equal(basis.compose(c * alpha), c * basis.compose(alpha))

    def test_length_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            double_basis(4, 10).compose(torch.zeros(5, dtype=torch.float64))

    def test_free_function_matches_method(self, rng):
        basis = double_basis(3, 6)
        alpha = torch.from_numpy(rng.normal(size=3))
        assert torch.equal(compose_latent(alpha, basis), basis.compose(alpha))


class TestGram:
    def test_orthonormal_rows_give_identity(self):
        basis = double_basis(6, 16)
        assert torch.allclose(basis.gram(), torch.eye(6, dtype=torch.float64), atol=1e-10)

    def test_hand_computed_case(self):
        basis = double_basis(2, 2)
        with torch.no_grad():
            basis.vectors.copy_(torch.tensor([[1.0, 0.0], [1.0, 0.0]], dtype=torch.float64))
        expected = torch.tensor([[1.0, 1.0], [1.0, 1.0]], dtype=torch.float64)
        assert torch.equal(basis.gram(), expected)

    def test_symmetric_for_random_matrix(self, rng):
        basis = double_basis(5, 9, seed=3)
        with torch.no_grad():
            basis.vectors.copy_(torch.from_numpy(rng.normal(size=(5, 9))))
        g = basis.gram()
        assert torch.allclose(g, g.T, atol=1e-12)


class TestOrthoPenalty:
    def test_zero_for_orthonormal_rows(self):
        assert float(double_basis(6, 16).ortho_penalty()) < 1e-10

    def test_hand_computed_case(self):
        basis = double_basis(2, 2)
        with torch.no_grad():
            basis.vectors.copy_(torch.tensor([[1.0, 0.0], [1.0, 0.0]], dtype=torch.float64))
        assert float(basis.ortho_penalty()) == pytest.approx(2.0, abs=1e-12)

    def test_gradient_matches_finite_differences(self, rng):
        basis = double_basis(3, 5, seed=4)
        with torch.no_grad():
            basis.vectors.copy_(torch.from_numpy(rng.normal(size=(3, 5))))
        basis.ortho_penalty().backward()
        analytic = basis.vectors.grad.clone().reshape(-1)
        eps = 1e-6
        flat = basis.vectors.detach().reshape(-1)
        with torch.no_grad():
            for i in range(flat.numel()):
                vp, vm = flat.clone(), flat.clone()
                vp[i] += eps
                vm[i] -= eps
                bp = double_basis(3, 5)
                bp.vectors.copy_(vp.reshape(3, 5))
                bm = double_basis(3, 5)
                bm.vectors.copy_(vm.reshape(3, 5))
                fd = (bp.ortho_penalty() - bm.ortho_penalty()) / (2 * eps)
                rel = abs(float(fd) - float(analytic[i])) / max(abs(float(fd)), 1e-9)
                assert rel < 1e-6

    def test_penalty_zero_iff_gram_identity(self, rng):
        # Forward direction: tiny penalty forces Gram close to the identity.
        basis = double_basis(4, 8, seed=5)
        assert float(basis.ortho_penalty()) < 1e-10
        assert torch.allclose(basis.gram(), torch.eye(4, dtype=torch.float64), atol=1e-6)
        # Reverse: perturbing the rows moves both together.
        with torch.no_grad():
            basis.vectors += 0.1 * torch.from_numpy(rng.normal(size=(4, 8)))
        g = basis.gram()
        deviation = float((g - torch.eye(4, dtype=torch.float64)).abs().max())
        assert deviation > 1e-3
        assert float(basis.ortho_penalty()) > 1e-6


class TestProject:
    def test_round_trip_matches_normal_equations_oracle(self, rng):
        basis = double_basis(5, 20, seed=6)
        alpha = torch.from_numpy(rng.normal(size=5))
        w = basis.compose(alpha).detach()
        recovered = basis.project(w)
        assert torch.allclose(recovered, alpha, atol=1e-8)
        # Independent oracle: solve the normal equations directly in numpy.
        B = basis.vectors.detach().numpy()
        oracle = np.linalg.solve(B @ B.T, B @ w.numpy())
        np.testing.assert_allclose(recovered.numpy(), oracle, atol=1e-8)

    def test_orthogonal_latent_projects_to_zero(self):
        basis = double_basis(3, 8, seed=7)
        w = torch.randn(8, generator=torch.Generator().manual_seed(11), dtype=torch.float64)
        w = w - basis.vectors.detach().T @ basis.project(w)
        assert torch.allclose(basis.project(w), torch.zeros(3, dtype=torch.float64), atol=1e-8)

    def test_identity_basis_projects_to_itself(self):
        basis = double_basis(4, 4)
        with torch.no_grad():
            basis.vectors.copy_(torch.eye(4, dtype=torch.float64))
        w = torch.tensor([0.3, -1.2, 4.0, 0.0], dtype=torch.float64)
        assert torch.allclose(basis.project(w), w, atol=1e-12)

    def test_residual_orthogonal_to_rows(self, rng):
        basis = double_basis(4, 12, seed=8)
        w = torch.from_numpy(rng.normal(size=12))
        residual = w - basis.compose(basis.project(w))
        dots = basis.vectors.detach() @ residual
        assert float(dots.abs().max()) < 1e-8

    def test_rank_deficient_basis_rejected(self):
        basis = double_basis(2, 4)
        with torch.no_grad():
            basis.vectors.copy_(torch.tensor([[1.0, 0, 0, 0], [1.0, 0, 0, 0]],
                                             dtype=torch.float64))
        with pytest.raises(RankDeficiencyError) as err:
            basis.project(torch.zeros(4, dtype=torch.float64))
        assert err.value.tolerance > 0

    def test_isometry_for_orthonormal_basis(self, rng):
        basis = double_basis(6, 24, seed=9)
        alpha = torch.from_numpy(rng.normal(size=6))
        assert float(basis.compose(alpha).norm()) == pytest.approx(float(alpha.norm()), abs=1e-8)

    def test_free_function_matches_method(self, rng):
        basis = double_basis(3, 7, seed=10)
        w = torch.from_numpy(rng.normal(size=7))
        # Two separate LAPACK solves may differ in the last ulp.
        assert torch.allclose(project_to_subspace(w, basis), basis.project(w), atol=1e-12)


class TestRetraction:
    def test_qr_retraction_restores_orthonormality(self, rng):
        basis = double_basis(4, 10, seed=12)
        with torch.no_grad():
            basis.vectors += torch.from_numpy(rng.normal(size=(4, 10))) * 0.3
        assert float(basis.ortho_penalty()) > 1e-3
        basis.orthonormalize_()
        assert float(basis.ortho_penalty()) < 1e-12

    def test_offdiag_max_diagnostic(self):
        basis = double_basis(2, 2)
        with torch.no_grad():
            basis.vectors.copy_(torch.tensor([[1.0, 0.0], [0.6, 0.8]], dtype=torch.float64))
        assert basis.offdiag_max() == pytest.approx(0.6, abs=1e-12)


class TestValidation:
    def test_bad_sizes_rejected(self):
        with pytest.raises(ShapeError):
            PersonalBasis(0, 4)
        with pytest.raises(ShapeError):
            PersonalBasis(4, 0)

    def test_initialization_is_orthonormal_and_seeded(self):
        a = PersonalBasis(4, 16, seed=3)
        b = PersonalBasis(4, 16, seed=3)
        c = PersonalBasis(4, 16, seed=4)
        assert torch.equal(a.vectors, b.vectors)
        assert not torch.equal(a.vectors, c.vectors)
        gram = a.double().gram()
        assert torch.allclose(gram, torch.eye(4, dtype=torch.float64), atol=1e-5)
