"""Tests for the subdomain eigen-analysis and the extrapolated basis."""

import numpy as np
import pytest

from fdrecon import (
    CovarianceEstimate,
    DegenerateCovarianceError,
    NotEstimableError,
    Subdomain,
    eigen_on_subdomain,
    extrapolate_basis,
)
from fdrecon.core import DomainGrid


def brownian_cov(grid, band=None):
    return CovarianceEstimate.from_function(
        grid, lambda u, v: np.minimum(u, v), band_halfwidth=band
    )


class TestSubdomain:
    def test_from_interval_indices(self):
        g = DomainGrid.regular((0, 1), 11)
        s = Subdomain.from_interval(g, 0.28, 0.74)
        assert s.grid_indices.tolist() == [3, 4, 5, 6, 7]
        assert s.intervals == ((0.28, 0.74),)

    def test_complement(self):
        g = DomainGrid.regular((0, 1), 11)
        s = Subdomain.from_interval(g, 0.0, 0.5)
        comp = s.complement(g)
        assert comp.grid_indices.tolist() == [6, 7, 8, 9, 10]

    def test_blocks_multi_interval(self):
        g = DomainGrid.regular((0, 1), 21)
        s = Subdomain.from_indices(g, [0, 1, 2, 3, 10, 11, 12])
        assert len(s.blocks()) == 2
        assert s.intervals[0] == pytest.approx((0.0, 0.15))
        assert s.intervals[1] == pytest.approx((0.5, 0.6))

    def test_trapezoid_weights_per_block(self):
        g = DomainGrid.regular((0, 1), 21)
        s = Subdomain.from_indices(g, [0, 1, 2, 10, 11, 12, 13])
        w = s.trapezoid_weights(g)
        # each block integrates its own length
        assert w[:3].sum() == pytest.approx(0.1)
        assert w[3:].sum() == pytest.approx(0.15)

    def test_contains(self):
        g = DomainGrid.regular((0, 1), 21)
        s = Subdomain.from_indices(g, [0, 1, 2, 10, 11])
        got = s.contains(np.array([0.05, 0.3, 0.52, 0.9]))
        assert got.tolist() == [True, False, True, False]


class TestEigenOnSubdomain:
    def test_rank_one_analytic(self):
        # gamma(u,v) = 2 sin(pi u) sin(pi v): single eigenpair with
        # eigenvalue 1 and eigenfunction sqrt(2) sin(pi u).
        grid = DomainGrid.regular((0, 1), 101)
        cov = CovarianceEstimate.from_function(
            grid, lambda u, v: 2.0 * np.sin(np.pi * u) * np.sin(np.pi * v)
        )
        sub = Subdomain.from_interval(grid, 0.0, 1.0)
        eig = eigen_on_subdomain(cov, sub, lambda_rel_floor=1e-6)
        assert eig.k_available == 1
        assert eig.eigenvalues[0] == pytest.approx(1.0, abs=1e-2)
        target = np.sqrt(2) * np.sin(np.pi * grid.points)
        assert np.max(np.abs(eig.eigenfunctions[:, 0] - target)) < 1e-2

    def test_degenerate_covariance(self):
        grid = DomainGrid.regular((0, 1), 21)
        cov = CovarianceEstimate.from_function(grid, lambda u, v: 0.0 * u * v)
        sub = Subdomain.from_interval(grid, 0.0, 1.0)
        with pytest.raises(DegenerateCovarianceError):
            eigen_on_subdomain(cov, sub)

    def test_brownian_eigenpairs(self):
        # Analytic oracle: lambda_k = (2/((2k-1) pi))^2 and
        # phi_k = sqrt(2) sin((k - 1/2) pi u) on [0, 1].
        grid = DomainGrid.regular((0, 1), 201)
        cov = brownian_cov(grid)
        sub = Subdomain.from_interval(grid, 0.0, 1.0)
        eig = eigen_on_subdomain(cov, sub)
        for k in range(1, 4):
            lam = (2.0 / ((2 * k - 1) * np.pi)) ** 2
            assert eig.eigenvalues[k - 1] == pytest.approx(lam, rel=0.02)
            target = np.sqrt(2) * np.sin((k - 0.5) * np.pi * grid.points)
            got = eig.eigenfunctions[:, k - 1]
            sign = np.sign(got @ target)
            assert np.max(np.abs(sign * got - target)) < 0.05

    def test_normalization_and_orthogonality(self):
        grid = DomainGrid.regular((0, 1), 101)
        cov = brownian_cov(grid)
        sub = Subdomain.from_interval(grid, 0.1, 0.8)
        eig = eigen_on_subdomain(cov, sub)
        w = sub.trapezoid_weights(grid)
        G = eig.eigenfunctions.T @ (w[:, None] * eig.eigenfunctions)
        assert np.max(np.abs(G - np.eye(eig.k_available))) < 1e-8

    def test_not_estimable_on_masked_region(self):
        grid = DomainGrid.regular((0, 1), 51)
        cov = brownian_cov(grid, band=0.3)
        sub = Subdomain.from_interval(grid, 0.0, 0.8)
        with pytest.raises(NotEstimableError, match="not estimable"):
            eigen_on_subdomain(cov, sub)

    def test_deterministic_sign(self):
        grid = DomainGrid.regular((0, 1), 51)
        rng = np.random.default_rng(0)
        A = rng.normal(size=(51, 4))
        surf = A @ np.diag([4.0, 2.0, 1.0, 0.5]) @ A.T
        cov = CovarianceEstimate(grid, 0.5 * (surf + surf.T), np.ones((51, 51), bool), 0.1)
        sub = Subdomain.from_interval(grid, 0.0, 1.0)
        e1 = eigen_on_subdomain(cov, sub)
        e2 = eigen_on_subdomain(cov, sub)
        assert np.array_equal(e1.eigenfunctions, e2.eigenfunctions)
        assert np.all(e1.eigenfunctions.sum(axis=0) > -1e-12)

    def test_trace_consistency(self):
        grid = DomainGrid.regular((0, 1), 101)
        cov = CovarianceEstimate.from_function(
            grid,
            lambda u, v: 2.0 * np.sin(np.pi * u) * np.sin(np.pi * v)
            + 0.8 * np.cos(np.pi * u) * np.cos(np.pi * v)
            + 0.3 * np.sin(3 * np.pi * u) * np.sin(3 * np.pi * v),
        )
        sub = Subdomain.from_interval(grid, 0.05, 0.85)
        eig = eigen_on_subdomain(cov, sub)
        w = sub.trapezoid_weights(grid)
        trace = float(w @ np.diagonal(cov.surface)[sub.grid_indices])
        assert abs(eig.eigenvalues.sum() - trace) < 0.02 * trace

    def test_tail_sums_smaller_on_subdomain(self):
        # Eigenvalue tail mass on a subinterval never exceeds the tail mass
        # on the full interval.
        grid = DomainGrid.regular((0, 1), 101)
        cov = brownian_cov(grid)
        full = eigen_on_subdomain(cov, Subdomain.from_interval(grid, 0.0, 1.0))
        sub = eigen_on_subdomain(cov, Subdomain.from_interval(grid, 0.2, 0.7))
        lam_full = full.eigenvalues
        lam_sub = sub.eigenvalues
        for K in range(0, 6):
            tail_full = lam_full[K:].sum()
            tail_sub = lam_sub[K:].sum()
            assert tail_sub <= tail_full + 1e-9


class TestExtrapolateBasis:
    def test_identity_on_subdomain(self):
        grid = DomainGrid.regular((0, 1), 101)
        cov = brownian_cov(grid)
        sub = Subdomain.from_interval(grid, 0.0, 0.6)
        eig = extrapolate_basis(eigen_on_subdomain(cov, sub), cov)
        on_sub = eig.extrapolated[sub.grid_indices, :]
        assert np.max(np.abs(on_sub - eig.eigenfunctions)) < 1e-6
        assert eig.diagnostics["extrapolation_identity_residual"] < 1e-6

    def test_brownian_constant_extension(self):
        # For min(u, v) with observed [0, theta], the covariance rows beyond
        # theta match the row at theta, so every extrapolated function is
        # constant beyond theta at its boundary value.
        grid = DomainGrid.regular((0, 1), 101)
        cov = brownian_cov(grid)
        theta = 0.6
        sub = Subdomain.from_interval(grid, 0.0, theta)
        eig = extrapolate_basis(eigen_on_subdomain(cov, sub), cov)
        beyond = grid.points > theta + 1e-9
        edge = sub.grid_indices[-1]
        for k in range(min(4, eig.k_available)):
            assert np.max(np.abs(eig.extrapolated[beyond, k] - eig.eigenfunctions[-1, k])) < 1e-8
            assert eig.extrapolated[edge, k] == pytest.approx(eig.eigenfunctions[-1, k], abs=1e-8)

    def test_rank_one_extension_proportional(self):
        # For gamma = phi(u) phi(v) the extension is proportional to phi on
        # the whole domain, normalized over the subdomain.
        grid = DomainGrid.regular((0, 1), 101)
        phi = lambda u: 1.0 + 0.5 * np.sin(2 * np.pi * u)
        cov = CovarianceEstimate.from_function(grid, lambda u, v: phi(u) * phi(v))
        sub = Subdomain.from_interval(grid, 0.2, 0.55)
        eig = extrapolate_basis(eigen_on_subdomain(cov, sub), cov)
        ext = eig.extrapolated[:, 0]
        ratio = ext / phi(grid.points)
        assert np.max(np.abs(ratio - ratio[0])) < 1e-8

    def test_non_estimable_rows_marked(self):
        grid = DomainGrid.regular((0, 1), 51)
        cov = brownian_cov(grid, band=0.5)
        sub = Subdomain.from_interval(grid, 0.0, 0.4)
        eig = extrapolate_basis(eigen_on_subdomain(cov, sub), cov)
        row_ok = np.all(np.isfinite(eig.extrapolated), axis=1)
        # estimable rows are exactly those whose distance to every subdomain
        # point stays within the band halfwidth
        expected = grid.points <= 0.5 + 1e-9
        assert np.array_equal(row_ok, expected)

    def test_boundary_continuity_on_grid(self):
        # Smooth synthetic covariance: the first grid point beyond the
        # boundary differs from the boundary eigenfunction value by O(delta).
        grid = DomainGrid.regular((0, 1), 201)
        cov = CovarianceEstimate.from_function(
            grid,
            lambda u, v: 2.0 * np.sin(np.pi * u) * np.sin(np.pi * v)
            + np.cos(np.pi * u) * np.cos(np.pi * v),
        )
        theta = 0.6
        sub = Subdomain.from_interval(grid, 0.0, theta)
        eig = extrapolate_basis(eigen_on_subdomain(cov, sub), cov)
        edge = sub.grid_indices[-1]
        for k in range(eig.k_available):
            jump = abs(eig.extrapolated[edge + 1, k] - eig.eigenfunctions[-1, k])
            scale = max(1.0, np.max(np.abs(eig.eigenfunctions[:, k])))
            assert jump < 10.0 * grid.delta * scale

    def test_fve_truncation(self):
        grid = DomainGrid.regular((0, 1), 101)
        cov = brownian_cov(grid)
        eig = eigen_on_subdomain(cov, Subdomain.from_interval(grid, 0.0, 1.0))
        k90 = eig.fve_truncation(0.9)
        frac = np.cumsum(eig.eigenvalues) / eig.eigenvalues.sum()
        assert frac[k90 - 1] >= 0.9
        assert k90 == 1 or frac[k90 - 2] < 0.9
