"""Eigen-analysis of the covariance on a subdomain and the extrapolated basis."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import DomainGrid
from .errors import DataError, DegenerateCovarianceError, NotEstimableError
from .smoothing import CovarianceEstimate

DEFAULT_LAMBDA_REL_FLOOR = 1e-8
NEAR_DEGENERATE_GAP = 1e-10


@dataclass(frozen=True)
class Subdomain:
    """A union of disjoint subintervals of the domain, snapped to the grid."""

    intervals: tuple[tuple[float, float], ...]
    grid_indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.grid_indices, dtype=int)
        if idx.size == 0:
            raise DataError("subdomain has no grid points")
        if np.any(np.diff(idx) <= 0):
            raise DataError("subdomain grid indices must be strictly increasing")
        object.__setattr__(self, "grid_indices", idx)
        ivals = tuple((float(a), float(b)) for a, b in self.intervals)
        for (a, b) in ivals:
            if b < a:
                raise DataError(f"invalid subinterval [{a}, {b}]")
        for (_, b0), (a1, _) in zip(ivals, ivals[1:]):
            if a1 <= b0:
                raise DataError("subintervals must be disjoint and ordered")
        object.__setattr__(self, "intervals", ivals)

    @classmethod
    def from_interval(cls, grid: DomainGrid, a: float, b: float) -> "Subdomain":
        tol = 1e-9 * (grid.b - grid.a)
        idx = np.nonzero((grid.points >= a - tol) & (grid.points <= b + tol))[0]
        if idx.size == 0:
            raise DataError(f"no grid points inside [{a}, {b}]")
        return cls(((float(a), float(b)),), idx)

    @classmethod
    def from_indices(cls, grid: DomainGrid, indices: Sequence[int]) -> "Subdomain":
        idx = np.unique(np.asarray(indices, dtype=int))
        if idx.size == 0:
            raise DataError("subdomain has no grid points")
        intervals = []
        for block in _contiguous_blocks(idx):
            intervals.append((float(grid.points[block[0]]), float(grid.points[block[-1]])))
        return cls(tuple(intervals), idx)

    def blocks(self) -> list[np.ndarray]:
        """Contiguous runs of grid indices, one per subinterval."""
        return _contiguous_blocks(self.grid_indices)

    def points(self, grid: DomainGrid) -> np.ndarray:
        return grid.points[self.grid_indices]

    def contains(self, u, tol: float = 0.0) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        out = np.zeros(u.shape, dtype=bool)
        for a, b in self.intervals:
            out |= (u >= a - tol) & (u <= b + tol)
        return out

    def complement(self, grid: DomainGrid) -> "Subdomain":
        inside = np.zeros(grid.size, dtype=bool)
        inside[self.grid_indices] = True
        outside = np.nonzero(~inside)[0]
        if outside.size == 0:
            raise DataError("subdomain covers the whole grid; empty complement")
        return Subdomain.from_indices(grid, outside)

    def trapezoid_weights(self, grid: DomainGrid) -> np.ndarray:
        """Per-block trapezoid quadrature weights aligned with grid_indices."""
        w = np.empty(self.grid_indices.size)
        pos = 0
        for block in self.blocks():
            nb = block.size
            wb = np.full(nb, grid.delta)
            if nb == 1:
                wb[:] = grid.delta
            else:
                wb[0] = wb[-1] = 0.5 * grid.delta
            w[pos : pos + nb] = wb
            pos += nb
        return w

    def key(self) -> tuple:
        """Hashable cache key: (first, last) grid index per block."""
        return tuple((int(b[0]), int(b[-1])) for b in self.blocks())

    @property
    def hull(self) -> tuple[float, float]:
        return self.intervals[0][0], self.intervals[-1][1]


def _contiguous_blocks(idx: np.ndarray) -> list[np.ndarray]:
    breaks = np.nonzero(np.diff(idx) > 1)[0]
    return [np.asarray(b) for b in np.split(idx, breaks + 1)]


@dataclass(frozen=True)
class EigenSystem:
    """Eigenvalues and eigenfunctions of the covariance restricted to a subdomain.

    ``eigenfunctions`` holds the retained components on the subdomain grid,
    normalized to unit quadrature norm; ``extrapolated`` (once filled) holds
    their extension to the full grid, NaN where the covariance rows needed
    for the extension are not estimable.
    """

    grid: DomainGrid
    subdomain: Subdomain
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    extrapolated: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def k_available(self) -> int:
        return int(self.eigenvalues.size)

    def phi_at(self, u, k_max: int | None = None) -> np.ndarray:
        """Eigenfunction values at arbitrary points of the subdomain, shape (len(u), K)."""
        k = self.k_available if k_max is None else int(k_max)
        pts = self.subdomain.points(self.grid)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        out = np.empty((u.size, k))
        for j in range(k):
            out[:, j] = np.interp(u, pts, self.eigenfunctions[:, j])
        return out

    def extrapolated_at(self, u, k_max: int | None = None) -> np.ndarray:
        """Extrapolated basis values at arbitrary domain points, shape (len(u), K)."""
        if self.extrapolated is None:
            raise DataError("extrapolated basis not filled; call extrapolate_basis first")
        k = self.k_available if k_max is None else int(k_max)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        out = np.empty((u.size, k))
        for j in range(k):
            out[:, j] = np.interp(u, self.grid.points, self.extrapolated[:, j])
        return out

    def fve_truncation(self, threshold: float) -> int:
        """Smallest K whose eigenvalue mass reaches the given fraction."""
        total = float(self.eigenvalues.sum())
        if total <= 0:
            raise DegenerateCovarianceError("no positive eigenvalue mass")
        frac = np.cumsum(self.eigenvalues) / total
        return int(np.searchsorted(frac, threshold - 1e-12) + 1)


def eigen_on_subdomain(
    cov: CovarianceEstimate,
    subdomain: Subdomain,
    lambda_rel_floor: float = DEFAULT_LAMBDA_REL_FLOOR,
) -> EigenSystem:
    """Solve the discretized eigenproblem of the covariance on a subdomain.

    The covariance matrix on the subdomain's grid points is scaled by
    trapezoid quadrature weights, solved as a symmetric eigenproblem,
    negative eigenvalues are clipped to zero and components below
    ``lambda_rel_floor`` times the leading eigenvalue are dropped.
    Eigenfunctions are normalized to unit quadrature norm over the
    subdomain and carry a deterministic sign (positive sum, with the first
    nonzero coordinate breaking ties).

    Raises
    ------
    NotEstimableError
        If any covariance cell on the subdomain square is not estimable.
    DegenerateCovarianceError
        If no eigenvalue is positive.
    """
    idx = subdomain.grid_indices
    for block in subdomain.blocks():
        if block.size < 2:
            raise DataError("each subdomain interval needs at least two grid points")
    sub_mask = cov.mask[np.ix_(idx, idx)]
    if not np.all(sub_mask):
        raise NotEstimableError(
            f"covariance not estimable on O ({int((~sub_mask).sum())} cells missing)"
        )
    G = cov.surface[np.ix_(idx, idx)]
    w = subdomain.trapezoid_weights(cov.grid)
    d = np.sqrt(w)
    M = d[:, None] * G * d[None, :]
    M = 0.5 * (M + M.T)
    evals, evecs = np.linalg.eigh(M)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]
    if evals.size == 0 or evals[0] <= 0:
        raise DegenerateCovarianceError("degenerate covariance: no positive eigenvalue")
    evals = np.clip(evals, 0.0, None)
    keep = evals > lambda_rel_floor * evals[0]
    evals = evals[keep]
    evecs = evecs[:, keep]
    phi = evecs / d[:, None]

    sums = phi.sum(axis=0)
    for j in range(phi.shape[1]):
        if abs(sums[j]) > 1e-12:
            if sums[j] < 0:
                phi[:, j] = -phi[:, j]
        else:
            nz = np.nonzero(np.abs(phi[:, j]) > 1e-12)[0]
            if nz.size and phi[nz[0], j] < 0:
                phi[:, j] = -phi[:, j]

    gaps = -np.diff(evals)
    near_degenerate = [int(j) for j in np.nonzero(gaps < NEAR_DEGENERATE_GAP * evals[0])[0]]
    return EigenSystem(
        grid=cov.grid,
        subdomain=subdomain,
        eigenvalues=evals,
        eigenfunctions=phi,
        extrapolated=None,
        diagnostics={"near_degenerate_pairs": near_degenerate},
    )


def extrapolate_basis(eigsys: EigenSystem, cov: CovarianceEstimate) -> EigenSystem:
    """Fill the extrapolated basis on the full grid.

    Each extrapolated value is the quadrature inner product of the
    eigenfunction with the covariance row at the target point, divided by
    the eigenvalue. Rows of the covariance that are not fully estimable
    over the subdomain yield NaN at that point. On subdomain grid points
    the computed value replicates the eigenfunction up to solver precision;
    the largest deviation is recorded as a diagnostic rather than
    substituted away.
    """
    idx = eigsys.subdomain.grid_indices
    w = eigsys.subdomain.trapezoid_weights(eigsys.grid)
    cols = cov.surface[:, idx]
    row_ok = np.all(cov.mask[:, idx], axis=1)
    filled = np.where(np.isnan(cols), 0.0, cols)
    ext = (filled * w[None, :]) @ eigsys.eigenfunctions
    ext /= eigsys.eigenvalues[None, :]
    ext[~row_ok] = np.nan

    on_sub = ext[idx, :]
    identity_residual = float(np.nanmax(np.abs(on_sub - eigsys.eigenfunctions), initial=0.0))
    diag = dict(eigsys.diagnostics)
    diag["extrapolation_identity_residual"] = identity_residual
    diag["n_non_estimable_rows"] = int((~row_ok).sum())
    return replace(eigsys, extrapolated=ext, diagnostics=diag)
