"""Reconstruction estimators, GCV truncation selection and the error-variance diagnostic."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Curve, DomainGrid, FunctionalDataset, classify_complete
from .eigensystem import (
    DEFAULT_LAMBDA_REL_FLOOR,
    EigenSystem,
    Subdomain,
    eigen_on_subdomain,
    extrapolate_basis,
)
from .errors import (
    DataError,
    InsufficientLocalDataError,
    NotEstimableError,
    UsageError,
)
from .scores import ScoreVector, ce_scores, integral_scores, pace_scores
from .smoothing import (
    Bandwidths,
    CovarianceEstimate,
    MeanEstimate,
    NoiseVariance,
    _bilinear,
    _llk_fit_1d,
    estimate_noise_variance,
    llk_covariance,
    llk_mean,
)

PROV_NON_ESTIMABLE = -1
PROV_OBSERVED = 0
PROV_RECONSTRUCTED = 1

METHODS = ("ano", "anoce", "ayes", "ayesce", "pace", "kraus")
GCV_MAX_COMPONENTS = 20
KRAUS_RHO_GRID_DECADES = (-6.0, 2.0)
KRAUS_RHO_GRID_SIZE = 9


def provenance_label(code: int) -> str:
    if code == PROV_NON_ESTIMABLE:
        return "non-estimable"
    if code == PROV_OBSERVED:
        return "observed-smoothed"
    if code == PROV_RECONSTRUCTED:
        return "reconstructed"
    return f"iteration-{code}"


@dataclass(frozen=True)
class ReconstructedCurve:
    """A gridded reconstruction with per-point provenance."""

    curve_id: str
    grid: DomainGrid
    values: np.ndarray
    provenance: np.ndarray
    k_used: int
    method: str
    error_variance: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def rows(self):
        """(u, value, provenance label, error variance) per grid point."""
        ev = self.error_variance
        for i, u in enumerate(self.grid.points):
            yield (
                float(u),
                float(self.values[i]),
                provenance_label(int(self.provenance[i])),
                float(ev[i]) if ev is not None else None,
            )

    def to_dict(self) -> dict:
        """JSON-serializable form (NaN encoded as null)."""
        def clean(x):
            return None if x is None or not np.isfinite(x) else float(x)

        ev = self.error_variance
        return {
            "curve_id": self.curve_id,
            "method": self.method,
            "k_used": int(self.k_used),
            "u": [float(x) for x in self.grid.points],
            "values": [clean(v) for v in self.values],
            "provenance": [provenance_label(int(p)) for p in self.provenance],
            "error_variance": None if ev is None else [clean(v) for v in ev],
        }


@dataclass
class ReconstructionModel:
    """Fitted mean, covariance, noise variance and cached eigensystems.

    The reusable artifact: fit once on a sample, then reconstruct any curve.
    """

    mean: MeanEstimate
    cov: CovarianceEstimate
    sigma2: NoiseVariance
    bandwidths: Bandwidths
    dataset: FunctionalDataset | None = None
    lambda_rel_floor: float = DEFAULT_LAMBDA_REL_FLOOR
    _eig_cache: dict = field(default_factory=dict, repr=False)

    @property
    def grid(self) -> DomainGrid:
        return self.mean.grid

    def full_subdomain(self) -> Subdomain:
        return Subdomain.from_indices(self.grid, np.arange(self.grid.size))

    def eigensystem_for(self, subdomain: Subdomain) -> EigenSystem:
        key = subdomain.key()
        eig = self._eig_cache.get(key)
        if eig is None:
            eig = extrapolate_basis(
                eigen_on_subdomain(self.cov, subdomain, self.lambda_rel_floor), self.cov
            )
            self._eig_cache[key] = eig
        return eig

    def full_eigensystem(self) -> EigenSystem:
        if not np.all(self.cov.mask):
            raise NotEstimableError(
                "covariance not estimable on the full domain square; "
                "use the iterative reconstruction for band-limited masks"
            )
        return self.eigensystem_for(self.full_subdomain())


def fit_reconstruction_model(
    dataset: FunctionalDataset,
    bandwidths: Bandwidths | None = None,
    min_pairs: int = 5,
    trim_fraction: float = 0.25,
    lambda_rel_floor: float = DEFAULT_LAMBDA_REL_FLOOR,
) -> ReconstructionModel:
    """Estimate mean, covariance and noise variance on the dataset's grid."""
    if bandwidths is None:
        bandwidths = Bandwidths.rule_of_thumb(dataset)
    bandwidths.validate_for_domain(dataset.domain)
    grid = dataset.grid
    mean = llk_mean(dataset, grid, bandwidths.h_mu)
    cov = llk_covariance(dataset, mean, grid, bandwidths.h_gamma, min_pairs=min_pairs)
    sigma2 = estimate_noise_variance(dataset, mean, cov, trim_fraction=trim_fraction)
    return ReconstructionModel(mean, cov, sigma2, bandwidths, dataset, lambda_rel_floor)


def curve_subdomain(curve: Curve, grid: DomainGrid) -> Subdomain:
    lo, hi = curve.observed_interval
    return Subdomain.from_interval(grid, lo, hi)


def _compute_scores(
    method: str,
    curve: Curve,
    model: ReconstructionModel,
    eigsys: EigenSystem,
    k: int,
    quadrature: str,
) -> ScoreVector:
    if method == "integral":
        return integral_scores(curve, eigsys, model.mean, k, quadrature=quadrature)
    if method == "ce":
        return ce_scores(curve, eigsys, model.cov, model.sigma2, model.mean, k)
    raise UsageError(f"unknown scores method {method!r} (expected 'integral' or 'ce')")


def reconstruct_ano(
    curve: Curve,
    model: ReconstructionModel,
    k: int,
    scores_method: str = "integral",
    subdomain: Subdomain | None = None,
    quadrature: str = "riemann",
    include_error_variance: bool = False,
) -> ReconstructedCurve:
    """Truncated-expansion reconstruction without boundary alignment.

    Evaluates mean plus the score-weighted extrapolated basis on every
    estimable grid point: on the observed part this is the functional-PCA
    estimate of the curve, on the missing part the optimal-reconstruction
    estimate.
    """
    grid = model.grid
    if subdomain is None:
        subdomain = curve_subdomain(curve, grid)
    eigsys = model.eigensystem_for(subdomain)
    scores = _compute_scores(scores_method, curve, model, eigsys, k, quadrature)
    ext = eigsys.extrapolated[:, :k]
    values = model.mean.values + (ext @ scores.values if k else 0.0)
    provenance = np.full(grid.size, PROV_RECONSTRUCTED, dtype=int)
    provenance[subdomain.grid_indices] = PROV_OBSERVED
    bad = ~np.isfinite(values)
    values = np.where(bad, np.nan, values)
    provenance[bad] = PROV_NON_ESTIMABLE
    ev = error_variance(eigsys, model.cov, grid.points) if include_error_variance else None
    method = "anoce" if scores_method == "ce" else "ano"
    return ReconstructedCurve(
        curve.id, grid, values, provenance, k, method, ev,
        diagnostics={"score_flags": list(scores.flags)},
    )


def _smoothed_curve_on(
    curve: Curve, targets: np.ndarray, h_x: float
) -> tuple[np.ndarray, np.ndarray]:
    """Local-linear values of the raw curve at targets; ok=False where the fit failed."""
    beta0, counts, fallback = _llk_fit_1d(curve.u, curve.y, np.asarray(targets, float), h_x)
    ok = (counts >= 2) & ~fallback & np.isfinite(beta0)
    return beta0, ok


def _phi_at_boundary(eigsys: EigenSystem, point: float, block: np.ndarray) -> np.ndarray:
    """Eigenfunction values at an interval endpoint, clamped to its own block."""
    pts_all = eigsys.subdomain.points(eigsys.grid)
    pos = np.searchsorted(eigsys.subdomain.grid_indices, block)
    pts = pts_all[pos]
    x = float(np.clip(point, pts[0], pts[-1]))
    out = np.empty(eigsys.eigenfunctions.shape[1])
    for j in range(out.size):
        out[j] = np.interp(x, pts, eigsys.eigenfunctions[pos, j])
    return out


class _AnchorSet:
    """Boundary-anchor values for the aligned reconstruction.

    Holds, per subdomain interval endpoint, the smoothed curve value, the
    mean value and the eigenfunction vector; composes them at missing
    points, linearly interpolating between adjacent intervals and clamping
    beyond the outermost ones.
    """

    def __init__(self, intervals, x_vals, mu_vals, phi_vals):
        self.intervals = intervals
        self.x_vals = x_vals
        self.mu_vals = mu_vals
        self.phi_vals = phi_vals

    def compose(self, u: np.ndarray, k: int):
        u = np.atleast_1d(np.asarray(u, float))
        n = u.size
        ax = np.empty(n)
        amu = np.empty(n)
        aphi = np.empty((n, k))
        left_a = self.intervals[0][0]
        right_b = self.intervals[-1][1]
        done = np.zeros(n, dtype=bool)

        def assign(sel, j_lo, j_hi, w):
            ax[sel] = (1 - w) * self.x_vals[j_lo] + w * self.x_vals[j_hi]
            amu[sel] = (1 - w) * self.mu_vals[j_lo] + w * self.mu_vals[j_hi]
            aphi[sel] = np.outer(1 - w, self.phi_vals[j_lo][:k]) + np.outer(
                w, self.phi_vals[j_hi][:k]
            )

        sel = u <= left_a
        if np.any(sel):
            assign(sel, 0, 0, np.zeros(int(sel.sum())))
            done |= sel
        sel = (u >= right_b) & ~done
        if np.any(sel):
            j = 2 * len(self.intervals) - 1
            assign(sel, j, j, np.zeros(int(sel.sum())))
            done |= sel
        for j in range(len(self.intervals) - 1):
            b_j = self.intervals[j][1]
            a_next = self.intervals[j + 1][0]
            sel = (u > b_j) & (u < a_next) & ~done
            if np.any(sel):
                w = (u[sel] - b_j) / (a_next - b_j)
                assign(sel, 2 * j + 1, 2 * j + 2, w)
                done |= sel
        if not np.all(done):
            # Points inside an interval; anchor at the nearest endpoint.
            for i in np.nonzero(~done)[0]:
                dists = [
                    (abs(u[i] - p), 2 * j + side)
                    for j, (a, b) in enumerate(self.intervals)
                    for side, p in ((0, a), (1, b))
                ]
                _, jj = min(dists)
                ax[i] = self.x_vals[jj]
                amu[i] = self.mu_vals[jj]
                aphi[i] = self.phi_vals[jj][:k]
        return ax, amu, aphi


def _llk_curve_value(curve: Curve, point: float, h_x: float) -> float:
    beta0, counts, fallback = _llk_fit_1d(curve.u, curve.y, np.array([point]), h_x)
    if counts[0] < 2 or fallback[0] or not np.isfinite(beta0[0]):
        raise InsufficientLocalDataError(point, int(counts[0]))
    return float(beta0[0])


def reconstruct_ayes(
    curve: Curve,
    model: ReconstructionModel,
    k: int,
    scores_method: str = "integral",
    subdomain: Subdomain | None = None,
    quadrature: str = "riemann",
    include_error_variance: bool = False,
) -> ReconstructedCurve:
    """Aligned reconstruction: anchored at the smoothed boundary values.

    On the observed part the curve itself is smoothed locally; on the
    missing part the truncated expansion is shifted so it connects with the
    smoothed value at the nearest boundary point. Between two observed
    intervals the anchor is the linear interpolation of the two facing
    boundary values; beyond the outermost interval the nearest extreme is
    used.
    """
    grid = model.grid
    if subdomain is None:
        subdomain = curve_subdomain(curve, grid)
    eigsys = model.eigensystem_for(subdomain)
    scores = _compute_scores(scores_method, curve, model, eigsys, k, quadrature)
    o_idx = subdomain.grid_indices

    values = np.full(grid.size, np.nan)
    provenance = np.full(grid.size, PROV_RECONSTRUCTED, dtype=int)
    provenance[o_idx] = PROV_OBSERVED

    # Observed part: the individual local-linear smoother, with the
    # expansion value as fallback where the local fit fails.
    smoothed, ok = _smoothed_curve_on(curve, grid.points[o_idx], model.bandwidths.h_x)
    ano_on_o = model.mean.values[o_idx] + (
        eigsys.extrapolated[o_idx, :k] @ scores.values if k else 0.0
    )
    values[o_idx] = np.where(ok, smoothed, ano_on_o)
    n_smooth_fallback = int((~ok).sum())

    anchors, n_anchor_fb = _build_anchors_safe(curve, eigsys, model, scores, k)

    m_idx = np.setdiff1d(np.arange(grid.size), o_idx)
    if m_idx.size:
        u_m = grid.points[m_idx]
        ax, amu, aphi = anchors.compose(u_m, k)
        ext = eigsys.extrapolated[m_idx, :k]
        contrib = (ext - aphi) @ scores.values if k else 0.0
        vals_m = ax + model.mean.values[m_idx] - amu + contrib
        values[m_idx] = vals_m
        bad = m_idx[~np.isfinite(vals_m)]
        values[bad] = np.nan
        provenance[bad] = PROV_NON_ESTIMABLE

    ev = error_variance(eigsys, model.cov, grid.points) if include_error_variance else None
    method = "ayesce" if scores_method == "ce" else "ayes"
    return ReconstructedCurve(
        curve.id, grid, values, provenance, k, method, ev,
        diagnostics={
            "score_flags": list(scores.flags),
            "n_smoother_fallback": n_smooth_fallback,
            "n_anchor_fallback": n_anchor_fb,
        },
    )


def _build_anchors_safe(curve, eigsys, model, scores, k):
    """Anchors from the raw curve, substituting the expansion value on failure."""
    sub = eigsys.subdomain
    blocks = sub.blocks()
    x_vals, mu_vals, phi_vals = [], [], []
    n_fb = 0
    for j, (a, b) in enumerate(sub.intervals):
        block = blocks[j]
        for point in (a, b):
            phi_full = _phi_at_boundary(eigsys, point, block)
            mu = float(model.mean.at(point))
            try:
                xv = _llk_curve_value(curve, point, model.bandwidths.h_x)
            except InsufficientLocalDataError:
                xv = float(mu + (phi_full[:k] @ scores.values if k else 0.0))
                n_fb += 1
            x_vals.append(xv)
            mu_vals.append(mu)
            phi_vals.append(phi_full)
    return _AnchorSet(sub.intervals, x_vals, mu_vals, phi_vals), n_fb


def _grid_anchors(values_on_sub, eigsys, model):
    """Anchors for a gridded pseudo-curve: grid values at the block edges."""
    sub = eigsys.subdomain
    blocks = sub.blocks()
    x_vals, mu_vals, phi_vals = [], [], []
    for j, (a, b) in enumerate(sub.intervals):
        block = blocks[j]
        pos = np.searchsorted(sub.grid_indices, block)
        pts = sub.points(model.grid)[pos]
        for point in (a, b):
            phi_full = _phi_at_boundary(eigsys, point, block)
            mu = float(model.mean.at(point))
            xv = float(np.interp(np.clip(point, pts[0], pts[-1]), pts, values_on_sub[pos]))
            x_vals.append(xv)
            mu_vals.append(mu)
            phi_vals.append(phi_full)
    return _AnchorSet(sub.intervals, x_vals, mu_vals, phi_vals)


def reconstruct_pace(
    curve: Curve,
    model: ReconstructionModel,
    k: int,
    include_error_variance: bool = False,
) -> ReconstructedCurve:
    """Joint approximation of observed and missing parts with the full-domain basis."""
    grid = model.grid
    eigsys = model.full_eigensystem()
    scores = pace_scores(curve, eigsys, model.cov, model.sigma2, model.mean, k)
    phi = eigsys.extrapolated[:, :k]
    values = model.mean.values + (phi @ scores.values if k else 0.0)
    provenance = np.full(grid.size, PROV_RECONSTRUCTED, dtype=int)
    provenance[curve_subdomain(curve, grid).grid_indices] = PROV_OBSERVED
    ev = error_variance(eigsys, model.cov, grid.points) if include_error_variance else None
    return ReconstructedCurve(
        curve.id, grid, values, provenance, k, "pace", ev,
        diagnostics={"score_flags": list(scores.flags)},
    )


def _kraus_operator(model: ReconstructionModel, o_sub: Subdomain):
    """Eigendecomposition of the weighted covariance block on the observed part."""
    idx = o_sub.grid_indices
    if not np.all(model.cov.mask[np.ix_(idx, idx)]):
        raise NotEstimableError("covariance not estimable on the observed block")
    G = model.cov.surface[np.ix_(idx, idx)]
    w = o_sub.trapezoid_weights(model.grid)
    d = np.sqrt(w)
    M = d[:, None] * G * d[None, :]
    M = 0.5 * (M + M.T)
    nu, q = np.linalg.eigh(M)
    nu = np.clip(nu, 0.0, None)
    return idx, w, d, nu, q


def reconstruct_kraus(
    curve: Curve,
    model: ReconstructionModel,
    rho: float | None = None,
    dataset: FunctionalDataset | None = None,
    include_error_variance: bool = False,
) -> ReconstructedCurve:
    """Ridge-regularized linear reconstruction of the missing block.

    The missing part is predicted from the smoothed observed part through
    the discretized covariance operator with a ridge on the observed block.
    When ``rho`` is not given it is chosen by the generalized
    cross-validation over completely observed curves.
    """
    grid = model.grid
    o_sub = curve_subdomain(curve, grid)
    if rho is None:
        if dataset is None:
            dataset = model.dataset
        if dataset is None:
            raise UsageError("rho not given and no dataset available for its selection")
        rho, _ = select_kraus_ridge_gcv(model, dataset, o_sub.complement(grid))
    if not (np.isfinite(rho) and rho > 0):
        raise UsageError(f"ridge parameter must be positive, got {rho}")

    idx, w, d, nu, q = _kraus_operator(model, o_sub)
    smoothed, ok = _smoothed_curve_on(curve, grid.points[idx], model.bandwidths.h_x)
    if not np.all(ok):
        filled = np.where(ok, smoothed, np.nan)
        good = np.nonzero(ok)[0]
        if good.size == 0:
            raise InsufficientLocalDataError(grid.points[idx][0], 0)
        for i in np.nonzero(~ok)[0]:
            filled[i] = smoothed[good[np.argmin(np.abs(good - i))]]
        smoothed = filled
    resid = smoothed - model.mean.values[idx]

    # (Gamma_OO + rho I)^{-1} via the weighted symmetric eigenbasis.
    z = d * resid
    z = q @ ((q.T @ z) / (nu + rho))
    z = z / d

    values = np.full(grid.size, np.nan)
    provenance = np.full(grid.size, PROV_RECONSTRUCTED, dtype=int)
    values[idx] = smoothed
    provenance[idx] = PROV_OBSERVED
    m_idx = np.setdiff1d(np.arange(grid.size), idx)
    if m_idx.size:
        row_ok = np.all(model.cov.mask[np.ix_(m_idx, idx)], axis=1)
        G_mo = np.where(
            np.isnan(model.cov.surface[np.ix_(m_idx, idx)]), 0.0, model.cov.surface[np.ix_(m_idx, idx)]
        )
        vals_m = model.mean.values[m_idx] + (G_mo * w[None, :]) @ z
        vals_m[~row_ok] = np.nan
        values[m_idx] = vals_m
        provenance[m_idx[~row_ok]] = PROV_NON_ESTIMABLE

    ev = None
    if include_error_variance:
        eigsys = model.eigensystem_for(o_sub)
        ev = error_variance(eigsys, model.cov, grid.points)
    return ReconstructedCurve(
        curve.id, grid, values, provenance, 0, "kraus", ev, diagnostics={"rho": float(rho)}
    )


def error_variance(eigsys: EigenSystem, cov: CovarianceEstimate, u) -> np.ndarray:
    """Pointwise variance of the optimal-reconstruction error.

    Returns max(0, gamma(u, u) - sum_k lambda_k * ext_k(u)^2) over the
    retained components; NaN where the diagonal or the extrapolated basis
    is not estimable.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    diag_ok = _bilinear(cov.grid.points, cov.mask.astype(float), u, u) >= 1 - 1e-9
    gamma_uu = cov.at(u, u)
    ext = eigsys.extrapolated_at(u)
    total = np.einsum("uk,k->u", ext * ext, eigsys.eigenvalues)
    out = np.clip(gamma_uu - total, 0.0, None)
    out[~diag_ok] = np.nan
    out[~np.isfinite(total)] = np.nan
    return out


def _prediction_prefixes(
    method: str,
    model: ReconstructionModel,
    eigsys: EigenSystem,
    curve_obs: Curve,
    u_eval: np.ndarray,
    k_max: int,
    quadrature: str,
) -> np.ndarray:
    """Predictions at u_eval for every truncation 1..k_max, shape (len(u_eval), k_max)."""
    u_eval = np.asarray(u_eval, dtype=float)
    if method in ("ano", "ayes"):
        scores = integral_scores(curve_obs, eigsys, model.mean, k_max, quadrature=quadrature)
    elif method in ("anoce", "ayesce"):
        scores = ce_scores(curve_obs, eigsys, model.cov, model.sigma2, model.mean, k_max)
    elif method == "pace":
        scores = pace_scores(curve_obs, eigsys, model.cov, model.sigma2, model.mean, k_max)
    else:
        raise UsageError(f"unknown method {method!r}")
    ext = eigsys.extrapolated_at(u_eval, k_max)
    mu_eval = model.mean.at(u_eval)
    if method in ("ayes", "ayesce"):
        anchors, _ = _build_anchors_safe(curve_obs, eigsys, model, scores, k_max)
        ax, amu, aphi = anchors.compose(u_eval, k_max)
        contrib = np.cumsum((ext - aphi) * scores.values[None, :], axis=1)
        return (ax + mu_eval - amu)[:, None] + contrib
    contrib = np.cumsum(ext * scores.values[None, :], axis=1)
    return mu_eval[:, None] + contrib


def select_truncation_gcv(
    method: str,
    model: ReconstructionModel,
    dataset: FunctionalDataset,
    target_m: Subdomain,
    k_candidates: Sequence[int] | None = None,
    margin_fraction: float = 0.1,
    quadrature: str = "riemann",
    max_components: int = GCV_MAX_COMPONENTS,
) -> tuple[int, dict]:
    """Truncation choice by generalized cross-validation over pseudo-missing parts.

    Every completely observed curve is split at the target's missing region:
    observations inside it become pseudo-missing and are predicted from the
    pseudo-observed rest for each candidate truncation. The normalized
    residual sums feed the criterion RSS(K) / (1 - K/|C|)^2 with |C| the
    number of complete curves; ties break toward the smaller truncation.
    """
    grid = model.grid
    complete = sorted(classify_complete(dataset, margin_fraction))
    if not complete:
        raise NotEstimableError("no complete curves for GCV")
    n_complete = len(complete)
    o_sub = target_m.complement(grid)
    eigsys = (
        model.full_eigensystem() if method == "pace" else model.eigensystem_for(o_sub)
    )
    k_cap = min(eigsys.k_available, n_complete - 1, max_components)
    if k_cap < 1:
        raise NotEstimableError(
            f"no admissible truncation: K_available={eigsys.k_available}, |C|={n_complete}"
        )
    if k_candidates is None:
        candidates = list(range(1, k_cap + 1))
    else:
        candidates = sorted({int(k) for k in k_candidates if 1 <= int(k) <= k_cap})
        if not candidates:
            raise UsageError("no K candidate within the admissible range")
    k_max = max(candidates)

    by_id = {c.id: c for c in dataset.curves}
    rss = np.zeros(k_max)
    used = 0
    skipped = 0
    for cid in complete:
        c = by_id[cid]
        inside = o_sub.contains(c.u)
        n_miss = int((~inside).sum())
        if n_miss == 0 or np.unique(c.u[inside]).size < 2:
            skipped += 1
            continue
        pseudo_obs = Curve(c.id, c.u[inside], c.y[inside])
        try:
            preds = _prediction_prefixes(
                method, model, eigsys, pseudo_obs, c.u[~inside], k_max, quadrature
            )
        except (NotEstimableError, InsufficientLocalDataError, DataError):
            skipped += 1
            continue
        resid = preds - c.y[~inside][:, None]
        finite = np.all(np.isfinite(resid), axis=0)
        if not np.all(finite):
            resid = np.where(np.isfinite(resid), resid, 0.0)
        rss += np.sum(resid * resid, axis=0) / n_miss
        used += 1
    if used == 0:
        raise NotEstimableError("no complete curves for GCV (all splits degenerate)")

    ks = np.array(candidates)
    denom = (1.0 - ks / n_complete) ** 2
    gcv = rss[ks - 1] / denom
    best = int(ks[int(np.argmin(gcv))])
    details = {
        "candidates": candidates,
        "gcv": {int(kk): float(g) for kk, g in zip(ks, gcv)},
        "rss": {int(kk): float(rss[kk - 1]) for kk in ks},
        "n_complete": n_complete,
        "n_used": used,
        "n_skipped": skipped,
    }
    return best, details


def select_kraus_ridge_gcv(
    model: ReconstructionModel,
    dataset: FunctionalDataset,
    target_m: Subdomain,
    rho_candidates: Sequence[float] | None = None,
    margin_fraction: float = 0.1,
) -> tuple[float, dict]:
    """Ridge parameter by the same pseudo-missing GCV with effective degrees of freedom."""
    grid = model.grid
    complete = sorted(classify_complete(dataset, margin_fraction))
    if not complete:
        raise NotEstimableError("no complete curves for GCV")
    n_complete = len(complete)
    o_sub = target_m.complement(grid)
    idx, w, d, nu, q = _kraus_operator(model, o_sub)
    trace = float(nu.sum())
    if rho_candidates is None:
        lo, hi = KRAUS_RHO_GRID_DECADES
        scale = max(trace / idx.size, 1e-300)
        rho_candidates = [scale * 10.0 ** e for e in np.linspace(lo, hi, KRAUS_RHO_GRID_SIZE)]
    rho_candidates = sorted(float(r) for r in rho_candidates if r > 0)
    if not rho_candidates:
        raise UsageError("no positive ridge candidate")

    m_idx = np.setdiff1d(np.arange(grid.size), idx)
    G_mo = np.where(
        np.isnan(model.cov.surface[np.ix_(m_idx, idx)]), 0.0, model.cov.surface[np.ix_(m_idx, idx)]
    )
    row_ok = np.all(model.cov.mask[np.ix_(m_idx, idx)], axis=1)

    by_id = {c.id: c for c in dataset.curves}
    prepared = []
    for cid in complete:
        c = by_id[cid]
        inside = o_sub.contains(c.u)
        n_miss = int((~inside).sum())
        if n_miss == 0 or np.unique(c.u[inside]).size < 2:
            continue
        pseudo = Curve(c.id, c.u[inside], c.y[inside])
        smoothed, ok = _smoothed_curve_on(pseudo, grid.points[idx], model.bandwidths.h_x)
        if not np.all(ok):
            good = np.nonzero(ok)[0]
            if good.size == 0:
                continue
            for i in np.nonzero(~ok)[0]:
                smoothed[i] = smoothed[good[np.argmin(np.abs(good - i))]]
        prepared.append((c, inside, d * (smoothed - model.mean.values[idx])))
    if not prepared:
        raise NotEstimableError("no complete curves for GCV (all splits degenerate)")

    results = {}
    for rho in rho_candidates:
        df = float(np.sum(nu / (nu + rho)))
        if df >= n_complete:
            continue
        rss = 0.0
        for c, inside, z0 in prepared:
            z = (q @ ((q.T @ z0) / (nu + rho))) / d
            vals_m = model.mean.values[m_idx] + (G_mo * w[None, :]) @ z
            vals_m[~row_ok] = np.nan
            preds = np.interp(c.u[~inside], grid.points[m_idx], vals_m) if m_idx.size else np.array([])
            resid = c.y[~inside] - preds
            resid = resid[np.isfinite(resid)]
            if resid.size:
                rss += float(resid @ resid) / resid.size
        results[rho] = rss / (1.0 - df / n_complete) ** 2
    if not results:
        best = rho_candidates[-1]
    else:
        best = min(results, key=lambda r: (results[r], r))
    return float(best), {"gcv": results, "trace": trace}


def reconstruct_with_method(
    name: str,
    curve: Curve,
    model: ReconstructionModel,
    k: int | None = None,
    rho: float | None = None,
    dataset: FunctionalDataset | None = None,
    quadrature: str = "riemann",
    include_error_variance: bool = False,
) -> ReconstructedCurve:
    """Dispatch a reconstruction by method name (ano, anoce, ayes, ayesce, pace, kraus)."""
    name = name.lower()
    if name not in METHODS:
        raise UsageError(f"unknown method {name!r}; expected one of {', '.join(METHODS)}")
    if name == "kraus":
        return reconstruct_kraus(curve, model, rho=rho, dataset=dataset,
                                 include_error_variance=include_error_variance)
    if k is None:
        raise UsageError(f"method {name!r} needs a truncation K")
    if name == "pace":
        return reconstruct_pace(curve, model, k, include_error_variance=include_error_variance)
    scores_method = "ce" if name.endswith("ce") else "integral"
    fn = reconstruct_ayes if name.startswith("ayes") else reconstruct_ano
    return fn(curve, model, k, scores_method, quadrature=quadrature,
              include_error_variance=include_error_variance)
