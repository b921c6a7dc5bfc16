"""Principal-component score estimation: Riemann-sum and conditional-expectation routes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .core import Curve
from .eigensystem import EigenSystem
from .errors import IllConditionedError, UsageError
from .smoothing import CovarianceEstimate, MeanEstimate, NoiseVariance

CE_JITTER_REL = 1e-8
CONDITION_FLAG_THRESHOLD = 1e10


@dataclass(frozen=True)
class ScoreVector:
    """Estimated scores for one curve."""

    curve_id: str
    values: np.ndarray
    method: str
    flags: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        object.__setattr__(self, "flags", tuple(self.flags))


def _check_k(k: int, eigsys: EigenSystem) -> int:
    k = int(k)
    if k < 0:
        raise UsageError(f"K must be non-negative, got {k}")
    if k > eigsys.k_available:
        raise UsageError(f"K={k} exceeds K_available={eigsys.k_available}")
    return k


def _check_domain(curve: Curve, eigsys: EigenSystem) -> None:
    tol = eigsys.grid.delta
    if not np.all(eigsys.subdomain.contains(curve.u, tol=tol)):
        lo, hi = curve.observed_interval
        raise UsageError(
            f"curve {curve.id!r} observed on [{lo:.6g}, {hi:.6g}] is not inside the "
            "eigensystem subdomain"
        )


def integral_scores(
    curve: Curve,
    eigsys: EigenSystem,
    mean: MeanEstimate,
    k: int,
    quadrature: str = "riemann",
) -> ScoreVector:
    """Scores by numeric integration of the centered observations.

    The default rule is the one-sided Riemann sum over the ordered
    observations (the first point enters only through increments);
    ``quadrature="trapezoid"`` switches to trapezoid weights, which is the
    right rule for densely gridded curves.
    """
    k = _check_k(k, eigsys)
    _check_domain(curve, eigsys)
    flags: list[str] = []
    if curve.n_obs < 2:
        return ScoreVector(curve.id, np.zeros(k), "integral", ("insufficient points",))
    u, y = curve.u, curve.y  # already sorted
    resid = y - mean.at(u)
    if quadrature == "riemann":
        weights = np.concatenate([[0.0], np.diff(u)])
    elif quadrature == "trapezoid":
        weights = np.empty_like(u)
        weights[0] = 0.5 * (u[1] - u[0])
        weights[-1] = 0.5 * (u[-1] - u[-2])
        if u.size > 2:
            weights[1:-1] = 0.5 * (u[2:] - u[:-2])
    else:
        raise UsageError(f"unknown quadrature {quadrature!r}")
    phi = eigsys.phi_at(u, k)
    values = phi.T @ (resid * weights)
    return ScoreVector(curve.id, values, "integral", tuple(flags))


def _observation_covariance(
    curve: Curve, eigsys: EigenSystem, sigma2: NoiseVariance
) -> np.ndarray:
    # Eigen-reconstructed covariance at the observation points: positive
    # semidefinite by construction and consistent with the lambda/phi pair
    # used in the score formula, unlike the raw smoothed surface.
    phi = eigsys.phi_at(curve.u)
    S = (phi * eigsys.eigenvalues[None, :]) @ phi.T
    S = 0.5 * (S + S.T)
    S[np.diag_indices_from(S)] += sigma2.sigma2
    return S


def _solve_spd(S: np.ndarray, rhs: np.ndarray):
    """Cholesky solve with the one-shot jitter policy.

    Returns (solution, condition_estimate, jittered). A matrix that stays
    non positive definite after one ridge of 1e-8 * trace/m raises.
    """
    m = S.shape[0]
    try:
        c, low = cho_factor(S, lower=True, check_finite=False)
        jittered = False
    except np.linalg.LinAlgError:
        ridge = CE_JITTER_REL * float(np.trace(S)) / m
        S = S + ridge * np.eye(m)
        try:
            c, low = cho_factor(S, lower=True, check_finite=False)
            jittered = True
        except np.linalg.LinAlgError:
            try:
                evals = np.linalg.eigvalsh(S)
                cond = float(np.abs(evals).max() / max(np.abs(evals).min(), 1e-300))
            except np.linalg.LinAlgError:
                cond = float("inf")
            raise IllConditionedError("ill-conditioned score system", cond) from None
    diag = np.diagonal(c)
    cond_est = float((diag.max() / max(diag.min(), 1e-300)) ** 2)
    return cho_solve((c, low), rhs, check_finite=False), cond_est, jittered


def ce_scores(
    curve: Curve,
    eigsys: EigenSystem,
    cov: CovarianceEstimate,
    sigma2: NoiseVariance,
    mean: MeanEstimate,
    k: int,
) -> ScoreVector:
    """Conditional-expectation scores: best linear prediction given the observations.

    Builds the observation covariance matrix from the eigen-reconstruction
    of the smoothed surface (all retained components) plus the noise
    variance on the diagonal, and solves the symmetric system; no explicit
    inverse is formed. A non positive definite matrix gets one
    deterministic ridge before failing; an ill-conditioned but solvable
    system is flagged and solved as is.
    """
    k = _check_k(k, eigsys)
    _check_domain(curve, eigsys)
    flags: list[str] = []
    S = _observation_covariance(curve, eigsys, sigma2)
    resid = curve.y - mean.at(curve.u)
    sol, cond_est, jittered = _solve_spd(S, resid)
    if jittered:
        flags.append("jitter applied")
    if cond_est > CONDITION_FLAG_THRESHOLD:
        flags.append(f"ill-conditioned (cond~{cond_est:.2e})")
    phi = eigsys.phi_at(curve.u, k)
    values = eigsys.eigenvalues[:k] * (phi.T @ sol)
    return ScoreVector(curve.id, values, "conditional_expectation", tuple(flags))


def pace_scores(
    curve: Curve,
    full_eigsys: EigenSystem,
    cov: CovarianceEstimate,
    sigma2: NoiseVariance,
    mean: MeanEstimate,
    k: int,
) -> ScoreVector:
    """Conditional-expectation scores against the full-domain eigensystem."""
    if full_eigsys.subdomain.grid_indices.size != full_eigsys.grid.size:
        raise UsageError("pace scores need an eigensystem on the full domain")
    return ce_scores(curve, full_eigsys, cov, sigma2, mean, k)
