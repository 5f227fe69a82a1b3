"""MAP weight estimation, observed-information posterior covariance, the
simultaneous-coverage radius and the resulting data-driven ambiguity set.

The posterior over mixture weights is approximated by a normal with
covariance from the inverse observed information (computed in reduced simplex
coordinates), and the per-coordinate radius gets a Bonferroni correction so
the box covers all coordinates jointly at the requested level.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .ambiguity import BoxSimplexSet
from .mixture import GaussianComponent, check_weights
from .quantiles import chi2_quantile, normal_quantile, tail_quantile

__all__ = [
    "BayesAmbiguityResult",
    "DirichletPrior",
    "PosteriorSummary",
    "SingularInformationError",
    "bonferroni_radius",
    "build_bayes_set",
    "chi2_quantile",
    "em_map",
    "normal_quantile",
    "observed_information",
    "posterior_summary",
    "responsibility_weights",
    "summary_from_json",
    "summary_to_json",
    "tail_quantile",
]

_INTERIOR_FLOOR = 1e-6


class SingularInformationError(ValueError):
    """Observed information is numerically singular (non-identifiable weights)."""

    def __init__(self, cond: float):
        self.cond = cond
        super().__init__(
            f"observed information matrix is singular (condition estimate {cond:.3e}); "
            "weights are not identifiable from the data"
        )


@dataclass(frozen=True)
class DirichletPrior:
    """Dirichlet concentration over mixture weights; all-ones is uniform."""

    concentration: np.ndarray

    def __post_init__(self):
        conc = np.asarray(self.concentration, dtype=float)
        object.__setattr__(self, "concentration", conc)
        if np.any(conc <= 0):
            raise ValueError("concentration entries must be positive")

    @classmethod
    def uniform(cls, n: int) -> "DirichletPrior":
        return cls(np.ones(n))


@dataclass(frozen=True)
class PosteriorSummary:
    """Weight estimate, posterior variance diagonal and coverage radius."""

    theta_hat: np.ndarray
    sigma_diag: np.ndarray
    delta_hat: float
    alpha: float
    sample_count: int

    def __post_init__(self):
        theta = check_weights(np.asarray(self.theta_hat, dtype=float), tol=1e-8)
        sig = np.asarray(self.sigma_diag, dtype=float)
        object.__setattr__(self, "theta_hat", theta)
        object.__setattr__(self, "sigma_diag", sig)
        if np.any(sig < 0):
            raise ValueError("sigma_diag entries must be nonnegative")
        expected = bonferroni_radius(sig, self.alpha)
        if abs(self.delta_hat - expected) > 1e-12 * max(1.0, expected):
            raise ValueError(
                f"delta_hat {self.delta_hat!r} does not match the Bonferroni radius {expected!r}"
            )


@dataclass(frozen=True)
class BayesAmbiguityResult:
    """Data-driven ambiguity set: center theta_hat, radius r_c + delta_hat."""

    set: BoxSimplexSet
    r_c: float


def _log_density_matrix(samples: np.ndarray, components: Sequence[GaussianComponent]) -> np.ndarray:
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    logq = np.column_stack([comp.log_pdf(samples) for comp in components])
    if not np.all(np.isfinite(logq)):
        bad = np.argwhere(~np.isfinite(logq))[0]
        raise ValueError(f"non-finite density at sample {bad[0]}, component {bad[1]}")
    return logq


def _log_posterior(theta: np.ndarray, logq: np.ndarray, conc: np.ndarray) -> float:
    with np.errstate(divide="ignore"):
        logw = np.log(theta)
    ll = float(logsumexp(logq + logw, axis=1).sum())
    prior = float(((conc - 1.0) * logw).sum()) if np.any(conc != 1.0) else 0.0
    return ll + prior


def em_map(
    samples,
    components: Sequence[GaussianComponent],
    prior: DirichletPrior | None = None,
    tol: float = 1e-10,
    max_iter: int = 10000,
    debug: bool = False,
) -> np.ndarray:
    """MAP mixture weights by EM on the Dirichlet-penalized likelihood.

    E-step responsibilities gamma_ij proportional to theta_j q_j(xi_i);
    M-step theta_j proportional to sum_i gamma_ij + a_j - 1 clamped at zero.
    Stops when the sup-norm change falls below tol; the result is clamped
    into [1e-6, 1 - 1e-6] coordinatewise and renormalized so downstream
    curvature evaluations stay off the boundary.  With debug=True every
    iteration asserts the log-posterior did not decrease.
    """
    logq = _log_density_matrix(samples, components)
    n = logq.shape[1]
    if n == 1:
        return np.ones(1)
    conc = DirichletPrior.uniform(n).concentration if prior is None else prior.concentration
    if conc.shape != (n,):
        raise ValueError("prior concentration length must match component count")
    if tol <= 0:
        raise ValueError("tol must be positive")

    theta = np.full(n, 1.0 / n)
    last_lp = _log_posterior(theta, logq, conc) if debug else None
    for _ in range(max_iter):
        with np.errstate(divide="ignore"):
            a = logq + np.log(theta)
        norm = logsumexp(a, axis=1)
        gamma = np.exp(a - norm[:, None])
        counts = np.maximum(gamma.sum(axis=0) + conc - 1.0, 0.0)
        theta_new = counts / counts.sum()
        if debug:
            lp = _log_posterior(np.clip(theta_new, 1e-300, None), logq, conc)
            assert lp >= last_lp - 1e-9 * max(1.0, abs(last_lp)), "EM decreased the log-posterior"
            last_lp = lp
        done = np.max(np.abs(theta_new - theta)) <= tol
        theta = theta_new
        if done:
            break
    theta = np.clip(theta, _INTERIOR_FLOOR, 1.0 - _INTERIOR_FLOOR)
    return theta / theta.sum()


def observed_information(
    theta_hat,
    components: Sequence[GaussianComponent],
    samples,
    prior: DirichletPrior | None = None,
    eliminate: int | None = None,
) -> np.ndarray:
    """Diagonal of the posterior covariance from inverse observed information.

    Works in reduced coordinates with one weight eliminated (default the
    last): H_jk = sum_i (q_j - q_e)(q_k - q_e)/u_i^2 plus prior curvature,
    then the ambient covariance is J H^{-1} J' for the affine embedding J.
    The output does not depend on which coordinate is eliminated.
    """
    theta_hat = check_weights(theta_hat, tol=1e-8)
    n = theta_hat.shape[0]
    if n == 1:
        return np.zeros(1)
    conc = DirichletPrior.uniform(n).concentration if prior is None else prior.concentration
    e = n - 1 if eliminate is None else int(eliminate)
    if not 0 <= e < n:
        raise ValueError("eliminate index out of range")

    logq = _log_density_matrix(samples, components)
    with np.errstate(divide="ignore"):
        logu = logsumexp(logq + np.log(theta_hat), axis=1)
    w = np.exp(logq - logu[:, None])  # q_j(xi_i) / u_i, numerically safe

    free = [j for j in range(n) if j != e]
    D = w[:, free] - w[:, [e]]
    H = D.T @ D
    # prior curvature of -(a_j - 1) log theta_j in the reduced coordinates
    H += np.diag((conc[free] - 1.0) / theta_hat[free] ** 2)
    H += (conc[e] - 1.0) / theta_hat[e] ** 2

    cond = float(np.linalg.cond(H))
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularInformationError(cond)
    cov_red = np.linalg.inv(H)
    J = np.zeros((n, n - 1))
    for col, j in enumerate(free):
        J[j, col] = 1.0
    J[e, :] = -1.0
    sigma_diag = np.einsum("ij,jk,ik->i", J, cov_red, J)
    return np.maximum(sigma_diag, 0.0)


def bonferroni_radius(sigma_diag, alpha: float) -> float:
    """max_j sqrt(sigma_jj) times the 1 - alpha/(2n) normal quantile."""
    sig = np.asarray(sigma_diag, dtype=float)
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if np.any(sig < 0):
        raise ValueError("sigma_diag entries must be nonnegative")
    n = sig.shape[0]
    z = normal_quantile(1.0 - alpha / (2.0 * n))
    return float(np.sqrt(sig).max() * z)


def posterior_summary(
    samples,
    components: Sequence[GaussianComponent],
    prior: DirichletPrior | None = None,
    alpha: float = 0.05,
    tol: float = 1e-10,
    max_iter: int = 10000,
    sigma_scaling: str = "bvm",
) -> PosteriorSummary:
    """Compose em_map, observed_information and bonferroni_radius.

    sigma_scaling picks the posterior covariance convention: "bvm" inverts
    the observed information as-is, "literal" divides it by the sample count
    once more (the tighter reading used for the CDF-envelope comparison).
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    N = samples.shape[0]
    theta_hat = em_map(samples, components, prior, tol=tol, max_iter=max_iter)
    sigma_diag = observed_information(theta_hat, components, samples, prior)
    if sigma_scaling == "literal":
        sigma_diag = sigma_diag / N
    elif sigma_scaling != "bvm":
        raise ValueError(f"unknown sigma_scaling {sigma_scaling!r}")
    delta_hat = bonferroni_radius(sigma_diag, alpha)
    return PosteriorSummary(
        theta_hat=theta_hat,
        sigma_diag=sigma_diag,
        delta_hat=delta_hat,
        alpha=alpha,
        sample_count=N,
    )


def responsibility_weights(theta_hat, components: Sequence[GaussianComponent], samples) -> np.ndarray:
    """Per-component posterior responsibility weights over the samples.

    Column j is gamma_ij / sum_i gamma_ij with gamma_ij proportional to
    theta_j q_j(xi_i); it estimates component-j expectations as weighted
    training averages.  At the EM fixed point the theta-weighted combination
    of the columns is exactly the uniform empirical distribution.
    """
    theta_hat = check_weights(theta_hat, tol=1e-8)
    logq = _log_density_matrix(samples, components)
    with np.errstate(divide="ignore"):
        a = logq + np.log(theta_hat)
    gamma = np.exp(a - logsumexp(a, axis=1)[:, None])
    col = gamma.sum(axis=0)
    if np.any(col <= 0):
        raise ValueError("a component received zero responsibility mass")
    return gamma / col


def build_bayes_set(summary: PosteriorSummary, r_c: float) -> BayesAmbiguityResult:
    """Ambiguity set centered at theta_hat with radius r_c + delta_hat."""
    if r_c < 0:
        raise ValueError("r_c must be nonnegative")
    set_ = BoxSimplexSet(center=summary.theta_hat, radius=r_c + summary.delta_hat)
    return BayesAmbiguityResult(set=set_, r_c=float(r_c))


def summary_to_json(summary: PosteriorSummary, path) -> None:
    payload = {
        "theta_hat": summary.theta_hat.tolist(),
        "sigma_diag": summary.sigma_diag.tolist(),
        "delta_hat": summary.delta_hat,
        "alpha": summary.alpha,
        "N": summary.sample_count,
    }
    with open(path, "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def summary_from_json(path) -> PosteriorSummary:
    with open(path) as fh:
        payload = json.load(fh)
    return PosteriorSummary(
        theta_hat=np.asarray(payload["theta_hat"]),
        sigma_diag=np.asarray(payload["sigma_diag"]),
        delta_hat=float(payload["delta_hat"]),
        alpha=float(payload["alpha"]),
        sample_count=int(payload["N"]),
    )
