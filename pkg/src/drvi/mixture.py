"""Finite Gaussian mixtures: densities, sampling, factor-model regimes and
fixed Monte Carlo pools for loss/gradient expectations.

Weight vectors are plain numpy arrays on the probability simplex; use
:func:`check_weights` to validate them.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

__all__ = [
    "DomainViolationError",
    "FactorModelConfig",
    "GaussianComponent",
    "Regime",
    "SamplePool",
    "build_pools",
    "check_weights",
    "components_from_json",
    "components_to_json",
    "expectations",
    "mixture_log_pdf",
    "pool_to_csv",
    "regime_distribution",
    "sample_mixture",
]

_LOG_2PI = float(np.log(2.0 * np.pi))
_CHOLESKY_JITTER = 1e-12


class DomainViolationError(ValueError):
    """Some pooled sample makes 1 + x'xi nonpositive (log loss undefined)."""

    def __init__(self, component: int, min_value: float):
        self.component = component
        self.min_value = min_value
        where = "the training atoms" if component < 0 else f"component {component}"
        super().__init__(
            f"1 + x'xi <= 0 on {where} "
            f"(minimum value {min_value:.6g}); portfolio leaves the log domain"
        )


def check_weights(theta, tol: float = 1e-10) -> np.ndarray:
    """Validate a mixture weight vector: entries in [0, 1], sum 1 within tol."""
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1:
        raise ValueError("weight vector must be one-dimensional")
    if np.any(theta < -tol) or np.any(theta > 1 + tol):
        raise ValueError(f"weights outside [0, 1]: {theta}")
    s = theta.sum()
    if abs(s - 1.0) > tol:
        raise ValueError(f"weights sum to {s!r}, expected 1 within {tol}")
    return theta


@dataclass(frozen=True)
class GaussianComponent:
    """A fixed multivariate normal mixture component.

    covariance must be symmetric within 1e-12 with eigenvalues >= -1e-12.
    """

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise ValueError(f"covariance shape {cov.shape} does not match mean length {d}")
        if not np.allclose(cov, cov.T, atol=1e-12, rtol=0.0):
            raise ValueError("covariance must be symmetric within 1e-12")
        if np.linalg.eigvalsh(cov).min() < -1e-12:
            raise ValueError("covariance has an eigenvalue below -1e-12")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @cached_property
    def _chol(self) -> np.ndarray:
        try:
            return np.linalg.cholesky(self.covariance)
        except np.linalg.LinAlgError:
            # rank-deficient covariances (e.g. zero loadings) need a nudge
            d = self.dim
            return np.linalg.cholesky(self.covariance + _CHOLESKY_JITTER * np.eye(d))

    @cached_property
    def _log_norm(self) -> float:
        return -0.5 * (self.dim * _LOG_2PI) - float(np.log(np.diag(self._chol)).sum())

    def log_pdf(self, points) -> np.ndarray:
        """Log density at each row of points (shape (m, d) or (d,))."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.dim:
            raise ValueError(f"points have dimension {pts.shape[1]}, component has {self.dim}")
        diff = (pts - self.mean).T
        w = solve_triangular(self._chol, diff, lower=True)
        return self._log_norm - 0.5 * np.einsum("ij,ij->j", w, w)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        z = rng.standard_normal((count, self.dim))
        return self.mean + z @ self._chol.T


@dataclass(frozen=True)
class Regime:
    """One factor-model regime: xi_m = a_m + b_m * z + e_m."""

    intercepts: np.ndarray
    loadings: np.ndarray
    factor_mean: float
    factor_var: float
    residual_var: float

    def __post_init__(self):
        object.__setattr__(self, "intercepts", np.asarray(self.intercepts, dtype=float))
        object.__setattr__(self, "loadings", np.asarray(self.loadings, dtype=float))
        if self.factor_var <= 0 or self.residual_var <= 0:
            raise ValueError("factor_var and residual_var must be positive")


@dataclass(frozen=True)
class FactorModelConfig:
    """Regime collection for the single-factor return model."""

    regimes: tuple[Regime, ...]
    asset_count: int

    def __post_init__(self):
        object.__setattr__(self, "regimes", tuple(self.regimes))
        for k, reg in enumerate(self.regimes):
            if reg.intercepts.shape != (self.asset_count,) or reg.loadings.shape != (self.asset_count,):
                raise ValueError(f"regime {k}: intercepts/loadings must have length {self.asset_count}")

    @property
    def regime_count(self) -> int:
        return len(self.regimes)


def regime_distribution(cfg: FactorModelConfig, j: int) -> GaussianComponent:
    """Gaussian implied by regime j: mean a + b*mu, covariance s_z^2 bb' + s_e^2 I."""
    if not 0 <= j < cfg.regime_count:
        raise IndexError(f"regime index {j} out of range [0, {cfg.regime_count})")
    reg = cfg.regimes[j]
    mean = reg.intercepts + reg.loadings * reg.factor_mean
    cov = reg.factor_var * np.outer(reg.loadings, reg.loadings) + reg.residual_var * np.eye(cfg.asset_count)
    return GaussianComponent(mean=mean, covariance=cov)


def mixture_log_pdf(theta, components: Sequence[GaussianComponent], point) -> np.ndarray:
    """log sum_j theta_j q_j(point), stabilized with log-sum-exp.

    point may be a single vector or a matrix of row vectors.
    """
    theta = check_weights(theta)
    if len(components) != theta.shape[0]:
        raise ValueError("theta length does not match component count")
    pts = np.atleast_2d(np.asarray(point, dtype=float))
    logq = np.column_stack([comp.log_pdf(pts) for comp in components])
    with np.errstate(divide="ignore"):
        logw = np.log(theta)
    out = logsumexp(logq + logw, axis=1)
    if np.asarray(point).ndim == 1:
        return float(out[0])
    return out


def sample_mixture(theta, components: Sequence[GaussianComponent], count: int, seed: int) -> np.ndarray:
    """Two-stage mixture draw: categorical labels on theta, then component draws.

    Exactly reproducible from (seed, theta, components, count).
    """
    theta = check_weights(theta)
    if not components:
        raise ValueError("component list is empty")
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    labels = rng.choice(len(components), size=count, p=theta / theta.sum())
    d = components[0].dim
    out = np.empty((count, d))
    for j, comp in enumerate(components):
        idx = np.flatnonzero(labels == j)
        if idx.size:
            out[idx] = comp.sample(rng, idx.size)
    return out


@dataclass(frozen=True)
class SamplePool:
    """A fixed common-random-number pool for one component's expectations."""

    samples: np.ndarray
    seed: int
    pool_size: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        object.__setattr__(self, "samples", samples)
        if self.pool_size < 1 or samples.shape[0] != self.pool_size:
            raise ValueError("pool_size must be >= 1 and match the sample matrix")


def build_pools(components: Sequence[GaussianComponent], pool_size: int, seed: int) -> list[SamplePool]:
    """One fixed pool per component; reused across all x so expectation
    estimates are deterministic and continuous in x."""
    if pool_size < 1:
        raise ValueError("pool_size must be >= 1")
    pools = []
    for j, comp in enumerate(components):
        rng = np.random.default_rng([int(seed), j])
        pools.append(SamplePool(samples=comp.sample(rng, pool_size), seed=int(seed), pool_size=pool_size))
    return pools


def expectations(pools: Sequence[SamplePool], x) -> tuple[np.ndarray, np.ndarray]:
    """Pool-mean loss values and gradients of -log(1 + x'xi) per component.

    Returns (phi_vec, grad_mat): phi_vec[j] is the mean loss under pool j and
    grad_mat[:, j] the mean gradient -xi / (1 + x'xi).  Raises
    DomainViolationError when some pooled sample has 1 + x'xi <= 0.
    """
    x = np.asarray(x, dtype=float)
    n = len(pools)
    d = x.shape[0]
    phi = np.empty(n)
    grad = np.empty((d, n))
    for j, pool in enumerate(pools):
        s = pool.samples @ x
        w = 1.0 + s
        mn = w.min()
        if mn <= 0.0:
            raise DomainViolationError(component=j, min_value=float(mn - 1.0))
        phi[j] = -np.log1p(s).mean()
        grad[:, j] = -(pool.samples.T @ (1.0 / w)) / pool.pool_size
    return phi, grad


def components_to_json(components: Sequence[GaussianComponent], path) -> None:
    """Write components as JSON records {mean, covariance}, one per regime."""
    payload = {
        "components": [
            {"mean": comp.mean.tolist(), "covariance": comp.covariance.tolist()}
            for comp in components
        ]
    }
    with open(path, "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def components_from_json(path) -> list[GaussianComponent]:
    with open(path) as fh:
        payload = json.load(fh)
    return [
        GaussianComponent(mean=np.asarray(rec["mean"]), covariance=np.asarray(rec["covariance"]))
        for rec in payload["components"]
    ]


def pool_to_csv(pool: SamplePool, path) -> None:
    """Export a pool to CSV, one row per draw."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{m}" for m in range(pool.samples.shape[1])])
        for row in pool.samples:
            writer.writerow([repr(float(v)) for v in row])
