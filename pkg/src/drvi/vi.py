"""Field assembly for the two-account robust Nash problem, feasible-set
projections, the fixed-step extragradient loop and its diagnostics.

Each account's field is the worst-case-weighted expected loss gradient plus a
competition pull toward the other account; the worst case comes from the
regularized lower-level maximizer over the account's ambiguity set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .ambiguity import (
    BoxSimplexSet,
    EmpiricalBall,
    empirical_linear_max,
    project_simplex,
    regularized_max,
)
from .mixture import DomainViolationError, SamplePool, expectations

__all__ = [
    "BayesNashField",
    "EmpiricalNashField",
    "LipschitzParams",
    "NashProblem",
    "SolveResult",
    "SolverConfig",
    "WeightedAtomsNashField",
    "bayes_field",
    "empirical_field",
    "estimate_lipschitz_params",
    "extragradient",
    "joint_projector",
    "lipschitz_bound",
    "natural_residual",
    "project_portfolio",
    "responsibility_field",
]


def project_portfolio(y) -> np.ndarray:
    """Project onto {x >= 0, sum x <= 1}.

    Clipping at zero suffices when the clipped point respects the budget;
    otherwise the projection lands on the full simplex face.
    """
    y = np.asarray(y, dtype=float)
    z = np.maximum(y, 0.0)
    if z.sum() <= 1.0:
        return z
    return project_simplex(y)


def joint_projector(d: int, account_count: int = 2) -> Callable[[np.ndarray], np.ndarray]:
    """Blockwise portfolio projection on the stacked account vector."""

    def proj(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        for i in range(account_count):
            out[i * d : (i + 1) * d] = project_portfolio(x[i * d : (i + 1) * d])
        return out

    return proj


@dataclass(frozen=True)
class SolverConfig:
    """Extragradient settings: step size, stop tolerance, cap, start point."""

    eta: float
    eps: float
    max_iter: int = 200000
    x0: np.ndarray | None = None

    def __post_init__(self):
        if self.eta <= 0 or self.eps <= 0:
            raise ValueError("eta and eps must be positive")
        if self.x0 is not None:
            object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))


@dataclass(frozen=True)
class SolveResult:
    """Terminal iterate, per-account maximizers and the residual trace."""

    x_star: np.ndarray
    theta_star: np.ndarray | None
    iterations: int
    stop_value: float
    residual_history: np.ndarray
    converged: bool
    iterates: list | None = None


@dataclass(frozen=True)
class NashProblem:
    """Declarative two-account game description consumed by the CLI.

    The study uses a shared ambiguity set across accounts; per_account may
    carry distinct sets for forward compatibility, but the bundled solvers
    require them equal.
    """

    asset_count: int
    kappa: float
    lam: float
    ambiguity: BoxSimplexSet | EmpiricalBall
    account_count: int = 2

    def __post_init__(self):
        if self.kappa < 0 or self.lam < 0:
            raise ValueError("kappa and lam must be nonnegative")
        if self.account_count != 2:
            raise ValueError("only the two-account game is implemented")


@dataclass(frozen=True)
class LipschitzParams:
    """Inputs of the field Lipschitz modulus for the log-loss Nash game."""

    beta: float
    sigma_bar_sq: float
    n: int
    lam: float
    kappa: float

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        if self.sigma_bar_sq <= 0:
            raise ValueError("sigma_bar_sq must be positive")


def lipschitz_bound(params: LipschitzParams) -> tuple[float, float]:
    """Worst-case field modulus and a default step strictly inside (0, 1/(2L)).

    L = (sqrt(2) + sqrt(2)/(2 lam)) n sigma_bar_sq / (1 - beta)^2
        + 2 sqrt(2) kappa.
    """
    if params.lam <= 0:
        raise ValueError("Lipschitz bound is undefined for lam = 0")
    s2 = np.sqrt(2.0)
    L = (s2 + s2 / (2.0 * params.lam)) * params.n * params.sigma_bar_sq / (1.0 - params.beta) ** 2
    L += 2.0 * s2 * params.kappa
    return float(L), float(0.45 / L)


def estimate_lipschitz_params(
    pools: Sequence[SamplePool], lam: float, kappa: float
) -> LipschitzParams:
    """Empirical modulus inputs from fixed pools.

    sigma_bar_sq is the largest pooled mean of ||xi||^2; beta comes from the
    most negative pooled coordinate (a feasible portfolio cannot lose more
    than the worst single-asset return), capped below 1.
    """
    sigma = max(float((p.samples**2).sum(axis=1).mean()) for p in pools)
    worst = min(float(p.samples.min()) for p in pools)
    beta = min(max(0.0, -worst), 0.99)
    return LipschitzParams(beta=beta, sigma_bar_sq=sigma, n=len(pools), lam=lam, kappa=kappa)


class BayesNashField:
    """Deterministic joint field from expectation pools and a parametric set.

    Per account i: (phi, G) are the pooled loss values/gradients at x^i, the
    worst case theta*(x^i) maximizes theta'phi - lam ||theta||^2 over the
    set, and F_i = G theta* + kappa (x^i - x^{-i}).  Pools are stacked once
    so both accounts evaluate through shared matrix products.
    """

    def __init__(self, pools, set_: BoxSimplexSet, lam: float, kappa: float, account_count: int = 2):
        if lam <= 0:
            raise ValueError("lam must be positive")
        if kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if not set_.feasible:
            raise ValueError("ambiguity set is infeasible")
        self.pools = tuple(pools)
        self.set = set_
        self.lam = float(lam)
        self.kappa = float(kappa)
        self.account_count = account_count
        self.d = self.pools[0].samples.shape[1]
        self._degenerate = set_.radius == 0.0
        self._stacked = np.ascontiguousarray(np.vstack([p.samples for p in self.pools]))
        sizes = [p.pool_size for p in self.pools]
        edges = np.concatenate([[0], np.cumsum(sizes)])
        self._segments = [(int(edges[j]), int(edges[j + 1])) for j in range(len(sizes))]

    def _worst_case(self, phi: np.ndarray) -> np.ndarray:
        if self._degenerate:
            return self.set.center
        return regularized_max(self.set, phi, self.lam).maximizer

    def _account_eval(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """phi (n, I) and loss gradients stacked per component for the
        account columns of X (d, I)."""
        s = self._stacked @ X
        w = 1.0 + s
        n = len(self.pools)
        I = X.shape[1]
        phi = np.empty((n, I))
        grads = np.empty((n, self.d, I))
        for j, (a, b) in enumerate(self._segments):
            wj = w[a:b]
            mn = wj.min()
            if mn <= 0.0:
                raise DomainViolationError(component=j, min_value=float(mn - 1.0))
            size = b - a
            phi[j] = -np.log1p(s[a:b]).mean(axis=0)
            grads[j] = -(self._stacked[a:b].T @ (1.0 / wj)) / size
        return phi, grads

    def account_value_grad(self, z: np.ndarray) -> tuple[float, np.ndarray]:
        """Worst-case objective max_theta theta'phi(z) - lam ||theta||^2 and
        its gradient G theta* for a single account (Danskin)."""
        phi, grads = self._account_eval(np.asarray(z, dtype=float)[:, None])
        theta = self._worst_case(phi[:, 0])
        value = float(theta @ phi[:, 0] - self.lam * (theta @ theta))
        grad = np.einsum("j,jd->d", theta, grads[:, :, 0])
        return value, grad

    def maximizers(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        X = x.reshape(self.account_count, self.d).T
        phi, _ = self._account_eval(X)
        return np.array([self._worst_case(phi[:, i]) for i in range(self.account_count)])

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d = self.d
        X = x.reshape(self.account_count, d).T
        phi, grads = self._account_eval(X)
        F = np.empty_like(x)
        for i in range(self.account_count):
            theta = self._worst_case(phi[:, i])
            gi = np.einsum("j,jd->d", theta, grads[:, :, i])
            other = X[:, 1 - i] if self.account_count == 2 else X.sum(axis=1) - X[:, i]
            F[i * d : (i + 1) * d] = gi + self.kappa * (X[:, i] - other)
        return F


class EmpiricalNashField:
    """Joint field over training atoms with an l1/chi2 worst-case reweighting.

    rho = 0 is the sample-average field (uniform weights); lam = 0 uses the
    exact unregularized maximizer with deterministic tie-breaks.
    """

    def __init__(self, atoms, kind: str, rho: float, lam: float, kappa: float, account_count: int = 2):
        atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
        if rho < 0 or lam < 0 or kappa < 0:
            raise ValueError("rho, lam and kappa must be nonnegative")
        self.atoms = atoms
        self.kind = kind
        self.rho = float(rho)
        self.lam = float(lam)
        self.kappa = float(kappa)
        self.account_count = account_count
        self.N, self.d = atoms.shape

    def _losses(self, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s = self.atoms @ xi
        w = 1.0 + s
        mn = w.min()
        if mn <= 0.0:
            raise DomainViolationError(component=-1, min_value=float(mn - 1.0))
        return -np.log1p(s), w

    def _worst_case(self, c: np.ndarray) -> np.ndarray:
        if self.rho == 0.0 or self.N == 1:
            return np.full(self.N, 1.0 / self.N)
        return empirical_linear_max(self.kind, self.N, self.rho, c, self.lam).maximizer

    def account_value_grad(self, z: np.ndarray) -> tuple[float, np.ndarray]:
        """Worst-case objective and gradient for a single account."""
        c, w = self._losses(np.asarray(z, dtype=float))
        p = self._worst_case(c)
        value = float(p @ c - self.lam * (p @ p))
        return value, -(self.atoms.T @ (p / w))

    def maximizers(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = []
        for i in range(self.account_count):
            xi = x[i * self.d : (i + 1) * self.d]
            c, _ = self._losses(xi)
            out.append(self._worst_case(c))
        return np.array(out)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d = self.d
        blocks = [x[i * d : (i + 1) * d] for i in range(self.account_count)]
        F = np.empty_like(x)
        for i, xi in enumerate(blocks):
            c, w = self._losses(xi)
            p = self._worst_case(c)
            grad = -(self.atoms.T @ (p / w))
            other = blocks[1 - i] if self.account_count == 2 else sum(blocks) - xi
            F[i * d : (i + 1) * d] = grad + self.kappa * (xi - other)
        return F


class WeightedAtomsNashField:
    """Parametric-set field whose component expectations are weighted
    training-sample averages (one weight column per component).

    With the posterior responsibility weights and a degenerate set this
    reduces exactly to the sample-average field.
    """

    def __init__(self, atoms, weights, set_: BoxSimplexSet, lam: float, kappa: float, account_count: int = 2):
        atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
        weights = np.atleast_2d(np.asarray(weights, dtype=float))
        if lam <= 0:
            raise ValueError("lam must be positive")
        if kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if weights.shape[0] != atoms.shape[0]:
            raise ValueError("weights must have one row per atom")
        if np.any(weights < 0) or np.any(np.abs(weights.sum(axis=0) - 1.0) > 1e-8):
            raise ValueError("each weight column must be a probability vector over atoms")
        if not set_.feasible:
            raise ValueError("ambiguity set is infeasible")
        if set_.dim != weights.shape[1]:
            raise ValueError("set dimension must match the weight column count")
        self.atoms = atoms
        self.weights = weights
        self.set = set_
        self.lam = float(lam)
        self.kappa = float(kappa)
        self.account_count = account_count
        self.N, self.d = atoms.shape
        self._degenerate = set_.radius == 0.0

    def _component_terms(self, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s = self.atoms @ xi
        w = 1.0 + s
        mn = w.min()
        if mn <= 0.0:
            raise DomainViolationError(component=-1, min_value=float(mn - 1.0))
        phi = self.weights.T @ (-np.log1p(s))
        G = -(self.atoms * (1.0 / w)[:, None]).T @ self.weights
        return phi, G

    def _worst_case(self, phi: np.ndarray) -> np.ndarray:
        if self._degenerate:
            return self.set.center
        return regularized_max(self.set, phi, self.lam).maximizer

    def account_value_grad(self, z: np.ndarray) -> tuple[float, np.ndarray]:
        phi, G = self._component_terms(np.asarray(z, dtype=float))
        theta = self._worst_case(phi)
        value = float(theta @ phi - self.lam * (theta @ theta))
        return value, G @ theta

    def maximizers(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = []
        for i in range(self.account_count):
            phi, _ = self._component_terms(x[i * self.d : (i + 1) * self.d])
            out.append(self._worst_case(phi))
        return np.array(out)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d = self.d
        blocks = [x[i * d : (i + 1) * d] for i in range(self.account_count)]
        F = np.empty_like(x)
        for i, xi in enumerate(blocks):
            phi, G = self._component_terms(xi)
            theta = self._worst_case(phi)
            other = blocks[1 - i] if self.account_count == 2 else sum(blocks) - xi
            F[i * d : (i + 1) * d] = G @ theta + self.kappa * (xi - other)
        return F


def bayes_field(pools, set_: BoxSimplexSet, lam: float, kappa: float) -> BayesNashField:
    """Field evaluator for the parametric (posterior-box) Nash problem."""
    return BayesNashField(pools, set_, lam, kappa)


def responsibility_field(atoms, weights, set_: BoxSimplexSet, lam: float, kappa: float) -> WeightedAtomsNashField:
    """Parametric field with component expectations estimated from the
    training atoms via posterior responsibility weights."""
    return WeightedAtomsNashField(atoms, weights, set_, lam, kappa)


def empirical_field(atoms, kind: str, rho: float, lam: float, kappa: float) -> EmpiricalNashField:
    """Field evaluator for the empirical-ball baselines (rho = 0 is SAA)."""
    return EmpiricalNashField(atoms, kind, rho, lam, kappa)


def extragradient(
    F: Callable[[np.ndarray], np.ndarray],
    projector: Callable[[np.ndarray], np.ndarray],
    cfg: SolverConfig,
    record_iterates: bool = False,
) -> SolveResult:
    """Fixed-step extragradient: y = Proj(x - eta F(x)), x+ = Proj(x - eta F(y)).

    Stops when ||x+ - y|| + ||y - x|| <= eps; hitting max_iter reports
    converged=False with the residual history instead of raising.
    """
    if cfg.x0 is None:
        raise ValueError("SolverConfig.x0 must be set")
    x = projector(np.asarray(cfg.x0, dtype=float))
    history = []
    iterates = [x.copy()] if record_iterates else None
    converged = False
    stop = np.inf
    iterations = 0
    for k in range(cfg.max_iter):
        y = projector(x - cfg.eta * F(x))
        x_next = projector(x - cfg.eta * F(y))
        stop = float(np.linalg.norm(x_next - y) + np.linalg.norm(y - x))
        history.append(stop)
        x = x_next
        iterations = k + 1
        if record_iterates:
            iterates.append(x.copy())
        if stop <= cfg.eps:
            converged = True
            break
    theta = None
    maximizers = getattr(F, "maximizers", None)
    if callable(maximizers):
        theta = maximizers(x)
    return SolveResult(
        x_star=x,
        theta_star=theta,
        iterations=iterations,
        stop_value=stop,
        residual_history=np.asarray(history),
        converged=converged,
        iterates=iterates,
    )


def natural_residual(F, projector, x) -> float:
    """||x - Proj(x - F(x))||_2; zero exactly at solutions."""
    x = np.asarray(x, dtype=float)
    return float(np.linalg.norm(x - projector(x - F(x))))
