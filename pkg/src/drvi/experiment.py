"""End-to-end multi-portfolio Nash study: regime presets, the simulated true
equilibrium, four data-driven methods over sample-size sweeps and the four
evaluation metrics, aggregated into reproducible report tables.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .ambiguity import BoxSimplexSet, empirical_radius
from .bayes import build_bayes_set, posterior_summary, responsibility_weights
from .mixture import (
    FactorModelConfig,
    GaussianComponent,
    Regime,
    SamplePool,
    build_pools,
    expectations,
    regime_distribution,
    sample_mixture,
)
from .vi import (
    SolveResult,
    SolverConfig,
    bayes_field,
    empirical_field,
    estimate_lipschitz_params,
    extragradient,
    joint_projector,
    project_portfolio,
    responsibility_field,
)

__all__ = [
    "BenchmarkReport",
    "ExperimentConfig",
    "MetricsReport",
    "METHODS",
    "benchmark",
    "derive_seed",
    "experiment_config",
    "metrics",
    "run_method",
    "sec5_components",
    "sec5_factor_config",
    "sec22_components",
    "solve_truth",
    "utility",
]

METHODS = ("l1", "chi2", "saa", "bayes")
METRIC_NAMES = ("residual", "utility_error", "sharpe", "raroc")


def sec5_factor_config() -> FactorModelConfig:
    """Three-regime single-factor model for d = 10 assets.

    Bear, oscillating and bull regimes with intercepts -0.0005 / 0 / 0.0005,
    loadings increasing linearly across assets and regime-specific factor
    and residual variances.
    """
    d = 10
    m = np.arange(d)
    regimes = (
        Regime(
            intercepts=np.full(d, -0.0005),
            loadings=0.60 + 0.02 * m,
            factor_mean=0.005,
            factor_var=0.001,
            residual_var=2e-5,
        ),
        Regime(
            intercepts=np.zeros(d),
            loadings=0.80 + 0.015 * m,
            factor_mean=0.010,
            factor_var=0.004,
            residual_var=1e-5,
        ),
        Regime(
            intercepts=np.full(d, 0.0005),
            loadings=1.00 + 0.01 * m,
            factor_mean=0.015,
            factor_var=0.007,
            residual_var=0.5e-5,
        ),
    )
    return FactorModelConfig(regimes=regimes, asset_count=d)


def sec5_components(cfg: FactorModelConfig | None = None) -> list[GaussianComponent]:
    cfg = cfg or sec5_factor_config()
    return [regime_distribution(cfg, j) for j in range(cfg.regime_count)]


def sec22_components() -> list[GaussianComponent]:
    """Five 1-D Gaussians used for the CDF-envelope comparison: three mean-0
    components with increasing spread plus symmetric skew adjusters."""
    means = (0.0, 0.0, 0.0, -2.8, 2.8)
    variances = (0.45, 1.1, 4.0, 0.8, 0.8)
    return [
        GaussianComponent(mean=np.array([mu]), covariance=np.array([[v]]))
        for mu, v in zip(means, variances)
    ]


@dataclass(frozen=True)
class ExperimentConfig:
    """Defaults follow the multi-portfolio study; the desk preset shrinks the
    simulation and trial counts for CI-scale runs."""

    factor: FactorModelConfig = field(default_factory=sec5_factor_config)
    theta_c: tuple = (0.5, 0.25, 0.25)
    r_c: float = 0.0
    kappa: float = 0.1
    lam: float = 0.01
    alpha: float = 0.05
    sample_sizes: tuple = (20, 50, 500, 1000, 3000)
    trials: int = 100
    n_sim: int = 10**6
    n_test: int = 5000
    tail_level: float = 0.10
    base_seed: int = 7
    pool_size: int = 20000
    solver_eps: float = 1e-6
    solver_eta: float | None = None
    max_iter: int = 200000
    method_max_iter: int = 300
    truth_eps: float = 1e-9
    sigma_scaling: str = "bvm"
    baseline_lambda: float | None = None
    tail_convention: str = "as_paper"
    methods: tuple = METHODS

    def __post_init__(self):
        if self.tail_level <= 0 or self.tail_level >= 1:
            raise ValueError("tail_level must lie in (0, 1)")
        for name in ("kappa", "lam", "alpha", "trials", "n_sim", "n_test", "pool_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.tail_convention not in ("as_paper", "upper"):
            raise ValueError(f"unknown tail_convention {self.tail_convention!r}")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")


def experiment_config(preset: str = "sec5", **overrides) -> ExperimentConfig:
    """Named presets: "sec5" is the full study, "desk" the CI-scale run."""
    if preset == "sec5":
        cfg = ExperimentConfig()
    elif preset == "desk":
        cfg = ExperimentConfig(n_sim=10**5, trials=20, sample_sizes=(20, 200, 1000))
    else:
        raise ValueError(f"unknown preset {preset!r}")
    return replace(cfg, **overrides) if overrides else cfg


def derive_seed(base_seed: int, *parts) -> int:
    """Stable 63-bit seed from the base seed and a label path."""
    text = repr((int(base_seed),) + tuple(parts)).encode()
    return int.from_bytes(hashlib.sha256(text).digest()[:8], "big") >> 1


@dataclass(frozen=True)
class MetricsReport:
    """Per-trial metrics with run identifiers."""

    residual: float
    utility_error: float
    sharpe: float
    raroc: float
    sharpe_defined: bool = True
    raroc_sign_degenerate: bool = False
    method: str = ""
    sample_size: int = 0
    trial: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.residual < 0 or self.utility_error < 0:
            raise ValueError("residual and utility_error must be nonnegative")

    def value(self, name: str) -> float:
        return getattr(self, name)


@dataclass(frozen=True)
class BenchmarkReport:
    """Per (method, N) means/variances of the four metrics over trials."""

    cells: dict
    per_trial: tuple
    failures: tuple
    config: ExperimentConfig

    def mean(self, method: str, N: int, metric: str) -> float:
        return self.cells[(method, N)][metric][0]

    def variance(self, method: str, N: int, metric: str) -> float:
        return self.cells[(method, N)][metric][1]

    def completed(self, method: str, N: int) -> int:
        return self.cells[(method, N)]["trials_completed"]


class RunContext:
    """Shared deterministic state for one benchmark run: regime components,
    method expectation pools, the truth solve and the fixed test set."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.components = sec5_components(cfg.factor)
        self.theta_c = np.asarray(cfg.theta_c, dtype=float)
        self.d = cfg.factor.asset_count
        self.projector = joint_projector(self.d)
        self.x0 = np.full(2 * self.d, 1.0 / (2.0 * self.d))
        self.truth_pools = build_pools(self.components, cfg.n_sim, derive_seed(cfg.base_seed, "truth-pools"))
        self.method_pools = build_pools(self.components, cfg.pool_size, derive_seed(cfg.base_seed, "method-pools"))
        self.test_returns = sample_mixture(
            self.theta_c, self.components, cfg.n_test, derive_seed(cfg.base_seed, "test-set")
        )
        self.truth = solve_truth(cfg, pools=self.truth_pools, x0=self.x0)


def _practical_eta(pools, kappa: float) -> float:
    """Step size from the local field curvature rather than the worst-case
    modulus: the weighted loss Hessian is bounded by the largest pooled
    second moment, and the worst-case weights are piecewise constant in x.
    """
    params = estimate_lipschitz_params(pools, lam=1.0, kappa=kappa)
    L = np.sqrt(2.0) * (params.sigma_bar_sq / (1.0 - params.beta) ** 2 + 2.0 * kappa)
    return float(0.45 / L)


def _spg_minimize(value_grad, project, z0, tol: float, max_evals: int = 600) -> np.ndarray:
    """Nonmonotone spectral projected gradient on a convex account objective.

    Handles the near-flat directions of the factor geometry far better than
    a fixed small step; used only to produce a warm start, so the returned
    point is always re-certified by the extragradient stop rule.  The eval
    budget keeps pathological line searches bounded.
    """
    z = project(np.asarray(z0, dtype=float))
    f, g = value_grad(z)
    evals = 1
    alpha = 1.0
    recent = [f]
    best_z, best_pg = z, np.inf
    while evals < max_evals:
        pg = float(np.linalg.norm(project(z - g) - z))
        if pg < best_pg:
            best_z, best_pg = z, pg
        if pg <= tol:
            break
        step = project(z - alpha * g) - z
        gd = float(g @ step)
        if gd >= -1e-18:
            break
        t = 1.0
        f_ref = max(recent[-10:])
        z_new, f_new, g_new = z, f, g
        for _ in range(30):
            z_new = project(z + t * step)
            f_new, g_new = value_grad(z_new)
            evals += 1
            if f_new <= f_ref + 1e-4 * t * gd or evals >= max_evals:
                break
            t *= 0.5
        s = z_new - z
        y = g_new - g
        sy = float(s @ y)
        alpha = min(1e10, max(1e-12, float(s @ s) / sy)) if sy > 0 else 1e4
        z, f, g = z_new, f_new, g_new
        recent.append(f)
    return best_z if best_pg < np.inf else z


def _solve(
    field,
    cfg: ExperimentConfig,
    x0,
    eps: float,
    eta: float | None,
    max_iter: int | None = None,
    warm_start: bool = True,
) -> SolveResult:
    d = field.d
    projector = joint_projector(d, field.account_count)
    if eta is None:
        pools = getattr(field, "pools", None)
        if pools is None:
            pools = [SamplePool(samples=field.atoms, seed=0, pool_size=field.atoms.shape[0])]
        eta = _practical_eta(pools, field.kappa)
    cap = cfg.max_iter if max_iter is None else max_iter

    # the game is symmetric across accounts, so the equilibrium solves the
    # single-account worst-case problem; warm-starting there lets the
    # extragradient certificate trigger without crawling through the
    # near-flat asset directions
    x_start = np.asarray(x0, dtype=float)
    if warm_start and field.account_count == 2 and field.lam > 0:
        z0 = 0.5 * (x_start[:d] + x_start[d:])
        z = _spg_minimize(field.account_value_grad, project_portfolio, z0, tol=eps / 20.0)
        x_start = np.concatenate([z, z])

    result = extragradient(field, projector, SolverConfig(eta=eta, eps=eps, max_iter=cap, x0=x_start))
    if not result.converged and (
        not np.isfinite(result.stop_value)
        or result.stop_value > 10.0 * result.residual_history[0]
    ):
        # divergence safeguard: one deterministic retry with a smaller step
        result = extragradient(
            field, projector, SolverConfig(eta=eta / 4.0, eps=eps, max_iter=cap, x0=x_start)
        )
    return result


def solve_truth(cfg: ExperimentConfig, pools=None, x0=None) -> SolveResult:
    """Simulated true equilibrium: degenerate ambiguity {theta_c}, pools of
    size n_sim per regime, extragradient to the truth tolerance."""
    components = sec5_components(cfg.factor)
    if pools is None:
        pools = build_pools(components, cfg.n_sim, derive_seed(cfg.base_seed, "truth-pools"))
    if x0 is None:
        d = cfg.factor.asset_count
        x0 = np.full(2 * d, 1.0 / (2.0 * d))
    set0 = BoxSimplexSet(center=np.asarray(cfg.theta_c, dtype=float), radius=0.0)
    fld = bayes_field(pools, set0, cfg.lam, cfg.kappa)
    return _solve(fld, cfg, x0, eps=cfg.truth_eps, eta=cfg.solver_eta)


def run_method(method: str, train: np.ndarray, cfg: ExperimentConfig, ctx: RunContext) -> SolveResult:
    """Solve one data-driven instance.

    bayes fits the posterior box and uses the pooled parametric field; saa is
    the rho = 0 empirical field; l1/chi2 use their concentration radii.
    """
    train = np.atleast_2d(np.asarray(train, dtype=float))
    if train.shape[0] < 1:
        raise ValueError("training set is empty")
    lam_base = cfg.lam if cfg.baseline_lambda is None else cfg.baseline_lambda
    if method == "bayes":
        summary = posterior_summary(
            train, ctx.components, alpha=cfg.alpha, sigma_scaling=cfg.sigma_scaling
        )
        amb = build_bayes_set(summary, cfg.r_c)
        # component expectations are estimated from the training atoms via
        # posterior responsibilities, the data-driven plug-in whose noise
        # shrinks with N; with a zero radius this is exactly the SAA field
        weights = responsibility_weights(summary.theta_hat, ctx.components, train)
        fld = responsibility_field(train, weights, amb.set, cfg.lam, cfg.kappa)
    elif method == "saa":
        fld = empirical_field(train, "l1", 0.0, lam_base, cfg.kappa)
    elif method in ("l1", "chi2"):
        rho = empirical_radius(method, train.shape[0], cfg.alpha)
        fld = empirical_field(train, method, rho, lam_base, cfg.kappa)
    else:
        raise ValueError(f"unknown method {method!r}")
    return _solve(
        fld, cfg, ctx.x0, eps=cfg.solver_eps, eta=cfg.solver_eta, max_iter=cfg.method_max_iter
    )


def utility(x: np.ndarray, pools, theta_c: np.ndarray, kappa: float) -> float:
    """Account-1 sample-average utility plus the competition penalty,
    estimated on the simulation pools stratified by regime weight."""
    d = pools[0].samples.shape[1]
    x1, x2 = x[:d], x[d:]
    phi, _ = expectations(pools, x1)
    return float(phi @ theta_c + 0.5 * kappa * ((x1 - x2) @ (x1 - x2)))


def metrics(
    x_star: np.ndarray,
    x_c: np.ndarray,
    sim_pools,
    test_returns: np.ndarray,
    cfg: ExperimentConfig,
    **identifiers,
) -> MetricsReport:
    """Residual distance, squared relative utility error, Sharpe ratio and
    tail-risk-adjusted return on the fixed test set."""
    x_star = np.asarray(x_star, dtype=float)
    x_c = np.asarray(x_c, dtype=float)
    theta_c = np.asarray(cfg.theta_c, dtype=float)
    residual = float(np.linalg.norm(x_star - x_c))

    u_star = utility(x_star, sim_pools, theta_c, cfg.kappa)
    u_true = utility(x_c, sim_pools, theta_c, cfg.kappa)
    if u_true == 0.0:
        raise ValueError("true utility is zero; relative error undefined")
    utility_error = float(((u_star - u_true) / u_true) ** 2)

    d = x_c.shape[0] // 2
    returns = np.asarray(test_returns, dtype=float) @ x_star[:d]
    r_bar = float(returns.mean())
    spread = float(returns.std(ddof=1)) if returns.shape[0] > 1 else 0.0
    sharpe_defined = spread > 0.0
    sharpe = r_bar / spread if sharpe_defined else float("nan")

    losses = np.sort(-returns)
    n_test = losses.shape[0]
    q = cfg.tail_level if cfg.tail_convention == "as_paper" else 1.0 - cfg.tail_level
    idx = int(np.ceil(q * n_test)) - 1
    var = losses[min(max(idx, 0), n_test - 1)]
    tail = losses[losses >= var]
    es = float(tail.mean())
    raroc_sign_degenerate = es <= 0.0
    raroc = r_bar / es if es != 0.0 else float("inf")

    return MetricsReport(
        residual=residual,
        utility_error=utility_error,
        sharpe=sharpe,
        raroc=raroc,
        sharpe_defined=sharpe_defined,
        raroc_sign_degenerate=raroc_sign_degenerate,
        **identifiers,
    )


def benchmark(cfg: ExperimentConfig) -> BenchmarkReport:
    """Methods x sample sizes x trials sweep with per-trial seeds derived by
    stable hashing; per-trial failures are recorded, not fatal."""
    ctx = RunContext(cfg)
    x_c = ctx.truth.x_star
    cells: dict = {}
    per_trial: list[MetricsReport] = []
    failures: list[tuple] = []
    for method in cfg.methods:
        for N in cfg.sample_sizes:
            reports: list[MetricsReport] = []
            for trial in range(cfg.trials):
                # seeds are shared across methods so each trial compares all
                # methods on one training draw (paired design)
                seed = derive_seed(cfg.base_seed, int(N), trial)
                try:
                    train = sample_mixture(ctx.theta_c, ctx.components, int(N), seed)
                    result = run_method(method, train, cfg, ctx)
                    rep = metrics(
                        result.x_star,
                        x_c,
                        ctx.truth_pools,
                        ctx.test_returns,
                        cfg,
                        method=method,
                        sample_size=int(N),
                        trial=trial,
                        seed=seed,
                    )
                except (ValueError, RuntimeError) as exc:
                    failures.append((method, int(N), trial, seed, str(exc)))
                    continue
                reports.append(rep)
                per_trial.append(rep)
            cell = {"trials_completed": len(reports)}
            for name in METRIC_NAMES:
                vals = np.array([r.value(name) for r in reports])
                # degenerate trials (all-cash portfolios) yield undefined
                # Sharpe/RAROC values; cells aggregate the defined ones
                vals = vals[np.isfinite(vals)]
                cell[f"{name}_defined"] = int(vals.size)
                if vals.size == 0:
                    cell[name] = (float("nan"), float("nan"))
                elif vals.size == 1:
                    cell[name] = (float(vals[0]), 0.0)
                else:
                    cell[name] = (float(vals.mean()), float(vals.var(ddof=1)))
            cells[(method, int(N))] = cell
    return BenchmarkReport(cells=cells, per_trial=tuple(per_trial), failures=tuple(failures), config=cfg)
