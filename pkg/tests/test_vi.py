import numpy as np
import pytest

from drvi.ambiguity import BoxSimplexSet
from drvi.experiment import sec5_components
from drvi.mixture import DomainViolationError, build_pools, expectations
from drvi.vi import (
    LipschitzParams,
    NashProblem,
    SolverConfig,
    bayes_field,
    empirical_field,
    estimate_lipschitz_params,
    extragradient,
    joint_projector,
    lipschitz_bound,
    natural_residual,
    project_portfolio,
    responsibility_field,
)

from oracles import cvxpy_portfolio_projection


SEC5_THETA = np.array([0.5, 0.25, 0.25])


@pytest.fixture(scope="module")
def small_pools():
    return build_pools(sec5_components(), 2000, seed=21)


class TestProjectPortfolio:
    def test_clipping_suffices(self):
        assert project_portfolio(np.array([-0.2, 0.3])) == pytest.approx([0.0, 0.3])

    def test_simplex_face(self):
        assert project_portfolio(np.array([0.5, 0.7])) == pytest.approx([0.4, 0.6])

    def test_idempotent(self):
        y = np.array([0.2, 0.3, 0.1])
        assert project_portfolio(y) == pytest.approx(y)

    def test_matches_qp_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(12):
            y = rng.normal(size=6)
            # slack covers the interior-point solver's own tolerance
            assert np.abs(project_portfolio(y) - cvxpy_portfolio_projection(y)).max() <= 1e-4


class TestLipschitzBound:
    def test_worked_example(self):
        L, eta = lipschitz_bound(LipschitzParams(beta=0.5, sigma_bar_sq=0.01, n=3, lam=0.01, kappa=0.1))
        assert L == pytest.approx(8.938, abs=1e-3)
        assert eta == pytest.approx(0.0503, abs=1e-4)
        assert 0 < eta < 1.0 / (2.0 * L)

    def test_kappa_zero_drops_coupling_term(self):
        with_k, _ = lipschitz_bound(LipschitzParams(beta=0.2, sigma_bar_sq=0.05, n=2, lam=0.02, kappa=0.3))
        without, _ = lipschitz_bound(LipschitzParams(beta=0.2, sigma_bar_sq=0.05, n=2, lam=0.02, kappa=0.0))
        assert with_k - without == pytest.approx(2 * np.sqrt(2) * 0.3, rel=1e-12)

    def test_sigma_linearity(self):
        base, _ = lipschitz_bound(LipschitzParams(beta=0.2, sigma_bar_sq=0.05, n=2, lam=0.02, kappa=0.0))
        double, _ = lipschitz_bound(LipschitzParams(beta=0.2, sigma_bar_sq=0.10, n=2, lam=0.02, kappa=0.0))
        assert double == pytest.approx(2 * base, rel=1e-12)

    def test_lambda_zero_undefined(self):
        with pytest.raises(ValueError):
            lipschitz_bound(LipschitzParams(beta=0.2, sigma_bar_sq=0.05, n=2, lam=0.0, kappa=0.1))

    def test_estimated_params(self, small_pools):
        params = estimate_lipschitz_params(small_pools, lam=0.01, kappa=0.1)
        assert params.n == 3
        assert 0 <= params.beta < 1
        assert params.sigma_bar_sq > 0


class TestExtragradient:
    def test_trivial_strongly_monotone_field(self):
        target = np.array([0.2, 0.3])
        res = extragradient(
            lambda x: x - target,
            lambda x: np.maximum(x, 0.0),
            SolverConfig(eta=0.5, eps=1e-8, max_iter=100, x0=np.array([1.0, 1.0])),
        )
        assert res.converged
        assert res.stop_value <= 1e-8
        assert np.abs(res.x_star - target).max() <= 1e-7

    def test_rotation_field_converges_to_origin(self):
        res = extragradient(
            lambda x: np.array([x[1], -x[0]]),
            lambda x: np.clip(x, -0.5, 0.5),
            SolverConfig(eta=0.2, eps=1e-8, max_iter=5000, x0=np.array([0.5, -0.4])),
        )
        assert res.converged
        assert np.abs(res.x_star).max() <= 1e-6

    def test_hand_executed_first_step(self):
        res = extragradient(
            lambda x: x,
            lambda x: np.maximum(x, 0.0),
            SolverConfig(eta=0.5, eps=1e-12, max_iter=1, x0=np.array([1.0, 1.0])),
            record_iterates=True,
        )
        # y0 = (0.5, 0.5), x1 = x0 - 0.5 F(y0) = (0.75, 0.75)
        assert res.iterates[1] == pytest.approx([0.75, 0.75])

    def test_max_iter_reports_not_raises(self):
        res = extragradient(
            lambda x: x - 5.0,
            lambda x: np.maximum(x, 0.0),
            SolverConfig(eta=1e-4, eps=1e-12, max_iter=10, x0=np.array([0.0])),
        )
        assert not res.converged
        assert res.iterations == 10
        assert res.residual_history.shape == (10,)

    def test_distance_to_solution_nonincreasing(self):
        target = np.array([0.2, 0.3])
        res = extragradient(
            lambda x: x - target,
            lambda x: np.maximum(x, 0.0),
            SolverConfig(eta=0.5, eps=1e-10, max_iter=200, x0=np.array([1.0, 1.0])),
            record_iterates=True,
        )
        dists = [np.linalg.norm(x - target) for x in res.iterates]
        assert all(b <= a + 1e-12 for a, b in zip(dists, dists[1:]))


class TestNaturalResidual:
    def test_zero_at_solution(self):
        target = np.array([0.2, 0.3])
        assert natural_residual(
            lambda x: x - target, lambda x: np.maximum(x, 0.0), target
        ) == pytest.approx(0.0, abs=1e-10)

    def test_zero_field_interior(self):
        assert natural_residual(lambda x: np.zeros_like(x), lambda x: x, np.array([0.4])) == 0.0

    def test_hand_value(self):
        val = natural_residual(lambda x: x, lambda x: np.maximum(x, 0.0), np.array([1.0, 1.0]))
        assert val == pytest.approx(np.sqrt(2.0))


class TestBayesField:
    def test_degenerate_set_decouples_accounts(self, small_pools):
        set0 = BoxSimplexSet(center=SEC5_THETA, radius=0.0)
        fld = bayes_field(small_pools, set0, lam=0.01, kappa=0.0)
        x1 = np.full(10, 0.05)
        for other in (np.zeros(10), np.full(10, 0.09)):
            F = fld(np.concatenate([x1, other]))
            phi, G = expectations(small_pools, x1)
            assert F[:10] == pytest.approx(G @ SEC5_THETA, abs=1e-15)

    def test_symmetric_accounts_cancel_coupling(self, small_pools):
        set_ = BoxSimplexSet(center=SEC5_THETA, radius=0.05)
        f0 = bayes_field(small_pools, set_, lam=0.01, kappa=0.0)
        f1 = bayes_field(small_pools, set_, lam=0.01, kappa=0.7)
        x = np.tile(np.full(10, 0.04), 2)
        assert f1(x) == pytest.approx(f0(x), abs=1e-15)

    def test_bit_identical_evaluations(self, small_pools):
        set_ = BoxSimplexSet(center=SEC5_THETA, radius=0.08)
        fld = bayes_field(small_pools, set_, lam=0.01, kappa=0.1)
        x = np.concatenate([np.full(10, 0.03), np.full(10, 0.06)])
        assert np.array_equal(fld(x), fld(x))

    def test_monotonicity_probe(self, small_pools):
        set_ = BoxSimplexSet(center=SEC5_THETA, radius=0.1)
        fld = bayes_field(small_pools, set_, lam=0.01, kappa=0.1)
        rng = np.random.default_rng(7)
        for _ in range(500):
            x = np.concatenate([rng.dirichlet(np.ones(10)) * rng.uniform(0, 1) for _ in range(2)])
            z = np.concatenate([rng.dirichlet(np.ones(10)) * rng.uniform(0, 1) for _ in range(2)])
            assert float((fld(x) - fld(z)) @ (x - z)) >= -1e-8

    def test_symmetric_start_stays_symmetric(self, small_pools):
        set_ = BoxSimplexSet(center=SEC5_THETA, radius=0.05)
        fld = bayes_field(small_pools, set_, lam=0.01, kappa=0.1)
        res = extragradient(
            fld,
            joint_projector(10),
            SolverConfig(eta=0.5, eps=1e-9, max_iter=50, x0=np.full(20, 0.05)),
            record_iterates=True,
        )
        for x in res.iterates:
            assert np.abs(x[:10] - x[10:]).max() <= 1e-10

    def test_maximizers_shape_and_feasibility(self, small_pools):
        set_ = BoxSimplexSet(center=SEC5_THETA, radius=0.07)
        fld = bayes_field(small_pools, set_, lam=0.01, kappa=0.1)
        thetas = fld.maximizers(np.full(20, 0.05))
        assert thetas.shape == (2, 3)
        for th in thetas:
            assert set_.contains(th)


class TestEmpiricalField:
    def test_rho_zero_is_sample_average(self):
        rng = np.random.default_rng(31)
        atoms = rng.normal(0.0, 0.02, size=(64, 5))
        fld = empirical_field(atoms, "l1", 0.0, lam=0.0, kappa=0.2)
        x1 = np.full(5, 0.1)
        x2 = np.full(5, 0.02)
        F = fld(np.concatenate([x1, x2]))
        s = atoms @ x1
        expected = -(atoms.T @ (1.0 / (1.0 + s))) / 64 + 0.2 * (x1 - x2)
        assert F[:5] == pytest.approx(expected, abs=1e-15)

    def test_single_atom_any_rho(self):
        atoms = np.array([[0.01, -0.02]])
        fld = empirical_field(atoms, "chi2", 5.0, lam=0.0, kappa=0.0)
        p = fld.maximizers(np.full(4, 0.1))
        assert np.allclose(p, 1.0)

    def test_identical_losses_tie_gives_uniform(self):
        atoms = np.tile(np.array([[0.01, 0.01]]), (8, 1))
        fld = empirical_field(atoms, "l1", 0.4, lam=0.0, kappa=0.0)
        x = np.full(4, 0.2)
        p = fld.maximizers(x)
        assert np.allclose(p, 1.0 / 8)
        saa = empirical_field(atoms, "l1", 0.0, lam=0.0, kappa=0.0)
        assert fld(x) == pytest.approx(saa(x), abs=1e-15)

    def test_domain_violation_from_atoms(self):
        atoms = np.array([[-1.5, 0.0]])
        fld = empirical_field(atoms, "l1", 0.0, lam=0.0, kappa=0.0)
        with pytest.raises(DomainViolationError):
            fld(np.array([1.0, 0.0, 1.0, 0.0]))


class TestResponsibilityField:
    def test_zero_radius_reduces_to_saa(self):
        from drvi.bayes import em_map, responsibility_weights
        from drvi.mixture import sample_mixture

        comps = sec5_components()
        atoms = sample_mixture(SEC5_THETA, comps, 150, seed=12)
        theta = em_map(atoms, comps)
        w = responsibility_weights(theta, comps, atoms)
        set0 = BoxSimplexSet(center=theta, radius=0.0)
        fld = responsibility_field(atoms, w, set0, lam=0.01, kappa=0.1)
        saa = empirical_field(atoms, "l1", 0.0, lam=0.01, kappa=0.1)
        x = np.concatenate([np.full(10, 0.04), np.full(10, 0.07)])
        assert fld(x) == pytest.approx(saa(x), abs=1e-8)

    def test_weight_validation(self):
        atoms = np.zeros((4, 2))
        bad = np.full((4, 3), 0.5)
        with pytest.raises(ValueError):
            responsibility_field(atoms, bad, BoxSimplexSet(center=np.ones(3) / 3, radius=0.1), 0.01, 0.1)


class TestFieldSolveDiagnostics:
    def test_final_natural_residual_within_tolerance(self, small_pools):
        from drvi.experiment import _solve, experiment_config

        set_ = BoxSimplexSet(center=SEC5_THETA, radius=0.05)
        fld = bayes_field(small_pools, set_, lam=0.01, kappa=0.1)
        cfg = experiment_config("desk")
        eps = 1e-6
        res = _solve(fld, cfg, np.full(20, 0.05), eps=eps, eta=None)
        assert res.converged
        assert np.all(np.isfinite(res.residual_history))
        assert natural_residual(fld, joint_projector(10), res.x_star) <= 10 * eps


def test_nash_problem_validation():
    set_ = BoxSimplexSet(center=SEC5_THETA, radius=0.1)
    prob = NashProblem(asset_count=10, kappa=0.1, lam=0.01, ambiguity=set_)
    assert prob.account_count == 2
    with pytest.raises(ValueError):
        NashProblem(asset_count=10, kappa=-0.1, lam=0.01, ambiguity=set_)
    with pytest.raises(ValueError):
        NashProblem(asset_count=10, kappa=0.1, lam=0.01, ambiguity=set_, account_count=3)
