import numpy as np
import pytest

from oracles import dense_alternating_minimizer
from genias.convergence import (
    block_descent_violations,
    check_coordinatewise_minimizer,
    check_hessian_psd,
    descent_violations,
    max_iterate_norm,
)
from genias.forward_models import piecewise_signal
from genias.ias import IasConfig, IasState, Priors, Problem, classify_convexity, run_ias
from genias.operators import from_matrix, identity
from genias.transforms import derivative_operator
from genias.updates import HyperPriorSpec, NoisePriorSpec, theta_lower_bound


def _small_problem(N=12, seed=0):
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((N - 2, N)) / np.sqrt(N)
    T = derivative_operator(1, N)
    y = F @ np.repeat([0.0, 1.0], N // 2) + 0.05 * rng.standard_normal(N - 2)
    return Problem(from_matrix(F), T, y), F


class TestCoordinatewise:
    def test_exact_minimizer(self):
        problem, F = _small_problem()
        th = HyperPriorSpec(1.0, 2.0, 0.5)
        x, _ = dense_alternating_minimizer(F, problem.transform.matrix.toarray(), problem.y, 0.1, 0.5, th.eta)
        theta = 0.25 * (th.eta + np.sqrt(th.eta**2 + 4 * (problem.transform.apply(x)) ** 2))
        state = IasState(x=x, theta=theta, nu=0.1)
        res = check_coordinatewise_minimizer(state, problem, Priors(th), learn_nu=False)
        assert res.nu is None
        assert res.max() <= 1e-10

    def test_perturbed_theta(self):
        problem, F = _small_problem()
        th = HyperPriorSpec(1.0, 2.0, 0.5)
        x, theta = dense_alternating_minimizer(F, problem.transform.matrix.toarray(), problem.y, 0.1, 0.5, th.eta)
        res = check_coordinatewise_minimizer(IasState(x=x, theta=1.1 * theta, nu=0.1), problem, Priors(th), learn_nu=False)
        assert res.theta == pytest.approx(0.1 / 1.1, rel=1e-6)

    def test_theta_at_floor(self):
        problem, _ = _small_problem()
        th = HyperPriorSpec(-1.0, 1.0, 1.0)
        x = np.zeros(problem.N)
        theta = theta_lower_bound(th, problem.K)
        res = check_coordinatewise_minimizer(IasState(x=x, theta=theta, nu=1.0), problem, Priors(th), learn_nu=False)
        assert res.theta == 0.0 and np.isfinite(res.x)

    def test_learned_nu_run(self):
        N = 300
        y = piecewise_signal(N) + np.sqrt(10) * np.random.default_rng(0).standard_normal(N)
        problem = Problem(identity(N), derivative_operator(1, N), y)
        priors = Priors(HyperPriorSpec(1.0, 1.501, 0.1), NoisePriorSpec(-1.0, 1.0, 1e-4, N))
        s = run_ias(problem, priors, IasConfig())
        res = check_coordinatewise_minimizer(s, problem, priors)
        assert res.max() <= 10 * 1e-3
        assert not block_descent_violations(s, 1e-6)
        assert max_iterate_norm(s) < 1e6 * np.linalg.norm(y)


class TestDescent:
    def test_detects_increase(self):
        assert descent_violations([5.0, 4.0, 4.5, 3.0], 1e-3) == [2]

    def test_slack_absorbs_noise(self):
        assert descent_violations([5.0, 5.000001, 4.0], 1e-6) == []


class TestHessian:
    def test_convex_point(self):
        problem, _ = _small_problem(N=8, seed=1)
        th = HyperPriorSpec(1.0, 2.0, 0.5)
        rng = np.random.default_rng(2)
        point = (rng.standard_normal(8), rng.uniform(0.2, 2, 7), 0.3)
        assert check_hessian_psd(point, problem, Priors(th), learn_nu=False) >= -1e-6

    def test_x_block_psd(self):
        problem, F = _small_problem(N=8, seed=3)
        rng = np.random.default_rng(4)
        theta = rng.uniform(0.1, 1, 7)
        H = F.T @ F / 0.5 + problem.transform.matrix.toarray().T @ np.diag(1 / theta) @ problem.transform.matrix.toarray()
        assert np.linalg.eigvalsh(H).min() >= 0

    def test_nonconvex_outside_threshold(self):
        problem, _ = _small_problem(N=6, seed=5)
        th = HyperPriorSpec(-1.0, 1.0, 1.0)
        thr = classify_convexity(th).theta_threshold
        rng = np.random.default_rng(6)
        found = False
        for _ in range(20):
            point = (10 * rng.standard_normal(6), 10 * thr * rng.uniform(1, 2, 5), 0.5)
            if check_hessian_psd(point, problem, Priors(th), learn_nu=False) < 0:
                found = True
                break
        assert found

    def test_rejects_outside_domain(self):
        problem, _ = _small_problem(N=6)
        with pytest.raises(ValueError):
            check_hessian_psd((np.zeros(6), -np.ones(5), 1.0), problem, Priors(HyperPriorSpec(1.0, 2.0, 1.0)), learn_nu=False)
