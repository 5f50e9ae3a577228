from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.linalg import expm

from conjlab.dynsys import IntegratorConfig, SystemSpec, integrate
from conjlab.errors import ConvergenceError, DimensionError, SingularMatrixError
from conjlab.hartman import (GridFunction, HartmanProblem, contraction_certificate,
                             controllability_gramian, decay_crossover, decay_factor,
                             example2_closed_form, green_kernel, solve_conjugacy_fixed_point,
                             terminal_map, verify_conjugacy)
from conjlab.presets import perturbation


def scalar_problem(kind="sin", scale=0.1, a=-1.0, grad=1.0):
    r, lip, sup, _ = perturbation(kind, scale)
    return HartmanProblem.from_matrix([[a]], r, lip, grad_r0=[[grad]], r_sup=sup)


def _manual(A, Pp, M=1.0, eta=1.0, lip=0.0):
    n = np.atleast_2d(A).shape[0]
    return HartmanProblem(A, Pp, np.eye(n) - np.atleast_2d(Pp), M, eta,
                          lambda y: np.zeros_like(y), lip, np.zeros((n, n)))


@pytest.fixture(scope="module")
def sin_solution():
    p = scalar_problem()
    return p, solve_conjugacy_fixed_point(p, [-1.0], [1.0], [201])


class TestProblem:
    def test_scalar_dichotomy(self):
        p = scalar_problem()
        assert p.Pplus[0, 0] == 1.0 and p.Pminus[0, 0] == 0.0
        assert abs(p.M - 1.0) < 1e-12 and p.eta == 1.0
        assert p.check_dichotomy()

    def test_saddle(self):
        p = HartmanProblem.from_matrix(np.diag([-2.0, 1.0]), lambda y: 0 * y, 0.0)
        np.testing.assert_allclose(p.Pplus, np.diag([1.0, 0.0]), atol=1e-14)
        assert p.eta == 1.0 and p.check_dichotomy()

    def test_nonnormal(self):
        A = np.array([[-1.0, 5.0], [0.0, 2.0]])
        p = HartmanProblem.from_matrix(A, lambda y: 0 * y, 0.0)
        np.testing.assert_allclose(p.Pplus @ p.Pplus, p.Pplus, atol=1e-12)
        np.testing.assert_allclose(A @ p.Pplus, p.Pplus @ A, atol=1e-12)
        assert p.M > 1.0 and p.check_dichotomy()

    def test_rejects_center(self):
        with pytest.raises(ValueError):
            HartmanProblem.from_matrix(np.diag([-1.0, 0.0]), lambda y: 0 * y, 0.0)

    def test_rejects_defective(self):
        with pytest.raises(SingularMatrixError):
            HartmanProblem.from_matrix([[-1.0, 1.0], [0.0, -1.0]], lambda y: 0 * y, 0.0)

    def test_bad_projection(self):
        with pytest.raises(ValueError):
            HartmanProblem([[-1.0]], [[0.5]], [[0.5]], 1.0, 1.0, lambda y: y, 0.0, [[0.0]])

    def test_bad_constants(self):
        with pytest.raises(ValueError):
            HartmanProblem([[-1.0]], [[1.0]], [[0.0]], 0.5, 1.0, lambda y: y, 0.0, [[0.0]])

    def test_shape(self):
        with pytest.raises(DimensionError):
            HartmanProblem([[-1.0]], np.eye(2), np.zeros((2, 2)), 1.0, 1.0, lambda y: y, 0.0, [[0.0]])


class TestGreenKernel:
    def test_scalar_positive(self):
        assert abs(green_kernel(scalar_problem(), 1.0)[0, 0] - math.exp(-1)) < 1e-15

    def test_scalar_negative(self):
        assert green_kernel(scalar_problem(), -1.0)[0, 0] == 0.0

    def test_saddle_negative(self):
        p = _manual(np.diag([-1.0, 1.0]), np.diag([1.0, 0.0]))
        np.testing.assert_allclose(green_kernel(p, -1.0), np.diag([0.0, -math.exp(-1)]), atol=1e-15)

    def test_branches_reconstruct(self, rng):
        A = np.array([[-1.0, 5.0], [0.0, 2.0]])
        p = HartmanProblem.from_matrix(A, lambda y: 0 * y, 0.0)
        for t in rng.uniform(0, 3, 5):
            E = expm(A * t)
            # the positive branch at t and minus the negative branch at -(-t) split e^{At}
            Gneg = -expm(A * t) @ p.Pminus
            np.testing.assert_allclose(green_kernel(p, t) - Gneg, E, atol=1e-10)
            np.testing.assert_allclose(green_kernel(p, -t), -expm(-A * t) @ p.Pminus, atol=1e-12)

    def test_dichotomy_bound(self, rng):
        A = np.array([[-1.0, 5.0], [0.0, 2.0]])
        p = HartmanProblem.from_matrix(A, lambda y: 0 * y, 0.0)
        for t in np.concatenate([rng.uniform(0, 5, 20), -rng.uniform(0, 5, 20)]):
            assert np.linalg.norm(green_kernel(p, t), 2) <= p.M * math.exp(-p.eta * abs(t)) * (1 + 1e-9)


class TestCertificate:
    @pytest.mark.parametrize("M,eta,lip,expected", [(1, 1, 0.4, 0.8), (1, 1, 0.6, 1.2), (2, 4, 0.5, 0.5)])
    def test_arithmetic(self, M, eta, lip, expected):
        p = HartmanProblem([[-1.0]], [[1.0]], [[0.0]], M, eta, lambda y: y, lip, [[0.0]])
        assert abs(contraction_certificate(p) - expected) < 1e-15

    def test_uncertified_raises(self):
        with pytest.raises(ConvergenceError):
            solve_conjugacy_fixed_point(scalar_problem("sin", 0.6), [-1.0], [1.0], [21])


class TestGridFunction:
    def test_nodes_exact(self, rng):
        g = GridFunction.zeros([0.0, -1.0], [1.0, 1.0], [5, 9], 2)
        g = g.with_values(rng.standard_normal((45, 2)))
        np.testing.assert_allclose(g(g.nodes()), g.values.reshape(-1, 2), atol=1e-14)

    def test_linear_reproduced(self, rng):
        g = GridFunction.zeros([0.0, 0.0], [1.0, 2.0], [4, 6], 1)
        X = g.nodes()
        g = g.with_values((3 * X[:, 0] - X[:, 1] + 0.5)[:, None])
        P = rng.uniform([0, 0], [1, 2], (50, 2))
        np.testing.assert_allclose(g(P)[:, 0], 3 * P[:, 0] - P[:, 1] + 0.5, atol=1e-12)

    def test_round_trip(self, rng):
        g = GridFunction.zeros([-1.0], [1.0], [7], 1).with_values(rng.standard_normal((7, 1)))
        h = GridFunction.from_dict(g.to_dict())
        assert np.array_equal(h.values, g.values) and np.array_equal(h.lo, g.lo)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            GridFunction([-1.0], [1.0], [3], np.array([[0.0], [np.nan], [0.0]]))


class TestPicard:
    def test_zero_perturbation(self):
        res = solve_conjugacy_fixed_point(scalar_problem("zero", 0.0), [-1.0], [1.0], [11])
        assert res.iterations == 1 and np.all(res.g.values == 0.0)

    def test_contraction_rate(self, sin_solution):
        p, res = sin_solution
        assert res.converged and res.changes[-1] < 1e-8
        assert max(res.ratios) <= contraction_certificate(p) + 0.05

    def test_fixed_point_residual(self, sin_solution):
        p, res = sin_solution
        assert res.truncation_bound < 1e-8

    def test_odd_symmetry(self, sin_solution):
        # r is odd and A is scalar, so g is odd
        _, res = sin_solution
        v = res.g.values[:, 0]
        np.testing.assert_allclose(v, -v[::-1], atol=1e-12)

    def test_conjugacy(self, sin_solution):
        p, res = sin_solution
        assert verify_conjugacy(p, res.g, [0.5], 5.0, 0.01) < 1e-3

    def test_zero_pipeline_floor(self):
        p = scalar_problem("zero", 0.0)
        g = GridFunction.zeros([-1.0], [1.0], [11], 1)
        assert verify_conjugacy(p, g, [0.7], 5.0, 0.01) < 1e-9

    def test_wrong_g_negative_control(self):
        p = scalar_problem()
        g = GridFunction.zeros([-1.0], [1.0], [11], 1).with_values(np.full((11, 1), 0.1))
        assert verify_conjugacy(p, g, [0.5], 5.0, 0.01) > 1e-2

    def test_domain_exit(self, sin_solution):
        p, res = sin_solution
        with pytest.raises(ValueError):
            verify_conjugacy(p, res.g, [1.5], 1.0, 0.01)

    def test_saddle_2d(self):
        A = np.diag([-1.0, 0.5])
        r = lambda Y: 0.05 * np.sin(Y[:, ::-1])
        p = HartmanProblem.from_matrix(A, r, 0.05, r_sup=0.05)
        res = solve_conjugacy_fixed_point(p, [-1.0, -1.0], [1.0, 1.0], [21, 21], tol=1e-7)
        assert res.converged and max(res.ratios) <= contraction_certificate(p) + 0.05


class TestGramian:
    def test_zero_gradient(self):
        p = scalar_problem(grad=0.0)
        assert np.all(controllability_gramian(p, [1.0], 2.0) == 0.0)

    def test_unit_rate(self):
        p = _manual([[1.0]], [[0.0]])
        p.A = np.zeros((1, 1))
        p.grad_r0 = np.eye(1)
        assert abs(controllability_gramian(p, [1.0], 2.5)[0, 0] - 2.5) < 1e-12

    @pytest.mark.parametrize("t", [0.5, 1.0, 3.0])
    def test_closed_form(self, t):
        G = controllability_gramian(scalar_problem(), [1.0], t)
        assert abs(G[0, 0] - (1 - math.exp(-2 * t)) / 2) < 1e-6

    def test_symmetric_psd(self, rng):
        A = np.array([[-1.0, 2.0, 0.0], [0.0, -0.5, 1.0], [0.0, 0.0, 0.7]])
        p = HartmanProblem.from_matrix(A, lambda y: 0 * y, 0.0, grad_r0=rng.standard_normal((3, 3)))
        G = controllability_gramian(p, rng.standard_normal(3), 2.0)
        assert np.max(np.abs(G - G.T)) <= 1e-12
        assert np.linalg.eigvalsh(G).min() >= -1e-10

    def test_nonpositive_time(self):
        with pytest.raises(ValueError):
            controllability_gramian(scalar_problem(), [1.0], 0.0)


class TestTerminalMap:
    def test_free_flow(self):
        res = terminal_map(scalar_problem(), [1.0], [1.0], [math.exp(-2.0)], 2.0)
        assert np.max(np.abs(res.control)) < 1e-14
        np.testing.assert_allclose(res.y[:, 0], np.exp(-res.times), atol=1e-14)

    def test_scalar_benchmark(self):
        res = terminal_map(scalar_problem(), [1.0], [1.0], [0.2], 1.0)
        assert res.y[0, 0] == 1.0
        assert res.endpoint_error < 1e-8
        assert abs(res.gramian[0, 0] - (1 - math.exp(-2)) / 2) < 1e-6

    def test_trajectory_solves_controlled_system(self):
        # differentiating P y gives y' = A y + e^{At} U(t) K*(t); here U(t) = e^{-t}
        p = scalar_problem()
        res = terminal_map(p, [1.0], [1.0], [0.2], 1.0)
        u = res.control
        t = res.times
        rhs = -res.y[:, 0] + np.exp(-2 * t) * u
        dy = np.gradient(res.y[:, 0], t)
        assert np.max(np.abs(dy - rhs)[2:-2]) < 1e-5

    def test_decay_check(self):
        p = scalar_problem()
        res = terminal_map(p, [1.0], [1.0], [0.2], 1.0)
        q = decay_factor(p.M, p.eta, 1.0, 1.0 / res.gramian[0, 0], 1.0, 1.0)
        assert 0 < q < 1 and abs(res.y[-1, 0]) <= q * 1.0

    def test_singular(self):
        p = HartmanProblem.from_matrix(np.diag([-1.0, -2.0]), lambda y: 0 * y, 0.0,
                                       grad_r0=np.diag([1.0, 0.0]))
        with pytest.raises(SingularMatrixError):
            terminal_map(p, [0.0, 1.0], [1.0, 1.0], [0.0, 0.0], 1.0)


class TestDecayFactor:
    def test_no_perturbation(self):
        assert abs(decay_factor(1.5, 0.7, 0.0, 3.0, 2.0, 1.3) - 1.5 * math.exp(-0.7 * 1.3)) < 1e-15

    def test_hand_value(self):
        e = math.exp(-1)
        expected = (e + e / 2) / (1 - math.exp(-2) / 2)
        assert abs(decay_factor(1, 1, 1, 1, 1, 1) - expected) < 1e-15

    def test_monotone_beyond_crossover(self):
        tc = decay_crossover(2.0, 0.5, 1.0, 1.0, 1.0)
        ts = np.linspace(tc, tc + 20, 200)
        q = [decay_factor(2.0, 0.5, 1.0, 1.0, 1.0, t) for t in ts]
        assert all(b < a for a, b in zip(q, q[1:])) and q[-1] < 1e-2

    def test_bad_denominator(self):
        with pytest.raises(ValueError):
            decay_factor(1, 1, 10, 1, 1, 0.1)


class TestScalarAffineClosedForm:
    def test_initial_match(self):
        assert abs(example2_closed_form(-0.7, 0.3, -0.7, 0.3, 1.2, 2.5, 1.2) - 2.5) < 1e-14

    def test_exponential(self):
        assert abs(example2_closed_form(1, 0, 2, 0, 1, 1, math.e) - math.e ** 2) < 1e-12

    def test_simulation(self, rng):
        cfg = IntegratorConfig("rk4", 0.001)
        for _ in range(5):
            A, C = rng.uniform(-1.5, -0.2, 2)
            B, D = rng.uniform(-1, 1, 2)
            x0 = -B / A + rng.uniform(0.5, 2.0)
            y0 = rng.uniform(-2, 2)
            X = integrate(SystemSpec.linear([[A]], [B]), [x0], 0, 2.0, cfg)
            Y = integrate(SystemSpec.linear([[C]], [D]), [y0], 0, 2.0, cfg)
            K = example2_closed_form(A, B, C, D, x0, y0, X.states[:, 0])
            assert np.max(np.abs(K - Y.states[:, 0])) < 1e-9

    @pytest.mark.parametrize("args", [(0, 1, 1, 1, 1, 1, 1), (1, 1, 0, 1, 1, 1, 1),
                                      (1, 1, 1, 1, -1, 1, 0.5), (1, 0, 0.5, 0, 1, 1, -1.0)])
    def test_errors(self, args):
        with pytest.raises(ValueError):
            example2_closed_form(*args)
