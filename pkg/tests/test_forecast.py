from __future__ import annotations

import math

import numpy as np
import pytest

from conjlab.dynsys import IntegratorConfig, SystemSpec, Trajectory, integrate, linear_solution
from conjlab.errors import DimensionError, SingularMatrixError
from conjlab.forecast import (PerturbationSpec, SegmentSeries, exact_prediction_map, infer_past,
                              perturbed_companions, predict_future, stacked_residual,
                              takens_dimension)
from conjlab.simdeg import discrete_cost, similarity_degree


def _series(spec, x0, n, T, dt, t0=0.0):
    traj = integrate(spec, x0, t0, n * T, IntegratorConfig("rk4", dt))
    return traj, SegmentSeries.from_trajectory(traj, n)


def _stable_3d():
    A = np.array([[-0.5, 1.0, 0.0], [-1.0, -0.5, 0.0], [0.0, 0.0, -0.2]])
    return A, np.zeros(3)


class TestSegmentSeries:
    def test_split(self):
        traj = integrate(SystemSpec.lorenz(), [0, 1, 0], 0, 3.0)
        s = SegmentSeries.from_trajectory(traj, 3)
        assert len(s) == 3 and s.window == pytest.approx(1.0) and s.dim == 3
        assert np.array_equal(s[1].states[0], s[0].states[-1])

    def test_uneven(self):
        with pytest.raises(DimensionError):
            SegmentSeries.from_trajectory(Trajectory(0, 0.1, np.ones((11, 1))), 3)

    def test_discontinuity(self):
        a = Trajectory(0.0, 0.1, np.zeros((5, 1)))
        b = Trajectory(0.4, 0.1, np.full((5, 1), 1e-6))
        with pytest.raises(ValueError):
            SegmentSeries([a, b])

    def test_within_tolerance(self):
        a = Trajectory(0.0, 0.1, np.zeros((5, 1)))
        b = Trajectory(0.4, 0.1, np.full((5, 1), 1e-10))
        assert len(SegmentSeries([a, b])) == 2

    def test_mismatched_sampling(self):
        with pytest.raises(DimensionError):
            SegmentSeries([Trajectory(0, 0.1, np.zeros((5, 1))), Trajectory(0.4, 0.2, np.zeros((5, 1)))])

    def test_epsilon(self):
        with pytest.raises(ValueError):
            PerturbationSpec(-1e-3)


class TestPredictFuture:
    def test_scalar_linear(self):
        a, T, n, dt = -0.8, 0.5, 3, 0.001
        spec = SystemSpec.linear([[a]])
        _, hist = _series(spec, [1.3], n, T, dt)
        pred = predict_future(hist, spec)
        truth = 1.3 * math.exp(a * (n + 1) * T)
        assert abs(pred.state[0] - truth) < 1e-10

    def test_linear_3d(self):
        A, B = _stable_3d()
        spec = SystemSpec.linear(A, B)
        x0 = np.array([1.0, -0.5, 2.0])
        T, n, dt = 0.5, 3, 0.001
        _, hist = _series(spec, x0, n, T, dt)
        truth = linear_solution(A, B, x0, (n + 1) * T)
        pred = predict_future(hist, spec, truth=truth)
        assert pred.error < 1e-4
        assert pred.path.times[-1] == pytest.approx((n + 1) * T)
        np.testing.assert_allclose(pred.path.states[-1], pred.state)

    def test_zero_field(self):
        spec = SystemSpec.linear(np.zeros((2, 2)))
        hist = SegmentSeries([Trajectory(0.1 * k, 0.05, np.tile([1.0, 2.0], (3, 1))) for k in range(2)])
        pred = predict_future(hist, spec)
        np.testing.assert_allclose(pred.state, [1.0, 2.0], atol=1e-14)

    def test_dt_convergence(self):
        A, B = _stable_3d()
        spec = SystemSpec.linear(A, B)
        x0 = np.array([1.0, -0.5, 2.0])
        truth = linear_solution(A, B, x0, 4 * 0.8)
        errs = [predict_future(_series(spec, x0, 3, 0.8, dt)[1], spec, truth=truth).error
                for dt in (0.04, 0.02, 0.01)]
        assert errs[0] > errs[1] > errs[2]

    def test_companions_frozen(self):
        A, B = _stable_3d()
        spec = SystemSpec.linear(A, B)
        _, hist = _series(spec, [1.0, 0.0, 0.0], 3, 0.2, 0.01)
        pred = predict_future(hist, spec)
        m = hist[0].N
        held = pred.companions
        assert held.shape == (3, 3 * m + 1, 3)
        assert np.all(held[0, m:] == held[0, m])
        assert np.all(held[2, :2 * m] == held[2, 0])

    def test_report(self):
        spec = SystemSpec.linear([[-1.0]])
        _, hist = _series(spec, [1.0], 2, 0.5, 0.01)
        d = predict_future(hist, spec, truth=[math.exp(-1.5)]).to_dict()
        assert set(d) >= {"direction", "state", "K", "fit_residual", "condition", "error"}

    def test_lorenz_short_horizon(self):
        spec = SystemSpec.lorenz()
        dt, T, n = 0.01, 1.0, 3
        traj = integrate(spec, [0.0, 1.0, 0.0], 0, (n + 1) * T, IntegratorConfig("rk4", dt))
        hist = SegmentSeries.from_trajectory(traj.slice(0, n * 100), n)
        truth = traj.states[-1]
        pred = predict_future(hist, spec, truth=truth)
        assert pred.error <= 0.05 * np.linalg.norm(truth)


class TestInferPast:
    def test_decay_closed_form(self):
        T, n, dt = 0.5, 3, 0.001
        spec = SystemSpec.linear([[-1.0]])
        _, fut = _series(spec, [0.7], n, T, dt)
        pred = infer_past(fut, spec)
        assert abs(pred.state[0] - 0.7 * math.exp(T)) < 1e-9
        assert pred.direction == "past" and pred.path.t0 == pytest.approx(-T)

    def test_zero_field(self):
        spec = SystemSpec.linear(np.zeros((1, 1)))
        fut = SegmentSeries([Trajectory(0.1 * k, 0.05, np.full((3, 1), -4.0)) for k in range(3)])
        assert infer_past(fut, spec).state[0] == pytest.approx(-4.0, abs=1e-14)

    def test_round_trip(self):
        # rotation field: reversible, every window map is orthogonal
        A = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        spec = SystemSpec.linear(A)
        x0 = np.array([1.0, 0.5, -1.0])
        T, n, dt = 0.4, 3, 0.001
        _, hist = _series(spec, x0, n, T, dt)
        fwd = predict_future(hist, spec)
        # the n windows ending at the predicted state, then infer one window before them
        _, fut = _series(spec, hist[1].states[0], n, T, dt, t0=T)
        back = infer_past(fut, spec)
        assert np.linalg.norm(back.state - x0) < 1e-6
        assert np.linalg.norm(fut[-1].states[-1] - fwd.state) < 1e-6


class TestExactMap:
    def test_scalar_ratio(self):
        X = Trajectory(0, 0.1, np.array([[1.0], [2.0], [-4.0]]))
        Y = Trajectory(0, 0.1, np.array([[3.0], [1.0], [2.0]]))
        seq = exact_prediction_map(X, [], Y, [])
        np.testing.assert_allclose(seq.matrices[:, 0, 0], [3.0, 0.5, -0.5])

    def _linear_setup(self, eps=1e-3):
        A = np.array([[-0.3, 1.0, 0.0], [-1.0, -0.3, 0.0], [0.0, 0.0, 0.4]])
        C = np.array([[0.5, 0.2, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -0.3]])
        fx, fy = SystemSpec.linear(A), SystemSpec.linear(C)
        x0, y0 = np.array([1.0, 0.5, -1.0]), np.array([0.3, 0.2, 1.0])
        cfg = IntegratorConfig("rk4", 0.01)
        X = integrate(fx, x0, 0, 2.0, cfg)
        Y = integrate(fy, y0, 0, 2.0, cfg)
        p = PerturbationSpec(eps, seed=3)
        cx = perturbed_companions(fx, x0, 2.0, 0.01, p)
        cy = perturbed_companions(fy, y0, 2.0, 0.01, p)
        return X, cx, Y, cy

    def test_linear_residual(self):
        X, cx, Y, cy = self._linear_setup()
        seq = exact_prediction_map(X, cx, Y, cy)
        assert np.all(seq.invertible)
        assert np.max(stacked_residual(seq, X, cx, Y, cy)) < 1e-8
        assert abs(similarity_degree(discrete_cost(seq, X, Y)) - 1.0) < 1e-9

    def test_zero_epsilon_rejected(self):
        with pytest.raises(SingularMatrixError):
            exact_prediction_map(*self._linear_setup(eps=0.0))

    def test_wrong_count(self):
        X, cx, Y, cy = self._linear_setup()
        with pytest.raises(DimensionError):
            exact_prediction_map(X, cx[:1], Y, cy)

    def test_companions_seeded(self):
        spec = SystemSpec.lorenz()
        a = perturbed_companions(spec, [0, 1, 0], 0.5, 0.01, PerturbationSpec(1e-3, 7))
        b = perturbed_companions(spec, [0, 1, 0], 0.5, 0.01, PerturbationSpec(1e-3, 7))
        assert all(np.array_equal(u.states, v.states) for u, v in zip(a, b))
        assert np.linalg.norm(a[0].states[0] - [0, 1, 0]) == pytest.approx(1e-3)


class TestTakens:
    @pytest.mark.parametrize("d,n", [(2.51, 7), (3, 7), (1, 3), (0.2, 3)])
    def test_values(self, d, n):
        assert takens_dimension(d) == n

    @pytest.mark.parametrize("d", [0, -1.5])
    def test_nonpositive(self, d):
        with pytest.raises(ValueError):
            takens_dimension(d)
