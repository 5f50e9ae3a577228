"""Prediction from observed trajectory windows.

Two schemes are provided.  ``exact_prediction_map`` stacks a trajectory
with ``n - 1`` companion trajectories and solves one ``n x n`` system per
sample.  ``predict_future`` and ``infer_past`` fit one constant matrix to n
consecutive windows and apply its inverse to the newest (or oldest) state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynsys import IntegratorConfig, SystemSpec, Trajectory, eval_field, integrate
from .errors import DimensionError, SingularMatrixError
from .simdeg import ILL_CONDITIONED, MapSequence

CONTINUITY_TOL = 1e-9


@dataclass(frozen=True)
class PerturbationSpec:
    """Seeded disturbance of size ``epsilon`` (relative to the state norm for initial values)."""

    epsilon: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be nonnegative")

    def directions(self, count: int, dim: int) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        U = rng.standard_normal((count, dim))
        return U / np.linalg.norm(U, axis=1, keepdims=True)


class SegmentSeries:
    """Consecutive, equally sampled windows in chronological order.

    The last state of each window must equal the first state of the next.
    """

    def __init__(self, segments):
        segs = list(segments)
        if not segs:
            raise ValueError("need at least one segment")
        N, dt, dim = segs[0].N, segs[0].dt, segs[0].dim
        for s in segs[1:]:
            if s.N != N or s.dim != dim or not math.isclose(s.dt, dt, rel_tol=1e-12):
                raise DimensionError("segments must share length, dimension and dt")
        for k in range(len(segs) - 1):
            gap = float(np.max(np.abs(segs[k].states[-1] - segs[k + 1].states[0])))
            if gap > CONTINUITY_TOL:
                raise ValueError(f"segments {k} and {k + 1} do not join (gap {gap:.3g})")
        self.segments = segs

    def __len__(self):
        return len(self.segments)

    def __getitem__(self, i) -> Trajectory:
        return self.segments[i]

    @property
    def dt(self) -> float:
        return self.segments[0].dt

    @property
    def window(self) -> float:
        return self.segments[0].N * self.segments[0].dt

    @property
    def dim(self) -> int:
        return self.segments[0].dim

    @classmethod
    def from_trajectory(cls, traj: Trajectory, n: int) -> "SegmentSeries":
        """Split a trajectory with ``n*m + 1`` samples into n windows of m steps."""
        if traj.N % n:
            raise DimensionError("trajectory steps must split evenly into n windows")
        m = traj.N // n
        return cls([traj.slice(k * m, (k + 1) * m) for k in range(n)])


def takens_dimension(d_attractor: float) -> int:
    """Embedding dimension ``2 ceil(d) + 1``."""
    if not d_attractor > 0:
        raise ValueError("attractor dimension must be positive")
    return 2 * int(math.ceil(d_attractor)) + 1


# ---------------------------------------------------------------------------
# fields


def _shifted(spec: SystemSpec, shift: np.ndarray, sign: float) -> SystemSpec:
    """The field ``sign * (f + shift)``; linear kinds stay linear."""
    if spec.kind == "linear-affine":
        A = np.asarray(spec.params["A"], dtype=float)
        B = np.asarray(spec.params["B"], dtype=float)
        return SystemSpec.linear(sign * A, sign * (B + shift), name=spec.name)
    if sign == 1.0 and not np.any(shift):
        return spec

    def rhs(t, x):
        return sign * (eval_field(spec, t, x) + shift)

    return SystemSpec.custom(rhs, spec.dim, name=spec.name)


def _window_flow(spec, start, window, dt):
    return integrate(spec, start, 0.0, window, IntegratorConfig("rk4", dt)).states


def _hold(states, lo, hi, total):
    """Literal companion path: constant before ``lo``, active on ``[lo, hi]``, frozen after."""
    out = np.empty((total, states.shape[1]))
    out[:lo] = states[0]
    out[lo:hi + 1] = states
    out[hi + 1:] = states[-1]
    return out


@dataclass
class Prediction:
    state: np.ndarray
    K: np.ndarray
    fit_residual: float
    condition: float
    path: Trajectory
    companions: np.ndarray
    direction: str = "future"
    error: float | None = None

    def to_dict(self) -> dict:
        d = {
            "direction": self.direction,
            "state": self.state.tolist(),
            "K": self.K.tolist(),
            "fit_residual": float(self.fit_residual),
            "condition": float(self.condition),
        }
        if self.error is not None:
            d["error"] = float(self.error)
        return d


def _fit_constant(C: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, float]:
    """Least-squares K with ``K c ~ y``, written as the min-norm correction ``K = I + D``."""
    n = C.shape[1]
    DT, *_ = np.linalg.lstsq(C, Y - C, rcond=None)
    K = np.eye(n) + DT.T
    res = float(np.sqrt(np.mean(np.sum((C @ K.T - Y) ** 2, axis=1))))
    return K, res


def _constant_scheme(series: SegmentSeries, field: SystemSpec, sign: float,
                     perturbation: PerturbationSpec | None, truth=None) -> Prediction:
    n = len(series)
    dim = series.dim
    dt = series.dt
    T = series.window
    m = series[0].N
    shifts = np.zeros((n, dim))
    if perturbation is not None and perturbation.epsilon > 0:
        shifts = perturbation.epsilon * perturbation.directions(n, dim)

    comps = []
    for i, seg in enumerate(series.segments):
        spec = _shifted(field, shifts[i], sign)
        if sign > 0:
            # starts at the window's end and runs one window forward
            comps.append(_window_flow(spec, seg.states[-1], T, dt))
        else:
            # starts at the window's start and runs one window backward
            comps.append(_window_flow(spec, seg.states[0], T, dt)[::-1])
    C = np.concatenate(comps)
    Y = np.concatenate([s.states for s in series.segments])
    K, res = _fit_constant(C, Y)
    cond = float(np.linalg.cond(K))
    if not np.isfinite(cond) or cond > ILL_CONDITIONED:
        raise SingularMatrixError("fitted K is singular")
    Kinv = np.linalg.inv(K)

    total = n * m + 1
    held = np.array([_hold(c, i * m, (i + 1) * m, total) for i, c in enumerate(comps)])
    if sign > 0:
        last = series[-1]
        path_states = last.states @ Kinv.T
        t0 = last.times[-1]
        state = path_states[-1]
    else:
        first = series[0]
        path_states = first.states @ Kinv.T
        t0 = first.times[0] - T
        state = path_states[0]
    path = Trajectory(t0, dt, path_states)
    err = None
    if truth is not None:
        err = float(np.linalg.norm(state - np.asarray(truth, dtype=float)))
    return Prediction(state, K, res, cond, path, held,
                      "future" if sign > 0 else "past", err)


def predict_future(history: SegmentSeries, field: SystemSpec,
                   perturbation: PerturbationSpec | None = None, truth=None) -> Prediction:
    """State one window after the end of ``history``.

    Companion ``c_{i-1}`` follows ``field`` (plus an optional seeded constant
    disturbance) for one window from the end of window ``i``.  The constant K
    fitted by ``K c_{i-1}(s) = y_i(s)`` approximates the backward window map,
    so ``K^{-1}`` applied to the newest window continues it.
    """
    return _constant_scheme(history, field, 1.0, perturbation, truth)


def infer_past(future: SegmentSeries, field: SystemSpec,
               perturbation: PerturbationSpec | None = None, truth=None) -> Prediction:
    """State one window before the start of ``future`` (mirror of :func:`predict_future`)."""
    return _constant_scheme(future, field, -1.0, perturbation, truth)


# ---------------------------------------------------------------------------
# exact per-sample prediction map


def perturbed_companions(spec: SystemSpec, x0, horizon: float, dt: float,
                         perturbation: PerturbationSpec, count: int | None = None):
    """``count`` (default ``dim - 1``) trajectories from seeded perturbations of ``x0``."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    count = spec.dim - 1 if count is None else count
    scale = perturbation.epsilon * max(1.0, float(np.linalg.norm(x0)))
    U = perturbation.directions(count, spec.dim)
    cfg = IntegratorConfig("rk4", dt)
    return [integrate(spec, x0 + scale * u, 0.0, horizon, cfg) for u in U]


def exact_prediction_map(x_traj: Trajectory, companions, y_traj: Trajectory,
                         y_companions) -> MapSequence:
    """Per-sample K(t) with ``K [x, c_1, ...] = [y, y_1, ...]`` column-wise.

    Stacks that are ill-conditioned (condition above 1e12) get a
    pseudo-inverse solution and are flagged in ``invertible``.  Duplicate
    initial values among the x-side trajectories are rejected outright.
    """
    xs = [x_traj, *companions]
    ys = [y_traj, *y_companions]
    n = x_traj.dim
    if len(xs) != n or len(ys) != n:
        raise DimensionError(f"need {n - 1} companions on each side")
    for tr in xs + ys:
        if tr.states.shape != x_traj.states.shape or not math.isclose(tr.dt, x_traj.dt):
            raise DimensionError("all trajectories must share sampling and dimension")
    starts = np.array([tr.states[0] for tr in xs])
    for a in range(n):
        for b in range(a + 1, n):
            if np.array_equal(starts[a], starts[b]):
                raise SingularMatrixError("companions duplicate an initial state (epsilon = 0?)")
    Xs = np.stack([tr.states for tr in xs], axis=2)   # (S, n, n): columns are trajectories
    Ys = np.stack([tr.states for tr in ys], axis=2)
    cond = np.linalg.cond(Xs)
    ok = np.isfinite(cond) & (cond <= ILL_CONDITIONED)
    K = np.empty_like(Xs)
    if np.any(ok):
        KT = np.linalg.solve(np.swapaxes(Xs[ok], 1, 2), np.swapaxes(Ys[ok], 1, 2))
        K[ok] = np.swapaxes(KT, 1, 2)
    for i in np.flatnonzero(~ok):
        K[i] = Ys[i] @ np.linalg.pinv(Xs[i])
    return MapSequence(K, 0, ok)


def stacked_residual(Kseq: MapSequence, x_traj, companions, y_traj, y_companions) -> np.ndarray:
    """Per-sample ``max |K X - Y|`` over the stacked columns."""
    Xs = np.stack([tr.states for tr in (x_traj, *companions)], axis=2)
    Ys = np.stack([tr.states for tr in (y_traj, *y_companions)], axis=2)
    return np.max(np.abs(np.einsum("sij,sjk->sik", Kseq.matrices, Xs) - Ys), axis=(1, 2))
