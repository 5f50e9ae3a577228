"""Maximum-principle diagnostics: Hamiltonian, adjoints, stationarity and KKT residuals."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .dynsys import SystemSpec, Trajectory, eval_field, jacobian
from .errors import BlowUpError, DimensionError
from .geomap import AffineMap, PiecewiseAffineMap
from .simdeg import MapSequence, PolynomialMap, _check_pair


@dataclass
class AdjointPath:
    times: np.ndarray
    lam: np.ndarray
    mu: np.ndarray

    def sup_norms(self) -> tuple[float, float]:
        return float(np.max(np.abs(self.lam))), float(np.max(np.abs(self.mu)))


@dataclass
class SensitivityPath:
    times: np.ndarray
    Phi: np.ndarray

    def __len__(self):
        return self.Phi.shape[0]


# ---------------------------------------------------------------------------
# map evaluation on one interval


def _map_on(kmap, interval: int, t: float, x: np.ndarray):
    """Return ``(K(x), DK(x))`` for the map active on sample interval ``interval``."""
    if kmap is None:
        return x.copy(), np.eye(x.shape[0])
    if isinstance(kmap, MapSequence):
        K = kmap.at(interval)
        return K @ x, K
    if isinstance(kmap, PiecewiseAffineMap):
        l = int(kmap.interval(t))
        return kmap.M[l] @ x + kmap.b[l], kmap.M[l]
    if isinstance(kmap, AffineMap):
        return kmap(x), kmap.M
    if isinstance(kmap, PolynomialMap):
        return kmap(x), kmap.jacobian(x)
    K = np.atleast_2d(np.asarray(kmap, dtype=float))
    return K @ x, K


def _field_fn(f):
    if isinstance(f, SystemSpec):
        return lambda t, x: eval_field(f, t, x)
    return f


def _jac_fn(f):
    if isinstance(f, SystemSpec):
        return lambda t, x: jacobian(f, t, x)
    return f


def hamiltonian(t, x, y, K, lam, mu, T, f, g) -> float:
    """``-(1/T)||K(x) - y||^2 + lam.f(t, x) + mu.g(t, y)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    if not (x.shape == y.shape == lam.shape == mu.shape):
        raise DimensionError("x, y, lambda and mu must share a dimension")
    Kx = K(x) if callable(K) else np.atleast_2d(np.asarray(K, dtype=float)) @ x
    r = Kx - y
    fx = np.atleast_1d(_field_fn(f)(t, x))
    gy = np.atleast_1d(_field_fn(g)(t, y))
    return float(-(r @ r) / T + lam @ fx + mu @ gy)


def integrate_adjoints(X: Trajectory, Y: Trajectory, K, f_jac, g_jac) -> AdjointPath:
    """Backward rk4 for the costate pair with zero terminal values.

    Solves ``lam' = (2/T) DK^T (K(x) - y) - f_x^T lam`` and
    ``mu' = -(2/T) (K(x) - y) - g_y^T mu`` from ``T`` down to the first sample.
    States between samples are linearly interpolated; for sequence maps the
    matrix of the interval's left sample is used on the whole step.
    """
    _check_pair(X, Y)
    fj = _jac_fn(f_jac)
    gj = _jac_fn(g_jac)
    n = X.dim
    N = X.N
    tt = X.times
    T = float(tt[-1] - tt[0])
    lam = np.zeros((N + 1, n))
    mu = np.zeros((N + 1, n))

    def rhs(i, t, x, y, l, m):
        Kx, DK = _map_on(K, i, t, x)
        r = Kx - y
        dl = (2.0 / T) * (DK.T @ r) - np.atleast_2d(fj(t, x)).T @ l
        dm = -(2.0 / T) * r - np.atleast_2d(gj(t, y)).T @ m
        return dl, dm

    l = np.zeros(n)
    m = np.zeros(n)
    for i in range(N - 1, -1, -1):
        t1, t0 = tt[i + 1], tt[i]
        h = t0 - t1  # negative
        x1, x0 = X.states[i + 1], X.states[i]
        y1, y0 = Y.states[i + 1], Y.states[i]
        xm, ym, tm = 0.5 * (x0 + x1), 0.5 * (y0 + y1), 0.5 * (t0 + t1)
        a1, b1 = rhs(i, t1, x1, y1, l, m)
        a2, b2 = rhs(i, tm, xm, ym, l + 0.5 * h * a1, m + 0.5 * h * b1)
        a3, b3 = rhs(i, tm, xm, ym, l + 0.5 * h * a2, m + 0.5 * h * b2)
        a4, b4 = rhs(i, t0, x0, y0, l + h * a3, m + h * b3)
        l = l + (h / 6.0) * (a1 + 2 * a2 + 2 * a3 + a4)
        m = m + (h / 6.0) * (b1 + 2 * b2 + 2 * b3 + b4)
        if not (np.all(np.isfinite(l)) and np.all(np.isfinite(m))):
            raise BlowUpError(f"adjoint integration diverged at sample {i}", step=i)
        lam[i] = l
        mu[i] = m
    return AdjointPath(tt.copy(), lam, mu)


# ---------------------------------------------------------------------------
# constant-matrix stationarity


def stationarity_gradient(K, X: Trajectory, Y: Trajectory, T: float | None = None) -> np.ndarray:
    """Gradient of the sampled cost in the entries of a constant K.

    ``(2 dt / T) sum_{i=1..N} (K x_i - y_i) x_i^T``; the default ``T = N dt``
    makes this the exact gradient of ``discrete_cost``.
    """
    _check_pair(X, Y)
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if T is None:
        T = X.N * X.dt
    Xs = X.states[1:]
    R = Xs @ K.T - Y.states[1:]
    return (2.0 * X.dt / T) * (R.T @ Xs)


def stationarity_residual(K, X: Trajectory, Y: Trajectory, T: float | None = None) -> float:
    """Frobenius norm of :func:`stationarity_gradient`."""
    return float(np.linalg.norm(stationarity_gradient(K, X, Y, T)))


def hamiltonian_hessian(X: Trajectory, T: float | None = None) -> np.ndarray:
    """Second derivative of the sampled Hamiltonian cost term in a row of K.

    The cost is separable across rows of K, each row seeing the same
    ``-(2 dt / T) sum x x^T``; it is negative semidefinite by construction.
    """
    if T is None:
        T = X.N * X.dt
    Xs = X.states[1:]
    return -(2.0 * X.dt / T) * (Xs.T @ Xs)


def second_order_ok(X: Trajectory, T: float | None = None, tol: float = 1e-10) -> bool:
    H = hamiltonian_hessian(X, T)
    ev = np.linalg.eigvalsh(0.5 * (H + H.T))
    return bool(ev.max() <= tol * max(1.0, abs(ev).max()))


# ---------------------------------------------------------------------------
# sensitivities and KKT


def variational_matrix(spec: SystemSpec, Y: Trajectory) -> SensitivityPath:
    """rk4 integration of ``(y, Phi)`` with ``Phi' = g_y(t, y) Phi``, ``Phi(0) = I``."""
    n = spec.dim
    if Y.dim != n:
        raise DimensionError("trajectory and system dimensions differ")
    h = Y.dt
    N = Y.N
    Phi = np.empty((N + 1, n, n))
    P = np.eye(n)
    y = Y.states[0].copy()
    Phi[0] = P

    def rhs(t, y, P):
        return eval_field(spec, t, y), jacobian(spec, t, y) @ P

    for k in range(N):
        t = Y.times[0] + k * h
        a1, B1 = rhs(t, y, P)
        a2, B2 = rhs(t + 0.5 * h, y + 0.5 * h * a1, P + 0.5 * h * B1)
        a3, B3 = rhs(t + 0.5 * h, y + 0.5 * h * a2, P + 0.5 * h * B2)
        a4, B4 = rhs(t + h, y + h * a3, P + h * B3)
        y = y + (h / 6.0) * (a1 + 2 * a2 + 2 * a3 + a4)
        P = P + (h / 6.0) * (B1 + 2 * B2 + 2 * B3 + B4)
        if not np.all(np.isfinite(P)) or np.max(np.abs(P)) > 1e12:
            raise BlowUpError(f"variational matrix blew up at step {k + 1}", step=k + 1)
        Phi[k + 1] = P
    return SensitivityPath(Y.times.copy(), Phi)


def exponential_path(A, times) -> SensitivityPath:
    """``Phi(t) = e^{A (t - t_0)}`` on the given sample times."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    times = np.asarray(times, dtype=float)
    Phi = np.array([expm(A * (t - times[0])) for t in times])
    return SensitivityPath(times.copy(), Phi)


def _matrices(Kseq, count, n):
    if isinstance(Kseq, MapSequence):
        if Kseq.start != 0 or len(Kseq) != count:
            raise DimensionError("map sequence must cover every sample")
        return Kseq.matrices
    K = np.asarray(Kseq, dtype=float)
    if K.ndim == 2:
        return np.broadcast_to(K, (count, n, n))
    if K.shape != (count, n, n):
        raise DimensionError("need one n x n matrix per sample")
    return K


def kkt_residual(Kseq, X: Trajectory, Y: Trajectory, Phi) -> np.ndarray:
    """Entrywise KKT expression ``R[s, i, j]`` at every sample ``s``.

    ``R = 2 sum_l x_j k_jl x_l - 2 [x_j y_j + sum_{l,m} x_j(0) k_lm x_l Phi_mi]
    + 2 sum_l x_j(0) y_l Phi_li`` with all time-dependent quantities taken at
    sample ``s``.
    """
    if X.states.shape != Y.states.shape:
        raise DimensionError("X and Y samplings differ")
    P = Phi.Phi if isinstance(Phi, SensitivityPath) else np.asarray(Phi, dtype=float)
    count, n = X.states.shape
    if P.shape != (count, n, n):
        raise DimensionError("sensitivity path does not match the samples")
    K = _matrices(Kseq, count, n)
    x = X.states
    y = Y.states
    x0 = X.states[0]
    Kx = np.einsum("sjl,sl->sj", K, x)
    first = 2.0 * x * Kx                               # [s, j]
    xy = x * y                                         # [s, j]
    KtxPhi = np.einsum("slm,sl,smi->si", K, x, P)      # sum_{l,m} k_lm x_l Phi_mi
    yPhi = np.einsum("sl,sli->si", y, P)
    R = (first - 2.0 * xy)[:, None, :] \
        - 2.0 * x0[None, None, :] * KtxPhi[:, :, None] \
        + 2.0 * x0[None, None, :] * yPhi[:, :, None]
    return R


def kkt_linear_residual(Kseq, X: Trajectory, Y: Trajectory, A) -> np.ndarray:
    """The KKT expression with ``Phi(t) = e^{A t}`` (hyperbolic linear part)."""
    return kkt_residual(Kseq, X, Y, exponential_path(A, X.times))


@dataclass
class ResidualReport:
    max_per_sample: np.ndarray
    mean_per_sample: np.ndarray
    gradient_norm: float | None = None
    fd_relative_error: float | None = None

    def to_dict(self) -> dict:
        d = {
            "max_residual": float(np.max(self.max_per_sample)),
            "mean_residual": float(np.mean(self.mean_per_sample)),
            "per_sample_max": [float(v) for v in self.max_per_sample],
        }
        if self.gradient_norm is not None:
            d["gradient_norm"] = float(self.gradient_norm)
        if self.fd_relative_error is not None:
            d["fd_relative_error"] = float(self.fd_relative_error)
        return d


def residual_report(R: np.ndarray, gradient_norm=None, fd_relative_error=None) -> ResidualReport:
    A = np.abs(R).reshape(R.shape[0], -1)
    return ResidualReport(A.max(axis=1), A.mean(axis=1), gradient_norm, fd_relative_error)


def finite_difference_gradient(cost, K, h: float = 1e-6) -> np.ndarray:
    """Central differences of ``cost(K)`` in every entry of K."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    G = np.empty_like(K)
    for idx in np.ndindex(K.shape):
        step = h * max(1.0, abs(K[idx]))
        Kp = K.copy()
        Km = K.copy()
        Kp[idx] += step
        Km[idx] -= step
        G[idx] = (cost(Kp) - cost(Km)) / (2.0 * step)
    return G
