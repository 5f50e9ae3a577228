"""Conjugacies near a hyperbolic equilibrium.

Covers Green kernels of an exponential dichotomy, the Picard construction
of ``K* = I + g`` on a grid, controllability-Gramian terminal maps, decay
certificates and a scalar closed form.

Perturbation fields ``r`` act on stacked states: ``r(Y)`` with ``Y`` of
shape ``(k, n)`` must return shape ``(k, n)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import expm

from . import kernels
from .dynsys import IntegratorConfig, SystemSpec, integrate
from .errors import ConvergenceError, DimensionError, SingularMatrixError

DEFECTIVE = 1e8
GRAMIAN_COND = 1e10


def _eval_r(r, Y) -> np.ndarray:
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    return np.asarray(r(Y), dtype=float).reshape(Y.shape)


@dataclass
class HartmanProblem:
    """``y' = A y + r(y)`` next to its linear part, with dichotomy data."""

    A: np.ndarray
    Pplus: np.ndarray
    Pminus: np.ndarray
    M: float
    eta: float
    r: Callable
    r_lip: float
    grad_r0: np.ndarray
    r_sup: float | None = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = self.A.shape[0]
        self.Pplus = np.atleast_2d(np.asarray(self.Pplus, dtype=float))
        self.Pminus = np.atleast_2d(np.asarray(self.Pminus, dtype=float))
        self.grad_r0 = np.atleast_2d(np.asarray(self.grad_r0, dtype=float))
        for name in ("Pplus", "Pminus", "grad_r0"):
            if getattr(self, name).shape != (n, n):
                raise DimensionError(f"{name} must be {n} x {n}")
        if not np.allclose(self.Pplus + self.Pminus, np.eye(n), atol=1e-10):
            raise ValueError("Pplus + Pminus must be the identity")
        if not np.allclose(self.Pplus @ self.Pplus, self.Pplus, atol=1e-10):
            raise ValueError("Pplus must be idempotent")
        if np.any(np.abs(np.linalg.eigvals(self.A).real) < 1e-12):
            raise ValueError("A has an eigenvalue on the imaginary axis")
        if self.M < 1 or self.eta <= 0:
            raise ValueError("dichotomy constants need M >= 1 and eta > 0")

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @classmethod
    def from_matrix(cls, A, r, r_lip, grad_r0=None, r_sup=None, samples: int = 400):
        """Split ``A`` by the sign of its eigenvalues' real parts and estimate M, eta."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        n = A.shape[0]
        w, V = np.linalg.eig(A)
        if np.linalg.cond(V) > DEFECTIVE:
            raise SingularMatrixError("A is (nearly) defective; eigenvector condition > 1e8")
        if np.any(np.abs(w.real) < 1e-12):
            raise ValueError("A is not hyperbolic")
        Vinv = np.linalg.inv(V)
        stable = (w.real < 0).astype(float)
        Pplus = (V @ np.diag(stable) @ Vinv).real
        Pminus = np.eye(n) - Pplus
        eta = float(np.min(np.abs(w.real)))
        ts = np.linspace(0.0, 10.0 / eta, samples)
        M = 1.0
        for t in ts:
            M = max(M,
                    np.linalg.norm(expm(A * t) @ Pplus, 2) * math.exp(eta * t),
                    np.linalg.norm(expm(-A * t) @ Pminus, 2) * math.exp(eta * t))
        grad = np.zeros((n, n)) if grad_r0 is None else grad_r0
        return cls(A, Pplus, Pminus, float(M), eta, r, float(r_lip), grad, r_sup)

    def check_dichotomy(self, seed: int = 0, samples: int = 50, slack: float = 1e-9) -> bool:
        """Spot-check the dichotomy bounds on random times and vectors."""
        rng = np.random.default_rng(seed)
        for _ in range(samples):
            t = rng.uniform(0.0, 5.0 / self.eta)
            x = rng.standard_normal(self.dim)
            px, mx = self.Pplus @ x, self.Pminus @ x
            bound = self.M * math.exp(-self.eta * t)
            if np.linalg.norm(expm(self.A * t) @ px) > bound * np.linalg.norm(px) + slack:
                return False
            if np.linalg.norm(expm(-self.A * t) @ mx) > bound * np.linalg.norm(mx) + slack:
                return False
        return True


def green_kernel(problem: HartmanProblem, t: float) -> np.ndarray:
    """``e^{At} P+`` for ``t >= 0`` and ``-e^{At} P-`` for ``t < 0``."""
    E = expm(problem.A * t)
    return E @ problem.Pplus if t >= 0 else -E @ problem.Pminus


def contraction_certificate(problem: HartmanProblem) -> float:
    """``(2M/eta) * Lip(r)``; below one the Picard map is a contraction."""
    return 2.0 * problem.M / problem.eta * problem.r_lip


# ---------------------------------------------------------------------------
# grid functions


@dataclass
class GridFunction:
    """Vector values on the nodes of a regular grid over a box.

    ``values`` has shape ``(*shape, q)`` in row-major node order.  Off-node
    evaluation is multilinear; points outside the box are clamped to it.
    """

    lo: np.ndarray
    hi: np.ndarray
    shape: tuple
    values: np.ndarray

    def __post_init__(self):
        self.lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        self.shape = tuple(int(s) for s in self.shape)
        self.values = np.asarray(self.values, dtype=float)
        d = self.lo.shape[0]
        if self.hi.shape != (d,) or len(self.shape) != d:
            raise DimensionError("box bounds and resolution must share a dimension")
        if np.any(self.hi <= self.lo) or min(self.shape) < 2:
            raise ValueError("need hi > lo and at least two nodes per axis")
        if self.values.shape[:-1] != self.shape:
            raise DimensionError("values must have shape (*shape, q)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")

    @property
    def step(self) -> np.ndarray:
        return (self.hi - self.lo) / (np.array(self.shape) - 1)

    @classmethod
    def zeros(cls, lo, hi, shape, q=None):
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        shape = tuple(np.atleast_1d(shape).tolist())
        q = lo.shape[0] if q is None else q
        return cls(lo, hi, shape, np.zeros((*shape, q)))

    def nodes(self) -> np.ndarray:
        axes = [np.linspace(a, b, s) for a, b, s in zip(self.lo, self.hi, self.shape)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def clamp(self, pts) -> np.ndarray:
        return np.clip(pts, self.lo, self.hi)

    def contains(self, pts, tol: float = 1e-12) -> bool:
        pts = np.atleast_2d(pts)
        return bool(np.all(pts >= self.lo - tol) and np.all(pts <= self.hi + tol))

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        single = pts.ndim == 1
        P = np.ascontiguousarray(np.atleast_2d(pts))
        out = kernels.multilinear(self.lo, self.step, np.array(self.shape, dtype=np.int64),
                                  np.ascontiguousarray(self.values), P)
        return out[0] if single else out

    def with_values(self, flat) -> "GridFunction":
        q = self.values.shape[-1]
        return GridFunction(self.lo, self.hi, self.shape, np.reshape(flat, (*self.shape, q)))

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist(), "shape": list(self.shape),
                "values": self.values.reshape(-1).tolist()}

    @classmethod
    def from_dict(cls, d) -> "GridFunction":
        shape = tuple(d["shape"])
        vals = np.asarray(d["values"], dtype=float)
        q = vals.size // int(np.prod(shape))
        return cls(d["lo"], d["hi"], shape, vals.reshape(*shape, q))


@dataclass
class PicardResult:
    g: GridFunction
    changes: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    s_cutoff: float = 0.0
    truncation_bound: float = 0.0
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.changes)


def _half_line(S, h):
    m = max(1, int(math.ceil(S / h)))
    s = np.linspace(0.0, S, m + 1)
    w = np.full(m + 1, S / m)
    w[0] *= 0.5
    w[-1] *= 0.5
    return s, w


def solve_conjugacy_fixed_point(problem: HartmanProblem, lo, hi, shape, s_cutoff=None,
                                quad_step: float = 0.01, tol: float = 1e-8,
                                max_iter: int = 200) -> PicardResult:
    """Picard iteration for ``g = T g`` on a grid over the box ``[lo, hi]``.

    ``(Tg)(x) = int_{-S}^{S} G_A(s) r(z + g(z)) ds`` with ``z`` the clamped
    point ``e^{-As} x``.  The trapezoid rule is applied separately on each
    half-line because the kernel jumps at ``s = 0``.  If ``s_cutoff`` is not
    given, ``S`` is chosen so that ``M e^{-eta S} sup|r| < tol/10``.
    """
    cert = contraction_certificate(problem)
    if cert >= 1.0:
        raise ConvergenceError(f"contraction certificate {cert:.3g} >= 1")
    g = GridFunction.zeros(lo, hi, shape, problem.dim)
    X = g.nodes()
    n = problem.dim
    if g.lo.shape[0] != n:
        raise DimensionError("grid dimension must match the system")

    sup_r = problem.r_sup
    if sup_r is None:
        sup_r = float(np.max(np.abs(_eval_r(problem.r, X)))) if len(X) else 0.0
    if s_cutoff is None:
        if sup_r == 0.0:
            S = quad_step
        else:
            S = max(quad_step, math.log(10.0 * problem.M * sup_r / tol) / problem.eta)
    else:
        S = float(s_cutoff)
    bound = 2.0 * problem.M * sup_r * math.exp(-problem.eta * S) / problem.eta

    sp, wp = _half_line(S, quad_step)
    s_all = np.concatenate([sp, -sp])
    w_all = np.concatenate([wp, wp])
    G = np.array([expm(problem.A * s) @ problem.Pplus for s in sp]
                 + [-(expm(-problem.A * s) @ problem.Pminus) for s in sp])
    keep = np.any(np.abs(G) > 0.0, axis=(1, 2))
    s_all, w_all, G = s_all[keep], w_all[keep], G[keep]
    E = np.array([expm(-problem.A * s) for s in s_all])
    Z = g.clamp(np.einsum("qij,kj->qki", E, X))  # (Q, K, n)
    Zf = np.ascontiguousarray(Z.reshape(-1, n))
    WG = w_all[:, None, None] * G

    result = PicardResult(g, s_cutoff=S, truncation_bound=bound)
    prev = None
    for _ in range(max_iter):
        arg = Zf + g(Zf)
        R = _eval_r(problem.r, arg).reshape(Z.shape)
        new = np.einsum("qij,qkj->ki", WG, R)
        change = float(np.max(np.abs(new - g.values.reshape(-1, n))))
        g = g.with_values(new)
        result.changes.append(change)
        if prev is not None and prev > 0:
            result.ratios.append(change / prev)
        prev = change
        if change < tol:
            result.converged = True
            break
    result.g = g
    if not result.converged:
        raise ConvergenceError(f"Picard iteration did not reach tol={tol} in {max_iter} sweeps")
    return result


def perturbed_system(problem: HartmanProblem) -> SystemSpec:
    A = problem.A

    def rhs(t, y):
        return A @ y + _eval_r(problem.r, y)[0]

    return SystemSpec.custom(rhs, problem.dim, name="hartman-y")


def verify_conjugacy(problem: HartmanProblem, g: GridFunction, x0, horizon: float,
                     dt: float) -> float:
    """Max over samples of ``|(x(t) + g(x(t))) - y(t)|`` with ``y(0) = x0 + g(x0)``.

    ``x(t) = e^{At} x0`` is the linear flow and ``y`` is the rk4 solution of
    the perturbed system.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    cfg = IntegratorConfig("rk4", dt)
    y0 = x0 + g(x0)
    Y = integrate(perturbed_system(problem), y0, 0.0, horizon, cfg)
    Xs = np.array([expm(problem.A * t) @ x0 for t in Y.times])
    if not g.contains(Xs):
        raise ValueError("linear orbit leaves the domain of g")
    H = Xs + g(Xs)
    return float(np.max(np.linalg.norm(H - Y.states, axis=1)))


# ---------------------------------------------------------------------------
# controllability Gramian and terminal maps


def _quad_grid(t, h):
    m = max(1, int(math.ceil(t / h)))
    return np.linspace(0.0, t, m + 1)


def _control_vectors(problem, x0, s):
    v = problem.grad_r0 @ np.atleast_1d(np.asarray(x0, dtype=float))
    return np.array([expm(problem.A * si) @ v for si in s])


def _cumulative_gramian(U, s):
    outer = np.einsum("ki,kj->kij", U, U)
    inc = 0.5 * (outer[1:] + outer[:-1]) * np.diff(s)[:, None, None]
    G = np.concatenate([np.zeros((1,) + outer.shape[1:]), np.cumsum(inc, axis=0)])
    return 0.5 * (G + np.swapaxes(G, 1, 2))


def controllability_gramian(problem: HartmanProblem, x0, t: float,
                            quad_step: float = 1e-3) -> np.ndarray:
    """Trapezoid value of ``int_0^t U U^T ds`` with ``U(s) = e^{As} grad_r0 x0``."""
    if not t > 0:
        raise ValueError("t must be positive")
    s = _quad_grid(t, quad_step)
    return _cumulative_gramian(_control_vectors(problem, x0, s), s)[-1]


@dataclass
class TerminalResult:
    times: np.ndarray
    control: np.ndarray
    y: np.ndarray
    gramian: np.ndarray
    iterations: int
    endpoint_error: float


def terminal_map(problem: HartmanProblem, x0, y0, y1, t1: float, tol: float = 1e-8,
                 max_iter: int = 20, quad_step: float = 1e-3) -> TerminalResult:
    """Control path ``K*(t)`` and the fixed point of the steering operator P.

    ``K*(t) = U(t)^T G(t1)^{-1} (e^{-A t1} y1 - y0)`` and
    ``(Py)(t) = e^{At} y0 + e^{At} G(t) G(t1)^{-1} (e^{-A t1} y1 - y0)``.
    P does not depend on its argument in this linearized form, so the
    loop settles after one application.
    """
    if not t1 > 0:
        raise ValueError("t1 must be positive")
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    y1 = np.atleast_1d(np.asarray(y1, dtype=float))
    s = _quad_grid(t1, quad_step)
    U = _control_vectors(problem, x0, s)
    Gs = _cumulative_gramian(U, s)
    G1 = Gs[-1]
    if not np.all(np.isfinite(G1)) or np.linalg.cond(G1) > GRAMIAN_COND:
        raise SingularMatrixError("controllability Gramian is singular (condition > 1e10)")
    drive = expm(-problem.A * t1) @ y1 - y0
    w = np.linalg.solve(G1, drive)
    control = U @ w
    E = np.array([expm(problem.A * t) for t in s])

    y = np.einsum("kij,j->ki", E, y0)
    for it in range(1, max_iter + 1):
        Py = np.einsum("kij,j->ki", E, y0) + np.einsum("kij,kjl,l->ki", E, Gs, w)
        Py[0] = y0
        change = float(np.max(np.abs(Py - y)))
        y = Py
        if change < tol and it > 1:
            break
    else:
        raise ConvergenceError("terminal-map iteration budget exceeded")
    err = float(np.linalg.norm(y[-1] - y1))
    return TerminalResult(s, control, y, G1, it, err)


def decay_factor(M, eta, c1, c2, x0_norm, t1) -> float:
    """Contraction factor ``q(t1)`` of the steering fixed point."""
    k = M ** 3 * c1 ** 2 * c2 * x0_norm ** 2 / (2.0 * eta)
    den = 1.0 - M * k * math.exp(-2.0 * eta * t1)
    if den <= 0:
        raise ValueError("decay factor denominator is nonpositive")
    return (M * math.exp(-eta * t1) + k * math.exp(-eta * t1)) / den


def decay_crossover(M, eta, c1, c2, x0_norm, t_max: float = 50.0, step: float = 1e-3) -> float:
    """Smallest sampled ``t1`` (up to ``t_max``) with a valid ``q(t1) < 1``."""
    for t in np.arange(step, t_max + step, step):
        try:
            if decay_factor(M, eta, c1, c2, x0_norm, t) < 1.0:
                return float(t)
        except ValueError:
            continue
    return math.inf


def example2_closed_form(A, B, C, D, x0, y0, x):
    """Scalar conjugacy between ``x' = A x + B`` and ``y' = C y + D``.

    ``K(x) = (D/C + y0) ((x + B/A) / (x0 + B/A))^{C/A} - D/C``.
    """
    if A == 0 or C == 0:
        raise ValueError("A and C must be nonzero")
    den = x0 + B / A
    if den == 0:
        raise ValueError("x0 + B/A must be nonzero")
    base = (np.asarray(x, dtype=float) + B / A) / den
    p = C / A
    if np.any(base <= 0) and not float(p).is_integer():
        raise ValueError("nonpositive base with a non-integer exponent")
    out = (D / C + y0) * np.power(base, p) - D / C
    return float(out) if np.ndim(out) == 0 else out
