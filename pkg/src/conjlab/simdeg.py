"""Cost functionals, similarity degrees and constant/time-varying map fitting."""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal

import numpy as np

from . import kernels
from .dynsys import Trajectory
from .errors import DimensionError, SingularMatrixError
from .geomap import AffineMap, PiecewiseAffineMap, apply

ILL_CONDITIONED = 1e12


# ---------------------------------------------------------------------------
# similarity degree functions


def similarity_degree(J: float) -> float:
    """``log(1 + J) / J`` with the limits ``rho(0) = 1`` and ``rho(inf) = 0``."""
    J = float(J)
    if J < 0 or math.isnan(J):
        raise ValueError("cost must be nonnegative")
    if J == 0.0:
        return 1.0
    if math.isinf(J):
        return 0.0
    return math.log1p(J) / J


def _reciprocal(J: float) -> float:
    J = float(J)
    if J < 0 or math.isnan(J):
        raise ValueError("cost must be nonnegative")
    return 1.0 / (1.0 + J)


def _exponential(J: float) -> float:
    J = float(J)
    if J < 0 or math.isnan(J):
        raise ValueError("cost must be nonnegative")
    return math.exp(-J)


SIMILARITY_FUNCTIONS = {
    "log1p-ratio": similarity_degree,
    "reciprocal": _reciprocal,
    "exponential": _exponential,
}


def _rho_array(J, rho=similarity_degree):
    J = np.asarray(J, dtype=float)
    if rho is similarity_degree:
        out = np.ones_like(J)
        pos = J > 0
        out[pos] = np.log1p(J[pos]) / J[pos]
        out[np.isinf(J)] = 0.0
        return out
    return np.array([rho(j) for j in J.ravel()]).reshape(J.shape)


# ---------------------------------------------------------------------------
# maps


@dataclass
class MapSequence:
    """Per-sample matrices ``K(i)``; ``matrices[k]`` belongs to sample ``start + k``."""

    matrices: np.ndarray
    start: int = 0
    invertible: np.ndarray | None = None

    def __post_init__(self):
        self.matrices = np.asarray(self.matrices, dtype=float)
        if self.matrices.ndim != 3 or self.matrices.shape[1] != self.matrices.shape[2]:
            raise DimensionError("MapSequence needs an (m, n, n) array")
        if self.invertible is None:
            self.invertible = np.ones(self.matrices.shape[0], dtype=bool)

    def __len__(self):
        return self.matrices.shape[0]

    @property
    def dim(self):
        return self.matrices.shape[1]

    @property
    def flagged(self) -> np.ndarray:
        return np.flatnonzero(~self.invertible) + self.start

    def at(self, i) -> np.ndarray:
        return self.matrices[np.asarray(i) - self.start]


@dataclass
class PolynomialMap:
    """``f(x) = sum_alpha coeffs[alpha] * x^alpha`` over multi-indices with ``|alpha| <= degree``."""

    degree: int
    exponents: np.ndarray
    coeffs: np.ndarray
    rank_deficient: bool = False

    @property
    def dim(self):
        return self.exponents.shape[1]

    def features(self, X) -> np.ndarray:
        return monomials(X, self.exponents)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        out = self.features(np.atleast_2d(x)) @ self.coeffs
        return out[0] if single else out

    def jacobian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        n = self.dim
        J = np.zeros((n, n))
        for alpha, c in zip(self.exponents, self.coeffs):
            for k in range(n):
                if alpha[k] == 0:
                    continue
                d = alpha.copy()
                d[k] -= 1
                J[:, k] += c * alpha[k] * np.prod(x ** d)
        return J


def multi_indices(n: int, degree: int) -> np.ndarray:
    """All exponent vectors of length n with total degree <= degree (graded order)."""
    rows = []
    for total in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(n), total):
            alpha = np.zeros(n, dtype=np.int64)
            for k in combo:
                alpha[k] += 1
            rows.append(alpha)
    return np.array(rows, dtype=np.int64).reshape(-1, n)


def monomials(X, exponents) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.prod(X[:, None, :] ** exponents[None, :, :], axis=2)


def map_images(kmap, X: Trajectory, idx) -> np.ndarray:
    """``K(i) x(i)`` for sample indices ``idx`` (an array)."""
    x = X.states[idx]
    if kmap is None:
        return x.copy()
    if isinstance(kmap, MapSequence):
        return np.einsum("kij,kj->ki", kmap.at(idx), x)
    if isinstance(kmap, PiecewiseAffineMap):
        return apply(kmap, X.times[idx], x)
    if isinstance(kmap, (AffineMap, PolynomialMap)):
        return kmap(x)
    if callable(kmap):
        return np.array([kmap(v) for v in x])
    K = np.atleast_2d(np.asarray(kmap, dtype=float))
    if K.shape != (X.dim, X.dim):
        raise DimensionError(f"constant map of shape {K.shape} for {X.dim}-dim states")
    return x @ K.T


def _check_pair(X: Trajectory, Y: Trajectory):
    if X.states.shape[0] != Y.states.shape[0]:
        raise DimensionError(f"trajectory lengths differ ({X.N} vs {Y.N} steps)")
    if X.N < 1:
        raise DimensionError("need at least two samples")
    if not math.isclose(X.dt, Y.dt, rel_tol=1e-12):
        raise DimensionError("trajectories must share dt")


def squared_errors(kmap, X: Trajectory, Y: Trajectory) -> np.ndarray:
    """``||K(i) x(i) - y(i)||^2`` for ``i = 1..N``."""
    _check_pair(X, Y)
    idx = np.arange(1, X.N + 1)
    R = map_images(kmap, X, idx) - Y.states[idx]
    return np.einsum("ij,ij->i", R, R)


def discrete_cost(kmap, X: Trajectory, Y: Trajectory) -> float:
    """``J_N = (1/N) sum_{i=1..N} ||K(i) x(i) - y(i)||^2``; ``kmap=None`` is the identity."""
    return float(np.mean(squared_errors(kmap, X, Y)))


def evaluate_similarity_over_time(kmap, X: Trajectory, Y: Trajectory,
                                  rho=similarity_degree) -> np.ndarray:
    """Running similarity ``curve[k-1] = rho((1/k) sum_{i<=k} err_i)`` for ``k = 1..N``."""
    err = squared_errors(kmap, X, Y)
    running = np.cumsum(err) / np.arange(1, err.shape[0] + 1)
    return _rho_array(running, rho)


# ---------------------------------------------------------------------------
# reports


def percent(rho: float) -> float:
    """``100 * rho`` rounded half-even to two decimals."""
    d = Decimal(repr(float(rho) * 100.0)).quantize(Decimal("0.01"), rounding=ROUND_HALF_EVEN)
    return float(d)


@dataclass
class SimilarityReport:
    J_N: float
    rho: float
    running_rho: np.ndarray
    map_kind: str
    payload: object = None
    times: np.ndarray | None = None
    pair: tuple = ("x", "y")
    initial_rho: float | None = None
    best_index: int | None = None
    search_curve: np.ndarray | None = None
    warning: str | None = None
    extras: dict = field(default_factory=dict)

    def to_dict(self, curve=True) -> dict:
        d = {
            "pair": list(self.pair),
            "map_kind": self.map_kind,
            "J_N": float(self.J_N),
            "rho": float(self.rho),
            "rho_percent": percent(self.rho),
        }
        if self.initial_rho is not None:
            d["initial_rho"] = float(self.initial_rho)
            d["initial_rho_percent"] = percent(self.initial_rho)
        if self.map_kind in ("constant", "identity") and self.payload is not None:
            d["K"] = np.asarray(self.payload, dtype=float).tolist()
        if self.best_index is not None:
            d["best_index"] = int(self.best_index)
        if self.warning:
            d["warning"] = self.warning
        if curve:
            t = self.times if self.times is not None else np.arange(1, len(self.running_rho) + 1)
            d["curve"] = [[float(a), float(b)] for a, b in zip(t, self.running_rho)]
        d.update(self.extras)
        return d


def similarity_report(kmap, X: Trajectory, Y: Trajectory, map_kind=None,
                      rho=similarity_degree, pair=None) -> SimilarityReport:
    if map_kind is None:
        map_kind = _kind_of(kmap)
    curve = evaluate_similarity_over_time(kmap, X, Y, rho)
    J = discrete_cost(kmap, X, Y)
    return SimilarityReport(J, rho(J), curve, map_kind, payload=kmap, times=X.times[1:],
                            pair=pair or _pair_names(X, Y))


def _kind_of(kmap):
    if kmap is None:
        return "identity"
    if isinstance(kmap, MapSequence):
        return "sequence"
    if isinstance(kmap, (PiecewiseAffineMap, AffineMap)):
        return "piecewise-affine"
    if isinstance(kmap, PolynomialMap):
        return "polynomial"
    return "constant"


def _pair_names(X, Y):
    nx = X.system.name if X.system is not None else "x"
    ny = Y.system.name if Y.system is not None else "y"
    return (nx, ny)


# ---------------------------------------------------------------------------
# Algorithm 1 and 2


def _blocks(S: np.ndarray, n: int) -> np.ndarray:
    """``out[i]`` is the n x n matrix with columns ``S[i], ..., S[i+n-1]``."""
    win = np.lib.stride_tricks.sliding_window_view(S, n, axis=0)
    return np.ascontiguousarray(win)  # (count, n, n): win[i][:, c] = S[i + c]


def block_solutions(X: Trajectory, Y: Trajectory):
    """Solve ``K(i) Xblock(i) = Yblock(i)`` for every block start ``i``.

    Returns ``(K, ok, cond)``.  Blocks with condition number above 1e12 get
    a least-squares (pseudo-inverse) solution and ``ok = False``.
    """
    _check_pair(X, Y)
    n = X.dim
    if X.N + 1 < n:
        raise DimensionError("trajectory shorter than the block size")
    Xb = _blocks(X.states, n)
    Yb = _blocks(Y.states, n)
    cond = np.linalg.cond(Xb)
    ok = np.isfinite(cond) & (cond <= ILL_CONDITIONED)
    K = np.empty_like(Xb)
    if np.any(ok):
        # K Xb = Yb  <=>  Xb^T K^T = Yb^T
        KT = np.linalg.solve(np.swapaxes(Xb[ok], 1, 2), np.swapaxes(Yb[ok], 1, 2))
        K[ok] = np.swapaxes(KT, 1, 2)
    for i in np.flatnonzero(~ok):
        K[i] = Yb[i] @ np.linalg.pinv(Xb[i])
    return K, ok, cond


def algorithm1_solve_Kt(X: Trajectory, Y: Trajectory) -> MapSequence:
    """Time-varying matrices reproducing Y from X exactly at every sample.

    Sample ``i`` uses the block starting at ``min(i, N - n + 1)`` so the last
    ``n - 1`` samples reuse the final block, which contains them.
    """
    K, ok, _ = block_solutions(X, Y)
    last = K.shape[0] - 1
    idx = np.minimum(np.arange(X.N + 1), last)
    return MapSequence(K[idx], 0, ok[idx])


def algorithm2_best_constant_K(X: Trajectory, Y: Trajectory, rho=similarity_degree,
                               pair=None):
    """Best candidate among the Algorithm-1 block solutions, scored on the whole pair.

    Returns ``(K, report)``; ``report.search_curve`` is the best-so-far
    similarity after each candidate and ties go to the smallest index.
    """
    K, ok, _ = block_solutions(X, Y)
    idx = np.arange(1, X.N + 1)
    Xs = np.ascontiguousarray(X.states[idx])
    Ys = np.ascontiguousarray(Y.states[idx])
    initial = rho(discrete_cost(None, X, Y))
    costs = np.full(K.shape[0], np.inf)
    if np.any(ok):
        costs[ok] = kernels.candidate_costs(np.ascontiguousarray(K[ok]), Xs, Ys)
    scores = _rho_array(costs, rho)
    scores[~ok] = -np.inf
    warning = None
    if not np.any(ok):
        best = None
        Kbest = np.eye(X.dim)
        warning = "all candidate blocks ill-conditioned; identity returned"
        warnings.warn(warning, RuntimeWarning, stacklevel=2)
        search = np.full(K.shape[0], initial)
    else:
        best = int(np.argmax(scores))
        Kbest = K[best]
        search = np.maximum.accumulate(np.where(ok, scores, 0.0))
    report = similarity_report(Kbest, X, Y, "constant", rho, pair)
    report.initial_rho = initial
    report.best_index = best
    report.search_curve = search
    report.warning = warning
    return Kbest, report


def best_constant_K_least_squares(X: Trajectory, Y: Trajectory) -> np.ndarray:
    """Minimizer of the discrete cost over constant matrices (samples 1..N)."""
    _check_pair(X, Y)
    A = X.states[1:]
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] == 0.0 or (s[0] / s[-1]) ** 2 > ILL_CONDITIONED:
        raise SingularMatrixError("Gram matrix sum x x^T is singular or ill-conditioned")
    KT, *_ = np.linalg.lstsq(A, Y.states[1:], rcond=None)
    return KT.T


def fit_polynomial_map(X: Trajectory, Y: Trajectory, m: int) -> PolynomialMap:
    """Least-squares polynomial map of total degree ``m`` from X samples to Y samples."""
    _check_pair(X, Y)
    if m < 0:
        raise ValueError("degree must be >= 0")
    n = X.dim
    E = multi_indices(n, m)
    if X.N < E.shape[0]:
        raise DimensionError(f"need at least {E.shape[0]} samples for degree {m}")
    F = monomials(X.states[1:], E)
    scale = np.linalg.norm(F, axis=0)
    scale[scale == 0.0] = 1.0
    C, _, rank, _ = np.linalg.lstsq(F / scale, Y.states[1:], rcond=None)
    deficient = rank < E.shape[0]
    if deficient:
        warnings.warn("polynomial feature matrix is rank deficient; minimum-norm fit",
                      RuntimeWarning, stacklevel=2)
    return PolynomialMap(m, E, C / scale[:, None], deficient)
