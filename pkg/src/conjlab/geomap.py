"""Piecewise-affine homeomorphisms between two polylines.

A segment of one polyline is carried onto the matching segment of the other
by a scale, a rotation built from a chain of planar (Givens) rotations, and
a translation.  Concatenating the segment maps gives a time-dependent affine
map ``K(t)`` that sends the first polyline onto the second exactly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .dynsys import Trajectory
from .errors import DimensionError, NumericalError, SingularMatrixError

DEGENERATE = 1e-14


@dataclass(frozen=True)
class RotationChain:
    """Ordered planar rotations; factor ``k`` acts on coordinates ``(k, k+1)``."""

    dim: int
    planes: tuple
    cos: np.ndarray
    sin: np.ndarray

    def matrix(self) -> np.ndarray:
        R = np.eye(self.dim)
        for k, c, s in zip(self.planes, self.cos, self.sin):
            G = np.eye(self.dim)
            G[k, k] = c
            G[k, k + 1] = -s
            G[k + 1, k] = s
            G[k + 1, k + 1] = c
            R = G @ R
        return R

    def __len__(self):
        return len(self.planes)


def align_to_axis(u) -> RotationChain:
    """Givens chain ``R = R_{n-1} ... R_1`` with ``R @ u = e_n`` for unit ``u``.

    Step ``k`` zeroes coordinate ``k`` against ``k+1`` using
    ``cos = v[k+1]/r``, ``sin = v[k]/r`` with ``r = hypot(v[k], v[k+1])``;
    a factor whose ``r`` is below 1e-14 is the identity.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    n = u.shape[0]
    if abs(np.linalg.norm(u) - 1.0) > 1e-10:
        raise ValueError("align_to_axis needs a unit vector")
    v = u.copy()
    cs = np.ones(n - 1)
    sn = np.zeros(n - 1)
    for k in range(n - 1):
        a, b = v[k], v[k + 1]
        r = np.hypot(a, b)
        if r < DEGENERATE:
            continue
        cs[k] = b / r
        sn[k] = a / r
        v[k] = cs[k] * a - sn[k] * b
        v[k + 1] = sn[k] * a + cs[k] * b
    return RotationChain(n, tuple(range(n - 1)), cs, sn)


def rotation_between(u, v) -> np.ndarray:
    """Orthogonal ``P = Q.T @ R`` sending unit ``u`` to unit ``v``."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if u.shape != v.shape:
        raise DimensionError("rotation_between needs vectors of equal length")
    R = align_to_axis(u).matrix()
    Q = align_to_axis(v).matrix()
    return Q.T @ R


@dataclass(frozen=True)
class AffineMap:
    M: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if M.shape != (b.shape[0], b.shape[0]):
            raise DimensionError("AffineMap needs a square M matching b")
        if not (np.all(np.isfinite(M)) and np.all(np.isfinite(b))):
            raise NumericalError("AffineMap entries must be finite")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "b", b)

    @property
    def dim(self):
        return self.b.shape[0]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.M.T + self.b

    def jacobian(self, x=None):
        return self.M

    @property
    def invertible(self) -> bool:
        return abs(np.linalg.det(self.M)) > 1e-12

    @classmethod
    def identity(cls, n):
        return cls(np.eye(n), np.zeros(n))


def build_segment_map(x_start, x_dir, y_start, y_dir) -> AffineMap:
    """Affine map with ``x_start + s*x_dir -> y_start + s*y_dir`` for all s."""
    x_start, x_dir, y_start, y_dir = (
        np.atleast_1d(np.asarray(a, dtype=float)) for a in (x_start, x_dir, y_start, y_dir)
    )
    nx = np.linalg.norm(x_dir)
    ny = np.linalg.norm(y_dir)
    if nx == 0.0 or ny == 0.0:
        raise NumericalError("segment direction vectors must be nonzero")
    P = rotation_between(x_dir / nx, y_dir / ny)
    M = (ny / nx) * P
    return AffineMap(M, y_start - M @ x_start)


def invert(amap: AffineMap) -> AffineMap:
    if not amap.invertible:
        raise SingularMatrixError("affine map is singular (|det M| <= 1e-12)")
    Minv = np.linalg.inv(amap.M)
    return AffineMap(Minv, -Minv @ amap.b)


class PiecewiseAffineMap:
    """``maps[l]`` is active on ``[tau_l, tau_{l+1}]``; interior breakpoints use the left map."""

    def __init__(self, breakpoints, M, b):
        bp = np.asarray(breakpoints, dtype=float)
        M = np.asarray(M, dtype=float)
        b = np.asarray(b, dtype=float)
        if bp.ndim != 1 or bp.shape[0] < 2:
            raise ValueError("need at least two breakpoints")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        m = bp.shape[0] - 1
        if M.shape[0] != m or b.shape[0] != m or M.shape[1:] != (b.shape[1], b.shape[1]):
            raise DimensionError("one (M, b) pair is needed per interval")
        dets = np.abs(np.linalg.det(M))
        if np.any(dets <= 1e-12):
            raise SingularMatrixError(f"segment map {int(np.argmin(dets))} is not invertible")
        for arr in (bp, M, b):
            arr.flags.writeable = False
        self.breakpoints = bp
        self.M = M
        self.b = b

    @property
    def dim(self):
        return self.b.shape[1]

    def __len__(self):
        return self.M.shape[0]

    def __getitem__(self, l) -> AffineMap:
        return AffineMap(self.M[l], self.b[l])

    def interval(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        bp = self.breakpoints
        if np.any(t < bp[0]) or np.any(t > bp[-1]):
            raise ValueError(f"time outside [{bp[0]}, {bp[-1]}]")
        return np.clip(np.searchsorted(bp, t, side="left") - 1, 0, len(self) - 1)

    def to_dict(self) -> dict:
        return {
            "breakpoints": self.breakpoints.tolist(),
            "maps": [{"M": self.M[l].ravel().tolist(), "b": self.b[l].tolist()}
                     for l in range(len(self))],
        }

    @classmethod
    def from_dict(cls, d) -> "PiecewiseAffineMap":
        b = np.array([m["b"] for m in d["maps"]], dtype=float)
        n = b.shape[1]
        M = np.array([m["M"] for m in d["maps"]], dtype=float).reshape(-1, n, n)
        return cls(d["breakpoints"], M, b)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text) -> "PiecewiseAffineMap":
        return cls.from_dict(json.loads(text))


def apply(pmap: PiecewiseAffineMap, t, x) -> np.ndarray:
    """Evaluate the active segment map at time(s) ``t`` on state(s) ``x``."""
    l = pmap.interval(t)
    x = np.asarray(x, dtype=float)
    if np.ndim(l) == 0:
        return pmap.M[l] @ x + pmap.b[l]
    return np.einsum("kij,kj->ki", pmap.M[l], x) + pmap.b[l]


def build_polyline_conjugacy(px: Trajectory, py: Trajectory) -> PiecewiseAffineMap:
    """Segment-by-segment affine maps carrying polyline ``px`` onto ``py``.

    Both polylines must share breakpoints.  Use time-augmented polylines so
    that no segment direction vanishes.
    """
    if px.states.shape != py.states.shape:
        raise DimensionError("polylines must have the same node count and dimension")
    if not np.allclose(px.times, py.times, rtol=0.0, atol=1e-12 * max(1.0, abs(px.times[-1]))):
        raise ValueError("polylines must share breakpoints")
    M, b, bad = kernels.segment_maps(np.ascontiguousarray(px.states),
                                     np.ascontiguousarray(py.states))
    if bad >= 0:
        raise NumericalError(f"segment {bad} has a zero direction vector; augment time first")
    return PiecewiseAffineMap(px.times, M, b)


def polyline_point(traj: Trajectory, t) -> np.ndarray:
    """Piecewise-linear interpolation of the polyline nodes at time(s) ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    bp = traj.times
    l = np.clip(np.searchsorted(bp, t, side="left") - 1, 0, traj.N - 1)
    s = (t - bp[l]) / (bp[l + 1] - bp[l])
    return traj.states[l] + s[:, None] * (traj.states[l + 1] - traj.states[l])


def conjugacy_residual(pmap: PiecewiseAffineMap, px: Trajectory, py: Trajectory,
                       per_segment: int = 3) -> float:
    """Max over sampled times of ``||K(t) phi(t) - psi(t)||``.

    Samples each segment at its two ends and ``per_segment`` interior points.
    """
    bp = px.times
    frac = np.linspace(0.0, 1.0, per_segment + 2)
    t = (bp[:-1, None] + frac[None, :] * np.diff(bp)[:, None]).ravel()
    t = np.clip(t, bp[0], bp[-1])
    phi = polyline_point(px, t)
    psi = polyline_point(py, t)
    return float(np.max(np.linalg.norm(apply(pmap, t, phi) - psi, axis=1)))
