"""Hot numeric kernels with numba and pure-numpy implementations.

Every kernel exists twice: ``*_numpy`` (vectorized numpy, always available)
and ``*_numba`` (explicit loops compiled with ``njit``, only when numba is
importable and not disabled).  The unsuffixed name dispatches to the numba
version when available.  Both versions implement the same arithmetic; they
agree to rounding, not bit-for-bit.
"""
from __future__ import annotations

import numpy as np

from ._accel import HAVE_NUMBA, njit, prange

BLOWUP = 1e12

LORENZ, CHUA, CHEN, LINEAR = 0, 1, 2, 3
EULER, RK4 = 0, 1

__all__ = [
    "BLOWUP",
    "LORENZ",
    "CHUA",
    "CHEN",
    "LINEAR",
    "EULER",
    "RK4",
    "field_numpy",
    "integrate_builtin",
    "integrate_builtin_numpy",
    "candidate_costs",
    "candidate_costs_numpy",
    "segment_maps",
    "segment_maps_numpy",
    "multilinear",
    "multilinear_numpy",
]


# ---------------------------------------------------------------------------
# built-in vector fields and fixed-step integration


def field_numpy(kind, p, A, b, x):
    if kind == LORENZ:
        return np.array(
            [
                p[0] * (x[1] - x[0]),
                p[1] * x[0] - x[1] - x[0] * x[2],
                x[0] * x[1] - p[2] * x[2],
            ]
        )
    if kind == CHUA:
        fx = p[3] * x[0] + 0.5 * (p[2] - p[3]) * (abs(x[0] + 1.0) - abs(x[0] - 1.0))
        return np.array(
            [p[0] * (x[1] - x[0] - fx), x[0] - x[1] + x[2], -p[1] * x[1]]
        )
    if kind == CHEN:
        return np.array(
            [
                p[0] * (x[1] - x[0]),
                (p[2] - p[0]) * x[0] + p[2] * x[1] - x[0] * x[2],
                x[0] * x[1] - p[1] * x[2],
            ]
        )
    return A @ x + b


def _bad(x):
    return not np.all(np.isfinite(x)) or np.max(np.abs(x)) > BLOWUP


def integrate_builtin_numpy(kind, p, A, b, x0, dt, nsteps, method):
    """Fixed-step integration of a built-in field.

    Returns ``(states, bad)`` where ``states`` has ``nsteps + 1`` rows and
    ``bad`` is the first step index whose state blew up, or -1.
    """
    n = x0.shape[0]
    out = np.empty((nsteps + 1, n))
    x = x0.astype(np.float64).copy()
    out[0] = x
    h2 = 0.5 * dt
    for k in range(nsteps):
        if method == RK4:
            k1 = field_numpy(kind, p, A, b, x)
            k2 = field_numpy(kind, p, A, b, x + h2 * k1)
            k3 = field_numpy(kind, p, A, b, x + h2 * k2)
            k4 = field_numpy(kind, p, A, b, x + dt * k3)
            x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        else:
            x = x + dt * field_numpy(kind, p, A, b, x)
        out[k + 1] = x
        if _bad(x):
            return out, k + 1
    return out, -1


# ---------------------------------------------------------------------------
# Algorithm-2 candidate scoring: mean squared residual of K x(i) - y(i)


def candidate_costs_numpy(Ks, X, Y, chunk=256):
    """``costs[c] = mean_i ||Ks[c] @ X[i] - Y[i]||^2`` over all rows of X, Y."""
    m = Ks.shape[0]
    costs = np.empty(m)
    N = X.shape[0]
    for s in range(0, m, chunk):
        block = Ks[s : s + chunk]
        R = np.einsum("cjk,ik->cij", block, X) - Y[None, :, :]
        costs[s : s + chunk] = np.einsum("cij,cij->c", R, R) / N
    return costs


# ---------------------------------------------------------------------------
# batched segment maps (scale * Givens rotation + translation)


def _chain_numpy(U):
    """Batched Givens chains: returns R (m, n, n) with R[k] @ U[k] = e_n."""
    m, n = U.shape
    R = np.broadcast_to(np.eye(n), (m, n, n)).copy()
    v = U.copy()
    for k in range(n - 1):
        a = v[:, k]
        bb = v[:, k + 1]
        r = np.hypot(a, bb)
        ok = r >= 1e-14
        safe = np.where(ok, r, 1.0)
        c = np.where(ok, bb / safe, 1.0)
        s = np.where(ok, a / safe, 0.0)
        # left-multiply rows k, k+1 of R and v by [[c, -s], [s, c]]
        rk = R[:, k, :].copy()
        rk1 = R[:, k + 1, :]
        R[:, k, :] = c[:, None] * rk - s[:, None] * rk1
        R[:, k + 1, :] = s[:, None] * rk + c[:, None] * rk1
        vk = v[:, k].copy()
        v[:, k] = c * vk - s * v[:, k + 1]
        v[:, k + 1] = s * vk + c * v[:, k + 1]
    return R


def segment_maps_numpy(X, Y):
    """Affine maps sending each segment of polyline X onto the same segment of Y.

    ``X``, ``Y`` are node arrays of shape (m + 1, n).  Returns ``(M, b, bad)``
    with ``M`` (m, n, n), ``b`` (m, n) and ``bad`` the first segment index with
    a zero direction (or -1).
    """
    dX = np.diff(X, axis=0)
    dY = np.diff(Y, axis=0)
    nx = np.linalg.norm(dX, axis=1)
    ny = np.linalg.norm(dY, axis=1)
    zero = np.flatnonzero((nx == 0.0) | (ny == 0.0))
    if zero.size:
        return None, None, int(zero[0])
    R = _chain_numpy(dX / nx[:, None])
    Q = _chain_numpy(dY / ny[:, None])
    P = np.einsum("kji,kjl->kil", Q, R)
    M = (ny / nx)[:, None, None] * P
    b = Y[:-1] - np.einsum("kij,kj->ki", M, X[:-1])
    return M, b, -1


# ---------------------------------------------------------------------------
# multilinear interpolation on a regular grid (values: (*shape, q))


def multilinear_numpy(lo, step, shape, values, pts):
    """Interpolate gridded vector values at ``pts`` (k, d), clamping to the box."""
    d = lo.shape[0]
    k = pts.shape[0]
    q = values.shape[-1]
    flat = values.reshape(-1, q)
    idx = np.empty((k, d), dtype=np.int64)
    w = np.empty((k, d))
    for a in range(d):
        u = (pts[:, a] - lo[a]) / step[a]
        u = np.clip(u, 0.0, shape[a] - 1.0)
        i0 = np.minimum(np.floor(u).astype(np.int64), max(shape[a] - 2, 0))
        idx[:, a] = i0
        w[:, a] = u - i0
    strides = np.ones(d, dtype=np.int64)
    for a in range(d - 2, -1, -1):
        strides[a] = strides[a + 1] * shape[a + 1]
    out = np.zeros((k, q))
    for corner in range(1 << d):
        weight = np.ones(k)
        lin = np.zeros(k, dtype=np.int64)
        for a in range(d):
            if (corner >> a) & 1:
                if shape[a] == 1:
                    weight = weight * 0.0
                    lin = lin + idx[:, a] * strides[a]
                else:
                    weight = weight * w[:, a]
                    lin = lin + (idx[:, a] + 1) * strides[a]
            else:
                weight = weight * (1.0 - w[:, a])
                lin = lin + idx[:, a] * strides[a]
        out += weight[:, None] * flat[lin]
    return out


# ---------------------------------------------------------------------------
# numba versions

if HAVE_NUMBA:

    @njit(cache=True)
    def _field_nb(kind, p, A, b, x, out):
        if kind == 0:
            out[0] = p[0] * (x[1] - x[0])
            out[1] = p[1] * x[0] - x[1] - x[0] * x[2]
            out[2] = x[0] * x[1] - p[2] * x[2]
        elif kind == 1:
            fx = p[3] * x[0] + 0.5 * (p[2] - p[3]) * (abs(x[0] + 1.0) - abs(x[0] - 1.0))
            out[0] = p[0] * (x[1] - x[0] - fx)
            out[1] = x[0] - x[1] + x[2]
            out[2] = -p[1] * x[1]
        elif kind == 2:
            out[0] = p[0] * (x[1] - x[0])
            out[1] = (p[2] - p[0]) * x[0] + p[2] * x[1] - x[0] * x[2]
            out[2] = x[0] * x[1] - p[1] * x[2]
        else:
            n = x.shape[0]
            for i in range(n):
                s = b[i]
                for j in range(n):
                    s += A[i, j] * x[j]
                out[i] = s

    @njit(cache=True)
    def integrate_builtin_numba(kind, p, A, b, x0, dt, nsteps, method):
        n = x0.shape[0]
        out = np.empty((nsteps + 1, n))
        x = x0.astype(np.float64).copy()
        out[0] = x
        k1 = np.empty(n)
        k2 = np.empty(n)
        k3 = np.empty(n)
        k4 = np.empty(n)
        tmp = np.empty(n)
        h2 = 0.5 * dt
        for k in range(nsteps):
            if method == 1:
                _field_nb(kind, p, A, b, x, k1)
                for i in range(n):
                    tmp[i] = x[i] + h2 * k1[i]
                _field_nb(kind, p, A, b, tmp, k2)
                for i in range(n):
                    tmp[i] = x[i] + h2 * k2[i]
                _field_nb(kind, p, A, b, tmp, k3)
                for i in range(n):
                    tmp[i] = x[i] + dt * k3[i]
                _field_nb(kind, p, A, b, tmp, k4)
                for i in range(n):
                    x[i] = x[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            else:
                _field_nb(kind, p, A, b, x, k1)
                for i in range(n):
                    x[i] = x[i] + dt * k1[i]
            bad = False
            for i in range(n):
                out[k + 1, i] = x[i]
                if not np.isfinite(x[i]) or abs(x[i]) > 1e12:
                    bad = True
            if bad:
                return out, k + 1
        return out, -1

    @njit(cache=True, parallel=True)
    def candidate_costs_numba(Ks, X, Y):
        m = Ks.shape[0]
        N, n = X.shape
        costs = np.empty(m)
        for c in prange(m):
            acc = 0.0
            for i in range(N):
                for j in range(n):
                    r = -Y[i, j]
                    for k in range(n):
                        r += Ks[c, j, k] * X[i, k]
                    acc += r * r
            costs[c] = acc / N
        return costs

    @njit(cache=True)
    def _chain_nb(u, R):
        n = u.shape[0]
        v = u.copy()
        for i in range(n):
            for j in range(n):
                R[i, j] = 1.0 if i == j else 0.0
        for k in range(n - 1):
            a = v[k]
            bb = v[k + 1]
            r = np.hypot(a, bb)
            if r < 1e-14:
                continue
            c = bb / r
            s = a / r
            for j in range(n):
                rk = R[k, j]
                R[k, j] = c * rk - s * R[k + 1, j]
                R[k + 1, j] = s * rk + c * R[k + 1, j]
            v[k] = c * a - s * bb
            v[k + 1] = s * a + c * bb

    @njit(cache=True)
    def segment_maps_numba(X, Y):
        m = X.shape[0] - 1
        n = X.shape[1]
        M = np.empty((m, n, n))
        b = np.empty((m, n))
        R = np.empty((n, n))
        Q = np.empty((n, n))
        dx = np.empty(n)
        dy = np.empty(n)
        for l in range(m):
            nx = 0.0
            ny = 0.0
            for i in range(n):
                dx[i] = X[l + 1, i] - X[l, i]
                dy[i] = Y[l + 1, i] - Y[l, i]
                nx += dx[i] * dx[i]
                ny += dy[i] * dy[i]
            nx = np.sqrt(nx)
            ny = np.sqrt(ny)
            if nx == 0.0 or ny == 0.0:
                return M, b, l
            _chain_nb(dx / nx, R)
            _chain_nb(dy / ny, Q)
            scale = ny / nx
            for i in range(n):
                for j in range(n):
                    s = 0.0
                    for k in range(n):
                        s += Q[k, i] * R[k, j]
                    M[l, i, j] = scale * s
            for i in range(n):
                s = Y[l, i]
                for j in range(n):
                    s -= M[l, i, j] * X[l, j]
                b[l, i] = s
        return M, b, -1

    @njit(cache=True, parallel=True)
    def multilinear_numba(lo, step, shape, values, pts):
        d = lo.shape[0]
        k = pts.shape[0]
        q = values.shape[-1]
        flat = values.reshape(-1, q)
        strides = np.ones(d, dtype=np.int64)
        for a in range(d - 2, -1, -1):
            strides[a] = strides[a + 1] * shape[a + 1]
        out = np.zeros((k, q))
        for p in prange(k):
            idx = np.empty(d, dtype=np.int64)
            w = np.empty(d)
            for a in range(d):
                u = (pts[p, a] - lo[a]) / step[a]
                if u < 0.0:
                    u = 0.0
                top = shape[a] - 1.0
                if u > top:
                    u = top
                i0 = int(np.floor(u))
                cap = max(shape[a] - 2, 0)
                if i0 > cap:
                    i0 = cap
                idx[a] = i0
                w[a] = u - i0
            for corner in range(1 << d):
                weight = 1.0
                lin = 0
                for a in range(d):
                    if (corner >> a) & 1:
                        if shape[a] == 1:
                            weight = 0.0
                            lin += idx[a] * strides[a]
                        else:
                            weight *= w[a]
                            lin += (idx[a] + 1) * strides[a]
                    else:
                        weight *= 1.0 - w[a]
                        lin += idx[a] * strides[a]
                if weight != 0.0:
                    for j in range(q):
                        out[p, j] += weight * flat[lin, j]
        return out

    integrate_builtin = integrate_builtin_numba
    candidate_costs = candidate_costs_numba
    segment_maps = segment_maps_numba
    multilinear = multilinear_numba
else:
    integrate_builtin = integrate_builtin_numpy
    candidate_costs = candidate_costs_numpy
    segment_maps = segment_maps_numpy
    multilinear = multilinear_numpy
