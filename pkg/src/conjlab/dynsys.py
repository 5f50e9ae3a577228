"""Benchmark vector fields, fixed-step integration and linear-system oracles."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
from scipy.linalg import expm

from . import kernels
from .errors import BlowUpError, DimensionError

KINDS = ("lorenz", "chua", "chen", "linear-affine", "custom")
_CODES = {"lorenz": kernels.LORENZ, "chua": kernels.CHUA, "chen": kernels.CHEN,
          "linear-affine": kernels.LINEAR}


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """A named autonomous (or, for ``custom``, time-dependent) vector field.

    Built-in kinds carry their parameters in ``params``; ``linear-affine``
    stores the matrix under ``"A"`` and the offset under ``"B"``.  ``custom``
    systems carry a callable ``rhs(t, x)`` and optionally ``jac(t, x)``.
    """

    name: str
    kind: str
    dim: int
    params: Mapping[str, object] = field(default_factory=dict)
    rhs: Callable | None = None
    jac: Callable | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown system kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.kind in ("lorenz", "chua", "chen") and self.dim != 3:
            raise ValueError(f"{self.kind} systems are 3-dimensional")
        if self.kind == "linear-affine":
            A = np.atleast_2d(np.asarray(self.params["A"], dtype=float))
            B = np.atleast_1d(np.asarray(self.params["B"], dtype=float))
            if A.shape != (self.dim, self.dim) or B.shape != (self.dim,):
                raise DimensionError("linear-affine A must be dim x dim and B length dim")
        if self.kind == "custom" and self.rhs is None:
            raise ValueError("custom systems need a rhs callable")

    # -- constructors -----------------------------------------------------
    @classmethod
    def lorenz(cls, sigma=10.0, rho=28.0, beta=8.0 / 3.0, name="lorenz"):
        return cls(name, "lorenz", 3, {"sigma": sigma, "rho": rho, "beta": beta})

    @classmethod
    def chua(cls, alpha=10.0, beta=15.0, m0=-1.2, m1=-0.6, name="chua"):
        return cls(name, "chua", 3, {"alpha": alpha, "beta": beta, "m0": m0, "m1": m1})

    @classmethod
    def chen(cls, a=35.0, b=3.0, c=28.0, name="chen"):
        return cls(name, "chen", 3, {"a": a, "b": b, "c": c})

    @classmethod
    def linear(cls, A, B=None, name="linear"):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        n = A.shape[0]
        B = np.zeros(n) if B is None else np.atleast_1d(np.asarray(B, dtype=float))
        return cls(name, "linear-affine", n, {"A": A, "B": B})

    @classmethod
    def custom(cls, rhs, dim, jac=None, name="custom"):
        return cls(name, "custom", dim, {}, rhs=rhs, jac=jac)

    # -- kernel packing ---------------------------------------------------
    def _packed(self):
        n = self.dim
        A = np.zeros((n, n))
        b = np.zeros(n)
        if self.kind == "lorenz":
            p = [self.params["sigma"], self.params["rho"], self.params["beta"]]
        elif self.kind == "chua":
            p = [self.params[k] for k in ("alpha", "beta", "m0", "m1")]
        elif self.kind == "chen":
            p = [self.params[k] for k in ("a", "b", "c")]
        else:
            p = [0.0]
            A = np.atleast_2d(np.asarray(self.params["A"], dtype=float))
            b = np.atleast_1d(np.asarray(self.params["B"], dtype=float))
        return _CODES[self.kind], np.asarray(p, dtype=float), A, b

    def to_dict(self) -> dict:
        if self.kind == "custom":
            raise TypeError("custom systems are not serializable")
        params = {}
        for k, v in self.params.items():
            params[k] = np.asarray(v, dtype=float).tolist()
        return {"name": self.name, "kind": self.kind, "params": params}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SystemSpec":
        kind = d["kind"]
        params = dict(d.get("params", {}))
        name = d.get("name", kind)
        if kind == "lorenz":
            return cls.lorenz(name=name, **params)
        if kind == "chua":
            return cls.chua(name=name, **params)
        if kind == "chen":
            return cls.chen(name=name, **params)
        if kind == "linear-affine":
            return cls.linear(params["A"], params.get("B"), name=name)
        raise ValueError(f"cannot build system of kind {kind!r} from data")


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "rk4"
    dt: float = 0.01

    def __post_init__(self):
        if self.method not in ("rk4", "euler"):
            raise ValueError(f"unknown integration method {self.method!r}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")


class Trajectory:
    """Uniformly sampled states ``states[k]`` at ``times[k] = t0 + k*dt``.

    The arrays are made read-only on construction.
    """

    def __init__(self, t0, dt, states, system=None, times=None):
        states = np.array(states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if states.ndim != 2 or states.shape[0] < 1:
            raise ValueError("states must be a (N+1, n) array")
        if not dt > 0:
            raise ValueError("dt must be positive")
        if not np.all(np.isfinite(states)):
            raise ValueError("trajectory states must be finite")
        if times is None:
            times = t0 + dt * np.arange(states.shape[0])
        else:
            times = np.array(times, dtype=float)
            if times.shape != (states.shape[0],):
                raise ValueError("times and states disagree in length")
        states.flags.writeable = False
        times.flags.writeable = False
        self.t0 = float(t0)
        self.dt = float(dt)
        self.states = states
        self.times = times
        self.system = system

    @property
    def N(self) -> int:
        return self.states.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def __len__(self):
        return self.states.shape[0]

    def __repr__(self):
        name = self.system.name if self.system is not None else "?"
        return f"Trajectory({name}, N={self.N}, dim={self.dim}, dt={self.dt:g})"

    def slice(self, start, stop=None) -> "Trajectory":
        """Samples ``start..stop`` inclusive of ``stop`` (default: the end)."""
        stop = self.N if stop is None else stop
        return Trajectory(self.times[start], self.dt, self.states[start : stop + 1],
                          self.system, times=self.times[start : stop + 1])


def _state(spec: SystemSpec, x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (spec.dim,):
        raise DimensionError(f"state of length {x.shape[0]} for {spec.dim}-dim system {spec.name}")
    return x


def eval_field(spec: SystemSpec, t: float, x) -> np.ndarray:
    x = _state(spec, x)
    if spec.kind == "custom":
        return np.atleast_1d(np.asarray(spec.rhs(t, x), dtype=float))
    code, p, A, b = spec._packed()
    return kernels.field_numpy(code, p, A, b, x)


def jacobian(spec: SystemSpec, t: float, x) -> np.ndarray:
    """Analytic Jacobian of the field (custom systems need ``jac``)."""
    x = _state(spec, x)
    P = spec.params
    if spec.kind == "lorenz":
        s, r, bt = P["sigma"], P["rho"], P["beta"]
        return np.array([[-s, s, 0.0], [r - x[2], -1.0, -x[0]], [x[1], x[0], -bt]])
    if spec.kind == "chua":
        a, bt, m0, m1 = P["alpha"], P["beta"], P["m0"], P["m1"]
        slope = m0 if abs(x[0]) < 1.0 else m1
        return np.array([[-a * (1.0 + slope), a, 0.0], [1.0, -1.0, 1.0], [0.0, -bt, 0.0]])
    if spec.kind == "chen":
        a, bt, c = P["a"], P["b"], P["c"]
        return np.array([[-a, a, 0.0], [c - a - x[2], c, -x[0]], [x[1], x[0], -bt]])
    if spec.kind == "linear-affine":
        return np.atleast_2d(np.asarray(P["A"], dtype=float)).copy()
    if spec.jac is None:
        raise ValueError(f"system {spec.name} has no Jacobian")
    return np.atleast_2d(np.asarray(spec.jac(t, x), dtype=float))


def _python_steps(spec, x0, t0, dt, nsteps, method):
    n = spec.dim
    out = np.empty((nsteps + 1, n))
    x = x0.copy()
    out[0] = x
    f = spec.rhs
    for k in range(nsteps):
        t = t0 + k * dt
        if method == "rk4":
            k1 = np.asarray(f(t, x), dtype=float)
            k2 = np.asarray(f(t + 0.5 * dt, x + 0.5 * dt * k1), dtype=float)
            k3 = np.asarray(f(t + 0.5 * dt, x + 0.5 * dt * k2), dtype=float)
            k4 = np.asarray(f(t + dt, x + dt * k3), dtype=float)
            x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        else:
            x = x + dt * np.asarray(f(t, x), dtype=float)
        out[k + 1] = x
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > kernels.BLOWUP:
            return out, k + 1
    return out, -1


def _run(spec, x0, t0, dt, nsteps, method):
    if spec.kind == "custom":
        states, bad = _python_steps(spec, x0, t0, dt, nsteps, method)
    else:
        code, p, A, b = spec._packed()
        mcode = kernels.RK4 if method == "rk4" else kernels.EULER
        states, bad = kernels.integrate_builtin(code, p, A, b, x0, dt, nsteps, mcode)
    if bad >= 0:
        raise BlowUpError(f"{spec.name}: state left |x| <= 1e12 at step {bad}", step=bad)
    return states


def _step_count(horizon, dt):
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    steps = horizon / dt
    if not np.isfinite(steps) or steps > 1e9:
        raise ValueError("horizon/dt is not a representable step count")
    return max(1, int(round(steps)))


def integrate(spec: SystemSpec, x0, t0: float = 0.0, horizon: float = 1.0,
              cfg: IntegratorConfig | None = None) -> Trajectory:
    """Integrate ``spec`` from ``x0`` with a fixed step (default rk4, dt=0.01)."""
    cfg = cfg or IntegratorConfig()
    x0 = _state(spec, x0)
    nsteps = _step_count(horizon, cfg.dt)
    states = _run(spec, x0, t0, cfg.dt, nsteps, cfg.method)
    return Trajectory(t0, cfg.dt, states, spec)


def euler_polyline(spec: SystemSpec, x0, horizon: float, m: int, t0: float = 0.0) -> Trajectory:
    """Nodes of the m-segment explicit Euler polyline over ``[t0, t0 + horizon]``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    x0 = _state(spec, x0)
    h = horizon / m
    states = _run(spec, x0, t0, h, m, "euler")
    return Trajectory(t0, h, states, spec)


def augment_time(traj: Trajectory) -> Trajectory:
    """Append the time stamp as a last coordinate (slope one per unit time)."""
    states = np.column_stack([traj.states, traj.times])
    return Trajectory(traj.t0, traj.dt, states, traj.system, times=traj.times)


def linear_solution(A, B, x0, t: float) -> np.ndarray:
    """Exact solution of ``x' = A x + B`` at time ``t``.

    Uses the exponential of the augmented matrix ``[[A, B], [0, 0]]``, which
    yields ``e^{At}`` and ``int_0^t e^{A(t-s)} B ds`` together and so handles
    singular ``A`` without special cases.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    B = np.zeros(n) if B is None else np.atleast_1d(np.asarray(B, dtype=float))
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if A.shape != (n, n) or B.shape != (n,) or x0.shape != (n,):
        raise DimensionError("A, B and x0 dimensions disagree")
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = A
    aug[:n, n] = B
    E = expm(aug * t)
    return E[:n, :n] @ x0 + E[:n, n]


# ---------------------------------------------------------------------------
# CSV trajectory format


def trajectory_to_csv(traj: Trajectory, meta: Mapping | None = None) -> str:
    """``t,x1..xn`` rows with ``%.17g`` floats; ``meta`` becomes ``# key=value`` lines."""
    buf = io.StringIO()
    for k, v in (meta or {}).items():
        buf.write(f"# {k}={v}\n")
    cols = ["t"] + [f"x{i + 1}" for i in range(traj.dim)]
    buf.write(",".join(cols) + "\n")
    for t, row in zip(traj.times, traj.states):
        buf.write(",".join(format(v, ".17g") for v in (t, *row)) + "\n")
    return buf.getvalue()


def write_csv(traj: Trajectory, path, meta: Mapping | None = None) -> None:
    Path(path).write_text(trajectory_to_csv(traj, meta))


def read_csv(path_or_text, system=None) -> Trajectory:
    text = path_or_text
    if not (isinstance(path_or_text, str) and "\n" in path_or_text):
        text = Path(path_or_text).read_text()
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    rows = list(csv.reader(lines))
    header = rows[0]
    if not header or header[0] != "t":
        raise ValueError("trajectory CSV must start with a 't' column")
    data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    times = data[:, 0]
    dt = (times[-1] - times[0]) / (len(times) - 1) if len(times) > 1 else 1.0
    return Trajectory(times[0], dt, data[:, 1:], system, times=times)
