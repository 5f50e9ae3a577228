"""Command-line experiment runner.

Every subcommand reads an optional versioned JSON config, runs one analysis
and writes its artifacts into ``--out``.  Artifacts are assembled in memory
and written only after the analysis succeeds, so a failing run leaves the
output directory untouched and prints one JSON error record on stderr.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import _accel, forecast, hartman, optimality, presets, simdeg
from .dynsys import IntegratorConfig, SystemSpec, Trajectory, integrate, trajectory_to_csv
from .errors import ConfigError, NumericalError

COMMANDS = ("simulate", "conjugate", "similar", "lsq", "polyfit", "adjoint", "kkt",
            "hartman", "predict", "table1")
MAX_STEPS = 1e7

DEFAULT_PAIR = [
    {"system": {"name": "lorenz1", "kind": "lorenz",
                "params": {"sigma": 10.0, "rho": 28.0, "beta": 8.0 / 3.0}},
     "x0": list(presets.LORENZ_X0)},
    {"system": {"name": "lorenz2", "kind": "lorenz",
                "params": {"sigma": 10.0, "rho": 28.0, "beta": 3.0}},
     "x0": list(presets.LORENZ_X0)},
]
COMMAND_HORIZON = {"hartman": 5.0, "predict": 1.0}


def load_schema(name: str) -> dict:
    text = resources.files("conjlab").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def _validate(doc, name):
    try:
        jsonschema.validate(doc, load_schema(name))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{name} invalid at {where}: {exc.message}") from None


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    systems: list
    x0s: list
    horizon: float
    dt: float
    method: str = "rk4"
    similarity: str = "log1p-ratio"
    seed: int = 0
    analysis: dict = field(default_factory=dict)
    out_dir: str = "."
    fmt: str = "json"
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict, command: str = "similar") -> "ExperimentConfig":
        _validate(d, "config")
        pair = d.get("pair", DEFAULT_PAIR)
        systems, x0s = [], []
        for member in pair:
            try:
                spec = SystemSpec.from_dict(member["system"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"bad system description: {exc}") from None
            x0 = np.asarray(member["x0"], dtype=float)
            if x0.shape != (spec.dim,):
                raise ConfigError(f"x0 for {spec.name} needs {spec.dim} entries")
            systems.append(spec)
            x0s.append(x0)
        horizon = float(d.get("horizon", COMMAND_HORIZON.get(command, 30.0)))
        dt = float(d.get("dt", 0.01))
        if horizon / dt > MAX_STEPS:
            raise ConfigError("horizon/dt exceeds 1e7 steps")
        analysis = dict(d.get("analysis", {}))
        out = d.get("output", {})
        return cls(systems, x0s, horizon, dt, d.get("method", "rk4"),
                   d.get("similarity", "log1p-ratio"), int(d.get("seed", 0)), analysis,
                   out.get("dir", "."), out.get("format", "json"), d)

    @property
    def integrator(self) -> IntegratorConfig:
        return IntegratorConfig(self.method, self.dt)

    @property
    def rho(self):
        return simdeg.SIMILARITY_FUNCTIONS[self.similarity]

    def need_pair(self):
        if len(self.systems) != 2:
            raise ConfigError("this analysis needs a pair of systems")
        if self.systems[0].dim != self.systems[1].dim:
            raise ConfigError("paired systems must share a dimension")


ANALYSIS_OF = {"simulate": "simulate", "conjugate": "algorithm1", "similar": "algorithm2",
               "lsq": "least-squares", "polyfit": "polyfit", "adjoint": "adjoint", "kkt": "kkt",
               "hartman": "hartman", "predict": "predict", "table1": "algorithm2"}


def build_config(args) -> ExperimentConfig:
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    else:
        raw = {"version": 1}
    raw = json.loads(json.dumps(raw))
    for key in ("dt", "horizon", "seed"):
        val = getattr(args, key)
        if val is not None:
            raw[key] = val
    if args.out is not None or args.format is not None:
        out = dict(raw.get("output", {}))
        if args.out is not None:
            out["dir"] = args.out
        if args.format is not None:
            out["format"] = args.format
        raw["output"] = out
    kind = raw.get("analysis", {}).get("kind")
    if kind is not None and kind != ANALYSIS_OF[args.command]:
        raise ConfigError(f"config analysis {kind!r} does not match command {args.command!r}")
    return ExperimentConfig.from_dict(raw, args.command)


# ---------------------------------------------------------------------------
# artifacts


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def _flatten(prefix, value, rows):
    if isinstance(value, dict):
        for k, v in value.items():
            _flatten(f"{prefix}.{k}" if prefix else k, v, rows)
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            _flatten(f"{prefix}[{i}]", v, rows)
    elif isinstance(value, float):
        rows.append((prefix, repr(value)))
    else:
        rows.append((prefix, str(value)))


def report_csv(report: dict) -> str:
    rows = []
    _flatten("", {k: v for k, v in report.items() if k != "config"}, rows)
    return "key,value\n" + "".join(f"{k},{v}\n" for k, v in rows)


def table_csv(header, rows) -> str:
    out = [",".join(header)]
    for r in rows:
        out.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in r))
    return "\n".join(out) + "\n"


class Run:
    def __init__(self, cfg: ExperimentConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.files: dict[str, str] = {}
        self.notes: list[str] = []

    def meta(self):
        return {"seed": self.cfg.seed, "command": self.command}

    def add_traj(self, name, traj: Trajectory):
        self.files[name] = trajectory_to_csv(traj, self.meta())

    def add_table(self, name, header, rows):
        self.files[name] = f"# seed={self.cfg.seed}\n" + table_csv(header, rows)

    def finish(self, result: dict) -> dict:
        report = {
            "version": 1,
            "command": self.command,
            "seed": self.cfg.seed,
            "config": {k: v for k, v in self.cfg.raw.items() if k != "output"},
            "artifacts": sorted(self.files) + [f"report.{self.cfg.fmt}"],
            "result": result,
        }
        if self.notes:
            report["warnings"] = self.notes
        _validate_report(report)
        if self.cfg.fmt == "json":
            self.files["report.json"] = dumps(report)
        else:
            self.files["report.csv"] = report_csv(report)
        return report

    def write(self):
        out = Path(self.cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name in sorted(self.files):
            (out / name).write_text(self.files[name])


def _validate_report(report):
    try:
        jsonschema.validate(report, load_schema("report"))
    except jsonschema.ValidationError as exc:  # pragma: no cover - internal consistency
        raise RuntimeError(f"report does not match its schema: {exc.message}") from None


def _simulate_pair(cfg: ExperimentConfig):
    return [integrate(s, x0, 0.0, cfg.horizon, cfg.integrator)
            for s, x0 in zip(cfg.systems, cfg.x0s)]


def _ktable(Kseq: simdeg.MapSequence, times):
    n = Kseq.dim
    header = ["t"] + [f"k{i + 1}{j + 1}" for i in range(n) for j in range(n)] + ["invertible"]
    rows = [[float(t), *map(float, K.ravel()), int(ok)]
            for t, K, ok in zip(times, Kseq.matrices, Kseq.invertible)]
    return header, rows


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(run: Run):
    trajs = _simulate_pair(run.cfg)
    for name, tr in zip(("x", "y"), trajs):
        run.add_traj(f"{name}.csv", tr)
    return {"systems": [s.name for s in run.cfg.systems],
            "samples": trajs[0].N + 1,
            "final_states": [tr.states[-1].tolist() for tr in trajs]}


def cmd_conjugate(run: Run):
    cfg = run.cfg
    cfg.need_pair()
    X, Y = _simulate_pair(cfg)
    Kseq = simdeg.algorithm1_solve_Kt(X, Y)
    rep = simdeg.similarity_report(Kseq, X, Y, "sequence", cfg.rho)
    run.add_traj("x.csv", X)
    run.add_traj("y.csv", Y)
    run.add_table("kseq.csv", *_ktable(Kseq, X.times))
    d = rep.to_dict(curve=False)
    d["flagged"] = int((~Kseq.invertible).sum())
    d["flagged_fraction"] = float((~Kseq.invertible).mean())
    return d


def cmd_similar(run: Run):
    cfg = run.cfg
    cfg.need_pair()
    X, Y = _simulate_pair(cfg)
    K, rep = simdeg.algorithm2_best_constant_K(X, Y, cfg.rho)
    if rep.warning:
        raise NumericalError(rep.warning)
    run.add_traj("x.csv", X)
    run.add_traj("y.csv", Y)
    run.add_table("curve.csv", ["t", "rho"],
                  [[float(t), float(r)] for t, r in zip(X.times[1:], rep.running_rho)])
    run.add_table("search.csv", ["i", "best_rho"],
                  [[i, float(r)] for i, r in enumerate(rep.search_curve)])
    return rep.to_dict(curve=False)


def cmd_lsq(run: Run):
    cfg = run.cfg
    cfg.need_pair()
    X, Y = _simulate_pair(cfg)
    K = simdeg.best_constant_K_least_squares(X, Y)
    rep = simdeg.similarity_report(K, X, Y, "constant", cfg.rho)
    rep.initial_rho = cfg.rho(simdeg.discrete_cost(None, X, Y))
    run.add_table("curve.csv", ["t", "rho"],
                  [[float(t), float(r)] for t, r in zip(X.times[1:], rep.running_rho)])
    d = rep.to_dict(curve=False)
    d["stationarity_residual"] = optimality.stationarity_residual(K, X, Y)
    return d


def cmd_polyfit(run: Run):
    cfg = run.cfg
    cfg.need_pair()
    m = int(cfg.analysis.get("degree", 2))
    X, Y = _simulate_pair(cfg)
    P = simdeg.fit_polynomial_map(X, Y, m)
    rep = simdeg.similarity_report(P, X, Y, "polynomial", cfg.rho)
    if P.rank_deficient:
        run.notes.append("polynomial feature matrix is rank deficient")
    header = ["exponents"] + [f"y{i + 1}" for i in range(P.dim)]
    rows = [[" ".join(map(str, a)), *map(float, c)] for a, c in zip(P.exponents, P.coeffs)]
    run.add_table("coefficients.csv", header, rows)
    d = rep.to_dict(curve=False)
    d["degree"] = m
    d["rank_deficient"] = bool(P.rank_deficient)
    return d


def _analysis_map(cfg, X, Y):
    which = cfg.analysis.get("map", "least-squares")
    if which == "identity":
        return np.eye(X.dim)
    if which == "algorithm2":
        return simdeg.algorithm2_best_constant_K(X, Y, cfg.rho)[0]
    return simdeg.best_constant_K_least_squares(X, Y)


def cmd_adjoint(run: Run):
    cfg = run.cfg
    cfg.need_pair()
    X, Y = _simulate_pair(cfg)
    K = _analysis_map(cfg, X, Y)
    path = optimality.integrate_adjoints(X, Y, K, cfg.systems[0], cfg.systems[1])
    n = X.dim
    header = ["t"] + [f"lam{i + 1}" for i in range(n)] + [f"mu{i + 1}" for i in range(n)]
    rows = [[float(t), *map(float, l), *map(float, m)]
            for t, l, m in zip(path.times, path.lam, path.mu)]
    run.add_table("adjoint.csv", header, rows)
    lam_sup, mu_sup = path.sup_norms()
    return {"map": cfg.analysis.get("map", "least-squares"), "K": np.asarray(K).tolist(),
            "lambda_sup": lam_sup, "mu_sup": mu_sup,
            "lambda_T": path.lam[-1].tolist(), "mu_T": path.mu[-1].tolist(),
            "stationarity_residual": optimality.stationarity_residual(K, X, Y),
            "second_order_ok": optimality.second_order_ok(X)}


def cmd_kkt(run: Run):
    cfg = run.cfg
    cfg.need_pair()
    X, Y = _simulate_pair(cfg)
    Kseq = simdeg.algorithm1_solve_Kt(X, Y)
    Phi = optimality.variational_matrix(cfg.systems[1], Y)
    R = optimality.kkt_residual(Kseq, X, Y, Phi)
    K = simdeg.best_constant_K_least_squares(X, Y)
    # gradient check away from the minimizer, where the gradient is not ~0
    rng = np.random.default_rng(cfg.seed)
    Kc = K + 0.1 * rng.standard_normal(K.shape)
    grad = optimality.stationarity_gradient(Kc, X, Y)
    fd = optimality.finite_difference_gradient(lambda M: simdeg.discrete_cost(M, X, Y), Kc)
    rep = optimality.residual_report(R, optimality.stationarity_residual(K, X, Y),
                                     float(np.linalg.norm(grad - fd) / np.linalg.norm(fd)))
    run.add_table("kkt.csv", ["t", "max_residual", "mean_residual"],
                  [[float(t), float(a), float(b)] for t, a, b in
                   zip(X.times, rep.max_per_sample, rep.mean_per_sample)])
    d = rep.to_dict()
    d.pop("per_sample_max")
    return d


def cmd_hartman(run: Run):
    cfg = run.cfg
    a = cfg.analysis
    A = np.atleast_2d(np.asarray(a.get("A", [[-1.0]]), dtype=float))
    n = A.shape[0]
    r, lip, sup, g0 = presets.perturbation(a.get("perturbation", "sin"), float(a.get("scale", 0.1)))
    try:
        prob = hartman.HartmanProblem.from_matrix(A, r, lip, g0 * np.eye(n), sup)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    box = a.get("box", [[-0.5] * n, [0.5] * n])
    grid = a.get("grid", [401] * n)
    if len(box[0]) != n or len(box[1]) != n or len(grid) != n:
        raise ConfigError("box and grid must match the dimension of A")
    res = hartman.solve_conjugacy_fixed_point(
        prob, box[0], box[1], tuple(grid), quad_step=float(a.get("quad_step", 0.01)),
        tol=float(a.get("tol", 1e-8)), max_iter=int(a.get("max_iter", 200)))
    x0 = a.get("x0", [0.3] * n)
    resid = hartman.verify_conjugacy(prob, res.g, x0, cfg.horizon, cfg.dt)
    run.files["g.json"] = dumps(res.g.to_dict())
    return {"certificate": hartman.contraction_certificate(prob), "M": prob.M, "eta": prob.eta,
            "iterations": res.iterations, "changes": res.changes, "ratios": res.ratios,
            "s_cutoff": res.s_cutoff, "truncation_bound": res.truncation_bound,
            "conjugacy_residual": resid}


def cmd_predict(run: Run):
    cfg = run.cfg
    spec, x0 = cfg.systems[0], cfg.x0s[0]
    a = cfg.analysis
    n = int(a.get("windows", spec.dim))
    T = float(a.get("window", cfg.horizon))
    eps = float(a.get("epsilon", 0.0))
    traj = integrate(spec, x0, -n * T, (n + 1) * T, cfg.integrator)
    m = int(round(T / cfg.dt))
    hist = forecast.SegmentSeries.from_trajectory(traj.slice(0, n * m), n)
    truth = traj.states[-1]
    pert = forecast.PerturbationSpec(eps, cfg.seed) if eps > 0 else None
    pred = forecast.predict_future(hist, spec, pert, truth=truth)
    run.add_traj("history.csv", traj.slice(0, n * m))
    run.add_traj("prediction.csv", pred.path)
    d = pred.to_dict()
    d["truth"] = truth.tolist()
    d["relative_error"] = float(pred.error / max(np.linalg.norm(truth), 1e-300))
    d["windows"] = n
    return d


def cmd_table1(run: Run):
    cfg = run.cfg
    rows = []
    for setup in presets.table1_pairs():
        X = integrate(setup.x_spec, setup.x0, 0.0, cfg.horizon, cfg.integrator)
        Y = integrate(setup.y_spec, setup.y0, 0.0, cfg.horizon, cfg.integrator)
        K, rep = simdeg.algorithm2_best_constant_K(X, Y, cfg.rho, pair=setup.label)
        if rep.warning:
            raise NumericalError(f"{setup.label}: {rep.warning}")
        rows.append({
            "pair": setup.label,
            "initial_rho": float(rep.initial_rho),
            "initial_percent": simdeg.percent(rep.initial_rho),
            "final_rho": float(rep.rho),
            "final_percent": simdeg.percent(rep.rho),
            "increase": float(rep.rho - rep.initial_rho),
            "best_index": int(rep.best_index),
            "K": K.tolist(),
        })
    ranking = [r["pair"] for r in sorted(rows, key=lambda r: -r["initial_rho"])]
    header = ["pair", "initial_percent", "final_percent", "increase"] + \
        [f"k{i + 1}{j + 1}" for i in range(3) for j in range(3)]
    run.add_table("table1.csv", header,
                  [[r["pair"], r["initial_percent"], r["final_percent"], r["increase"],
                    *[float(v) for row in r["K"] for v in row]] for r in rows])
    return {"horizon": cfg.horizon, "dt": cfg.dt, "rows": rows,
            "initial_ranking": ranking,
            "largest_increase": max(rows, key=lambda r: r["increase"])["pair"]}


HANDLERS = {
    "simulate": cmd_simulate, "conjugate": cmd_conjugate, "similar": cmd_similar,
    "lsq": cmd_lsq, "polyfit": cmd_polyfit, "adjoint": cmd_adjoint, "kkt": cmd_kkt,
    "hartman": cmd_hartman, "predict": cmd_predict, "table1": cmd_table1,
}


# ---------------------------------------------------------------------------
# entry point


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="conjlab",
                                description="Similarity of dynamical systems via conjugating maps.")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "integrate the configured systems",
        "conjugate": "time-varying K(t) with exact reproduction",
        "similar": "best constant K among block solutions",
        "lsq": "least-squares constant K",
        "polyfit": "least-squares polynomial map",
        "adjoint": "costate paths for a constant map",
        "kkt": "KKT and gradient residuals",
        "hartman": "grid conjugacy near a hyperbolic equilibrium",
        "predict": "constant-K prediction one window ahead",
        "table1": "similarity table for the three benchmark pairs",
    }
    for name in COMMANDS:
        sp = sub.add_parser(name, help=helps[name])
        sp.add_argument("--config", type=str, default=None, help="JSON experiment config")
        sp.add_argument("--out", type=str, default=None, help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--dt", type=float, default=None)
        sp.add_argument("--horizon", type=float, default=None)
        sp.add_argument("--format", choices=("csv", "json"), default=None)
    return p


def error_record(exc: BaseException, code: int) -> str:
    rec = {"type": type(exc).__name__, "message": str(exc), "exit_code": code}
    step = getattr(exc, "step", None)
    if step is not None:
        rec["step"] = int(step)
    return json.dumps({"error": rec}, sort_keys=True)


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (NumericalError, ArithmeticError, np.linalg.LinAlgError)):
        return 3
    if isinstance(exc, (ConfigError, ValueError, KeyError, TypeError, OSError)):
        return 2
    return 3


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    _accel.set_threads()
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            cfg = build_config(args)
            run = Run(cfg, args.command)
            result = HANDLERS[args.command](run)
            run.notes.extend(sorted({str(w.message) for w in caught
                                     if issubclass(w.category, (RuntimeWarning, UserWarning))}))
            run.finish(result)
        run.write()
    except Exception as exc:  # noqa: BLE001 - every failure becomes an exit code
        code = exit_code_for(exc)
        sys.stderr.write(error_record(exc, code) + "\n")
        return code
    return 0


def entry():  # console script
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    entry()
