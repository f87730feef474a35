"""Command line harness: configure a run, execute a solver, write telemetry.

Usage::

    sqpinvit run CONFIG.json [--tau T] [--mode M] [--coeffs F] [--out DIR]
                             [--oracle-cap N] [--d D] [--plots]
    sqpinvit compare CONFIG.json [same flags]
    sqpinvit generate --K 14 --N 2 -o coeffs.txt

Outputs in the run directory: trace.csv, ranks.csv, summary.json and, when
the dense oracle admits the sector, dense_check.json.  Exit codes: 0 ok,
2 configuration error, 3 non-convergence, 4 oracle cap exceeded.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import math
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import blockmps as bm
from . import modelgen as mg
from . import oracle
from . import precond as pc
from .blockmps import SectorShape
from .outer import OuterConfig, outer_iterate
from .pinvit import Problem, SolverConfig, inner_iterate
from .subspace import stack, subspace_outer

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_NONCONV, EXIT_ORACLE = 0, 2, 3, 4
MODES = ("inner", "outer", "subspace")
SOURCES = ("auto", "oracle-exact", "extrapolated", "user")
TRACE_COLUMNS = ["n", "m", "lambda", "rho_bound", "rel_eig_bound", "vec_err_bound", "max_rank",
                 "eta_res", "eta_inner", "wall_ms"]
COMPARE_COLUMNS = ["n", "m", "lambda", "rel_eig_true", "rel_eig_bound", "eig_tightness",
                   "vec_err_true", "vec_err_bound", "vec_tightness", "angle_true"]


class ConfigError(ValueError):
    pass


class OracleCapError(RuntimeError):
    pass


@dataclass
class RunConfig:
    """One run.  ``model`` holds ModelSpec fields; ``coeffs`` a coefficient file.

    ``K`` restricts the coefficients to their first K orbitals.
    ``constants`` is a dict with ``source`` and, for the user source,
    ``C_lower``, ``C_upper``, ``delta`` and optionally ``lambda1_lower``;
    ``K_low`` sets the two orbital counts used by the extrapolated source.
    """

    model: dict | None = None
    coeffs: str | None = None
    K: int | None = None
    mode: str = "outer"
    D: int = 1
    tau: float = 1e-8
    c0: float = 0.1
    alpha: float = 1.0
    t_eig: float = 0.5
    eps_num: float | None = None
    max_inner: int = 300
    max_outer: int = 60
    constants: dict = field(default_factory=lambda: {"source": "auto"})
    oracle_cap: int = 4000
    out: str = "run"
    seed: int = 0
    init: str = "slater"
    init_rank: int = 2
    record_timing: bool = False
    plots: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.D < 1:
            raise ConfigError("D must be at least 1")
        if self.D >= 2 and self.mode != "subspace":
            raise ConfigError("D >= 2 requires mode 'subspace'")
        if (self.model is None) == (self.coeffs is None):
            raise ConfigError("give exactly one of 'model' and 'coeffs'")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if not 0 < self.c0 < 1:
            raise ConfigError("c0 must lie in (0, 1)")
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        if not 0 < self.t_eig < 1:
            raise ConfigError("t_eig must lie in (0, 1)")
        if self.init not in ("slater", "random"):
            raise ConfigError("init must be 'slater' or 'random'")
        src = self.constants.get("source", "auto")
        if src not in SOURCES:
            raise ConfigError(f"constants.source must be one of {SOURCES}")
        if src == "user":
            missing = {"C_lower", "C_upper", "delta"} - set(self.constants)
            if missing:
                raise ConfigError(f"user constants need {sorted(missing)}")

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# setup


@dataclass
class Setup:
    coeffs: object
    shape: SectorShape
    p: pc.ExpSumPrecond
    constants: dict
    solver: SolverConfig
    certified: bool
    problem_info: dict


def load_coefficients(cfg: RunConfig):
    if cfg.coeffs is not None:
        try:
            coeffs = mg.read_coefficients(cfg.coeffs)
        except OSError as exc:
            raise ConfigError(f"cannot read coefficients: {exc}") from None
        except mg.CoefficientFileError as exc:
            raise ConfigError(str(exc)) from None
        info = {"source": "file", "path": str(cfg.coeffs)}
    else:
        try:
            spec = mg.ModelSpec(**cfg.model)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad model spec: {exc}") from None
        coeffs = mg.generate_coefficients(spec)
        info = {"source": "model", "model": spec.as_dict()}
    if coeffs.n_particles is None:
        raise ConfigError("coefficients do not fix the particle number")
    K = coeffs.K if cfg.K is None else cfg.K
    if not 1 <= K <= coeffs.K:
        raise ConfigError(f"K = {K} outside 1..{coeffs.K}")
    full = coeffs
    if K < coeffs.K:
        coeffs = coeffs.restrict(K)
    info.update(K=K, N=int(coeffs.n_particles), gamma=float(coeffs.gamma))
    return coeffs, full, info


def resolve_constants(cfg: RunConfig, coeffs, full, shape: SectorShape):
    src = cfg.constants.get("source", "auto")
    if src == "auto":
        src = "oracle-exact" if shape.dimension <= cfg.oracle_cap else "extrapolated"
    if src == "oracle-exact":
        if shape.dimension > cfg.oracle_cap:
            raise OracleCapError(f"sector dimension {shape.dimension} exceeds oracle cap "
                                 f"{cfg.oracle_cap}; reduce K or use extrapolated constants")
        sc = pc.exact_constants(coeffs, shape, cfg.c0, cap=cfg.oracle_cap)
        # exact up to round-off; shave a little so it stays a lower bound
        lower = sc.lambda1 * (1 - 1e-10)
        certified = True
    elif src == "extrapolated":
        K_low = tuple(cfg.constants.get("K_low", (12, 14)))
        try:
            sc = pc.estimate_constants(full, shape, K_low, cfg.c0, cap=cfg.oracle_cap)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        lower = sc.lambda1
        certified = False
    else:
        C = cfg.constants
        Cl, Cu, delta = float(C["C_lower"]), float(C["C_upper"]), float(C["delta"])
        sc = pc.SpectralConstants(pc.spectral_constant(cfg.c0, Cl, Cu), delta, Cl, Cu,
                                  math.nan, cfg.c0, "user")
        lower = C.get("lambda1_lower")
        certified = True
    d = sc.as_dict()
    d["lambda1_lower"] = lower
    return sc, d, certified


def setup(cfg: RunConfig) -> Setup:
    coeffs, full, info = load_coefficients(cfg)
    shape = SectorShape(coeffs.K, int(coeffs.n_particles))
    if cfg.D > shape.dimension:
        raise ConfigError(f"D = {cfg.D} exceeds the sector dimension {shape.dimension}")
    sc, cdict, certified = resolve_constants(cfg, coeffs, full, shape)
    if not 0 <= sc.c < 1:
        raise ConfigError(f"preconditioner constant c = {sc.c:.4g} is not below 1")
    p = pc.build_precond(coeffs, cfg.c0, sc.C_lower, sc.C_upper, shape)
    try:
        solver = SolverConfig(c=sc.c, delta=sc.delta, eps_num=cfg.eps_num, t_eig=cfg.t_eig,
                              max_inner=cfg.max_inner, lambda1_lower=cdict["lambda1_lower"],
                              record_timing=cfg.record_timing)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return Setup(coeffs, shape, p, cdict, solver, certified, info)


def initial_columns(cfg: RunConfig, shape: SectorShape) -> list:
    """First D Slater determinants in lexicographic order, or random states."""
    if cfg.init == "random":
        rng = np.random.default_rng(cfg.seed)
        return [bm.random_state(shape, cfg.init_rank, rng) for _ in range(cfg.D)]
    occ = itertools.islice(itertools.combinations(range(shape.K), shape.N), cfg.D)
    return [bm.from_slater(shape, list(o)) for o in occ]


# ---------------------------------------------------------------------------
# dense check


class DenseTracker:
    """Exact errors of every iterate against the dense pencil."""

    def __init__(self, ops, D: int):
        self.ops = ops
        self.lams, self.U = oracle.dense_eigs(ops, max(D, 2))
        self.D = D
        self.rows = []

    def __call__(self, rec, x):
        cols = [x] if x.joint is None else [bm.extract(x, i) for i in range(x.ncols)]
        vecs = [oracle.sector_vector(c, self.ops.basis) for c in cols]
        lam_exact = [oracle.rayleigh(self.ops, v) for v in vecs]
        rel = [(lam_exact[i] - self.lams[i]) / self.lams[i] for i in range(len(vecs))]
        u = self.U[:, 0]
        self.rows.append({
            "n": rec.n, "m": rec.m,
            "rel_eig_true": rel[0],
            "vec_err_true": oracle.a_norm_error(self.ops, u, vecs[0]),
            "angle_true": oracle.exact_angle(self.ops, u, vecs[0]),
            "rho_true": oracle.exact_rho(self.ops, vecs[0]),
            "rel_eig_true_columns": rel,
        })


# ---------------------------------------------------------------------------
# solver dispatch


@dataclass
class RunResult:
    status: int
    converged: bool
    reason: str
    lams: list
    trace: list
    final: object
    outer_steps: list
    column_bounds: list
    setup: Setup
    dense: DenseTracker | None


def solve(cfg: RunConfig, st: Setup, observer=None):
    prob = Problem(st.coeffs, st.p)
    cols = initial_columns(cfg, st.shape)
    ocfg = OuterConfig(alpha=cfg.alpha, tau=cfg.tau, D=cfg.D, max_outer=cfg.max_outer)
    if cfg.mode == "inner":
        res = inner_iterate(st.coeffs, st.p, cols[0], 0.0, st.solver, problem=prob,
                            stop_rel_eig=cfg.tau, observer=observer)
        last = res.trace[-1]
        return (res.converged, res.reason, [res.lam], res.trace, res.x, [],
                [(last.rho, last.eig_bound, last.vec_bound, True)])
    if cfg.mode == "outer":
        res = outer_iterate(st.coeffs, st.p, cols[0], st.solver, ocfg, problem=prob,
                            observer=observer)
        last = res.trace[-1]
        return (res.converged, res.reason, [res.lam], res.trace, res.y, res.steps,
                [(last.rho, last.eig_bound, last.vec_bound, True)])
    res = subspace_outer(st.coeffs, st.p, stack(cols), st.solver, ocfg, problem=prob,
                         observer=observer)
    last = res.trace[-1]
    cb = [(float(last.rhos[i]), b.rel_eig, b.vec_err, i == 0) for i, b in enumerate(res.col_bounds)]
    return (res.converged, res.reason, [float(v) for v in res.lams], res.trace, res.Y,
            res.steps, cb)


def execute(cfg: RunConfig, dense_required: bool = False) -> RunResult:
    st = setup(cfg)
    tracker = None
    if st.shape.dimension <= cfg.oracle_cap:
        tracker = DenseTracker(oracle.build_dense(st.coeffs, st.shape, st.p, cap=cfg.oracle_cap),
                               cfg.D)
    elif dense_required:
        raise OracleCapError(f"sector dimension {st.shape.dimension} exceeds oracle cap "
                             f"{cfg.oracle_cap}; reduce K")
    converged, reason, lams, trace, final, steps, cb = solve(cfg, st, tracker)
    status = EXIT_OK if converged else EXIT_NONCONV
    return RunResult(status, converged, reason, lams, trace, final, steps, cb, st, tracker)


# ---------------------------------------------------------------------------
# serialization


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return ""
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.17g}"


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: Path, obj):
    write_atomic(path, json.dumps(_json_safe(obj), indent=2, sort_keys=True) + "\n")


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def trace_csv(trace, D: int = 1) -> str:
    header = list(TRACE_COLUMNS)
    if D > 1:
        header += [f"lambda_{i}" for i in range(2, D + 1)] + [f"rho_bound_{i}" for i in range(2, D + 1)]
    rows = []
    for r in trace:
        row = [r.n, r.m, r.lam, r.rho, r.eig_bound, r.vec_bound, r.max_rank, r.eta_res,
               r.eta_inner, r.wall_ms]
        if D > 1:
            row += list(r.lams[1:]) + list(r.rhos[1:])
        rows.append([fmt(v) for v in row])
    return _csv_text(header, rows)


def ranks_csv(trace) -> str:
    rows = [[r.n, cut, rank] for r in trace for cut, rank in enumerate(r.ranks, start=1)]
    return _csv_text(["n", "cut", "rank"], rows)


def summary_dict(cfg: RunConfig, rr: RunResult) -> dict:
    st = rr.setup
    columns = []
    for i, (rho, rel, vec, first) in enumerate(rr.column_bounds):
        columns.append({
            "lambda": rr.lams[i], "rho_bound": rho, "rel_eig_bound": rel, "vec_err_bound": vec,
            "certified": bool(first and st.certified and math.isfinite(rel)),
        })
    first = columns[0]
    return {
        "schema_version": SCHEMA_VERSION,
        "status": "converged" if rr.converged else "not_converged",
        "reason": rr.reason,
        "mode": cfg.mode,
        "D": cfg.D,
        "lambda": rr.lams[0],
        "lambdas": rr.lams,
        "bounds": {k: first[k] for k in ("rho_bound", "rel_eig_bound", "vec_err_bound",
                                         "certified")},
        "columns": columns,
        "constants": st.constants,
        "preconditioner": {"c0": cfg.c0, "nterms": st.p.nterms, "t_min": st.p.t_min,
                           "t_max": st.p.t_max, "dropped_terms": list(st.p.dropped)},
        "problem": st.problem_info,
        "iterations": len(rr.trace),
        "final_ranks": list(rr.final.ranks),
        "outer_steps": [{
            "m": s.m, "eta": s.eta, "tau_m": s.tau_m, "inner_steps": s.inner_steps,
            "lambda": s.lam, "rel_eig_bound": s.rel_eig, "ranks_inner": s.ranks_inner,
            "ranks_truncated": s.ranks_truncated, "truncation_error": s.trunc_error,
        } for s in rr.outer_steps],
        "config": cfg.to_dict(),
    }


def dense_dict(rr: RunResult) -> dict:
    tr = rr.dense
    return {
        "schema_version": SCHEMA_VERSION,
        "dimension": int(len(tr.ops.basis)),
        "lambda_exact": [float(v) for v in tr.lams[: len(rr.lams)]],
        "gap_ratio_exact": float(tr.lams[1] / (tr.lams[1] - tr.lams[0])),
        "final_rel_eig_true": [(rr.lams[i] - tr.lams[i]) / tr.lams[i] for i in range(len(rr.lams))],
        "iterates": [
            {**row, "rel_eig_bound": rec.eig_bound, "vec_err_bound": rec.vec_bound,
             "rho_bound": rec.rho, "admissible": "inadmissible" not in rec.flags}
            for row, rec in zip(tr.rows, rr.trace)
        ],
    }


def comparison_rows(rr: RunResult) -> list:
    """Exact errors next to bounds; rows with inadmissible bounds are omitted."""
    out = []
    for row, rec in zip(rr.dense.rows, rr.trace):
        if "inadmissible" in rec.flags or not math.isfinite(rec.eig_bound):
            continue
        te, tv = row["rel_eig_true"], row["vec_err_true"]
        out.append({
            "n": rec.n, "m": rec.m, "lambda": rec.lam,
            "rel_eig_true": te, "rel_eig_bound": rec.eig_bound,
            "eig_tightness": rec.eig_bound / te if te > 0 else math.inf,
            "vec_err_true": tv, "vec_err_bound": rec.vec_bound,
            "vec_tightness": rec.vec_bound / tv if tv > 0 else math.inf,
            "angle_true": row["angle_true"],
        })
    return out


def write_outputs(cfg: RunConfig, rr: RunResult, out: Path):
    write_atomic(out / "trace.csv", trace_csv(rr.trace, cfg.D))
    write_atomic(out / "ranks.csv", ranks_csv(rr.trace))
    write_json(out / "summary.json", summary_dict(cfg, rr))
    if rr.dense is not None:
        write_json(out / "dense_check.json", dense_dict(rr))


def write_plots(rr: RunResult, out: Path):
    """Optional figures; needs matplotlib (the 'plots' extra)."""
    try:
        import matplotlib
    except ImportError:
        raise ConfigError("--plots needs matplotlib; install the 'plots' extra") from None
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    pdir = out / "plots"
    pdir.mkdir(parents=True, exist_ok=True)
    n = [r.n for r in rr.trace]
    fig, ax = plt.subplots()
    ax.semilogy(n, [r.eig_bound for r in rr.trace], label="rel. eigenvalue bound")
    ax.semilogy(n, [r.vec_bound for r in rr.trace], label="eigenvector bound")
    if rr.dense is not None:
        ax.semilogy(n, [max(row["rel_eig_true"], 1e-300) for row in rr.dense.rows],
                    "--", label="rel. eigenvalue error")
    ax.set_xlabel("iteration")
    ax.legend()
    fig.savefig(pdir / "convergence.png", dpi=120)
    plt.close(fig)
    fig, ax = plt.subplots()
    R = np.array([r.ranks for r in rr.trace]).T
    im = ax.imshow(R, aspect="auto", origin="lower", interpolation="nearest")
    ax.set_xlabel("iteration")
    ax.set_ylabel("cut")
    fig.colorbar(im, ax=ax, label="rank")
    fig.savefig(pdir / "ranks.png", dpi=120)
    plt.close(fig)


def run(cfg: RunConfig) -> int:
    """Execute a run and write its artifacts; returns the exit status."""
    out = Path(cfg.out)
    try:
        cfg.validate()
        rr = execute(cfg)
    except ConfigError as exc:
        return _fail(out, EXIT_CONFIG, "config", str(exc))
    except (OracleCapError, oracle.OracleCapacityError) as exc:
        return _fail(out, EXIT_ORACLE, "oracle-cap", str(exc))
    write_outputs(cfg, rr, out)
    if cfg.plots:
        try:
            write_plots(rr, out)
        except ConfigError as exc:
            return _fail(out, EXIT_CONFIG, "config", str(exc))
    if rr.status != EXIT_OK:
        return _fail(out, rr.status, "non-convergence", rr.reason)
    return EXIT_OK


def compare_with_oracle(cfg: RunConfig) -> dict:
    """Run with the dense oracle and pair every admissible bound with the truth."""
    cfg.validate()
    rr = execute(cfg, dense_required=True)
    out = Path(cfg.out)
    write_outputs(cfg, rr, out)
    rows = comparison_rows(rr)
    write_atomic(out / "compare.csv",
                 _csv_text(COMPARE_COLUMNS, [[fmt(r[c]) for c in COMPARE_COLUMNS] for r in rows]))
    dominated = all(r["rel_eig_bound"] >= r["rel_eig_true"] and
                    r["vec_err_bound"] >= r["vec_err_true"] for r in rows)
    report = {
        "schema_version": SCHEMA_VERSION, "converged": rr.converged, "rows": rows,
        "omitted": len(rr.trace) - len(rows), "bounds_dominate": dominated,
        "min_eig_tightness": min((r["eig_tightness"] for r in rows), default=math.nan),
        "min_vec_tightness": min((r["vec_tightness"] for r in rows), default=math.nan),
    }
    return report


def _fail(out: Path, code: int, kind: str, message: str) -> int:
    err = {"schema_version": SCHEMA_VERSION, "error": kind, "message": message,
           "exit_code": code}
    try:
        write_json(out / "error.json", err)
    except OSError:
        pass
    print(json.dumps(err), file=sys.stderr)
    return code


# ---------------------------------------------------------------------------
# argument parsing


def load_config(path, overrides: dict) -> RunConfig:
    data = {}
    if path is not None:
        try:
            with open(path) as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    data.update({k: v for k, v in overrides.items() if v is not None})
    if overrides.get("coeffs") is not None:
        data.pop("model", None)
    try:
        return RunConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _add_run_flags(p):
    p.add_argument("config", nargs="?", help="JSON run configuration")
    p.add_argument("--tau", type=float)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--coeffs", help="coefficient file (replaces the model section)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--oracle-cap", dest="oracle_cap", type=int)
    p.add_argument("--d", dest="D", type=int, help="number of eigenpairs (subspace mode)")
    p.add_argument("--plots", action="store_true", default=None,
                   help="also render PNG figures (needs matplotlib)")


def build_parser():
    ap = argparse.ArgumentParser(prog="sqpinvit", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    _add_run_flags(sub.add_parser("run", help="run a solver and write telemetry"))
    _add_run_flags(sub.add_parser("compare", help="run and compare bounds with the dense oracle"))
    g = sub.add_parser("generate", help="write model coefficients to a file")
    g.add_argument("--K", type=int, default=14)
    g.add_argument("--N", type=int, default=2)
    g.add_argument("--b", type=float, default=5.0)
    g.add_argument("--gamma", type=float)
    g.add_argument("--strength", type=float, default=1.0)
    g.add_argument("-o", "--output", required=True)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "generate":
        try:
            spec = mg.ModelSpec(N=args.N, K=args.K, b=args.b, gamma=args.gamma,
                                strength=args.strength)
            coeffs = mg.generate_coefficients(spec)
        except (ValueError, mg.QuadratureError) as exc:
            print(json.dumps({"error": "config", "message": str(exc)}), file=sys.stderr)
            return EXIT_CONFIG
        mg.write_coefficients(coeffs, args.output)
        return EXIT_OK
    overrides = {k: getattr(args, k) for k in ("tau", "mode", "coeffs", "out", "oracle_cap",
                                                 "D", "plots")}
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        return _fail(Path(overrides["out"] or "run"), EXIT_CONFIG, "config", str(exc))
    if args.command == "run":
        return run(cfg)
    try:
        report = compare_with_oracle(cfg)
    except ConfigError as exc:
        return _fail(Path(cfg.out), EXIT_CONFIG, "config", str(exc))
    except (OracleCapError, oracle.OracleCapacityError) as exc:
        return _fail(Path(cfg.out), EXIT_ORACLE, "oracle-cap", str(exc))
    write_json(Path(cfg.out) / "compare.json", report)
    print(json.dumps(_json_safe({k: report[k] for k in (
        "converged", "omitted", "bounds_dominate", "min_eig_tightness", "min_vec_tightness")})))
    return EXIT_OK if report["converged"] else EXIT_NONCONV
