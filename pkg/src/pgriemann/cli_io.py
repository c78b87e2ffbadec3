"""Configuration loading, CSV/JSON artifacts, and the command line.

Run layout (one directory per solve):

    config.json    resolved configuration snapshot (defaults filled in)
    field.csv      xi, eta, r, theta, p, u, v, sector  (theta-major,
                   s-minor; u/v empty inside the pole exclusion disk)
    shock.csv      theta, r, rprime, xi, eta  (span [theta3, theta1])
    trace.csv      one row per outer iteration of the nested solver
    report.json    verification report (validates against the shipped schema)
    manifest.json  config snapshot, package version, timestamps, artifact
                   checksums (written last)

Floats are written with repr, which round-trips float64 exactly; a solution
reloaded from its artifacts therefore reproduces the verification report
bit for bit.

Exit codes: 0 solved and verified, 2 verification failed, 3 solver failure,
64 configuration error (also used for unusable run directories and bad
command lines).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import datetime
import hashlib
import json
import math
import os
import sys
from dataclasses import asdict
from importlib import resources as importlib_resources

import jsonschema
import numpy as np

from . import __version__
from .field_recovery import (
    CompositeSolution,
    ExportView,
    S_MIN_DEFAULT,
    build_export_view,
    recover_velocity,
    sample_view,
)
from .geometry_grid import COL_P2, COL_SHOCK, COL_SONIC, GeometryError
from .riemann_setup import ConfigError, RiemannConfig, build_wave_fan, wrap_angle
from .shock_front import BoundaryConditionError, p_hat_at_P2
from .solver_driver import (
    ConvergenceTrace,
    SolverConfig,
    SolverError,
    continuation_solve,
    critical_solve,
)
from .elliptic_core import CoefficientError, LinearSolveError
from .verify_report import PropertyReport, run_all_checks

EXIT_OK = 0
EXIT_VERIFY_FAILED = 2
EXIT_SOLVER_FAILED = 3
EXIT_CONFIG_ERROR = 64

_SOLVER_ERRORS = (SolverError, LinearSolveError, BoundaryConditionError,
                  CoefficientError, GeometryError)

ARTIFACT_NAMES = ("config.json", "field.csv", "shock.csv", "trace.csv",
                  "report.json")

_TRACE_COLUMNS = (
    "stage", "eps", "outer_iter", "picard_iters", "linear_residual_last",
    "linear_residual_max", "shock_delta", "branch_mismatch", "p_min",
    "p_max", "shock_gap_min", "ellipticity_min", "ellipticity_margin",
    "p_hat", "frozen_count",
)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _load_schema(name: str) -> dict:
    ref = importlib_resources.files("pgriemann").joinpath("resources", name)
    return json.loads(ref.read_text())


def default_config_dict() -> dict:
    return _load_schema("default_config.json")


def resolve_config_dict(raw: dict) -> dict:
    """Validate against the schema and fill in every default."""
    jsonschema.validate(raw, _load_schema("config.schema.json"))
    problem = dict(raw.get("problem", {}))
    solver = dict(raw.get("solver", {}))
    rc = RiemannConfig(**problem)
    sc = SolverConfig(**{k: tuple(v) if k == "eps_schedule" else v
                         for k, v in solver.items()})
    resolved = {
        "problem": {
            "p1": rc.p1, "p2": rc.p2,
            "alpha1": rc.alpha1, "alpha2": rc.alpha2,
            "u1": rc.u1, "v1": rc.v1,
        },
        "solver": {
            "ns": sc.ns, "ntheta": sc.ntheta, "mode": sc.mode,
            "stretch": sc.stretch,
            "eps_schedule": list(sc.eps_schedule),
            "picard_tol": sc.picard_tol, "picard_max": sc.picard_max,
            "linear_tol": sc.linear_tol,
            "linear_max_iter": sc.linear_max_iter,
            "outer_tol": sc.outer_tol, "outer_max": sc.outer_max,
            "shock_damping": sc.shock_damping,
            "bound_slack": sc.bound_slack,
        },
    }
    return resolved


def configs_from_dict(resolved: dict):
    rc = RiemannConfig(**resolved["problem"])
    solver = dict(resolved["solver"])
    solver["eps_schedule"] = tuple(solver["eps_schedule"])
    sc = SolverConfig(**solver)
    rc.validate()
    sc.validate()
    return rc, sc


def load_config(path: str):
    """Read a configuration file; returns (RiemannConfig, SolverConfig)."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return configs_from_dict(resolve_config_dict(raw))


# ---------------------------------------------------------------------------
# CSV artifacts
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return ""
    return repr(x)


def export_field(view: ExportView, path: str):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["xi", "eta", "r", "theta", "p", "u", "v", "sector"])
        cos_t = np.cos(view.thetas)
        sin_t = np.sin(view.thetas)
        for j in range(view.thetas.size):
            rb_j = view.rb[j]
            for i in range(view.s.size):
                r = view.s[i] * rb_j
                w.writerow([
                    _fmt(r * cos_t[j]), _fmt(r * sin_t[j]), _fmt(r),
                    _fmt(view.thetas[j]), _fmt(view.p[i, j]),
                    _fmt(view.u[i, j]), _fmt(view.v[i, j]),
                    _fmt(view.sector_cols[j]),
                ])


def export_shock(view: ExportView, path: str):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["theta", "r", "rprime", "xi", "eta"])
        for th, r, rp in zip(view.shock_thetas, view.shock_r,
                             view.shock_rprime):
            w.writerow([_fmt(th), _fmt(r), _fmt(rp),
                        _fmt(r * math.cos(th)), _fmt(r * math.sin(th))])


def export_trace(trace: ConvergenceTrace, path: str):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(_TRACE_COLUMNS)
        for row in trace.to_rows():
            w.writerow([_fmt(row[c]) for c in _TRACE_COLUMNS])


def write_report(report: PropertyReport, path: str):
    doc = report.to_dict()
    jsonschema.validate(doc, _load_schema("report.schema.json"))
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(outdir: str, resolved_config: dict, extra: dict):
    manifest = {
        "schema": "pgriemann-manifest-1",
        "package": "pgriemann",
        "version": __version__,
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "config": resolved_config,
        "artifacts": {},
    }
    manifest.update(extra)
    for name in ARTIFACT_NAMES:
        path = os.path.join(outdir, name)
        manifest["artifacts"][name] = {
            "path": name,
            "sha256": _sha256(path),
            "bytes": os.path.getsize(path),
        }
    with open(os.path.join(outdir, "manifest.json"), "w",
              encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


# ---------------------------------------------------------------------------
# solving into a run directory
# ---------------------------------------------------------------------------


def run_solve(resolved_config: dict, outdir: str) -> int:
    """Solve, verify, export; returns the process exit code."""
    rc, sc = configs_from_dict(resolved_config)
    fan = build_wave_fan(rc)
    if rc.is_critical:
        field, curve, trace = critical_solve(fan, sc)
        eps_final = 0.0
    else:
        field, curve, trace = continuation_solve(fan, sc)
        eps_final = sc.eps_schedule[-1]
    velocity = recover_velocity(field, fan, curve)
    p_hat = p_hat_at_P2(curve.bottom_radius, fan.p2)
    sol = CompositeSolution(
        fan=fan, shock=curve, pressure=field, velocity=velocity,
        eps_final=eps_final, p_hat=min(p_hat, fan.p1),
    )
    view = sol.view
    critical = bool(trace.meta.get("critical", False))
    report = run_all_checks(view, critical=critical)

    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "config.json"), "w",
              encoding="utf-8") as fh:
        json.dump(resolved_config, fh, indent=2, sort_keys=True)
        fh.write("\n")
    export_field(view, os.path.join(outdir, "field.csv"))
    export_shock(view, os.path.join(outdir, "shock.csv"))
    export_trace(trace, os.path.join(outdir, "trace.csv"))
    write_report(report, os.path.join(outdir, "report.json"))
    write_manifest(outdir, resolved_config, {
        "critical": critical,
        "eps_final": eps_final,
        "eps_tail_delta": trace.meta.get("eps_tail_delta"),
        "p_hat": sol.p_hat,
        "s_min": velocity.s_min,
        "overall": report.overall,
        "stages": trace.meta.get("stages", []),
    })
    return EXIT_OK if not report.failed else EXIT_VERIFY_FAILED


# ---------------------------------------------------------------------------
# loading a run directory
# ---------------------------------------------------------------------------


def load_run(rundir: str) -> ExportView:
    """Rebuild the canonical view from a run directory's artifacts."""
    with open(os.path.join(rundir, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("version") != __version__:
        print(
            f"note: run written by version {manifest.get('version')}, "
            f"reading with {__version__}",
            file=sys.stderr,
        )
    rc, sc = configs_from_dict(manifest["config"])
    fan = build_wave_fan(rc)

    shock_rows = _read_csv(os.path.join(rundir, "shock.csv"))
    shock_thetas = np.array([r["theta"] for r in shock_rows])
    shock_r = np.array([r["r"] for r in shock_rows])
    shock_rp = np.array([r["rprime"] for r in shock_rows])

    field_rows = _read_csv(os.path.join(rundir, "field.csv"))
    thetas = np.array(sorted({r["theta"] for r in field_rows}))
    ncolf = thetas.size
    nrow = len(field_rows) // ncolf
    ns = nrow - 1
    col_of = {t: j for j, t in enumerate(thetas)}
    p = np.empty((nrow, ncolf))
    u = np.empty((nrow, ncolf))
    v = np.empty((nrow, ncolf))
    rmat = np.empty((nrow, ncolf))
    sector = np.ones(ncolf, dtype=int)
    counters = {}
    for row in field_rows:
        j = col_of[row["theta"]]
        i = counters.get(j, 0)
        counters[j] = i + 1
        p[i, j] = row["p"]
        u[i, j] = row["u"]
        v[i, j] = row["v"]
        rmat[i, j] = row["r"]
        sector[j] = int(row["sector"])
    rb = rmat[-1, :]

    lo, hi = shock_thetas[0], shock_thetas[-1]
    role = np.full(ncolf, COL_SONIC)
    in_span = (thetas >= lo) & (thetas <= hi)
    role[in_span] = COL_SHOCK
    j_bot = int(np.argmin(np.abs(thetas - 1.5 * math.pi)))
    role[j_bot] = COL_P2
    rbp = np.zeros(ncolf)
    node_of = {t: k for k, t in enumerate(shock_thetas)}
    for j in np.nonzero(in_span)[0]:
        k = node_of.get(thetas[j])
        if k is not None:
            rbp[j] = shock_rp[k]

    # Recover the (stretched) radial fractions from the widest column.
    j_ref = int(np.argmax(rb))
    s_nodes = rmat[:, j_ref] / rb[j_ref]
    s_nodes[0] = 0.0
    s_nodes[-1] = 1.0
    return ExportView(
        fan=fan,
        s=s_nodes,
        thetas=thetas,
        rb=rb,
        rbp=rbp,
        col_role=role,
        p=p, u=u, v=v,
        sector_cols=sector,
        shock_thetas=shock_thetas,
        shock_r=shock_r,
        shock_rprime=shock_rp,
        shock_frozen=np.zeros(shock_thetas.shape, dtype=bool),
        s_min=float(manifest.get("s_min", S_MIN_DEFAULT)),
        eps_final=float(manifest.get("eps_final", 0.0)),
        p_hat=float(manifest.get("p_hat", fan.p1)),
        meta={"manifest": manifest},
    )


def _read_csv(path: str) -> list:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for raw in reader:
            row = {}
            for key, val in raw.items():
                if key == "sector":
                    row[key] = int(val)
                else:
                    row[key] = float(val) if val != "" else float("nan")
            rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG_ERROR, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="pgriemann", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve and verify a configuration")
    p_solve.add_argument("--config", required=False, default=None,
                         help="configuration JSON (defaults when omitted)")
    p_solve.add_argument("--out", required=True, help="run directory")

    p_verify = sub.add_parser("verify", help="re-verify an existing run")
    p_verify.add_argument("--run", required=True)

    p_sample = sub.add_parser("sample", help="evaluate (p, u, v) at a point")
    p_sample.add_argument("--run", required=True)
    p_sample.add_argument("--xi", type=float, required=True)
    p_sample.add_argument("--eta", type=float, required=True)

    p_sweep = sub.add_parser("sweep", help="solve a family of configurations")
    p_sweep.add_argument("--config", default=None)
    p_sweep.add_argument("--param", required=True,
                         choices=["alpha1", "alpha2", "p1", "p2"])
    p_sweep.add_argument("--values", type=float, nargs="+", required=True)
    p_sweep.add_argument("--out", required=True)
    return parser


def _load_raw_config(path):
    if path is None:
        return default_config_dict()
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def cmd_solve(args) -> int:
    try:
        resolved = resolve_config_dict(_load_raw_config(args.config))
        configs_from_dict(resolved)
    except (ConfigError, jsonschema.ValidationError, OSError,
            json.JSONDecodeError, TypeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    try:
        return run_solve(resolved, args.out)
    except _SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER_FAILED


def cmd_verify(args) -> int:
    try:
        view = load_run(args.run)
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"cannot load run: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    critical = bool(view.meta.get("manifest", {}).get("critical", False))
    report = run_all_checks(view, critical=critical)
    write_report(report, os.path.join(args.run, "report.json"))
    print(f"verification: {report.overall}")
    for c in report.checks:
        status = {True: "pass", False: "FAIL", None: "n/a "}[c.passed]
        print(f"  [{status}] {c.name}")
    return EXIT_VERIFY_FAILED if report.failed else EXIT_OK


def cmd_sample(args) -> int:
    try:
        view = load_run(args.run)
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"cannot load run: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    res = sample_view(view, args.xi, args.eta)
    print("p,u,v,region,velocity_defined")
    print(f"{_fmt(res.p)},{_fmt(res.u)},{_fmt(res.v)},"
          f"{res.region},{res.velocity_defined}")
    return EXIT_OK


def _sweep_worker(payload):
    resolved, outdir = payload
    try:
        code = run_solve(resolved, outdir)
    except _SOLVER_ERRORS as exc:
        print(f"solver failure in {outdir}: {exc}", file=sys.stderr)
        code = EXIT_SOLVER_FAILED
    return outdir, code


def cmd_sweep(args) -> int:
    try:
        raw = _load_raw_config(args.config)
        base = resolve_config_dict(raw)
    except (ConfigError, jsonschema.ValidationError, OSError,
            json.JSONDecodeError, TypeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR

    jobs = []
    for value in args.values:
        resolved = json.loads(json.dumps(base))
        resolved["problem"][args.param] = value
        try:
            configs_from_dict(resolved)
        except ConfigError as exc:
            print(f"configuration error at {args.param}={value:g}: {exc}",
                  file=sys.stderr)
            return EXIT_CONFIG_ERROR
        subdir = os.path.join(args.out, f"{args.param}={value:g}")
        jobs.append((resolved, subdir))

    os.makedirs(args.out, exist_ok=True)
    workers = int(os.environ.get("PGRIEMANN_WORKERS",
                                 min(4, os.cpu_count() or 1, len(jobs))))
    results = {}
    if workers > 1 and len(jobs) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as ex:
            for outdir, code in ex.map(_sweep_worker, jobs):
                results[outdir] = code
    else:
        for payload in jobs:
            outdir, code = _sweep_worker(payload)
            results[outdir] = code

    summary_path = os.path.join(args.out, "sweep_summary.csv")
    with open(summary_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["param", "value", "run_dir", "exit_code", "r_bottom",
                    "overall"])
        for (resolved, subdir), value in zip(jobs, args.values):
            r_bottom = ""
            overall = ""
            manifest_path = os.path.join(subdir, "manifest.json")
            if os.path.exists(manifest_path):
                with open(manifest_path, encoding="utf-8") as fh2:
                    manifest = json.load(fh2)
                overall = manifest.get("overall", "")
                stages = manifest.get("stages") or []
                if stages:
                    r_bottom = _fmt(stages[-1].get("r_bottom", float("nan")))
            w.writerow([args.param, _fmt(value), subdir,
                        results[subdir], r_bottom, overall])
    print(f"sweep summary: {summary_path}")
    return max(results.values()) if results else EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handler = {
        "solve": cmd_solve,
        "verify": cmd_verify,
        "sample": cmd_sample,
        "sweep": cmd_sweep,
    }[args.command]
    return handler(args)


def _entry():
    raise SystemExit(main())


if __name__ == "__main__":
    _entry()
