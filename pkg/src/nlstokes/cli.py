"""``nlstokes solve|study|check|info --config <path> [--out <dir>] [--force]``.

Exit codes: 0 success, 2 configuration error, 3 solver error, 4 partial study,
5 failed checks.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy
from scipy.spatial import cKDTree

from . import __version__
from .analysis import BUILTIN_CASES, CouplingRule, ManufacturedCase, builtin_case, convergence_study, error_fields
from .checks import CheckRow, energy_suite, kernel_suite, operator_suite, poincare_suite
from .geometry import DOMAINS, DegeneratePartitionError, EmptyCloudError, make_domain, partition, sample_grid
from .kernels import BUILTIN_PROFILES, KernelValidationError, make_kernel, make_profile, profile_from_table
from .operators import assemble_operators
from .report import loglog_svg, solution_csv, study_csv, study_json, write_manifest
from .system import (
    DIRECT_MAX_UNKNOWNS,
    NonlocalStokesProblem,
    SolverError,
    SolverOptions,
    solve_problem,
    stability_ratio,
    velocity_energy,
    weighted_norm,
)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_PARTIAL, EXIT_CHECKS = 0, 2, 3, 4, 5
SUITES = ("kernels", "operators", "poincare", "energy")
CONFIG_KEYS = {"domain", "kernel", "delta", "coupling", "case", "solver", "output", "seed", "suite"}

log = logging.getLogger("nlstokes")


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


@dataclass
class RunConfig:
    domain: dict = field(default_factory=lambda: {"name": "unit-disk"})
    kernel: dict = field(default_factory=lambda: {"profile": "quadratic"})
    delta: list = field(default_factory=lambda: [0.2])
    coupling: dict = field(default_factory=lambda: {"rule": "delta^1.5/2"})
    case: dict = field(default_factory=lambda: {"name": "disk-swirl"})
    solver: dict = field(default_factory=lambda: {"method": "auto", "rtol": 1e-10, "max_iter": 20000})
    output: str = "nlstokes-out"
    seed: int = 0
    suite: str | None = None
    base_dir: Path = Path(".")

    def coupling_rule(self) -> CouplingRule:
        if "h" in self.coupling:
            return CouplingRule(fixed_h=float(self.coupling["h"]))
        return CouplingRule.parse(self.coupling["rule"])

    def solver_options(self) -> SolverOptions:
        return SolverOptions(self.solver.get("method", "auto"), float(self.solver.get("rtol", 1e-10)),
                             int(self.solver.get("max_iter", 20000)))

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p


def parse_config(raw: dict, base_dir: Path = Path(".")) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    unknown = set(raw) - CONFIG_KEYS
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")
    cfg = RunConfig(base_dir=base_dir)

    dom = raw.get("domain", cfg.domain)
    if isinstance(dom, str):
        dom = {"name": dom}
    if not isinstance(dom, dict) or dom.get("name") not in DOMAINS:
        raise ConfigError("domain", f"name must be one of {sorted(DOMAINS)}")
    cfg.domain = dict(dom)

    ker = raw.get("kernel", cfg.kernel)
    if isinstance(ker, str):
        ker = {"profile": ker}
    if not isinstance(ker, dict) or not (("profile" in ker) ^ ("table" in ker)):
        raise ConfigError("kernel", "give exactly one of 'profile' or 'table'")
    if "profile" in ker and ker["profile"] not in BUILTIN_PROFILES:
        raise ConfigError("kernel", f"profile must be one of {BUILTIN_PROFILES}")
    cfg.kernel = dict(ker)

    delta = raw.get("delta", cfg.delta)
    ladder = delta if isinstance(delta, list) else [delta]
    if not ladder or not all(isinstance(d, (int, float)) and not isinstance(d, bool) and d > 0 for d in ladder):
        raise ConfigError("delta", "must be a positive number or a list of them")
    if any(b >= a for a, b in zip(ladder, ladder[1:])):
        raise ConfigError("delta", "ladder values must be strictly descending")
    cfg.delta = [float(d) for d in ladder]

    coup = raw.get("coupling", cfg.coupling)
    if not isinstance(coup, dict) or not (("h" in coup) ^ ("rule" in coup)):
        raise ConfigError("coupling", "give exactly one of 'h' or 'rule'")
    if "h" in coup and not (isinstance(coup["h"], (int, float)) and coup["h"] > 0):
        raise ConfigError("coupling", "'h' must be positive")
    cfg.coupling = dict(coup)
    try:
        cfg.coupling_rule()
    except ValueError as exc:
        raise ConfigError("coupling", str(exc)) from None

    case = raw.get("case", cfg.case)
    if isinstance(case, str):
        case = {"name": case}
    if not isinstance(case, dict) or not (("name" in case) ^ ("forcing_table" in case)):
        raise ConfigError("case", "give a manufactured case name or a 'forcing_table' path")
    if "name" in case and case["name"] not in BUILTIN_CASES:
        raise ConfigError("case", f"name must be one of {BUILTIN_CASES}")
    cfg.case = dict(case)

    solver = {**cfg.solver, **raw.get("solver", {})}
    if solver["method"] not in ("auto", "direct", "krylov"):
        raise ConfigError("solver", "method must be auto, direct or krylov")
    if not (isinstance(solver["rtol"], (int, float)) and solver["rtol"] > 0):
        raise ConfigError("solver", "rtol must be positive")
    if not (isinstance(solver["max_iter"], int) and solver["max_iter"] > 0):
        raise ConfigError("solver", "max_iter must be a positive integer")
    cfg.solver = solver

    cfg.output = str(raw.get("output", cfg.output))
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed", "must be an integer")
    cfg.seed = seed
    suite = raw.get("suite")
    if suite is not None and suite not in SUITES:
        raise ConfigError("suite", f"must be one of {SUITES}")
    cfg.suite = suite
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError("--config", f"{path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"invalid JSON: {exc}") from None
    return parse_config(raw, path.parent)


def _domain(cfg: RunConfig):
    params = {k: v for k, v in cfg.domain.items() if k != "name"}
    try:
        return make_domain(cfg.domain["name"], **params)
    except TypeError as exc:
        raise ConfigError("domain", str(exc)) from None


def _profile(cfg: RunConfig):
    if "table" in cfg.kernel:
        return profile_from_table(cfg.resolve(cfg.kernel["table"]))
    return make_profile(cfg.kernel["profile"])


def _forcing(cfg: RunConfig, points: np.ndarray) -> tuple[np.ndarray, ManufacturedCase | None]:
    if "name" in cfg.case:
        case = builtin_case(cfg.case["name"])
        return case.f(points), case
    path = cfg.resolve(cfg.case["forcing_table"])
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except OSError as exc:
        raise ConfigError("case", f"cannot read forcing table: {exc}") from None
    n = points.shape[1]
    if data.shape[1] != 2 * n:
        raise ConfigError("case", f"forcing table needs {2 * n} columns (x1..x{n}, f1..f{n})")
    _, idx = cKDTree(data[:, :n]).query(points)
    return data[idx, n:], None


def _metadata(cfg: RunConfig, command: str, timings: dict) -> dict:
    return {
        "command": command,
        "version": f"v{__version__}",
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "config": {k: v for k, v in asdict(cfg).items() if k != "base_dir"},
        "timings": timings,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }


def _prepare_out(cfg: RunConfig, out: str | None, force: bool) -> Path:
    outdir = Path(out) if out else cfg.resolve(cfg.output)
    if (outdir / "manifest.json").exists() and not force:
        raise ConfigError("output", f"{outdir} already holds a run; pass --force to overwrite")
    outdir.mkdir(parents=True, exist_ok=True)
    return outdir


def _write(outdir: Path, name: str, text: str, files: list):
    (outdir / name).write_text(text)
    files.append(name)


def cmd_solve(cfg: RunConfig, outdir: Path) -> int:
    if len(cfg.delta) != 1:
        raise ConfigError("delta", "solve needs a single delta")
    delta = cfg.delta[0]
    t0 = time.perf_counter()
    domain = _domain(cfg)
    try:
        cloud = partition(sample_grid(domain, cfg.coupling_rule()(delta)), delta)
        profile = _profile(cfg)
    except (EmptyCloudError, DegeneratePartitionError, KernelValidationError, ValueError) as exc:
        raise ConfigError("delta" if "delta" in str(exc) else "kernel", str(exc)) from None
    f, case = _forcing(cfg, cloud.points)
    kernel = make_kernel(profile, delta, domain.dim)
    problem = NonlocalStokesProblem(cloud, kernel, f, cfg.solver_options())
    files: list[str] = []
    try:
        sol, system = solve_problem(problem)
    except SolverError as exc:
        _write(outdir, "diagnostics.json",
               json.dumps({"error": str(exc), "residual_history": exc.residual_history}, indent=2) + "\n", files)
        write_manifest(outdir, files)
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    diag = {
        "method": sol.method,
        "unknowns": system.size,
        "points": len(cloud),
        "interior_points": int(len(cloud.interior)),
        "relative_residual": sol.residual,
        "iterations": sol.iterations,
        "energy_gap": sol.energy_gap,
        "stability_ratio": stability_ratio(sol, problem) if np.any(f) else None,
        "multiplier": sol.lam,
    }
    if case is not None:
        e, d = error_fields(case, cloud, sol.u, sol.p)
        I = cloud.interior
        diag["error_u_L2"] = weighted_norm(cloud.weights[I], e[I])
        diag["error_u_energy"] = float(np.sqrt(velocity_energy(system.ops, e)))
        diag["error_p_L2"] = weighted_norm(cloud.weights, d)
    _write(outdir, "solution.csv", solution_csv(cloud, sol.u, sol.p), files)
    _write(outdir, "diagnostics.json", json.dumps(diag, indent=2) + "\n", files)
    timings = {**sol.timings, "total": time.perf_counter() - t0}
    _write(outdir, "metadata.json", json.dumps(_metadata(cfg, "solve", timings), indent=2) + "\n", files)
    write_manifest(outdir, files)
    print(f"solved: {system.size} unknowns ({sol.method}), residual {sol.residual:.2e}, "
          f"energy gap {sol.energy_gap:.2e} -> {outdir}")
    return EXIT_OK


def cmd_study(cfg: RunConfig, outdir: Path) -> int:
    if len(cfg.delta) < 3:
        raise ConfigError("delta", f"a study needs at least 3 ladder values, got {len(cfg.delta)}")
    if "name" not in cfg.case or cfg.case["name"] == "zero":
        raise ConfigError("case", "a study needs a manufactured case with a nonzero exact solution")
    t0 = time.perf_counter()
    workers = max(1, int(os.environ.get("NLSTOKES_THREADS", "1")))
    try:
        profile = _profile(cfg)
    except (KernelValidationError, ValueError) as exc:
        raise ConfigError("kernel", str(exc)) from None
    report = convergence_study(builtin_case(cfg.case["name"]), cfg.delta, cfg.coupling_rule(),
                               cfg.solver_options(), _domain(cfg), profile, workers=workers)
    if "table" in cfg.kernel:
        report.kernel = str(cfg.kernel["table"])
    files: list[str] = []
    timings = {"total": time.perf_counter() - t0,
               "per_delta": {repr(r.delta): r.runtimes for r in report.records}}
    meta = _metadata(cfg, "study", timings)
    _write(outdir, "study.csv", study_csv(report), files)
    _write(outdir, "study.json", json.dumps(study_json(report, {"version": meta["version"]}), indent=2) + "\n", files)
    deltas = [r.delta for r in report.records]
    series = {c: [getattr(r, c) for r in report.records] for c in ("error_u_L2", "error_u_energy", "error_p_L2")}
    _write(outdir, "study.svg", loglog_svg(deltas, series), files)
    _write(outdir, "metadata.json", json.dumps(meta, indent=2) + "\n", files)
    write_manifest(outdir, files)
    for r in report.records:
        print(f"delta={r.delta:<8g} h={r.h:<10.4g} N={r.N:<7d} u={r.error_u_L2:.4e} "
              f"energy={r.error_u_energy:.4e} p={r.error_p_L2:.4e} [{r.status}]")
    for c, v in report.observed_orders.items():
        print(f"observed order {c}: {v:.3f}")
    return EXIT_OK if report.complete else EXIT_PARTIAL


def run_checks(cfg: RunConfig, suite: str) -> list[CheckRow]:
    if suite == "kernels":
        try:
            profile = _profile(cfg)
        except KernelValidationError as exc:
            return kernel_suite(exc)
        return kernel_suite(profile)
    profile = _profile(cfg)
    domain = _domain(cfg)
    rule = cfg.coupling_rule()
    if suite == "poincare":
        return poincare_suite(domain, profile, cfg.delta, rule)
    delta = cfg.delta[0]
    cloud = partition(sample_grid(domain, rule(delta)), delta)
    if suite == "operators":
        ops = assemble_operators(cloud, make_kernel(profile, delta, domain.dim))
        return operator_suite(cloud, ops, seed=cfg.seed)
    if suite == "energy":
        f, _ = _forcing(cfg, cloud.points)
        if not np.any(f):
            f = np.random.default_rng(cfg.seed).standard_normal(f.shape)
        return energy_suite(cloud, profile, f, cfg.solver_options())
    raise ConfigError("suite", f"must be one of {SUITES}")


def check_table(rows: list[CheckRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["check", "measured", "threshold", "status", "detail"])
    for r in rows:
        w.writerow([r.name, f"{r.measured:.6e}", f"{r.threshold:.1e}", "pass" if r.passed else "FAIL", r.detail])
    return buf.getvalue()


def cmd_check(cfg: RunConfig, outdir: Path, suite: str | None) -> int:
    suites = [suite] if suite else ([cfg.suite] if cfg.suite else list(SUITES))
    t0 = time.perf_counter()
    rows: list[CheckRow] = []
    for s in suites:
        try:
            found = run_checks(cfg, s)
        except (KernelValidationError, SolverError) as exc:
            name = exc.assumption if isinstance(exc, KernelValidationError) else "solver"
            found = [CheckRow(name, float("nan"), 0.0, False, str(exc))]
        rows.extend(CheckRow(f"[{s}] {r.name}", r.measured, r.threshold, r.passed, r.detail) for r in found)
    files: list[str] = []
    table = check_table(rows)
    _write(outdir, "checks.csv", table, files)
    _write(outdir, "metadata.json",
           json.dumps(_metadata(cfg, "check", {"total": time.perf_counter() - t0}), indent=2) + "\n", files)
    write_manifest(outdir, files)
    print(table, end="")
    failed = [r for r in rows if not r.passed]
    for r in failed:
        print(f"FAILED: {r.name} ({r.detail})", file=sys.stderr)
    return EXIT_CHECKS if failed else EXIT_OK


def cmd_info() -> str:
    lines = [
        f"nlstokes v{__version__}",
        "domains: " + ", ".join(sorted(DOMAINS)),
        "kernel profiles: " + ", ".join(BUILTIN_PROFILES),
        "manufactured cases: " + ", ".join(BUILTIN_CASES),
        "solver methods: auto, direct, krylov",
        f"direct solver used up to {DIRECT_MAX_UNKNOWNS} unknowns in auto mode",
        "default tolerances: rtol=1e-10, max_iter=20000, eigenvalue rtol=1e-6",
        "default coupling: h = delta^1.5/2",
        "check suites: " + ", ".join(SUITES),
    ]
    return "\n".join(lines) + "\n"


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="nlstokes", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=("solve", "study", "check", "info"))
    parser.add_argument("--config")
    parser.add_argument("--out")
    parser.add_argument("--force", action="store_true")
    parser.add_argument("--suite", choices=SUITES)
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")

    if args.command == "info":
        sys.stdout.write(cmd_info())
        return EXIT_OK
    try:
        if not args.config:
            raise ConfigError("--config", "required for this command")
        cfg = load_config(args.config)
        outdir = _prepare_out(cfg, args.out, args.force)
        if args.command == "solve":
            return cmd_solve(cfg, outdir)
        if args.command == "study":
            return cmd_study(cfg, outdir)
        return cmd_check(cfg, outdir, args.suite)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (KernelValidationError, EmptyCloudError, DegeneratePartitionError, ValueError, OSError) as exc:
        # bad inputs that only surface once the run starts (tables, spacings, delta vs domain)
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
