"""Command-line driver: geometry checks, solves, regularity probes and sweeps.

    fgl check-geometry [--config PATH] [--seed INT] [--out DIR]
    fgl solve          ...
    fgl probe          ...
    fgl sweep          ...

Exit codes: 0 success, 1 failed check, 2 solver non-convergence,
64 configuration error.  FGL_THREADS caps worker threads.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import logging
import os
import platform
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import besov as bv
from . import geometry as geo
from . import problems as pb
from .grid import Field, Grid, read_field_csv, write_field_csv
from .solver import METRICS, ProblemSpec, SolverConfig, minimize
from .tensor import OUTER, TensorNormSpec

log = logging.getLogger("fgl")

EXIT_OK, EXIT_FAIL, EXIT_NONCONVERGED, EXIT_CONFIG = 0, 1, 2, 64

LOWER_FLOOR = 1e-3      # a certified lower constant must stay above this
UPPER_CEIL = 1e3        # a certified upper constant must stay below this
MAX_GROWTH = 0.10       # allowed widening of the window on doubling samples
IDENTITY_TOL = 1e-10


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ProblemConfig:
    gamma: float = 2.0
    norm: str = "lp"
    p: float = 2.0
    m: int = 1
    n: int = 1
    N: int = 129
    outer: str = "l2_columns"
    weights: tuple[float, ...] = ()
    tau: float | None = None
    sigma: float | None = None
    f: str = "constant"
    f_value: float = 1.0
    f_axis: int = 0
    boundary: str = "zero"
    boundary_slope: tuple[float, ...] = ()
    boundary_offset: tuple[float, ...] = ()


@dataclass
class ProbeConfig:
    margin: float = bv.DEFAULT_MARGIN
    field: str = "solve"       # "solve", "random" or a checkpoint / field CSV path
    steps: tuple[int, ...] = ()


@dataclass
class GeometryConfig:
    families: tuple[str, ...] = ("lp:2", "lp:3", "lp:1.5")
    dims: tuple[int, ...] = (2,)
    gammas: tuple[float, ...] = (1.5, 2.0, 3.0, 4.0)
    taus: tuple[float, ...] = (-0.5, 0.0, 0.5, 1.0, 2.0)
    samples: int = 10_000
    identity_samples: int = 10_000


@dataclass
class SweepConfig:
    gammas: tuple[float, ...] = (2.0, 3.0, 4.0)
    ps: tuple[float, ...] = (2.0, 3.0)
    n: int = 1
    m: int = 2
    N: int = 129


@dataclass
class ExperimentConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    seed: int = 0
    out: str = "fgl-out"
    resume: str = ""

    def echo(self) -> dict:
        return dataclasses.asdict(self)


SECTIONS = {"problem": ProblemConfig, "solver": SolverConfig, "probe": ProbeConfig,
            "geometry": GeometryConfig, "sweep": SweepConfig}


_ELEMENT = {"families": str, "steps": int, "dims": int}
_OPTIONAL = ("tau", "sigma")


def _convert(raw: str, default, name: str):
    raw = raw.strip()
    try:
        if isinstance(default, tuple):
            kind = _ELEMENT.get(name, float)
            return tuple(kind(t.strip()) for t in raw.split(",") if t.strip())
        if name in _OPTIONAL:
            return None if raw.lower() in ("", "none") else float(raw)
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            x = float(raw)
            if not x.is_integer():
                raise ValueError
            return int(x)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from exc


def _section(parser: configparser.ConfigParser, name: str, cls):
    obj = cls()
    if not parser.has_section(name):
        return obj
    known = {f.name: f for f in dataclasses.fields(cls)}
    values = {}
    for key, raw in parser.items(name):
        if key not in known:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        fname = key
        default = getattr(obj, fname)
        values[fname] = _convert(raw, default, fname)
    try:
        return dataclasses.replace(obj, **values)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{name}] {exc}") from exc


def load_config(path: str | None) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    if path:
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
    unknown = set(parser.sections()) - set(SECTIONS) - {"run"}
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")
    cfg = ExperimentConfig(**{k: _section(parser, k, c) for k, c in SECTIONS.items()})
    if parser.has_section("run"):
        for key, raw in parser.items("run"):
            if key not in ("seed", "out", "resume"):
                raise ConfigError(f"[run] unknown key {key!r}")
            setattr(cfg, key, _convert(raw, getattr(cfg, key), key))
    return cfg


def parse_family(token: str, dim: int) -> geo.NormFamily:
    """``lp:P[:tau=T][:sigma=S]``, ``euclidean`` or ``weighted_lp:P:w1/w2/...``."""
    parts = token.strip().split(":")
    kind = parts[0]
    try:
        if kind == "euclidean":
            return geo.euclidean(dim)
        if kind == "lp":
            extra = dict(t.split("=") for t in parts[2:])
            unknown = set(extra) - {"tau", "sigma"}
            if unknown:
                raise ValueError(f"unknown options {sorted(unknown)}")
            return geo.lp(float(parts[1]), dim, **{k: float(v) for k, v in extra.items()})
        if kind == "weighted_lp":
            return geo.weighted_lp(float(parts[1]), [float(w) for w in parts[2].split("/")])
    except (IndexError, ValueError) as exc:
        raise ConfigError(f"bad norm family {token!r}: {exc}") from exc
    raise ConfigError(f"unknown norm family {token!r}")


def build_norm(pc: ProblemConfig) -> geo.NormFamily:
    opts = {k: v for k, v in (("tau", pc.tau), ("sigma", pc.sigma)) if v is not None}
    if pc.norm == "euclidean":
        return geo.euclidean(pc.m)
    if pc.norm == "lp":
        return geo.lp(pc.p, pc.m, **opts)
    if pc.norm == "weighted_lp":
        if len(pc.weights) != pc.m:
            raise ValueError("need one weight per component")
        return geo.weighted_lp(pc.p, pc.weights)
    raise ValueError(f"unknown norm kind {pc.norm!r}")


def build_problem(pc: ProblemConfig) -> ProblemSpec:
    try:
        if pc.outer not in OUTER:
            raise ValueError(f"unknown outer construction {pc.outer!r}")
        grid = Grid(pc.n, pc.N)
        tensor = TensorNormSpec(build_norm(pc), pc.outer)
        f = pb.source(pc.f, grid, pc.m, pc.f_value, pc.f_axis)
        slope = pc.boundary_slope or None
        offset = pc.boundary_offset or None
        bdry = pb.boundary(pc.boundary, grid, pc.m, slope, offset)
        return ProblemSpec(grid, tensor, pc.gamma, f, bdry)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def validate(cfg: ExperimentConfig) -> None:
    build_problem(cfg.problem)
    if cfg.solver.metric not in METRICS:
        raise ConfigError(f"metric must be one of {METRICS}")
    if not 0 < cfg.probe.margin < 0.5:
        raise ConfigError("probe margin must lie in (0, 1/2)")
    for tok in cfg.geometry.families:
        parse_family(tok, cfg.geometry.dims[0] if cfg.geometry.dims else 2)
    if not cfg.geometry.dims or any(d < 1 for d in cfg.geometry.dims):
        raise ConfigError("geometry dims must be positive")
    if any(g <= 1 for g in (*cfg.geometry.gammas, *cfg.sweep.gammas)):
        raise ConfigError("gamma values must exceed 1")


# ---------------------------------------------------------------------------
# manifest and output helpers


@dataclass
class RunManifest:
    command: str
    config: dict
    versions: dict
    started: str
    finished: str = ""
    stages: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    exit_code: int | None = None

    def write(self, out: Path) -> Path:
        """Atomic replace so a reader never sees a partial manifest."""
        path = out / "manifest.json"
        fd, tmp = tempfile.mkstemp(dir=out, prefix=".manifest-", suffix=".json")
        with os.fdopen(fd, "w") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=2, default=str)
            fh.write("\n")
        os.replace(tmp, path)
        return path


def _versions() -> dict:
    import scipy
    from importlib import metadata
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "fgl": pkg}


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class Run:
    """Tracks outputs of one command and writes the manifest at the end."""

    def __init__(self, command: str, cfg: ExperimentConfig):
        self.out = Path(cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(command, cfg.echo(), _versions(), _now())

    def path(self, name: str) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        rel = str(p.relative_to(self.out))
        if rel not in self.manifest.outputs:
            self.manifest.outputs.append(rel)
        return p

    def stage(self, name: str, status: str) -> None:
        self.manifest.stages[name] = status

    def finish(self, code: int) -> int:
        self.manifest.finished = _now()
        self.manifest.exit_code = code
        self.manifest.outputs.sort()
        self.manifest.write(self.out)
        return code


def _g(v) -> str:
    return format(float(v), ".17g")


# ---------------------------------------------------------------------------
# check-geometry


def _judge(a: geo.RatioReport, b: geo.RatioReport) -> str:
    """Empty string if the doubled-sample pair certifies its bound."""
    side = geo.BOUND_SIDE[a.parameters["suite"]]
    if side in ("lower", "both") and not b.min_ratio >= LOWER_FLOOR:
        return f"min_ratio {b.min_ratio:.3g} below {LOWER_FLOOR:g}"
    if side in ("upper", "both") and not b.max_ratio <= UPPER_CEIL:
        return f"max_ratio {b.max_ratio:.3g} above {UPPER_CEIL:g}"
    g = a.growth(b, side)
    if not g < MAX_GROWTH:
        return f"window grew {100 * g:.1f}% on doubling"
    return ""


def geometry_suites(gc: GeometryConfig, seed: int):
    """Yield (label, kind, payload) for every configured check.

    kind is "identity" (payload: norm, gamma, errors) or "ratio"
    (payload: report at ``samples``, report at twice that).
    """
    for tok in gc.families:
        for dim in gc.dims:
            norm = parse_family(tok, dim)
            for g in gc.gammas:
                yield "identity", (norm, g, geo.identity_errors(norm, g, gc.identity_samples, seed))
            for t in gc.taus:
                yield "ratio", (geo.v_ratio_sweep(norm, t, gc.samples, seed),
                                geo.v_ratio_sweep(norm, t, 2 * gc.samples, seed))
            for g in gc.gammas:
                for which in geo.SWEEPS:
                    yield "ratio", (geo.xu_roach_sweep(norm, g, which, gc.samples, seed),
                                    geo.xu_roach_sweep(norm, g, which, 2 * gc.samples, seed))
            if tok.startswith("weighted_lp"):
                break


def cmd_check_geometry(cfg: ExperimentConfig) -> int:
    run = Run("check-geometry", cfg)
    failures: list[str] = []
    ratio_rows, id_rows = [], []
    try:
        for kind, payload in geometry_suites(cfg.geometry, cfg.seed):
            if kind == "identity":
                norm, g, errs = payload
                id_rows.append([norm.label, str(norm.dim), _g(g), str(cfg.geometry.identity_samples),
                                str(cfg.seed), *(_g(errs[k]) for k in geo.IDENTITIES)])
                bad = [k for k in geo.IDENTITIES if not errs[k] <= IDENTITY_TOL]
                if bad:
                    failures.append(f"identity {norm.label} gamma={g:g}: {', '.join(bad)}")
            else:
                a, b = payload
                ratio_rows += [a.csv_row(), b.csv_row()]
                why = _judge(a, b)
                if why:
                    p = a.parameters
                    tag = f"gamma={p['gamma']:g} " if p.get("gamma") is not None else ""
                    failures.append(f"{p['suite']} {p['norm']} {tag}exponent={p['exponent']:g}: {why}")
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        run.stage("check-geometry", f"error: {exc}")
        return run.finish(EXIT_FAIL)

    with open(run.path("geometry_ratios.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(geo.RatioReport.CSV_HEADER)
        w.writerows(ratio_rows)
    with open(run.path("geometry_identities.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "dim", "gamma", "samples", "seed", *geo.IDENTITIES])
        w.writerows(id_rows)
    for f in failures:
        print(f"FAIL {f}", file=sys.stderr)
    run.stage("check-geometry", "fail" if failures else "pass")
    return run.finish(EXIT_FAIL if failures else EXIT_OK)


# ---------------------------------------------------------------------------
# solve / probe / sweep


def _solve(cfg: ExperimentConfig, spec: ProblemSpec, run: Run, prefix: str = ""):
    u0 = None
    if cfg.resume:
        try:
            u0 = pb.load_checkpoint(cfg.resume)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot load checkpoint: {exc}") from exc
        if u0.grid != spec.grid or u0.m != spec.tensor.m:
            raise ConfigError("checkpoint does not match the problem grid")
    solver_cfg = dataclasses.replace(cfg.solver, seed=cfg.seed)
    report = minimize(spec, solver_cfg, u0)
    write_field_csv(report.u, run.path(f"{prefix}solution.csv"))
    report.write_trace_csv(run.path(f"{prefix}energy_trace.csv"), solver_cfg.eps0)
    pb.save_checkpoint(report.u, run.path(f"{prefix}checkpoint.txt"))
    ok = report.converged and report.weak_residual <= 10 * solver_cfg.grad_tol
    with open(run.path(f"{prefix}summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iterations", "converged", "final_eps", "grad_norm", "weak_residual",
                    "final_energy", "status"])
        w.writerow([report.iterations, int(report.converged), _g(report.final_eps),
                    _g(report.grad_norm), _g(report.weak_residual), _g(report.energy_trace[-1]),
                    "ok" if ok else "not converged"])
    return report, ok


def cmd_solve(cfg: ExperimentConfig) -> int:
    spec = build_problem(cfg.problem)
    run = Run("solve", cfg)
    report, ok = _solve(cfg, spec, run)
    log.info("solve: %d iterations, weak residual %.3g", report.iterations, report.weak_residual)
    run.stage("solve", "converged" if ok else "not converged")
    if not ok:
        print(f"not converged: grad {report.grad_norm:.3g}, weak residual {report.weak_residual:.3g}",
              file=sys.stderr)
    return run.finish(EXIT_OK if ok else EXIT_NONCONVERGED)


def random_field(spec: ProblemSpec, seed: int) -> Field:
    """Seeded noise in the interior, boundary data on the boundary."""
    rng = np.random.default_rng(seed)
    v = spec.boundary.values.copy()
    mask = spec.grid.interior_mask()
    v[mask] = rng.standard_normal(v[mask].shape)
    return Field(spec.grid, v)


def _load_field(path: str) -> Field:
    try:
        with open(path) as fh:
            first = fh.readline()
        return pb.load_checkpoint(path) if first.startswith("#") else read_field_csv(path)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load field {path!r}: {exc}") from exc


def _probe_rows(cfg: ExperimentConfig, spec: ProblemSpec, u: Field):
    return bv.regularity_table(spec, u, cfg.probe.margin, cfg.probe.steps or None)


def cmd_probe(cfg: ExperimentConfig) -> int:
    spec = build_problem(cfg.problem)
    run = Run("probe", cfg)
    code = EXIT_OK
    src = cfg.probe.field
    if src == "solve":
        report, ok = _solve(cfg, spec, run)
        run.stage("solve", "converged" if ok else "not converged")
        u = report.u
        if not ok:
            code = EXIT_NONCONVERGED
    elif src == "random":
        u = random_field(spec, cfg.seed)
    else:
        u = _load_field(src)
        if u.grid != spec.grid or u.m != spec.tensor.m:
            raise ConfigError("probed field does not match the problem grid")
    rows = _probe_rows(cfg, spec, u)
    bv.write_regularity_csv(rows, run.path("regularity.csv"))
    failing = [r.quantity for r in rows if not r.passed]
    run.stage("probe", "pass" if not failing else f"fail: {', '.join(failing)}")
    for r in rows:
        if not r.passed:
            print(f"FAIL {r.quantity}: predicted {r.predicted_alpha:.3g}, measured "
                  f"{r.measured_alpha:.3g} {r.note}".rstrip(), file=sys.stderr)
    if failing and code == EXIT_OK:
        code = EXIT_FAIL
    return run.finish(code)


SWEEP_PREFIX = ("gamma", "norm_p", "converged")


def _sweep_cell(cfg: ExperimentConfig, run: Run, gamma: float, p: float):
    sc = cfg.sweep
    pc = dataclasses.replace(cfg.problem, gamma=gamma, p=p, norm="lp", n=sc.n, m=sc.m, N=sc.N,
                             tau=None, sigma=None, weights=())
    spec = build_problem(pc)
    report, ok = _solve(cfg, spec, run, prefix=f"cells/g{gamma:g}_p{p:g}/")
    return ok, _probe_rows(cfg, spec, report.u)


def cmd_sweep(cfg: ExperimentConfig) -> int:
    run = Run("sweep", cfg)
    cells = [(g, p) for g in cfg.sweep.gammas for p in cfg.sweep.ps]
    for g, p in cells:
        # fail fast on invalid cells before any work starts
        build_problem(dataclasses.replace(cfg.problem, gamma=g, p=p, norm="lp", n=cfg.sweep.n,
                                          m=cfg.sweep.m, N=cfg.sweep.N, tau=None, sigma=None,
                                          weights=()))

    def work(cell):
        try:
            return _sweep_cell(cfg, run, *cell), None
        except Exception as exc:       # recorded per cell, the sweep goes on
            log.exception("sweep cell %s failed", cell)
            return None, exc

    threads = min(geo._threads(), len(cells)) or 1
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(work, cells))
    else:
        results = [work(c) for c in cells]

    incomplete = 0
    with open(run.path("sweep.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*SWEEP_PREFIX, *bv.RegularityRow.CSV_HEADER])
        for (g, p), (res, exc) in zip(cells, results):
            tag = f"g{g:g}_p{p:g}"
            if res is None:
                incomplete += 1
                run.stage(tag, f"error: {exc}")
                w.writerow([_g(g), _g(p), "", "", "", "", "", "", "", "", f"error: {exc}"])
                continue
            ok, rows = res
            run.stage(tag, "converged" if ok else "not converged")
            for r in rows:
                w.writerow([_g(g), _g(p), int(ok), *r.csv_row()])
    return run.finish(EXIT_FAIL if incomplete else EXIT_OK)


COMMANDS = {"check-geometry": cmd_check_geometry, "solve": cmd_solve,
            "probe": cmd_probe, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fgl", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="INI file with [problem], [solver], ... sections")
        sp.add_argument("--seed", type=int, help="overrides [run] seed")
        sp.add_argument("--out", help="output directory (overrides [run] out)")
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out = args.out
        validate(cfg)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
