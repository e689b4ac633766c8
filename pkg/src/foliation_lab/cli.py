"""Command line front end and run orchestration.

A run is described by a JSON config (see ``CONFIG_SCHEMA``).  Reports are
written as sorted-key JSON with a CSV of the margins next to each, plus
plot-ready tables of minimum margin against N and t.  Reports carry no
timestamps, so a repeated run with the same config is byte-identical;
wall-clock timings go to a separate ``timings.json``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import jsonschema
import numpy as np

from . import calculus, heat, metrics, models, verify

JOBS = ("ricci_formula", "pointwise", "gradient", "reverse", "harnack", "poincare",
        "entropy_wasserstein", "lsi", "refinement")

_POS_LIST = {"type": "array", "minItems": 1, "items": {"type": "number", "exclusiveMinimum": 0}}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model"],
    "properties": {
        "model": {"type": "string", "minLength": 1},
        "checks": {"type": "array", "items": {"enum": list(JOBS)}},
        "eps": _POS_LIST,
        "nu": {"type": "array", "minItems": 1, "items": {"type": ["number", "string"]}},
        "t": _POS_LIST,
        "N": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 4}},
        "alpha": {"type": "array", "minItems": 1, "items": {"type": "number", "exclusiveMinimum": 1}},
        "seed": {"type": "integer", "minimum": 0},
        "samples": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: {"type": "integer", "minimum": 1} for k in
                           ("pointwise", "extremal", "fields", "pairs", "transport_pairs", "lsi_fields")},
        },
        "transport_N": {"type": "integer", "minimum": 4, "maximum": 10},
        "field_kind": {"enum": ["random", "extremal"]},
        "mutate_kappa": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "tolerances": {"type": "object", "additionalProperties": {"type": "number", "exclusiveMinimum": 0}},
        "output_dir": {"type": "string"},
        "threads": {"type": "integer", "minimum": 1},
    },
}

DEFAULTS = {
    "checks": [],
    "eps": [1.0],
    "nu": [0.0, 1.0],
    "t": [0.01, 0.05],
    "N": [12],
    "alpha": [2.0],
    "seed": 0,
    "samples": {"pointwise": 200, "extremal": 5, "fields": 20, "pairs": 50,
                "transport_pairs": 10, "lsi_fields": 50},
    "transport_N": 8,
    "field_kind": "random",
    "mutate_kappa": None,
    "tolerances": {},
    "output_dir": "out",
    "threads": 1,
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    model: str
    checks: list
    eps: list
    nu: list
    t: list
    N: list
    alpha: list
    seed: int
    samples: dict
    transport_N: int
    field_kind: str
    mutate_kappa: float | None
    tolerances: dict
    output_dir: str
    threads: int

    @classmethod
    def from_dict(cls, raw: dict, env=None) -> "RunConfig":
        try:
            jsonschema.validate(raw, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"config invalid at {path}: {exc.message}") from None
        cfg = {**DEFAULTS, **raw}
        cfg["samples"] = {**DEFAULTS["samples"], **raw.get("samples", {})}
        unknown = set(cfg["tolerances"]) - set(verify.TOLERANCE_C)
        if unknown:
            raise ConfigError(f"config invalid at tolerances: unknown checks {sorted(unknown)}")
        env = os.environ if env is None else env
        if env.get("OUTPUT_DIR"):
            cfg["output_dir"] = env["OUTPUT_DIR"]
        if env.get("THREADS"):
            try:
                cfg["threads"] = max(1, int(env["THREADS"]))
            except ValueError:
                raise ConfigError(f"THREADS must be an integer, got {env['THREADS']!r}") from None
        return cls(**cfg)

    @classmethod
    def load(cls, path, env=None) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(raw, env)

    def canonical(self) -> dict:
        """Everything that can change a report (output location and threads cannot)."""
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.pop("output_dir")
        d.pop("threads")
        return d

    def digest(self) -> str:
        return hashlib.sha256(_dumps(self.canonical()).encode()).hexdigest()


@dataclass
class RunManifest:
    config_hash: str
    version: str
    reports: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    timings_path: str = "timings.json"

    @property
    def failed(self) -> list:
        return [r for r in self.reports if r["theorem_backed"] and r["status"] == "FAIL"]

    def as_dict(self) -> dict:
        return {"config_hash": self.config_hash, "version": self.version, "reports": self.reports,
                "skipped": self.skipped, "timings": self.timings_path, "failed": len(self.failed)}

    @classmethod
    def load(cls, path) -> tuple["RunManifest", Path]:
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        d = json.loads(path.read_text())
        return cls(d["config_hash"], d["version"], d["reports"], d["skipped"], d["timings"]), path.parent


def version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _dumps(obj) -> str:
    return json.dumps(verify._jsonable(obj), sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# jobs


def _fmt(x) -> str:
    return f"{x:g}"


def _jobs(cfg: RunConfig, model, consts):
    """Expand the config into ``(name, tag, thunk)`` jobs in dependency order."""
    s = cfg.samples
    tol = cfg.tolerances
    out = []
    compact = model.quotient is not None

    def add(name, tag, fn):
        out.append((name, tag, fn))

    for name in JOBS:
        if name not in cfg.checks:
            continue
        if name == "ricci_formula":
            add(name, "all", lambda: [verify.check_ricci_formula(model, cfg.eps)])
        elif name == "pointwise":
            add(name, "all", lambda: verify.check_pointwise(
                model, cfg.eps, cfg.nu, s["pointwise"], cfg.seed, consts, extremal_points=s["extremal"]))
        elif name == "poincare":
            for eps in cfg.eps:
                grid = None if model.name == "su2" else heat.build_grid(min(cfg.N))
                add(name, f"eps{_fmt(eps)}", lambda eps=eps, grid=grid:
                    [verify.check_poincare(model, eps, grid, consts)])
        elif not compact:
            out.append((name, None, f"model {model.name!r} has no compact quotient grid"))
        elif name in ("gradient", "reverse", "harnack"):
            for N in cfg.N:
                for eps in cfg.eps:
                    for t in cfg.t:
                        add(name, f"N{N}_eps{_fmt(eps)}_t{_fmt(t)}",
                            lambda N=N, eps=eps, t=t, name=name: _semigroup_job(name, cfg, model, consts, N, eps, t))
        elif name == "entropy_wasserstein":
            for eps in cfg.eps:
                for t in cfg.t:
                    add(name, f"N{cfg.transport_N}_eps{_fmt(eps)}_t{_fmt(t)}",
                        lambda eps=eps, t=t: _transport_job(cfg, model, consts, eps, t))
        elif name == "lsi":
            for N in cfg.N:
                for eps in cfg.eps:
                    add(name, f"N{N}_eps{_fmt(eps)}", lambda N=N, eps=eps: [verify.estimate_lsi_constant(
                        model, heat.build_grid(N), eps,
                        verify.positive_fields(heat.build_grid(N), s["lsi_fields"], cfg.seed) - 1.0)])
        elif name == "refinement":
            for eps in cfg.eps:
                for t in cfg.t:
                    params = {"model": model, "eps": eps, "t": t, "fields": s["fields"], "seed": cfg.seed,
                              "consts": consts, "field_kind": cfg.field_kind, "tol_constants": tol}
                    add(name, f"eps{_fmt(eps)}_t{_fmt(t)}",
                        lambda params=params: [verify.refinement_study("gradient", sorted(cfg.N), params)])
    return out


def _semigroup_job(name, cfg, model, consts, N, eps, t):
    grid = heat.build_grid(N)
    s, tol = cfg.samples, cfg.tolerances
    F = (verify.positive_fields(grid, s["fields"], cfg.seed) if cfg.field_kind == "random"
         else verify.extremal_field(grid, model, eps, consts or models.extract_constants(model)))
    if name == "gradient":
        return verify.check_gradient_bounds(model, grid, eps, t, F, consts, tol)
    if name == "reverse":
        return verify.check_reverse_inequalities(model, grid, eps, t, F, consts, tol)
    pairs = verify.sample_pairs(grid, s["pairs"], cfg.seed)
    lower = verify.pair_distances(grid, pairs)[1]
    reports = []
    for alpha in cfg.alpha:
        reports += verify.check_wang_harnack(model, grid, eps, t, alpha, pairs, F, consts, tol, lower)
    reports += verify.check_log_harnack_and_kernel(model, grid, eps, t, pairs, F, consts, tol, lower)
    return reports


def _transport_job(cfg, model, consts, eps, t):
    grid = heat.build_grid(cfg.transport_N)
    k = cfg.samples["transport_pairs"]
    F = verify.unit_mass_fields(grid, 2 * k, cfg.seed)
    pairs = [(F[:, 2 * i], F[:, 2 * i + 1]) for i in range(k)]
    return verify.check_entropy_wasserstein(model, grid, eps, t, pairs, consts, cfg.tolerances,
                                            _lower_matrix(grid.N))


_LOWER = {}


def _lower_matrix(N):
    if N not in _LOWER:
        _LOWER[N] = metrics.lower_distance_matrix(heat.build_grid(N))
    return _LOWER[N]


def _stem(rep: verify.CheckReport, tag: str) -> str:
    extra = f"_alpha{_fmt(rep.params['alpha'])}" if "alpha" in rep.params else ""
    return f"{rep.check}__{tag}{extra}"


def _write_margins(path: Path, margins) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "margin"])
        for i, m in enumerate(np.asarray(margins, dtype=float)):
            w.writerow([i, repr(float(m))])


def _plot_rows(rep: verify.CheckReport):
    p = rep.params
    if rep.trend:
        for N, row in rep.trend.items():
            yield {"check": rep.check, "N": N, "eps": p.get("eps"), "t": p.get("t"), "alpha": None,
                   "min_margin": row["min_margin"], "tolerance": row["tolerance"]}
    elif "N" in p:
        yield {"check": rep.check, "N": p["N"], "eps": p.get("eps"), "t": p.get("t"), "alpha": p.get("alpha"),
               "min_margin": rep.min_margin, "tolerance": rep.tolerance}


def _write_plot(path: Path, rows, key):
    cols = ["check", "N", "eps", "t", "alpha", "min_margin", "tolerance"]
    rows = sorted(rows, key=lambda r: tuple("" if r[c] is None else str(r[c]) for c in cols if c != key)
                  + (r[key] if r[key] is not None else -1,))
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c]) for c in cols])


def run(cfg: RunConfig) -> RunManifest:
    """Execute the configured checks and write reports, margins, plot data and the manifest."""
    out = Path(cfg.output_dir)
    (out / "reports").mkdir(parents=True, exist_ok=True)
    model = models.load_model(cfg.model)
    consts = models.extract_constants(model)
    if cfg.mutate_kappa is not None:
        consts = verify.mutate_constants(consts, cfg.mutate_kappa)
    manifest = RunManifest(cfg.digest(), version())
    jobs = _jobs(cfg, model, consts)
    runnable = [(n, tag, fn) for n, tag, fn in jobs if tag is not None]
    manifest.skipped = [{"job": n, "reason": reason} for n, tag, reason in jobs if tag is None]

    def timed(fn):
        start = time.perf_counter()
        res = fn()
        return res, time.perf_counter() - start

    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        results = list(pool.map(lambda job: timed(job[2]), runnable))

    timings, plot_rows = {}, []
    for (name, tag, _), (reports, seconds) in zip(runnable, results):
        timings[f"{name}__{tag}"] = seconds
        for rep in reports:
            stem = _stem(rep, tag)
            (out / "reports" / f"{stem}.json").write_text(rep.to_json() + "\n")
            _write_margins(out / "reports" / f"{stem}.csv", rep.margins)
            manifest.reports.append({
                "path": f"reports/{stem}.json", "margins": f"reports/{stem}.csv", "job": name,
                "check": rep.check, "description": rep.description, "status": rep.status,
                "theorem_backed": rep.theorem_backed, "min_margin": rep.min_margin,
                "tolerance": rep.tolerance})
            plot_rows.extend(_plot_rows(rep))
    _write_plot(out / "margin_vs_N.csv", plot_rows, "N")
    _write_plot(out / "margin_vs_t.csv", [r for r in plot_rows if r["t"] is not None], "t")
    (out / "config.json").write_text(_dumps(cfg.canonical()))
    (out / "manifest.json").write_text(_dumps(manifest.as_dict()))
    (out / manifest.timings_path).write_text(_dumps(timings))
    return manifest


def report_table(manifest: RunManifest, root: Path) -> str:
    """Fixed-width summary; every referenced report must exist."""
    missing = [r["path"] for r in manifest.reports if not (root / r["path"]).exists()]
    if missing:
        raise FileNotFoundError(f"missing report files: {missing}")
    head = ("check", "statement", "params", "min margin", "tolerance", "status")
    rows = [head]
    for r in manifest.reports:
        params = json.loads((root / r["path"]).read_text())["params"]
        keys = [k for k in ("N", "Ns", "eps", "t", "alpha") if k in params]
        rows.append((r["check"], r["description"], " ".join(f"{k}={params[k]}" for k in keys),
                     f"{r['min_margin']:.3e}", f"{r['tolerance']:.1e}",
                     r["status"] + ("" if r["theorem_backed"] else " (info)")))
    widths = [max(len(str(row[i])) for row in rows) for i in range(len(head))]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    for s in manifest.skipped:
        lines.append(f"skipped {s['job']}: {s['reason']}")
    lines.append(f"{len(manifest.failed)} theorem-backed failure(s) in {len(manifest.reports)} report(s)")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# subcommands


def _floats(text):
    return [float(v) for v in text.split(",")]


def _ints(text):
    return [int(v) for v in text.split(",")]


def _nus(text):
    out = []
    for v in text.split(","):
        try:
            out.append(float(v))
        except ValueError:
            out.append(v)
    return out


def _triple(text):
    vals = _ints(text)
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("expected i,j,k")
    return tuple(vals)


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_validate(args) -> int:
    rep = models.validate_structure(models.load_model(args.model), seed=args.seed)
    _emit(_dumps(rep.as_dict()), args.out)
    return 0 if rep.passed else 1


def cmd_pointwise(args) -> int:
    model = models.load_model(args.model)
    consts = models.extract_constants(model)
    if args.mutate_kappa is not None:
        consts = verify.mutate_constants(consts, args.mutate_kappa)
    study = calculus.pointwise_study(model, args.eps, args.nu, args.samples, args.seed, consts,
                                     extremal_points=args.extremal)
    _emit(_dumps(study["rows"]), args.out)
    summary = study["summary"]
    print("summary " + " ".join(f"{k}={v:.3e}" if isinstance(v, float) else f"{k}={v}"
                                for k, v in sorted(summary.items())), file=sys.stderr)
    return 0


def _grid_model(name):
    model = models.load_model(name)
    if model.quotient is None:
        raise models.ModelError(f"model {model.name!r} has no compact quotient grid")
    return model


def cmd_heat(args) -> int:
    _grid_model(args.model)
    grid = heat.build_grid(args.N)
    if args.field:
        f = heat.Field.from_binary(args.field)
        if f.grid.N != args.N:
            raise ValueError(f"field has N={f.grid.N}, expected {args.N}")
        result = heat.evolve(f, args.eps, args.t, scheme=args.scheme)
    else:
        result = heat.heat_kernel(grid, args.eps, args.t, args.source, scheme=args.scheme)
    if args.out:
        if args.out.endswith(".csv"):
            result.to_csv(args.out)
        else:
            result.to_binary(args.out)
    v = result.values.ravel()
    print(_dumps({"N": args.N, "eps": args.eps, "t": args.t, "scheme": args.scheme,
                  "mass": result.mass, "min": float(v.min()), "max": float(v.max()), "out": args.out}), end="")
    return 0


def cmd_distance(args) -> int:
    _grid_model(args.model)
    grid = heat.build_grid(args.N)
    field_ = metrics.cc_distance(grid, args.source)
    i, j, k = (a.ravel() for a in grid.indices())
    x, y, z = (a.ravel() for a in grid.coordinates())
    lower = field_.lower
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "k", "x", "y", "z", "distance", "lower"])
        for row in zip(i, j, k, x, y, z, field_.d, lower):
            w.writerow([int(row[0]), int(row[1]), int(row[2])] + [repr(float(v)) for v in row[3:]])
    finally:
        if args.out:
            fh.close()
    return 0


def cmd_wasserstein(args) -> int:
    grid = heat.build_grid(args.grid)
    if args.mu0 and args.mu1:
        a, b = (heat.Field.from_binary(p).values.ravel() for p in (args.mu0, args.mu1))
    elif args.mu0 or args.mu1:
        raise ValueError("give both --mu0 and --mu1, or neither")
    else:
        F = verify.unit_mass_fields(grid, 2, args.seed)
        a, b = F[:, 0], F[:, 1]
    a, b = a / a.sum(), b / b.sum()
    D = metrics.distance_matrix(grid) if args.distance == "graph" else metrics.lower_distance_matrix(grid)
    res = metrics.optimal_transport(D, a, b)
    print(_dumps({"grid": args.grid, "distance": args.distance, "w2": res.distance, "cost": res.cost,
                  "certificate": res.certificate, "marginal_residual": res.marginal_residual()}), end="")
    return 0


def _run_and_report(cfg: RunConfig) -> int:
    manifest = run(cfg)
    print(report_table(manifest, Path(cfg.output_dir)))
    return 1 if manifest.failed else 0


def cmd_verify(args) -> int:
    checks = list(JOBS) if args.check == "all" else args.check.split(",")
    raw = {"model": args.model, "checks": checks, "N": args.N, "eps": args.eps, "t": args.t,
           "alpha": args.alpha, "nu": args.nu, "seed": args.seed,
           "samples": {"fields": args.fields, "pairs": args.pairs, "pointwise": args.samples},
           "field_kind": args.field_kind, "mutate_kappa": args.mutate_kappa}
    if args.output_dir:
        raw["output_dir"] = args.output_dir
    return _run_and_report(RunConfig.from_dict(raw))


def cmd_run(args) -> int:
    return _run_and_report(RunConfig.load(args.config))


def cmd_report(args) -> int:
    manifest, root = RunManifest.load(args.manifest)
    print(report_table(manifest, root))
    return 1 if manifest.failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="foliation-lab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("validate", help="structural checks of a model as JSON")
    sp.add_argument("model")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("pointwise", help="Bochner residuals and curvature gaps at random points")
    sp.add_argument("model")
    sp.add_argument("--eps", type=_floats, default=[1.0])
    sp.add_argument("--nu", type=_nus, default=[0.0, 1.0])
    sp.add_argument("--samples", type=int, default=200)
    sp.add_argument("--extremal", type=int, default=0, help="extra points with the worst-case jet")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--mutate-kappa", type=float, default=None)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_pointwise)

    sp = sub.add_parser("heat", help="evolve a field or the heat kernel on the nilmanifold grid")
    sp.add_argument("model")
    sp.add_argument("--N", type=int, default=12)
    sp.add_argument("--eps", type=float, default=1.0)
    sp.add_argument("--t", type=float, default=0.05)
    sp.add_argument("--scheme", choices=heat.SCHEMES, default="chebyshev")
    sp.add_argument("--source", type=_triple, default=(0, 0, 0), help="kernel source i,j,k")
    sp.add_argument("--field", help="flat binary input field instead of the kernel")
    sp.add_argument("--out", help="output path; .csv for CSV, anything else for flat binary")
    sp.set_defaults(func=cmd_heat)

    sp = sub.add_parser("distance", help="graph distance from a grid point as CSV")
    sp.add_argument("model")
    sp.add_argument("--N", type=int, default=12)
    sp.add_argument("--source", type=_triple, default=(0, 0, 0))
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_distance)

    sp = sub.add_parser("wasserstein", help="exact W2 between two measures on a small grid")
    sp.add_argument("--grid", type=int, default=6)
    sp.add_argument("--mu0")
    sp.add_argument("--mu1")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--distance", choices=("graph", "lower"), default="graph")
    sp.set_defaults(func=cmd_wasserstein)

    sp = sub.add_parser("verify", help="run inequality checks and print the summary table")
    sp.add_argument("model")
    sp.add_argument("--check", default="all", help=f"comma list of {', '.join(JOBS)} or 'all'")
    sp.add_argument("--N", type=_ints, default=[12])
    sp.add_argument("--eps", type=_floats, default=[1.0])
    sp.add_argument("--t", type=_floats, default=[0.01, 0.05])
    sp.add_argument("--alpha", type=_floats, default=[2.0])
    sp.add_argument("--nu", type=_nus, default=[0.0, 1.0])
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--fields", type=int, default=20)
    sp.add_argument("--pairs", type=int, default=50)
    sp.add_argument("--samples", type=int, default=200)
    sp.add_argument("--field-kind", choices=("random", "extremal"), default="random")
    sp.add_argument("--mutate-kappa", type=float, default=None)
    sp.add_argument("--output-dir")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("run", help="run a JSON config")
    sp.add_argument("config")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("report", help="summary table of a finished run")
    sp.add_argument("manifest", help="manifest.json or its directory")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, models.ModelError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BrokenPipeError:
        # output piped into e.g. head; silence the flush at exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0


if __name__ == "__main__":
    sys.exit(main())
