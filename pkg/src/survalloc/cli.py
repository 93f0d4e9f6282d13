"""Command-line front end: solve, simulate, verify, export.

Artifacts are file-based so expensive solves can be cached and reused:
``solve`` writes binary grids plus a manifest, ``simulate`` writes JSON
estimate records (and a CSV + figure for horizon schedules), ``verify``
writes a JSON report with a summary table and margin figure, ``export``
writes CSV slices with a figure.  Main outputs carry no timestamps; wall
time lives in a ``timing.json`` sidecar so reruns are byte-identical.

Exit codes: 0 success, 1 check/convergence failure, 2 usage or config
error, 3 missing or corrupt artifact.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import plots
from . import verify as verify_mod
from .closedform import DriftBudget, compactify, decompactify
from .errors import (ArtifactError, ConfigError, ConvergenceError,
                     DependencyError, ProvenanceError, RegimeError)
from .grids import KIND_U, KIND_V, load_grid, save_grid
from .simulate import (ConstantSplit, Fixed, GridFeedback, Laggard, SimConfig,
                       Uniform, estimate, horizon_schedule)
from .solver import extract_policy, gradient, solve_recursive

EXIT_OK = 0
EXIT_CHECK = 1
EXIT_USAGE = 2
EXIT_ARTIFACT = 3

ENV_OUT = "SURVALLOC_OUT"

_PAYOFFS = {"all": "AllSurvive", "count": "SurvivorCount"}
_ESTIMATORS = {"horizon": "HorizonTruncation", "barrier": "DualBarrier"}


# ---------------------------------------------------------------------------
# small helpers


def _sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _write_json(path, obj) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _out_dir(args) -> Path:
    out = args.out
    if out is None:
        root = os.environ.get(ENV_OUT)
        if not root:
            raise ConfigError(
                f"no output directory: pass --out or set {ENV_OUT}")
        out = Path(root) / args.command
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _finish(out: Path, command: str, config: dict, inputs: dict,
            outputs, t0: float) -> None:
    """Manifest with input/output hashes plus the timing sidecar.

    Figures are excluded from the output hashes; only delimited and binary
    payloads take part in the byte-identical rerun guarantee.
    """
    hashed = {}
    for name in outputs:
        p = out / name
        if p.suffix != ".png":
            hashed[name] = _sha256_file(p)
    _write_json(out / "manifest.json", {
        "command": command, "config": config,
        "inputs": inputs, "outputs": hashed,
    })
    _write_json(out / "timing.json", {"wall_time_s": time.time() - t0})


def _parse_floats(text) -> tuple:
    if isinstance(text, str):
        parts = [p for p in text.split(",") if p.strip()]
    else:
        parts = list(text)
    if not parts:
        raise ConfigError("expected a comma-separated list of numbers")
    try:
        return tuple(float(p) for p in parts)
    except (TypeError, ValueError):
        raise ConfigError(f"not a numeric list: {text!r}")


def _parse_points(text) -> list:
    return [_parse_floats(group) for group in str(text).split(";") if group.strip()]


def _parse_policy(text, n: int, params: DriftBudget):
    """Policy from its flag syntax; returns (policy, input-hash dict)."""
    text = str(text)
    head, _, tail = text.partition(":")
    head = head.lower()
    if head == "laggard":
        return Laggard(), {}
    if head == "uniform":
        return Uniform(), {}
    if head == "fixed":
        try:
            return Fixed(int(tail)), {}
        except ValueError:
            raise ConfigError(f"fixed policy needs an integer index: {text!r}")
    if head == "split":
        return ConstantSplit(_parse_floats(tail)), {}
    if head == "grid":
        grid = load_grid(tail)
        if grid.spec.n != n:
            raise ProvenanceError(
                f"grid policy is {grid.spec.n}-dimensional, state is {n}-dimensional")
        if grid.spec.params != params:
            raise ProvenanceError(
                f"grid policy was solved at {grid.spec.params}, run uses {params}")
        return (GridFeedback(extract_policy(grid), grid),
                {tail: grid.payload_sha256()})
    raise ConfigError(
        f"unknown policy {text!r} (expected laggard, uniform, fixed:I, "
        "split:w1,...,wn, or grid:PATH)")


def _apply_config_file(parser, subparsers, args, argv):
    """Config-file values become subcommand defaults, then argv reparses."""
    with open(args.config) as f:
        overrides = json.load(f)
    if not isinstance(overrides, dict):
        raise ConfigError("config file must hold a flat JSON object")
    sub = subparsers[args.command]
    known = {a.dest for a in sub._actions} - {"help"}
    unknown = sorted(set(overrides) - known)
    if unknown:
        raise ConfigError(
            f"config file keys not recognized by {args.command}: {', '.join(unknown)}")
    sub.set_defaults(**overrides)
    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# solve


def cmd_solve(args) -> int:
    t0 = time.time()
    params = DriftBudget(args.b, args.budget)
    kind = args.kind.upper()
    grids, _ = solve_recursive(args.n, kind, params, args.grid, tol=args.tol)
    out = _out_dir(args)
    outputs = []
    for dim in sorted(grids):
        g = grids[dim]
        name = f"{args.kind.lower()}{dim}"
        save_grid(g, out / name)
        outputs += [f"{name}.meta.json", f"{name}.f64le"]
        print(f"{name}: m={g.spec.m} residual={g.residual:.3e} "
              f"iterations={g.iterations}")
    config = {"kind": args.kind, "n": args.n, "b": args.b,
              "budget": args.budget, "grid": args.grid, "tol": args.tol}
    _finish(out, "solve", config, {}, outputs, t0)
    print(f"wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    t0 = time.time()
    x0 = _parse_floats(args.x0)
    params = DriftBudget(args.b, args.budget)
    policy, inputs = _parse_policy(args.policy, len(x0), params)
    config = SimConfig(x0=x0, params=params, dt=args.dt, horizon=args.horizon,
                       paths=args.paths, seed=args.seed, barrier=args.barrier,
                       payoff=_PAYOFFS[args.payoff],
                       estimator=_ESTIMATORS[args.estimator])
    out = _out_dir(args)
    record = {"config": config.echo(), "policy": policy.descriptor()}
    outputs = ["estimate.json"]

    if args.horizons:
        horizons = _parse_floats(args.horizons)
        ests = horizon_schedule(config, policy, horizons, threads=args.threads)
        with open(out / "schedule.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["horizon", "mean", "stderr", "ci_lo", "ci_hi",
                        "truncated_fraction"])
            for T, e in zip(horizons, ests):
                w.writerow([f"{v:.17g}" for v in
                            (T, e.mean, e.stderr, e.ci95[0], e.ci95[1],
                             e.truncated_fraction)])
        plots.render_schedule(out / "schedule.png", horizons, ests)
        record["horizons"] = list(horizons)
        record["estimates"] = [e.as_dict() for e in ests]
        outputs += ["schedule.csv", "schedule.png"]
        final = ests[-1]
    else:
        final = estimate(config, policy, threads=args.threads)
        record["estimate"] = final.as_dict()

    _write_json(out / "estimate.json", record)
    _finish(out, "simulate", {**record["config"], "policy": args.policy,
                              "threads": args.threads,
                              "horizons": args.horizons}, inputs, outputs, t0)
    print(f"mean {final.mean:.6f} +- {1.96 * final.stderr:.6f} (95% CI), "
          f"{final.paths} paths, truncated {final.truncated_fraction:.2%}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify


_ALL_CHECKS = ("basic", "conjecture-v", "counterexample-u", "lifting",
               "thresholds", "mc-vs-pde")


def _verify_reports(args, grids) -> list:
    requested = list(_ALL_CHECKS) if args.check == "all" else [args.check]
    explicit = args.check != "all"
    floor = args.noise_floor
    reports = []

    def need(message):
        if explicit:
            raise DependencyError(message)

    for check in requested:
        if check == "basic":
            if not grids:
                need("the basic check needs at least one --grid artifact")
            for g in grids:
                reports.append(verify_mod.check_bounds_symmetry_monotonicity(g))
        elif check == "conjecture-v":
            targets = [g for g in grids if g.spec.kind == KIND_V and g.spec.n >= 2]
            if not targets:
                need("conjecture-v needs a --grid artifact of kind V with n >= 2")
            for g in targets:
                reports.append(verify_mod.check_conjecture_v(g, noise_floor=floor))
        elif check == "counterexample-u":
            targets = [g for g in grids if g.spec.kind == KIND_U and g.spec.n == 2]
            if not targets:
                need("counterexample-u needs a 2-D --grid artifact of kind U")
            for g in targets:
                reports.append(verify_mod.check_counterexample_u(
                    g, window=args.window, noise_floor=floor))
        elif check == "lifting":
            by_key = {}
            for g in grids:
                if g.spec.kind == KIND_U:
                    by_key[(g.spec.params, g.spec.m, g.spec.n)] = g
            pairs = [(hi, by_key[(p, m, n - 1)])
                     for (p, m, n), hi in sorted(by_key.items(),
                                                 key=lambda kv: kv[0][2])
                     if (p, m, n - 1) in by_key]
            if not pairs:
                need("lifting needs two U-kind --grid artifacts of dimensions "
                     "n and n+1 at the same (b, budget, m)")
            for hi, lo in pairs:
                reports.append(verify_mod.check_lifting(
                    hi, lo, noise_floor=floor))
        elif check == "thresholds":
            kwargs = {"seed": args.seed, "threads": args.threads}
            if args.paths:
                kwargs["paths"] = args.paths
            reports.append(verify_mod.check_thresholds(**kwargs))
        elif check == "mc-vs-pde":
            targets = [g for g in grids if g.spec.n == 2]
            if not targets:
                need("mc-vs-pde needs a 2-D --grid artifact")
            for g in targets:
                if args.points:
                    points = _parse_points(args.points)
                elif g.spec.kind == KIND_V:
                    points = [(1.0, 1.0), (0.5, 3.0)]
                else:
                    points = [(0.05, 0.15)]
                kwargs = {"seed": args.seed, "threads": args.threads}
                if args.paths:
                    kwargs["paths"] = args.paths
                reports.append(verify_mod.check_mc_vs_pde(g, points, **kwargs))
    return reports


def cmd_verify(args) -> int:
    t0 = time.time()
    paths = args.grid or []
    if args.check == "all" and not paths:
        raise DependencyError(
            "verify --check all needs solved artifacts: pass --grid PATH for "
            "each grid (run the solve command first)")
    grids = [load_grid(p) for p in paths]
    reports = _verify_reports(args, grids)
    if not reports:
        raise DependencyError(
            "no check had usable inputs; see --check choices and pass "
            "matching --grid artifacts")

    out = _out_dir(args)
    _write_json(out / "report.json", verify_mod.reports_to_json(reports))
    summary = verify_mod.render_summary(reports)
    with open(out / "summary.txt", "w") as f:
        f.write(summary + "\n")
    plots.render_margins(out / "margins.png", reports)
    inputs = {str(p): g.payload_sha256() for p, g in zip(paths, grids)}
    config = {"check": args.check, "noise_floor": args.noise_floor,
              "window": args.window, "points": args.points,
              "paths": args.paths, "seed": args.seed, "threads": args.threads}
    _finish(out, "verify", config, inputs,
            ["report.json", "summary.txt", "margins.png"], t0)
    print(summary)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_CHECK


# ---------------------------------------------------------------------------
# export


def _parse_slice(items, spec, compact: bool) -> dict:
    pinned = {}
    for item in items or []:
        name, _, raw = str(item).partition("=")
        name = name.strip().lower()
        prefix = "y" if compact else "x"
        if not (name.startswith(prefix) and name[1:].isdigit()):
            raise ConfigError(
                f"slice {item!r}: expected {prefix}<axis>=<value> with a "
                f"1-based axis index")
        axis = int(name[1:]) - 1
        if not 0 <= axis < spec.n:
            raise ConfigError(f"slice {item!r}: axis out of range for n={spec.n}")
        try:
            value = float(raw)
        except ValueError:
            raise ConfigError(f"slice {item!r}: value is not a number")
        if value < 0.0 or (compact and value > 1.0):
            raise ConfigError(f"slice {item!r}: outside the grid")
        pinned[axis] = value if compact else compactify(value)
    return pinned


def cmd_export(args) -> int:
    t0 = time.time()
    grid = load_grid(args.grid)
    spec = grid.spec
    compact = args.coords == "compact"
    pinned = _parse_slice(args.slice, spec, compact)

    if args.what == "value":
        data = {f"{spec.kind.lower()}": grid.values}
        offset, size = 0, spec.m
    elif args.what == "gradient":
        partials = gradient(grid).partials
        data = {f"d{spec.kind.lower()}_dx{i + 1}": partials[..., i]
                for i in range(spec.n)}
        offset, size = 1, spec.m - 2
    else:
        data = {"policy_index": extract_policy(grid).index}
        offset, size = 1, spec.m - 2

    axis_y = spec.axis()
    index = []
    free = []
    for i in range(spec.n):
        if i in pinned:
            j = int(round(pinned[i] * (spec.m - 1))) - offset
            j = min(max(j, 0), size - 1)
            index.append(j)
        else:
            free.append(i)
            index.append(np.arange(size))
    mesh = np.meshgrid(*[index[i] for i in free], indexing="ij") if free else []
    full = list(index)
    for k, i in enumerate(free):
        full[i] = mesh[k]
    columns = {name: np.asarray(arr[tuple(full)], dtype=float).ravel()
               for name, arr in data.items()}

    count = columns[next(iter(columns))].size
    prefix = "y" if compact else "x"
    names = [f"{prefix}{i + 1}" for i in range(spec.n)]
    coord_cols = []
    for i in range(spec.n):
        j = np.broadcast_to(np.asarray(full[i]), mesh[0].shape).ravel() \
            if free else np.array([full[i]])
        yv = axis_y[j + offset]
        coord_cols.append(yv if compact else decompactify(yv))

    out = _out_dir(args)
    with open(out / "export.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(names + list(columns))
        for r in range(count):
            row = [coord_cols[i][r] for i in range(spec.n)]
            row += [columns[name][r] for name in columns]
            w.writerow([f"{v:.17g}" for v in row])

    free_coords = np.stack([coord_cols[i] for i in free], axis=1) \
        if free else np.zeros((count, 0))
    figure = plots.render_slice(out / "export.png",
                                [names[i] for i in free], free_coords, columns)
    outputs = ["export.csv"] + (["export.png"] if figure else [])
    config = {"grid": str(args.grid), "what": args.what, "coords": args.coords,
              "slice": list(args.slice or [])}
    _finish(out, "export", config, {str(args.grid): grid.payload_sha256()},
            outputs, t0)
    print(f"wrote {out / 'export.csv'} ({count} rows)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser and entry point


def build_parser():
    parser = argparse.ArgumentParser(
        prog="survalloc",
        description="Budgeted drift allocation with absorption: grid solver, "
                    "SDE simulator, structural checks.")
    subparsers = parser.add_subparsers(dest="command")
    subs = {}

    def add(name, func, help_text):
        sub = subparsers.add_parser(name, help=help_text)
        sub.set_defaults(func=func)
        sub.add_argument("--config", help="JSON file of flag defaults")
        sub.add_argument("--out", help=f"output directory (default: ${ENV_OUT}/{name})")
        subs[name] = sub
        return sub

    p = add("solve", cmd_solve, "solve the value grids for dimensions 1..n")
    p.add_argument("--kind", choices=["v", "u"], required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--b", type=float, default=0.0)
    p.add_argument("--budget", type=float, default=1.0)
    p.add_argument("--grid", type=int, default=257, help="nodes per axis (odd)")
    p.add_argument("--tol", type=float, default=1e-8)

    p = add("simulate", cmd_simulate, "Monte Carlo estimate under a policy")
    p.add_argument("--policy", required=True,
                   help="laggard | uniform | fixed:I | split:w1,...,wn | grid:PATH")
    p.add_argument("--x0", required=True, help="start point, comma-separated")
    p.add_argument("--b", type=float, default=0.0)
    p.add_argument("--budget", type=float, default=1.0)
    p.add_argument("--paths", type=int, default=10_000)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--horizon", type=float, default=100.0)
    p.add_argument("--horizons", help="comma-separated scheduled horizons")
    p.add_argument("--barrier", type=float)
    p.add_argument("--seed", type=int, default=verify_mod.DEFAULT_SEED)
    p.add_argument("--payoff", choices=sorted(_PAYOFFS), default="all")
    p.add_argument("--estimator", choices=sorted(_ESTIMATORS), default="horizon")
    p.add_argument("--threads", type=int, default=1)

    p = add("verify", cmd_verify, "run structural checks, write a report")
    p.add_argument("--check", choices=_ALL_CHECKS + ("all",), default="all")
    p.add_argument("--grid", action="append", help="grid artifact (repeatable)")
    p.add_argument("--noise-floor", type=float,
                   help="gradient noise floor (default 10/(m-1) per grid)")
    p.add_argument("--window", type=float, default=0.5,
                   help="corner window for the reversed-gradient search")
    p.add_argument("--points", help="probe points 'a,b;c,d' for mc-vs-pde")
    p.add_argument("--paths", type=int, help="override Monte Carlo path budgets")
    p.add_argument("--seed", type=int, default=verify_mod.DEFAULT_SEED)
    p.add_argument("--threads", type=int, default=1)

    p = add("export", cmd_export, "slice a grid artifact to CSV")
    p.add_argument("--grid", required=True, help="grid artifact path")
    p.add_argument("--what", choices=["value", "gradient", "policy"],
                   default="value")
    p.add_argument("--slice", action="append",
                   help="pin an axis, e.g. x2=1 (repeatable)")
    p.add_argument("--coords", choices=["orthant", "compact"],
                   default="orthant")

    return parser, subs


def main(argv=None) -> int:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        if args.config:
            args = _apply_config_file(parser, subs, args, argv)
        return args.func(args)
    except (ConfigError, RegimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT


if __name__ == "__main__":
    sys.exit(main())
