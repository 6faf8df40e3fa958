"""Command-line front end.

Subcommands::

    cdgbn list
    cdgbn run --scenario dahlquist-j1 --L 10 --seed 0 --out results/
    cdgbn run --config my.toml --out results/
    cdgbn run --manifest results/dahlquist-j1.manifest.json --out replay/
    cdgbn sweep --out results/
    cdgbn plot results/*.csv --out figures/
    cdgbn dump-truth --scenario vdp --delta 0.5 --run 3 --out truth.csv

Config files are TOML with ``[scenario]``, ``[integrator]`` and ``[filter]``
tables (see README). Command-line flags override file values, which
override defaults. Exit status: 0 success, 2 usage or config error,
3 I/O error.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import platform
import sys
import time

import numpy as np

from . import __version__, bench, models
from .errors import ConfigurationError, FormatError
from .filters import FilterKind
from .integrate import IntegratorConfig
from .plot import group_rows, render_svg
from .sim import simulate_truth, truth_to_csv

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

EXIT_OK, EXIT_USAGE, EXIT_IO = 0, 2, 3


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# Scenario resolution
# --------------------------------------------------------------------------

_SCENARIO_KEYS = {
    "label", "model", "mu", "j", "sigma", "measurement_noise", "x0", "P0_diag",
    "t_end", "delta_grid", "mc_runs", "seed", "filters",
}
_INTEGRATOR_KEYS = {"rtol", "atol", "max_step", "budget", "newton_tol", "newton_max_iters"}
_FILTER_KEYS = {"kappa", "sigma_mode"}


def scenario_from_config(table: dict) -> models.Scenario:
    """Build a scenario from a ``[scenario]`` table."""
    unknown = set(table) - _SCENARIO_KEYS
    if unknown:
        raise ConfigurationError(f"unknown scenario keys: {', '.join(sorted(unknown))}")
    model = table.get("model")
    r = float(table.get("measurement_noise", 0.04))
    sigma = table.get("sigma")
    if model == "dahlquist":
        drift = models.dahlquist(float(table.get("mu", -1e4)), int(table.get("j", 1)))
        meas = models.scalar_identity_measurement(r)
        x0, p0 = [1.0], [1e-2]
        filters = bench.ALL_FILTERS
        if sigma is not None:
            raise ConfigurationError("sigma applies to the vanderpol model only")
    elif model == "vanderpol":
        drift = models.vanderpol(float(table.get("mu", 1e4)))
        if sigma is None:
            meas, filters = models.sum_measurement(r), bench.ALL_FILTERS
        else:
            meas, filters = models.ill_conditioned_measurement(float(sigma), r), bench.ILL_FILTERS
        x0, p0 = [1.0, 0.0], [0.05, 0.05]
    else:
        raise ConfigurationError(f"model must be 'dahlquist' or 'vanderpol', got {model!r}")
    filters = tuple(FilterKind.parse(f).value for f in table.get("filters", filters))
    return models.Scenario(
        drift=drift,
        measurement=meas,
        x0=table.get("x0", x0),
        P0=np.diag(np.asarray(table.get("P0_diag", p0), dtype=float)),
        t_end=float(table.get("t_end", 4.0)),
        delta_grid=tuple(table.get("delta_grid", bench.DELTA_GRID)),
        mc_runs=int(table.get("mc_runs", 10)),
        seed=int(table.get("seed", 0)),
        label=str(table.get("label", model)),
        sigma=None if sigma is None else float(sigma),
        filters=filters,
    )


def _load_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    unknown = set(data) - {"scenario", "integrator", "filter"}
    if unknown:
        raise ConfigurationError(f"{path}: unknown tables: {', '.join(sorted(unknown))}")
    for table, keys in (("integrator", _INTEGRATOR_KEYS), ("filter", _FILTER_KEYS)):
        bad = set(data.get(table, {})) - keys
        if bad:
            raise ConfigurationError(f"{path}: unknown [{table}] keys: {', '.join(sorted(bad))}")
    return data


def _parse_list(text, conv=float):
    if text is None:
        return None
    try:
        return [conv(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise ConfigurationError(f"cannot parse list {text!r}") from None


def resolve_plan(args) -> dict:
    """Merge flags over the config file over defaults into a replayable plan."""
    if getattr(args, "manifest", None):
        with open(args.manifest) as fh:
            manifest = json.load(fh)
        try:
            return manifest["plan"]
        except (KeyError, TypeError):
            raise ConfigurationError(f"{args.manifest}: not a run manifest") from None

    data = _load_toml(args.config) if getattr(args, "config", None) else {}
    plan = {"source": None, "scenario": None, "sigma": None, "config": None}
    if args.scenario and data.get("scenario"):
        raise UsageError("give either --scenario or a config file with a [scenario] table, not both")
    if data.get("scenario"):
        cfg_table = dict(data["scenario"])
        if args.sigma is not None:
            cfg_table["sigma"] = args.sigma
        plan["source"] = "config"
        plan["config"] = cfg_table
        sc = scenario_from_config(cfg_table)
    elif args.scenario:
        sc = bench.get_scenario(args.scenario, args.sigma)
        plan["source"] = "registry"
        plan["scenario"] = args.scenario
        plan["sigma"] = args.sigma
    else:
        raise UsageError("a scenario is required (--scenario, --config or --manifest)")

    integ = dict(data.get("integrator", {}))
    for flag, key in (("rtol", "rtol"), ("atol", "atol"), ("max_step", "max_step"), ("budget", "budget")):
        v = getattr(args, flag, None)
        if v is not None:
            integ[key] = v
    icfg = IntegratorConfig(
        rtol=float(integ.get("rtol", 1e-12)),
        atol=float(integ.get("atol", 1e-12)),
        max_step=float(integ.get("max_step", 0.1)),
        max_rhs_evals=int(integ.get("budget", 2_000_000)),
        newton_tol=float(integ.get("newton_tol", 1e-10)),
        newton_max_iters=int(integ.get("newton_max_iters", 20)),
    )
    filt = dict(data.get("filter", {}))
    if args.kappa is not None:
        filt["kappa"] = args.kappa
    if args.sigma_mode is not None:
        filt["sigma_mode"] = args.sigma_mode

    filters = _parse_list(args.filters, FilterKind.parse) or [FilterKind.parse(f) for f in sc.filters]
    deltas = _parse_list(args.delta) or list(sc.delta_grid)
    plan.update(
        label=sc.label,
        filters=[f.value for f in sorted(set(filters), key=bench.ALL_FILTERS.index)],
        L=int(args.L) if args.L is not None else sc.mc_runs,
        seed=int(args.seed) if args.seed is not None else sc.seed,
        deltas=[float(d) for d in deltas],
        integrator={
            "rtol": icfg.rtol, "atol": icfg.atol, "max_step": icfg.max_step,
            "budget": icfg.max_rhs_evals, "newton_tol": icfg.newton_tol,
            "newton_max_iters": icfg.newton_max_iters,
        },
        kappa=None if filt.get("kappa") is None else float(filt["kappa"]),
        sigma_mode=str(filt.get("sigma_mode", "mde")),
        record_wall=bool(getattr(args, "wall", False)),
    )
    if plan["L"] < 1:
        raise ConfigurationError("--L must be at least 1")
    if plan["sigma_mode"] not in ("mde", "bundle"):
        raise ConfigurationError("sigma_mode must be 'mde' or 'bundle'")
    return plan


def plan_scenario(plan: dict) -> models.Scenario:
    if plan["source"] == "config":
        return scenario_from_config(plan["config"])
    return bench.get_scenario(plan["scenario"], plan["sigma"])


def execute_plan(plan: dict, progress=None) -> list:
    sc = plan_scenario(plan)
    i = plan["integrator"]
    cfg = IntegratorConfig(
        rtol=i["rtol"], atol=i["atol"], max_step=i["max_step"], max_rhs_evals=i["budget"],
        newton_tol=i["newton_tol"], newton_max_iters=i["newton_max_iters"],
    )
    return bench.run_experiment(
        sc, filters=plan["filters"], L=plan["L"], seed=plan["seed"], cfg=cfg,
        deltas=plan["deltas"], kappa=plan["kappa"], sigma_mode=plan["sigma_mode"],
        record_wall=plan["record_wall"], progress=progress,
    )


def _versions() -> dict:
    import numba
    import scipy

    return {
        "cdgbn": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def _progress(row):
    a = "-" if row.armse is None else f"{row.armse:.6g}"
    print(
        f"{row.scenario} delta={row.delta:g} {row.filter.value} armse={a} "
        f"completed={row.completed}/{row.completed + row.failed}",
        file=sys.stderr,
        flush=True,
    )


def _run_plan(plan: dict, outdir: str, quiet: bool) -> None:
    os.makedirs(outdir, exist_ok=True)
    start = time.perf_counter()
    rows = execute_plan(plan, None if quiet else _progress)
    elapsed = time.perf_counter() - start
    csv_path = os.path.join(outdir, f"{plan['label']}.csv")
    bench.write_csv(rows, csv_path)
    manifest = {
        "plan": plan,
        "csv": os.path.basename(csv_path),
        "versions": _versions(),
        "run_info": {
            "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
            "elapsed_s": round(elapsed, 3),
            "failures": [
                {"filter": r.filter.value, "delta": r.delta, "reasons": r.failures}
                for r in rows if r.failures
            ],
        },
    }
    with open(os.path.join(outdir, f"{plan['label']}.manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(csv_path)


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_list(args) -> int:
    for sc in bench.registry():
        sigma = "" if sc.sigma is None else f" sigma={sc.sigma:g}"
        print(f"{sc.label:16s} {sc.drift.name}, {sc.measurement.name}{sigma}, filters={','.join(sc.filters)}")
    print(f"{'vdp-ill':16s} ill-conditioned Van der Pol at any --sigma")
    return EXIT_OK


def cmd_run(args) -> int:
    plan = resolve_plan(args)
    outdir = args.out or (os.path.dirname(args.manifest) if args.manifest else ".")
    _run_plan(plan, outdir, args.quiet)
    return EXIT_OK


def cmd_sweep(args) -> int:
    if args.scenario or args.config or args.sigma is not None:
        raise UsageError("sweep runs every registry scenario; drop --scenario/--config/--sigma")
    plans = []
    for sc in bench.registry():
        args.scenario, args.sigma = sc.label, sc.sigma
        if sc.sigma is not None:
            args.scenario = "vdp-ill"
        plans.append(resolve_plan(args))
        plans[-1]["label"] = sc.label
    for plan in plans:
        _run_plan(plan, args.out or ".", args.quiet)
    return EXIT_OK


def cmd_plot(args) -> int:
    rows = []
    for path in args.csv:
        rows.extend(bench.read_csv(path))
    outdir = args.out or "."
    os.makedirs(outdir, exist_ok=True)
    for label, group in group_rows(rows).items():
        sigma = group[0].sigma
        title = label if sigma is None else f"{label} (sigma={sigma:g})"
        path = os.path.join(outdir, f"{label}.svg")
        with open(path, "w", newline="\n") as fh:
            fh.write(render_svg(group, title))
        print(path)
    return EXIT_OK


def cmd_dump_truth(args) -> int:
    if args.delta is None:
        raise UsageError("dump-truth needs --delta")
    if args.config:
        data = _load_toml(args.config)
        sc = scenario_from_config(data.get("scenario", {}))
    elif args.scenario:
        sc = bench.get_scenario(args.scenario, args.sigma)
    else:
        raise UsageError("a scenario is required (--scenario or --config)")
    if args.seed is not None:
        from dataclasses import replace

        sc = replace(sc, seed=int(args.seed))
    deltas = _parse_list(args.delta)
    if len(deltas) != 1:
        raise UsageError("dump-truth takes a single --delta")
    truth = simulate_truth(sc, deltas[0], args.run)
    path = args.out or f"{sc.label}-delta{deltas[0]:g}-run{args.run}.csv"
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    truth_to_csv(truth, path)
    print(path)
    return EXIT_OK


def _add_common(p, with_out=True):
    p.add_argument("--scenario", help="registry scenario label (see `list`)")
    p.add_argument("--config", help="TOML scenario file")
    p.add_argument("--sigma", type=float, help="ill-conditioning parameter for vdp-ill")
    p.add_argument("--seed", type=int)
    p.add_argument("--delta", help="comma-separated sampling periods")
    if with_out:
        p.add_argument("--out", help="output directory")


def _add_experiment(p):
    p.add_argument("--filters", help="comma-separated subset, e.g. ekf,gbn-ekf")
    p.add_argument("--L", type=int, help="Monte-Carlo runs per sampling period")
    p.add_argument("--rtol", type=float)
    p.add_argument("--atol", type=float)
    p.add_argument("--max-step", dest="max_step", type=float)
    p.add_argument("--budget", type=int, help="rhs evaluations allowed per sampling interval")
    p.add_argument("--kappa", type=float, help="unscented spread parameter (default 3 - n)")
    p.add_argument("--sigma-mode", dest="sigma_mode", choices=("mde", "bundle"))
    p.add_argument("--wall", action="store_true", help="fill the wall_s column (makes the CSV nondeterministic)")
    p.add_argument("--quiet", action="store_true", help="no per-row progress lines")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdgbn", description="Continuous-discrete filter benchmarks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("list", help="show registry scenarios").set_defaults(func=cmd_list)

    p = sub.add_parser("run", help="run one scenario and write CSV plus manifest")
    _add_common(p)
    _add_experiment(p)
    p.add_argument("--manifest", help="replay a previous run from its manifest")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run every registry scenario")
    _add_common(p)
    _add_experiment(p)
    p.set_defaults(func=cmd_sweep, manifest=None)

    p = sub.add_parser("plot", help="SVG chart per scenario from ARMSE CSVs")
    p.add_argument("csv", nargs="+")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("dump-truth", help="write one reference run as CSV")
    _add_common(p)
    p.add_argument("--run", type=int, default=0, help="run index")
    p.set_defaults(func=cmd_dump_truth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"cdgbn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigurationError, FormatError) as exc:
        print(f"cdgbn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"cdgbn: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
