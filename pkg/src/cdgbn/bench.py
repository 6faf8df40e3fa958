"""Monte-Carlo ARMSE experiments over a grid of sampling periods.

For each sampling period ``delta`` the harness draws ``L`` reference runs
once and hands the same runs (same noise, same measurements) to every
filter. A filter run that fails is excluded from the ARMSE and counted.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import models
from .errors import ConfigurationError, FormatError
from .filters import FilterKind, run_filter
from .integrate import DEFAULT_CONFIG, IntegratorConfig
from .sim import simulate_truth

CSV_HEADER = ("scenario", "filter", "delta", "sigma", "armse", "completed", "failed", "wall_s")

DELTA_GRID = tuple(round(0.1 * k, 10) for k in range(1, 11))
SIGMAS = (1e-2, 1e-4, 1e-6, 1e-8)
ALL_FILTERS = tuple(FilterKind)
ILL_FILTERS = (FilterKind.CD_EKF, FilterKind.CD_GBN_EKF)


@dataclass(eq=False)
class ArmseRow:
    scenario: str
    filter: FilterKind
    delta: float
    sigma: float | None
    armse: float | None
    completed: int
    failed: int
    wall_s: float | None = None
    failures: dict = field(default_factory=dict)

    def key(self):
        return (self.scenario, self.delta, ALL_FILTERS.index(self.filter))


def armse(truths, runs) -> float | None:
    """Accumulated RMSE over the completed runs; ``None`` if there are none.

    ``sqrt(sum_l sum_k |x_ref(t_k) - x_hat(t_k)|^2 / (L K))`` where ``L`` counts
    completed runs only and ``k`` runs from 1 (the initial instant is excluded).
    """
    if len(truths) != len(runs):
        raise ConfigurationError("need one filter run per truth run")
    total = 0.0
    count = 0
    for tr, fr in zip(truths, runs):
        if not fr.completed:
            continue
        states = np.asarray(tr.states, dtype=float)
        means = np.asarray(fr.means, dtype=float)
        if means.shape != states.shape:
            raise ConfigurationError(f"filter run covers {means.shape[0]} of {states.shape[0]} samples")
        total += float(np.sum((states - means) ** 2))
        count += states.shape[0]
    if count == 0:
        return None
    return float(np.sqrt(total / count))


# --------------------------------------------------------------------------
# Scenario registry
# --------------------------------------------------------------------------


def dahlquist_scenario(j: int, mc_runs: int = 10, seed: int = 0) -> models.Scenario:
    return models.Scenario(
        drift=models.dahlquist(-1e4, j),
        measurement=models.scalar_identity_measurement(0.04),
        x0=[1.0],
        P0=[[1e-2]],
        t_end=4.0,
        delta_grid=DELTA_GRID,
        mc_runs=mc_runs,
        seed=seed,
        label=f"dahlquist-j{j}",
    )


def vanderpol_scenario(sigma: float | None = None, mc_runs: int = 10, seed: int = 0) -> models.Scenario:
    """Well-conditioned sum measurement, or the ill-conditioned pair for ``sigma``."""
    if sigma is None:
        meas, label, filters = models.sum_measurement(0.04), "vdp", ALL_FILTERS
    else:
        meas = models.ill_conditioned_measurement(sigma, 0.04)
        label, filters = f"vdp-ill-{sigma:.0e}", ILL_FILTERS
    return models.Scenario(
        drift=models.vanderpol(1e4),
        measurement=meas,
        x0=[1.0, 0.0],
        P0=np.diag([0.05, 0.05]),
        t_end=4.0,
        delta_grid=DELTA_GRID,
        mc_runs=mc_runs,
        seed=seed,
        label=label,
        sigma=sigma,
        filters=tuple(k.value for k in filters),
    )


def registry() -> list:
    """The four experiment families; the ill-conditioned one once per sigma."""
    out = [dahlquist_scenario(1), dahlquist_scenario(3), vanderpol_scenario()]
    out += [vanderpol_scenario(s) for s in SIGMAS]
    return out


def get_scenario(label: str, sigma: float | None = None) -> models.Scenario:
    """Look up a registry scenario; ``vdp-ill`` accepts any positive ``sigma``."""
    if label == "vdp-ill":
        if sigma is None:
            raise ConfigurationError("scenario vdp-ill needs a sigma")
        return vanderpol_scenario(sigma)
    for sc in registry():
        if sc.label == label:
            if sigma is not None and sc.sigma != sigma:
                raise ConfigurationError(f"scenario {label} does not take sigma={sigma:g}")
            return sc
    names = ", ".join(sc.label for sc in registry())
    raise ConfigurationError(f"unknown scenario {label!r} (known: {names}, vdp-ill)")


# --------------------------------------------------------------------------
# Experiments
# --------------------------------------------------------------------------


def run_experiment(
    scenario: models.Scenario,
    filters=None,
    L: int | None = None,
    seed: int | None = None,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
    deltas=None,
    kappa=None,
    sigma_mode: str = "mde",
    record_wall: bool = False,
    progress=None,
) -> list:
    """ARMSE rows for every (delta, filter) pair, in canonical order.

    Results depend only on the scenario, ``seed``, ``L`` and ``cfg``; the
    filter set and its order do not affect any individual row.
    ``progress``, if given, is called with each finished row.
    """
    if L is not None:
        scenario = replace(scenario, mc_runs=int(L))
    if seed is not None:
        scenario = replace(scenario, seed=int(seed))
    kinds = scenario.filters if filters is None else filters
    kinds = sorted({FilterKind.parse(k) for k in kinds}, key=ALL_FILTERS.index)
    if not kinds:
        raise ConfigurationError("no filters selected")
    grid = scenario.delta_grid if deltas is None else tuple(float(d) for d in deltas)
    for d in grid:
        if not 0.0 < d <= scenario.t_end + 1e-9:
            raise ConfigurationError(f"sampling period {d} is outside (0, t_end]")

    rows = []
    for d in sorted(grid):
        truths = [simulate_truth(scenario, d, r) for r in range(scenario.mc_runs)]
        for kind in kinds:
            start = time.perf_counter()
            runs = [run_filter(scenario, d, kind, tr, cfg, kappa=kappa, sigma_mode=sigma_mode) for tr in truths]
            wall = time.perf_counter() - start
            failures = {}
            for fr in runs:
                if not fr.completed:
                    failures[fr.reason.value] = failures.get(fr.reason.value, 0) + 1
            done = sum(fr.completed for fr in runs)
            row = ArmseRow(
                scenario.label, kind, d, scenario.sigma, armse(truths, runs),
                done, len(runs) - done, wall if record_wall else None, failures,
            )
            rows.append(row)
            if progress is not None:
                progress(row)
    rows.sort(key=ArmseRow.key)
    return rows


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r.scenario, r.filter.value, _fmt(r.delta), _fmt(r.sigma), _fmt(r.armse), r.completed, r.failed, _fmt(r.wall_s)])
    return buf.getvalue()


def write_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(rows_to_csv(rows))


def _opt_float(text, what, lineno):
    if text == "":
        return None
    try:
        v = float(text)
    except ValueError:
        raise FormatError(f"row {lineno}: {what} {text!r} is not a number") from None
    if not np.isfinite(v):
        raise FormatError(f"row {lineno}: {what} must be finite")
    return v


def parse_csv(text: str, source: str = "<csv>") -> list:
    """Parse ARMSE rows; malformed rows raise :class:`FormatError` naming the row."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError(f"{source}: empty file") from None
    if tuple(header) != CSV_HEADER:
        raise FormatError(f"{source}: row 1: expected header {','.join(CSV_HEADER)}")
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(CSV_HEADER):
            raise FormatError(f"{source}: row {lineno}: expected {len(CSV_HEADER)} fields, got {len(rec)}")
        try:
            kind = FilterKind.parse(rec[1])
        except ConfigurationError as exc:
            raise FormatError(f"{source}: row {lineno}: {exc}") from None
        delta = _opt_float(rec[2], "delta", lineno)
        if delta is None or delta <= 0:
            raise FormatError(f"{source}: row {lineno}: delta must be a positive number")
        a = _opt_float(rec[4], "armse", lineno)
        if a is not None and a < 0:
            raise FormatError(f"{source}: row {lineno}: armse must be non-negative")
        try:
            completed, failed = int(rec[5]), int(rec[6])
        except ValueError:
            raise FormatError(f"{source}: row {lineno}: completed/failed must be integers") from None
        rows.append(ArmseRow(rec[0], kind, delta, _opt_float(rec[3], "sigma", lineno), a, completed, failed, _opt_float(rec[7], "wall_s", lineno)))
    return rows


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return parse_csv(fh.read(), str(path))
