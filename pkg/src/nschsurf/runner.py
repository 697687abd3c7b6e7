"""Run orchestration: scenario to artifacts.

A plain run walks the timestepper to the horizon and emits one ledger,
periodic field snapshots, and a manifest.  A continuation run delegates to
the floor schedule and emits one ledger per floor value plus the fixed
cross-schedule summary CSV.  The manifest echoes the full configuration
(so it re-loads as an equal RunConfig) followed by a [manifest] section
with versions, wall time, and the failure site if anything tripped.

Runs are deterministic per seed in single-thread mode: noise comes from a
seeded generator, solvers start cold, and all files are written by this
one thread in a fixed order.
"""

import os
import platform
import time
from dataclasses import dataclass, replace

import numpy as np
import scipy

from . import __version__
from .config import dump_config
from .continuation import ContinuationPlan, run_continuation
from .diagnostics import make_ledger_row, write_ledger
from .io import write_snapshot
from .scenarios import make_scenario
from .stepper import step

__all__ = ["RunResult", "run"]


@dataclass
class RunResult:
    exit_code: int
    out_dir: str
    ledgers: list
    summary: str
    manifest: str
    error: str


def run(config):
    """Execute one configured run; always leaves a manifest behind."""
    t_start = time.monotonic()
    out_dir = config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    ledgers = []
    summary = ""
    error = ""
    extra = {}
    try:
        grid = config.make_grid()
        spec = config.make_spec()
        state = make_scenario(config, grid=grid, spec=spec)
        if config.mode == "continuation":
            ledgers, summary, extra = _run_continuation(config, grid, spec,
                                                        state)
        else:
            ledgers = _run_plain(config, grid, spec, state)
        exit_code = 0
    except Exception as exc:                     # manifest records the site
        error = f"{type(exc).__name__}: {exc}"
        exit_code = 1
    manifest = os.path.join(out_dir, "manifest.txt")
    _write_manifest(manifest, config, t_start, error, extra)
    return RunResult(exit_code=exit_code, out_dir=out_dir, ledgers=ledgers,
                     summary=summary, manifest=manifest, error=error)


def _clipped(config_solver, t, t_final):
    h = min(config_solver.h, t_final - t)
    if h < config_solver.h:
        return replace(config_solver, h=h, h_min=min(config_solver.h_min, h))
    return config_solver


def _run_plain(config, grid, spec, state):
    solver = config.make_solver()
    out = config.out_dir
    rows = [make_ledger_row(grid, spec, 0.0, state.u.ux, state.u.uy,
                            state.phi.data, state.psi.data)]
    _snapshot_fields(config, grid, state, 0)
    k = 0
    end = config.t_final * (1.0 - 1e-12)
    while state.time < end:
        cfg = _clipped(solver, state.time, config.t_final)
        state, rep = step(state, spec, cfg)
        k += 1
        rows.append(make_ledger_row(grid, spec, state.time, state.u.ux,
                                    state.u.uy, state.phi.data,
                                    state.psi.data, report=rep))
        done = state.time >= end
        if config.snapshot_stride and (k % config.snapshot_stride == 0
                                       or done):
            _snapshot_fields(config, grid, state, k)
    path = os.path.join(out, config.ledger_name)
    write_ledger(rows, path)
    return [path]


def _snapshot_fields(config, grid, state, k):
    if not config.snapshot_stride:
        return
    out = config.out_dir
    for name, arr in (("phi", state.phi.data), ("psi", state.psi.data),
                      ("ux", state.u.ux), ("uy", state.u.uy)):
        write_snapshot(os.path.join(out, f"{name}_{k:06d}.nsch"),
                       arr, grid.lx, grid.ly)


def _run_continuation(config, grid, spec, state):
    plan = ContinuationPlan(
        grid=grid, spec=spec, config=config.make_solver(),
        t_final=config.t_final, phi0=state.phi.data, psi0=state.psi.data,
        u0=state.u, epsilons=config.epsilons)
    runs, report = run_continuation(plan)
    out = config.out_dir
    stem, ext = os.path.splitext(config.ledger_name)
    ledgers = []
    for run_ in runs:
        path = os.path.join(out, f"{stem}_eps_{run_.epsilon:g}{ext}")
        write_ledger(run_.ledger_rows, path)
        ledgers.append(path)
        if config.snapshot_stride:
            for name, arr in (("phi", run_.state.phi.data),
                              ("psi", run_.state.psi.data)):
                write_snapshot(
                    os.path.join(out, f"{name}_final_eps_{run_.epsilon:g}.nsch"),
                    arr, grid.lx, grid.ly)
    summary = os.path.join(out, "summary.csv")
    report.write_csv(summary)
    flagged = sorted(col for col, hit in report.flags.items() if hit)
    extra = {"blowup_flags": ",".join(flagged) if flagged else "none"}
    return ledgers, summary, extra


def _write_manifest(path, config, t_start, error, extra):
    lines = [dump_config(config), "[manifest]"]
    lines.append(f"status = {'failed' if error else 'ok'}")
    if error:
        lines.append(f"error = {error}")
    for key, val in extra.items():
        lines.append(f"{key} = {val}")
    lines.append(f"wall_time_s = {time.monotonic() - t_start:.3f}")
    lines.append(f"package_version = {__version__}")
    lines.append(f"python_version = {platform.python_version()}")
    lines.append(f"numpy_version = {np.__version__}")
    lines.append(f"scipy_version = {scipy.__version__}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
