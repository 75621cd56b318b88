"""Command-line front end: ``hidden-csma solve | sweep | simulate | validate``.

Exit codes: 0 success, 2 usage error, 3 invalid parameters, 4 solver
failure, 5 failed comparison.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import click
import numpy as np

from .metrics import metrics_report
from .params import ModelParams, ParameterError, PhysicalConfig, derive_L, derive_R
from .solver import SolverError, solve_model
from .support import FIELDS, support_probabilities_by_series

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_SOLVER = 4
EXIT_COMPARISON = 5

OUTPUT_DIR_ENV = "HIDDEN_CSMA_OUTPUT_DIR"

SWEEP_COLUMNS = (
    "p_tx", "p_OF", "pi_I", "pi_TX", "pi_RB", "T_I", "T_RB", "T_RXB", "T_RXP", "T_TXP",
    "p_IF", "G", "sync_flag", "status",
)
COMPARISON_COLUMNS = ("p_tx", "metric", "analytic", "simulated", "stderr", "rel_error")


class Failure(click.ClickException):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.exit_code = code


def fmt(x) -> str:
    """Shortest round-trip text for floats; blanks for missing values."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def out_path(path: Optional[str]) -> Optional[Path]:
    if path is None or path == "-":
        return None
    p = Path(path)
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base and not p.is_absolute():
        p = Path(base) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def emit(text: str, path: Optional[str]) -> None:
    p = out_path(path)
    if p is None:
        click.echo(text, nl=not text.endswith("\n"))
    else:
        p.write_text(text)


def read_config(path: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise click.UsageError(f"{path}:{n}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


# -- parameter handling ------------------------------------------------------


def params_from(p_tx, L, R, slot_seconds=None, frame_seconds=None, range_m=None, density=None) -> ModelParams:
    phys = [slot_seconds, frame_seconds, range_m, density]
    if any(v is not None for v in phys):
        if any(v is None for v in phys):
            raise ParameterError(["physical inputs need all of --slot-seconds --frame-seconds --range-m --density"])
        cfg = PhysicalConfig(slot_seconds, frame_seconds, range_m, density)
        L = derive_L(cfg) if L is None else L
        R = derive_R(cfg) if R is None else R
    missing = [n for n, v in (("--p-tx", p_tx), ("--L", L), ("--R", R)) if v is None]
    if missing:
        raise click.UsageError("missing " + ", ".join(missing))
    return ModelParams(p_tx, L, R)


def guarded(fn):
    """Translate library errors into exit codes."""
    import functools

    @functools.wraps(fn)
    def wrapper(*a, **kw):
        try:
            return fn(*a, **kw)
        except ParameterError as exc:
            raise Failure(f"invalid parameters: {exc}", EXIT_VALIDATION)
        except SolverError as exc:
            raise Failure(f"solver failed: {exc}", EXIT_SOLVER)

    return wrapper


def parse_p_list(p_tx: Optional[str], p_range: Optional[str], scale: str) -> list[float]:
    if p_tx and p_range:
        raise click.UsageError("give either --p-tx or --range, not both")
    if p_tx:
        try:
            vals = [float(v) for v in p_tx.split(",") if v.strip()]
        except ValueError as exc:
            raise click.UsageError(f"bad --p-tx list: {exc}")
    elif p_range:
        try:
            lo, hi, n = p_range.split(":")
            lo, hi, n = float(lo), float(hi), int(n)
        except ValueError:
            raise click.UsageError("--range must be start:stop:count")
        if n < 1:
            raise click.UsageError("--range count must be >= 1")
        vals = list(np.geomspace(lo, hi, n) if scale == "log" else np.linspace(lo, hi, n))
        vals = [float(v) for v in vals]
    else:
        vals = []
    if not vals:
        raise click.UsageError("the p_tx list is empty")
    bad = [v for v in vals if not (0.0 < v < 1.0)]
    if bad:
        raise ParameterError([f"p_tx values must lie in (0, 1): {bad}"])
    return vals


# -- commands ----------------------------------------------------------------


CONFIG_OPTION = click.option(
    "--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
    is_eager=True, expose_value=False, callback=lambda ctx, _p, v: _apply_config(ctx, v),
    help="Flat key=value file supplying defaults for any option.",
)


def _apply_config(ctx: click.Context, path):
    if not path:
        return
    cfg = read_config(path)
    # keys match option names case-insensitively (L, R are upper case)
    names = {}
    for p in ctx.command.params:
        if not p.name:
            continue
        names[p.name.lower()] = p.name
        for flag in getattr(p, "opts", ()):
            names[flag.lstrip("-").replace("-", "_").lower()] = p.name
    unknown = sorted(k for k in cfg if k.lower() not in names)
    if unknown:
        raise click.UsageError(f"unknown keys in {path}: {', '.join(unknown)}")
    mapped = {names[k.lower()]: v for k, v in cfg.items()}
    ctx.default_map = {**(ctx.default_map or {}), **mapped}


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Steady-state model and ring simulator of CSMA broadcast with hidden stations."""


PHYSICAL = [
    click.option("--slot-seconds", type=float, default=None),
    click.option("--frame-seconds", type=float, default=None),
    click.option("--range-m", type=float, default=None),
    click.option("--density", type=float, default=None, help="stations per metre"),
]


def physical(fn):
    for opt in reversed(PHYSICAL):
        fn = opt(fn)
    return fn


@main.command()
@CONFIG_OPTION
@click.option("--p-tx", "p_tx", type=float, default=None)
@click.option("--L", "L", type=int, default=None)
@click.option("--R", "R", type=int, default=None)
@physical
@click.option("--oracle", is_flag=True, help="Cross-check the closed forms against the series oracle.")
@click.option("--format", "fmt_", type=click.Choice(["text", "json"]), default="text")
@click.option("--out", default=None, help="Write the report here instead of stdout.")
@guarded
def solve(p_tx, L, R, slot_seconds, frame_seconds, range_m, density, oracle, fmt_, out):
    """Solve the fixed point and report every metric."""
    params = params_from(p_tx, L, R, slot_seconds, frame_seconds, range_m, density)
    model = solve_model(params)
    rep = metrics_report(model)
    d = rep.to_dict()
    d["support"] = model.support.as_dict()
    if oracle:
        series = support_probabilities_by_series(params.p_tx, params.L, params.R, model.p_OF, 1e-15)
        d["oracle_max_deviation"] = max(abs(getattr(series, k) - getattr(model.support, k)) for k in FIELDS)
    if fmt_ == "json":
        emit(json.dumps(d, indent=2), out)
        return
    t = rep.time
    lines = [
        f"p_tx={params.p_tx!r} L={params.L} R={params.R}",
        f"p_OF    = {rep.p_OF!r}",
        f"pi_I    = {rep.pi_I!r}",
        f"pi_TX   = {rep.pi_TX!r}",
        f"pi_RB   = {rep.pi_RB!r}",
        f"T_I     = {t.T_I_mean!r}",
        f"T_RB    = {t.T_RB_mean!r}",
        f"T_RXB   = {t.T_RXB_mean!r}",
        f"T_RXP   = {t.T_RXP_mean!r}",
        f"T_TXP   = {t.T_TXP_mean!r}",
        f"p_IF    = {rep.interference.p_IF!r}",
        f"G       = {rep.goodput.G!r}",
        f"sync    = {'yes' if rep.goodput.sync_regime else 'no'}",
        f"residual= {rep.diagnostics['residual']:.3e}",
    ]
    if rep.diagnostics["multiple_roots"]:
        lines.append(f"warning: multiple fixed points {rep.diagnostics['roots']}")
    if oracle:
        lines.append(f"oracle max deviation = {d['oracle_max_deviation']:.3e}")
    emit("\n".join(lines) + "\n", out)


def analytic_row(p_tx: float, L: int, R: int) -> dict:
    try:
        m = solve_model(ModelParams(p_tx, L, R))
        r = metrics_report(m)
    except (SolverError, ArithmeticError, ValueError) as exc:
        return {"p_tx": p_tx, "status": f"error: {type(exc).__name__}: {exc}"}
    t = r.time
    return {
        "p_tx": p_tx, "p_OF": r.p_OF, "pi_I": r.pi_I, "pi_TX": r.pi_TX, "pi_RB": r.pi_RB,
        "T_I": t.T_I_mean, "T_RB": t.T_RB_mean, "T_RXB": t.T_RXB_mean, "T_RXP": t.T_RXP_mean,
        "T_TXP": t.T_TXP_mean, "p_IF": r.interference.p_IF, "G": r.goodput.G,
        "sync_flag": r.goodput.sync_regime, "status": "ok",
    }


@dataclass(frozen=True)
class SimJob:
    p_tx: float
    L: int
    R: int
    N: int
    warmup: int
    slots: int
    seed: int


def simulated_row(job: SimJob) -> dict:
    from .simulator import SimConfig, run_simulation

    try:
        s = run_simulation(SimConfig(p_tx=job.p_tx, N=job.N, L=job.L, R=job.R,
                                     warmup_slots=job.warmup, measure_slots=job.slots, seed=job.seed))
    except (ParameterError, ValueError) as exc:
        return {"p_tx": job.p_tx, "status": f"error: {exc}"}
    row = {"p_tx": job.p_tx, "p_OF": s.p_OF_hat}
    for k in ("pi_I", "pi_TX", "pi_RB", "T_I", "T_RB", "T_RXB", "T_RXP", "T_TXP", "p_IF", "G"):
        row[k] = getattr(s, k).mean
    row["sync_flag"] = row["G"] < 1e-3
    row["status"] = "ok"
    row["_se"] = {k: getattr(s, k).se for k in ("pi_I", "pi_TX", "pi_RB", "T_RB", "T_RXP", "p_IF", "G")}
    return row


def _analytic_job(args):
    return analytic_row(*args)


def run_pool(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(workers) as ex:
        return list(ex.map(fn, jobs))          # map keeps input order


def table_text(rows: list[dict], columns, fmt_: str) -> str:
    clean = [{c: r.get(c) for c in columns} for r in rows]
    if fmt_ == "json":
        return json.dumps(clean, indent=1)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in clean:
        w.writerow([fmt(r[c]) if not isinstance(r[c], str) else r[c] for c in columns])
    return buf.getvalue()


@main.command()
@CONFIG_OPTION
@click.option("--L", "L", type=int, default=32, show_default=True)
@click.option("--R", "R", type=int, default=16, show_default=True)
@click.option("--p-tx", "p_tx", default=None, help="Comma-separated p_tx values.")
@click.option("--range", "p_range", default=None, help="start:stop:count")
@click.option("--scale", type=click.Choice(["lin", "log"]), default="log", show_default=True)
@click.option("--mode", type=click.Choice(["analytic", "simulate", "both"]), default="analytic", show_default=True)
@click.option("--format", "fmt_", type=click.Choice(["csv", "json"]), default="csv", show_default=True)
@click.option("--out", default=None)
@click.option("--seed-base", type=int, default=1, show_default=True)
@click.option("--n", "N", type=int, default=800, show_default=True)
@click.option("--warmup", type=int, default=50_000, show_default=True)
@click.option("--slots", type=int, default=500_000, show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
@guarded
def sweep(L, R, p_tx, p_range, scale, mode, fmt_, out, seed_base, N, warmup, slots, workers):
    """Tabulate metrics over a list of p_tx values."""
    from .simulator import seed_for

    ps = parse_p_list(p_tx, p_range, scale)
    ModelParams(ps[0], L, R)   # validates L and R up front
    if mode in ("simulate", "both"):
        jobs = [SimJob(p, L, R, N, warmup, slots, seed_for(seed_base, i)) for i, p in enumerate(ps)]
        sim_rows = run_pool(simulated_row, jobs, workers)
    if mode == "analytic":
        rows = run_pool(_analytic_job, [(p, L, R) for p in ps], workers)
        emit(table_text(rows, SWEEP_COLUMNS, fmt_), out)
    elif mode == "simulate":
        emit(table_text(sim_rows, SWEEP_COLUMNS, fmt_), out)
    else:
        from .validation import comparison_row

        ana = run_pool(_analytic_job, [(p, L, R) for p in ps], workers)
        rows = []
        for a, s in zip(ana, sim_rows):
            if a["status"] != "ok" or s["status"] != "ok":
                continue
            for k in ("pi_I", "pi_TX", "pi_RB", "T_RB", "T_RXP", "p_IF", "G"):
                rows.append(comparison_row(a["p_tx"], k, a[k], s[k], s["_se"][k]))
        emit(table_text(rows, COMPARISON_COLUMNS, fmt_), out)


@main.command()
@CONFIG_OPTION
@click.option("--p-tx", "p_tx", type=float, required=True)
@click.option("--n", "N", type=int, default=800, show_default=True)
@click.option("--L", "L", type=int, default=32, show_default=True)
@click.option("--R", "R", type=int, default=16, show_default=True)
@click.option("--warmup", type=int, default=50_000, show_default=True)
@click.option("--slots", type=int, default=500_000, show_default=True)
@click.option("--seed", type=int, default=None, help="64-bit seed; drawn from OS entropy if omitted.")
@click.option("--batches", type=int, default=20, show_default=True)
@click.option("--backend", type=click.Choice(["auto", "cython", "python"]), default="auto", show_default=True)
@click.option("--out", default=None, help="JSON report path (stdout if omitted).")
@click.option("--hist-dir", default=None, help="Directory for dtx.csv, df.csv and df_thin.csv.")
@guarded
def simulate(p_tx, N, L, R, warmup, slots, seed, batches, backend, out, hist_dir):
    """Run the ring simulator and write a JSON report."""
    from .simulator import SimConfig, run_simulation

    cfg = SimConfig(p_tx=p_tx, N=N, L=L, R=R, warmup_slots=warmup, measure_slots=slots,
                    seed=seed, n_batches=batches)
    rep = run_simulation(cfg, backend=None if backend == "auto" else backend)
    emit(rep.to_json(indent=1) + "\n", out)
    if hist_dir:
        d = out_path(str(Path(hist_dir) / "dtx.csv")).parent
        for which in ("dtx", "df", "df_thin"):
            (d / f"{which}.csv").write_text(rep.histogram_csv(which))


def _parse_corrupt(items) -> dict:
    out = {}
    for it in items:
        if "=" not in it:
            raise click.UsageError("--corrupt takes metric=factor")
        k, v = it.split("=", 1)
        out[k.strip()] = float(v)
    return out


@main.command()
@CONFIG_OPTION
@click.option("--suite", type=click.Choice(["identity", "oracle", "anchor", "sim", "all"]), default="all", show_default=True)
@click.option("--tolerance", type=float, default=0.05, show_default=True, help="Relative tolerance.")
@click.option("--floor", type=float, default=0.005, show_default=True, help="Absolute floor.")
@click.option("--tv-bound", type=float, default=0.02, show_default=True)
@click.option("--alpha", type=float, default=0.05, show_default=True, help="Chi-square significance.")
@click.option("--p-of-tol", type=float, default=0.05, show_default=True)
@click.option("--p-tx", "p_tx", default="0.01,0.05,0.1,0.2,0.34", show_default=True)
@click.option("--R", "Rs", default="8,16", show_default=True)
@click.option("--L", "L", type=int, default=32, show_default=True)
@click.option("--seeds", type=int, default=5, show_default=True)
@click.option("--seed-base", type=int, default=None)
@click.option("--n", "N", type=int, default=800, show_default=True)
@click.option("--warmup", type=int, default=50_000, show_default=True)
@click.option("--slots", type=int, default=500_000, show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--corrupt", multiple=True, help="metric=factor applied to analytic values (self-test).")
@click.option("--out", default=None, help="JSON report path.")
@guarded
def validate(suite, tolerance, floor, tv_bound, alpha, p_of_tol, p_tx, Rs, L, seeds, seed_base,
             N, warmup, slots, workers, corrupt, out):
    """Run the validation suites; the exit code reflects the overall result."""
    from . import validation as v

    try:
        profile = v.ToleranceProfile(tolerance, floor, tv_bound, alpha, p_of_tol)
    except ValueError as exc:
        raise Failure(f"invalid tolerance profile: {exc}", EXIT_VALIDATION)
    reports = []
    if suite in ("identity", "all"):
        reports.append(v.run_identity_suite())
    if suite in ("oracle", "all"):
        reports.append(v.run_oracle_suite())
    if suite in ("anchor", "all"):
        reports.append(v.run_anchor_suite())
    if suite in ("sim", "all"):
        ps = parse_p_list(p_tx, None, "lin")
        try:
            r_vals = [int(x) for x in Rs.split(",") if x.strip()]
        except ValueError:
            raise click.UsageError("--R takes a comma-separated list of integers")
        grid = [(p, r) for p in ps for r in r_vals]
        reports.append(v.run_sim_vs_analytic_suite(
            profile, grid, L=L, n_seeds=seeds,
            seed_base=v.DEFAULT_SEED_BASE if seed_base is None else seed_base,
            N=N, warmup=warmup, measure=slots, workers=workers, corrupt=_parse_corrupt(corrupt),
        ))
    for r in reports:
        for c in r.failures:
            click.echo(c.line())
        click.echo(r.summary())
    ok = all(r.passed for r in reports)
    if out:
        doc = {"passed": ok, "suites": [r.to_dict() for r in reports]}
        out_path(out).write_text(json.dumps(doc, indent=1))
    click.echo("PASS" if ok else "FAIL")
    if not ok:
        sys.exit(EXIT_COMPARISON)


if __name__ == "__main__":  # pragma: no cover
    main()
