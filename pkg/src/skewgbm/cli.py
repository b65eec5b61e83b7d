"""Command-line interface.

Every command prints one JSON summary line on stdout and writes bulk data
to the declared output files.  Exit codes: 0 success, 2 invalid arguments,
3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .calibrate import estimates_csv, fit_parameter_polys, rolling_calibrate
from .errors import DomainError, FitError, IngestionError, NumericError
from .geometric import ForecastQuery, GsbmModel, cond_exp_const_oracle, cond_exp_forecast, gsbm_levels
from .pipeline import descriptive_stats, ingest_csv, moving_variance, read_vol_csv, rolling_forecast
from .sbm import (
    DensityQuery,
    SkewStepKernel,
    density_const,
    density_inhom,
    density_table,
    simulate_paths,
)
from .timefunc import PiecewiseConstantFn, TimeGrid

log = logging.getLogger("skewgbm")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

DEFAULTS = {
    "seed": 0,
    "alpha": "0:0.5",
    "mu": "0:0",
    "sigma": "0:0.2",
    "g0": 1.0,
    "x0": 0.0,
    "t": 1.0,
    "s": 0.0,
    "steps": 64,
    "paths": 100,
    "x": 0.0,
    "ymin": -4.0,
    "ymax": 4.0,
    "n": 801,
    "L": 12,
    "h": 1,
    "w": 12,
    "workers": 1,
}

DEFAULT_OUT = {
    "simulate": "paths.csv",
    "density": "density.csv",
    "calibrate": "estimates.csv",
    "forecast": "report.json",
    "ingest": "vol.csv",
}


class UsageError(Exception):
    pass


def parse_breakpoints(text: str) -> tuple[list[float], list[float]]:
    """``"t0:v0,t1:v1,..."`` into (starts, values), starts strictly increasing."""
    starts, values = [], []
    for item in str(text).split(","):
        item = item.strip()
        if not item:
            continue
        try:
            t, v = item.split(":")
            starts.append(float(t))
            values.append(float(v))
        except ValueError:
            raise UsageError(f"bad breakpoint '{item}' in '{text}' (expected t:v)") from None
    if not starts:
        raise UsageError(f"empty breakpoint list '{text}'")
    if any(b <= a for a, b in zip(starts, starts[1:])):
        raise UsageError(f"breakpoint times must increase in '{text}'")
    return starts, values


def step_function(text: str, end: float, bounds=None) -> PiecewiseConstantFn:
    starts, values = parse_breakpoints(text)
    keep = [i for i, t in enumerate(starts) if t < end]
    if not keep:
        raise UsageError(f"no breakpoint of '{text}' before t={end}")
    return PiecewiseConstantFn.from_breakpoints(
        [starts[i] for i in keep], [values[i] for i in keep], end, bounds
    )


def _on_grid(fn: PiecewiseConstantFn, grid: TimeGrid) -> PiecewiseConstantFn:
    return PiecewiseConstantFn(grid, tuple(fn(t) for t in grid.points[:-1]), fn.bounds)


def _model(cfg: dict) -> GsbmModel:
    end = float(cfg["t"])
    fns = {
        "alpha": step_function(cfg["alpha"], end, (0.0, 1.0)),
        "mu": step_function(cfg["mu"], end),
        "sigma": step_function(cfg["sigma"], end),
    }
    origin = min(f.grid.start for f in fns.values())
    if any(f.grid.start != origin for f in fns.values()):
        raise UsageError("alpha, mu and sigma must start at the same time")
    pts = sorted({p for f in fns.values() for p in f.grid.points})
    grid = TimeGrid(tuple(pts))
    return GsbmModel(_on_grid(fns["mu"], grid), _on_grid(fns["sigma"], grid), _on_grid(fns["alpha"], grid), float(cfg["g0"]))


def _write(path: str, text: str) -> str:
    Path(path).write_text(text, encoding="utf-8", newline="")
    return path


def cmd_simulate(cfg: dict) -> dict:
    model = _model(cfg)
    steps, n_paths = int(cfg["steps"]), int(cfg["paths"])
    if steps < 1 or n_paths < 1:
        raise UsageError("steps and paths must be positive")
    grid = TimeGrid.uniform(model.grid.start, float(cfg["t"]), steps)
    states = simulate_paths(model.alpha, grid, float(cfg["x0"]), int(cfg["seed"]), n_paths)
    levels = gsbm_levels(model, grid, states)
    out = cfg.get("out") or DEFAULT_OUT["simulate"]
    lines = [
        f"# seed={int(cfg['seed'])} alpha={cfg['alpha']} mu={cfg['mu']} sigma={cfg['sigma']} g0={cfg['g0']}",
        "path,t,x,g",
    ]
    ts = [repr(float(t)) for t in grid.points]
    for p in range(n_paths):
        for j, t in enumerate(ts):
            lines.append(f"{p},{t},{float(states[p, j])!r},{float(levels[p, j])!r}")
    _write(out, "\n".join(lines) + "\n")
    return {"outputs": [out], "rows": n_paths * len(grid), "mean_terminal_g": float(levels[:, -1].mean())}


def cmd_density(cfg: dict) -> dict:
    s, t = float(cfg["s"]), float(cfg["t"])
    alpha = step_function(cfg["alpha"], t, (0.0, 1.0))
    if s < alpha.grid.start:
        raise UsageError("alpha breakpoints must start at or before s")
    n = int(cfg["n"])
    if n < 2 or not float(cfg["ymax"]) > float(cfg["ymin"]):
        raise UsageError("need n >= 2 and ymax > ymin")
    ys = np.linspace(float(cfg["ymin"]), float(cfg["ymax"]), n)
    # rounding of linspace must not miss y = 0 when it is nominally on the grid
    ys[np.abs(ys) < 1e-12 * max(abs(ys[0]), abs(ys[-1]))] = 0.0
    text = density_table(alpha, s, t, float(cfg["x"]), ys)
    out = cfg.get("out") or DEFAULT_OUT["density"]
    _write(out, text)
    p = np.array([float(r.split(",")[1]) for r in text.splitlines()[1:]])
    return {"outputs": [out], "points": n, "trapezoid_mass": float(np.trapezoid(p, ys))}


def _load_series(path: str):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().lower()
    if header.startswith("year,total_affected"):
        raw = ingest_csv(path)
        return raw.years.astype(float), raw.totals
    vol = read_vol_csv(path)
    return vol.index, vol.values


def cmd_calibrate(cfg: dict) -> dict:
    if not cfg.get("input"):
        raise UsageError("calibrate needs --input")
    _, values = _load_series(cfg["input"])
    est = rolling_calibrate(values, int(cfg["L"]), int(cfg["h"]), workers=int(cfg["workers"]))
    out = cfg.get("out") or DEFAULT_OUT["calibrate"]
    outputs = [_write(out, estimates_csv(est))]
    summary = {"windows": len(est), "flagged": sum(1 for e in est if not e.usable)}
    polys_path = cfg.get("polys") or str(Path(out).with_suffix(".polys.json"))
    try:
        polys = fit_parameter_polys(est)
        outputs.append(_write(polys_path, polys.to_json() + "\n"))
        summary["polys"] = polys.to_dict()
    except FitError as exc:
        summary["polys"] = None
        summary["polys_error"] = str(exc)
    summary["outputs"] = outputs
    return summary


def cmd_forecast(cfg: dict) -> dict:
    if not cfg.get("input"):
        raise UsageError("forecast needs --input")
    vol = read_vol_csv(cfg["input"])
    vol = type(vol)(vol.index, vol.values, int(cfg.get("w") or 0))
    report = rolling_forecast(
        vol, int(cfg["L"]), int(cfg["h"]), force_alpha=cfg.get("force_alpha"), workers=int(cfg["workers"])
    )
    out = cfg.get("out") or DEFAULT_OUT["forecast"]
    outputs = [_write(out, report.to_json() + "\n")]
    plot = cfg.get("plot") or str(Path(out).with_suffix(".plot.csv"))
    outputs.append(_write(plot, report.plot_csv()))
    est_path = cfg.get("estimates") or str(Path(out).with_suffix(".estimates.csv"))
    outputs.append(_write(est_path, estimates_csv(report.estimates)))
    d = report.to_dict()
    return {
        "outputs": outputs,
        "rmse": d["rmse"],
        "nrmse_range": d["nrmse_range"],
        "nrmse_mean": d["nrmse_mean"],
        "gaps": report.gaps,
        "baseline": report.baseline,
    }


def cmd_ingest(cfg: dict) -> dict:
    if not cfg.get("input"):
        raise UsageError("ingest needs --input")
    raw = ingest_csv(cfg["input"])
    vol = moving_variance(raw, int(cfg["w"]))
    out = cfg.get("out") or DEFAULT_OUT["ingest"]
    _write(out, vol.to_csv())
    summary = {"outputs": [out], "years": [int(raw.years[0]), int(raw.years[-1])], "length": len(raw),
               "vol_length": len(vol), "vol_gaps": int(vol.gaps.sum())}
    try:
        mean, std, skew, kurt = descriptive_stats(raw.totals)
        summary["stats"] = {"mean": mean, "std": std, "skewness": skew, "kurtosis": kurt}
    except DomainError:
        summary["stats"] = None
    return summary


def cmd_selftest(cfg: dict) -> dict:
    """Density, MGF and GBM-reduction oracles at their acceptance tolerances."""
    rng = np.random.default_rng(int(cfg["seed"]))
    worst = {"density": 0.0, "mgf": 0.0, "gbm": 0.0}
    for _ in range(25):
        a, x, y, dt = rng.uniform(0, 1), rng.uniform(-3, 3), rng.uniform(-4, 4), rng.uniform(0.1, 4)
        q = DensityQuery(0.0, dt, x, y, PiecewiseConstantFn.constant(a, 0.0, dt, (0.0, 1.0)))
        worst["density"] = max(worst["density"], abs(density_inhom(q) - density_const(SkewStepKernel(a, dt, x), y)))
    for _ in range(10):
        a, sig, dt, mu = rng.uniform(0, 1), rng.uniform(0.05, 0.6), rng.uniform(0.2, 3), rng.uniform(-0.2, 0.2)
        m = GsbmModel.constant(mu, sig, a, 1.0, 0.0, dt)
        got = cond_exp_forecast(ForecastQuery(0.0, dt, 1.0, m))
        ref = math.exp((mu - 0.5 * sig * sig) * dt) * cond_exp_const_oracle(a, sig, dt, 0.0)
        worst["mgf"] = max(worst["mgf"], abs(got / ref - 1))
        gs, s = rng.uniform(0.5, 2), rng.uniform(0, 2)
        m = GsbmModel.constant(mu, sig, 0.5, 1.0, 0.0, s + dt)
        got = cond_exp_forecast(ForecastQuery(s, s + dt, gs, m))
        worst["gbm"] = max(worst["gbm"], abs(got / (gs * math.exp(mu * dt)) - 1))
    limits = {"density": 1e-8, "mgf": 1e-5, "gbm": 1e-6}
    failed = [k for k in limits if not worst[k] <= limits[k]]
    if failed:
        raise NumericError(f"selftest tolerance breach: {failed} {worst}")
    return {"worst": worst, "limits": limits}


COMMANDS = {
    "simulate": cmd_simulate,
    "density": cmd_density,
    "calibrate": cmd_calibrate,
    "forecast": cmd_forecast,
    "ingest": cmd_ingest,
    "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skewgbm", description="Geometric skew Brownian motion toolkit.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON file with parameters; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", help="shape breakpoints t0:v0,t1:v1,...")
    p.add_argument("--mu", help="drift breakpoints")
    p.add_argument("--sigma", help="volatility breakpoints")
    p.add_argument("--g0", type=float)
    p.add_argument("--x0", type=float)
    p.add_argument("--t", type=float, help="horizon / density target time")
    p.add_argument("--s", type=float, help="density start time")
    p.add_argument("--steps", type=int)
    p.add_argument("--paths", type=int)
    p.add_argument("--x", type=float, help="density start state")
    p.add_argument("--ymin", type=float)
    p.add_argument("--ymax", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--input")
    p.add_argument("--out")
    p.add_argument("--plot")
    p.add_argument("--polys")
    p.add_argument("--estimates")
    p.add_argument("--L", type=int)
    p.add_argument("--h", type=int)
    p.add_argument("--w", type=int)
    p.add_argument("--force-alpha", dest="force_alpha", type=float)
    p.add_argument("--workers", type=int)
    return p


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(loaded) - set(vars(args)) - {"command"}
        if unknown:
            raise UsageError(f"unknown config keys {sorted(unknown)}")
        cfg.update(loaded)
    for k, v in vars(args).items():
        if v is not None and k != "config":
            cfg[k] = v
    return cfg


def run(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SKEWGBM_LOGLEVEL", "WARNING"), stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        summary = COMMANDS[cfg["command"]](cfg)
    except (UsageError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, FitError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, IngestionError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(json.dumps({"command": cfg["command"], "status": "ok", **summary}, sort_keys=True))
    return EXIT_OK


def main() -> None:
    sys.exit(run())
