"""Data ingestion, moving-variance series and the rolling forecast back-test."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .calibrate import WindowEstimates, calibrate_window, fit_parameter_polys, ParamPolys
from .errors import DomainError, FitError, IngestionError, NumericError
from .geometric import ForecastQuery, GsbmModel, cond_exp_forecast


@dataclass(frozen=True)
class RawSeries:
    years: np.ndarray
    totals: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.years, dtype=int)
        v = np.asarray(self.totals, dtype=float)
        if y.shape != v.shape or y.ndim != 1:
            raise DomainError("years and totals must be 1-d and of equal length")
        if y.size > 1 and np.any(np.diff(y) != 1):
            raise DomainError("years must increase by exactly 1")
        if np.any(~np.isfinite(v)) or np.any(v < 0):
            raise DomainError("totals must be finite and nonnegative")
        object.__setattr__(self, "years", y)
        object.__setattr__(self, "totals", v)

    def __len__(self) -> int:
        return self.years.size


@dataclass(frozen=True)
class VolSeries:
    """Trailing moving variance; ``values`` holds NaN where the variance is zero (gap)."""

    index: np.ndarray
    values: np.ndarray
    window_w: int = 0

    def __post_init__(self):
        idx = np.asarray(self.index, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if idx.shape != v.shape or idx.ndim != 1:
            raise DomainError("index and values must be 1-d and of equal length")
        if np.any(v[np.isfinite(v)] <= 0):
            raise DomainError("volatility values must be positive (use NaN for gaps)")
        object.__setattr__(self, "index", idx)
        object.__setattr__(self, "values", v)

    @property
    def gaps(self) -> np.ndarray:
        return ~np.isfinite(self.values)

    def __len__(self) -> int:
        return self.values.size

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "V"])
        for t, v in zip(self.index, self.values):
            w.writerow([_num(t), "" if not np.isfinite(v) else repr(float(v))])
        return buf.getvalue()


def _num(x: float) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


def ingest_csv(path) -> RawSeries:
    """Read a ``year,total_affected`` CSV.

    Every bad row is reported at once: unparsable or missing values,
    negative totals, and years that do not follow the previous row by one.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise IngestionError(f"{path}: not valid UTF-8") from exc
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip().lower() for h in next(reader)]
    except StopIteration:
        raise IngestionError(f"{path}: empty file") from None
    if header[:2] != ["year", "total_affected"]:
        raise IngestionError(f"{path}: expected header 'year,total_affected', got {','.join(header)}", [1])
    years, totals, bad, problems = [], [], [], []
    prev = None
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < 2 or not row[1].strip():
            bad.append(lineno)
            problems.append(f"line {lineno}: missing total")
            continue
        try:
            year = int(row[0].strip())
            total = float(row[1].strip())
        except ValueError:
            bad.append(lineno)
            problems.append(f"line {lineno}: cannot parse {row[:2]}")
            continue
        if not math.isfinite(total) or total < 0:
            bad.append(lineno)
            problems.append(f"line {lineno}: invalid total {total}")
            continue
        if prev is not None and year != prev + 1:
            kind = "duplicated" if year == prev else "non-consecutive"
            bad.append(lineno)
            problems.append(f"line {lineno}: {kind} year {year} after {prev}")
        prev = year
        years.append(year)
        totals.append(total)
    if bad:
        raise IngestionError(f"{path}: " + "; ".join(problems), bad)
    if not years:
        raise IngestionError(f"{path}: no data rows")
    return RawSeries(np.array(years), np.array(totals))


def read_vol_csv(path) -> VolSeries:
    """Read a ``t,V`` CSV as written by :meth:`VolSeries.to_csv` (empty V = gap)."""
    rows = list(csv.DictReader(io.StringIO(Path(path).read_text(encoding="utf-8"))))
    if not rows or "t" not in rows[0] or "V" not in rows[0]:
        raise IngestionError(f"{path}: expected header 't,V'", [1])
    idx, vals, bad = [], [], []
    for lineno, r in enumerate(rows, start=2):
        try:
            idx.append(float(r["t"]))
            vals.append(float(r["V"]) if (r["V"] or "").strip() else math.nan)
        except (TypeError, ValueError):
            bad.append(lineno)
    if bad:
        raise IngestionError(f"{path}: unparsable rows {bad}", bad)
    return VolSeries(np.array(idx), np.array(vals))


def moving_variance(raw: RawSeries, w: int = 12) -> VolSeries:
    """Unbiased variance of the trailing ``w`` totals, indexed by the window's last year."""
    if not isinstance(w, (int, np.integer)) or w < 2:
        raise DomainError(f"window w={w} must be an integer >= 2")
    if len(raw) < w:
        raise DomainError(f"series of length {len(raw)} shorter than window {w}")
    windows = np.lib.stride_tricks.sliding_window_view(raw.totals, w)
    v = windows.var(axis=1, ddof=1)
    v = np.where(v > 0, v, np.nan)
    return VolSeries(raw.years[w - 1 :].astype(float), v, int(w))


def descriptive_stats(x: Sequence[float]) -> tuple[float, float, float, float]:
    """Mean, unbiased std, moment skewness ``m3/m2^1.5`` and non-excess kurtosis ``m4/m2^2``."""
    a = np.asarray(x, dtype=float)
    if a.size < 4:
        raise DomainError("need at least 4 observations")
    mean = a.mean()
    d = a - mean
    m2 = np.mean(d**2)
    if not m2 > 0:
        raise DomainError("zero variance")
    m3 = np.mean(d**3)
    m4 = np.mean(d**4)
    return float(mean), float(a.std(ddof=1)), float(m3 / m2**1.5), float(m4 / m2**2)


@dataclass(frozen=True)
class Prediction:
    t: float  # index of the forecast origin
    target: float  # index of t + h
    v_hat: float
    v_real: float


def error_metrics(v_hat: Sequence[float], v_real: Sequence[float]) -> dict:
    """RMSE with range- and mean-normalised variants over finite pairs."""
    p = np.asarray(v_hat, dtype=float)
    r = np.asarray(v_real, dtype=float)
    ok = np.isfinite(p) & np.isfinite(r)
    p, r = p[ok], r[ok]
    if p.size == 0:
        nan = float("nan")
        return {"rmse": nan, "nrmse_range": nan, "nrmse_mean": nan, "n": 0, "degenerate": True}
    rmse = float(np.sqrt(np.mean((p - r) ** 2)))
    span = float(r.max() - r.min())
    mean = float(np.mean(r))
    degenerate = span == 0.0
    return {
        "rmse": rmse,
        "nrmse_range": rmse / span if not degenerate else 0.0,
        "nrmse_mean": rmse / mean if mean != 0 else float("nan"),
        "n": int(p.size),
        "degenerate": degenerate,
    }


@dataclass
class ForecastReport:
    h: int
    predictions: list[Prediction]
    rmse: float
    nrmse: float
    nrmse_mean: float
    baseline_nrmse: float
    L: int = 0
    w: int = 0
    gaps: int = 0
    baseline: dict = field(default_factory=dict)
    estimates: list[WindowEstimates] = field(default_factory=list, repr=False)
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "h": self.h,
            "L": self.L,
            "w": self.w,
            "predictions": [
                {"t": _jnum(p.t), "target": _jnum(p.target), "v_hat": _jnum(p.v_hat), "v_real": _jnum(p.v_real)}
                for p in self.predictions
            ],
            "rmse": _jnum(self.rmse),
            "nrmse_range": _jnum(self.nrmse),
            "nrmse_mean": _jnum(self.nrmse_mean),
            "gaps": self.gaps,
            "degenerate": self.degenerate,
            "baseline": self.baseline,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def plot_csv(self) -> str:
        """``t,v_real,v_hat,rel_error`` rows at the target index, for a relative-error plot."""
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["t", "v_real", "v_hat", "rel_error"])
        for p in self.predictions:
            rel = (p.v_hat - p.v_real) / p.v_real if np.isfinite(p.v_hat) and p.v_real else float("nan")
            wr.writerow([_num(p.target), _cell(p.v_real), _cell(p.v_hat), _cell(rel)])
        return buf.getvalue()


def _jnum(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _cell(x) -> str:
    return repr(float(x)) if np.isfinite(x) else ""


def persistence_baseline(series: VolSeries, h: int, origins: Sequence[int] | None = None) -> ForecastReport:
    """Forecast ``V_{t+h} = V_t``; ``origins`` are 1-based positions (default: all)."""
    if h < 1:
        raise DomainError("horizon h must be >= 1")
    v = series.values
    n = v.size
    if origins is None:
        origins = range(1, n - h + 1)
    preds = [
        Prediction(series.index[t - 1], series.index[t - 1 + h], v[t - 1], v[t - 1 + h]) for t in origins
    ]
    m = error_metrics([p.v_hat for p in preds], [p.v_real for p in preds])
    gaps = sum(1 for p in preds if not (np.isfinite(p.v_hat) and np.isfinite(p.v_real)))
    return ForecastReport(
        h=h,
        predictions=preds,
        rmse=m["rmse"],
        nrmse=m["nrmse_range"],
        nrmse_mean=m["nrmse_mean"],
        baseline_nrmse=m["nrmse_range"],
        w=series.window_w,
        gaps=gaps,
        degenerate=m["degenerate"],
    )


def forecast_window(values: np.ndarray, t: int, h: int, force_alpha: float | None = None):
    """Calibrate one window and forecast ``h`` steps past its last value.

    Time is measured from the window start: ``g0`` is the first value, the
    last value sits at ``s = L - 1`` and the target at ``L - 1 + h``.
    Returns ``(v_hat, estimates)``; ``v_hat`` is NaN for a flagged window.
    """
    est = calibrate_window(values, t)
    if not est.usable:
        return math.nan, est
    L = len(values)
    alpha = est.alpha_hat if force_alpha is None else force_alpha
    s = float(L - 1)
    model = GsbmModel.constant(est.mu_hat, est.sigma_hat, alpha, float(values[0]), 0.0, s + h)
    try:
        v_hat = cond_exp_forecast(ForecastQuery(s, s + h, float(values[-1]), model))
    except (NumericError, OverflowError, DomainError):
        return math.nan, est
    return v_hat, est


def _forecast_task(args):
    return forecast_window(*args)


def rolling_forecast(
    series: VolSeries, L: int = 12, h: int = 1, force_alpha: float | None = None, workers: int = 1
) -> ForecastReport:
    """Back-test the calibrate-then-forecast loop over ``t = L .. N - h`` (1-based).

    Windows that are flagged or whose realised target is a gap are counted in
    ``gaps`` and excluded from the metrics.  The persistence baseline is
    scored on the same origins.
    """
    if L < 5:
        raise DomainError("window length L must be >= 5")
    if h < 1:
        raise DomainError("horizon h must be >= 1")
    v = series.values
    n = v.size
    if n < L + h:
        raise DomainError(f"series of length {n} too short for L={L}, h={h}")
    ends = list(range(L, n - h + 1))
    tasks = [(v[t - L : t], t, h, force_alpha) for t in ends]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_forecast_task, tasks, chunksize=8))
    else:
        results = [_forecast_task(a) for a in tasks]
    preds, estimates = [], []
    for t, (v_hat, est) in zip(ends, results):
        estimates.append(est)
        preds.append(Prediction(series.index[t - 1], series.index[t - 1 + h], v_hat, v[t - 1 + h]))
    scored = [i for i, p in enumerate(preds) if np.isfinite(p.v_hat) and np.isfinite(p.v_real)]
    m = error_metrics([preds[i].v_hat for i in scored], [preds[i].v_real for i in scored])
    base = persistence_baseline(series, h, origins=[L + i for i in scored])
    return ForecastReport(
        h=h,
        predictions=preds,
        rmse=m["rmse"],
        nrmse=m["nrmse_range"],
        nrmse_mean=m["nrmse_mean"],
        baseline_nrmse=base.nrmse,
        L=L,
        w=series.window_w,
        gaps=len(preds) - len(scored),
        baseline={"method": "persistence", "rmse": _jnum(base.rmse), "nrmse_range": _jnum(base.nrmse),
                  "nrmse_mean": _jnum(base.nrmse_mean)},
        estimates=estimates,
        degenerate=m["degenerate"],
    )


def parameter_polys(report: ForecastReport) -> ParamPolys | None:
    """Cubic summaries of the window estimates, or None if too few usable windows."""
    try:
        return fit_parameter_polys(report.estimates)
    except FitError:
        return None
