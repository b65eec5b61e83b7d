"""Deterministic time functions: step functions on a grid and cubic polynomials."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, FitError


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing time points; ``points[0]`` is the model's time origin."""

    points: tuple[float, ...]

    def __post_init__(self):
        pts = tuple(float(p) for p in self.points)
        if len(pts) < 2:
            raise DomainError("a time grid needs at least two points")
        if not all(math.isfinite(p) for p in pts):
            raise DomainError("grid points must be finite")
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise DomainError("grid points must be strictly increasing")
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, start: float, stop: float, steps: int) -> "TimeGrid":
        return cls(tuple(np.linspace(start, stop, steps + 1)))

    @property
    def start(self) -> float:
        return self.points[0]

    @property
    def end(self) -> float:
        return self.points[-1]

    def __len__(self) -> int:
        return len(self.points)

    def array(self) -> np.ndarray:
        return np.asarray(self.points)

    def refines(self, other: "TimeGrid", rtol: float = 1e-12) -> bool:
        """True if every point of ``other`` is (numerically) a point of this grid."""
        mine = self.array()
        scale = max(1.0, abs(mine).max())
        for p in other.points:
            i = np.searchsorted(mine, p)
            near = [mine[j] for j in (i - 1, i) if 0 <= j < len(mine)]
            if not any(abs(q - p) <= rtol * scale for q in near):
                return False
        return True


@dataclass(frozen=True)
class PiecewiseConstantFn:
    """Right-continuous step function: ``values[i]`` holds on ``[t_i, t_{i+1})``.

    The right end of the grid takes the last value.
    """

    grid: TimeGrid
    values: tuple[float, ...]
    bounds: tuple[float, float] | None = None

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if len(vals) != len(self.grid) - 1:
            raise DomainError(
                f"expected {len(self.grid) - 1} values for {len(self.grid)} grid points, got {len(vals)}"
            )
        if not all(math.isfinite(v) for v in vals):
            raise DomainError("step-function values must be finite")
        if self.bounds is not None:
            lo, hi = self.bounds
            bad = [v for v in vals if not lo <= v <= hi]
            if bad:
                raise DomainError(f"values {bad} outside codomain [{lo}, {hi}]")
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, value: float, start: float, end: float, bounds=None) -> "PiecewiseConstantFn":
        return cls(TimeGrid((start, end)), (value,), bounds)

    @classmethod
    def from_breakpoints(
        cls, starts: Sequence[float], values: Sequence[float], end: float, bounds=None
    ) -> "PiecewiseConstantFn":
        return cls(TimeGrid(tuple(starts) + (end,)), tuple(values), bounds)

    def index(self, t: float) -> int:
        """Interval index containing ``t`` (cadlag; right end maps to the last interval)."""
        pts = self.grid.points
        if not pts[0] <= t <= pts[-1]:
            raise DomainError(f"t={t} outside [{pts[0]}, {pts[-1]}]")
        i = int(np.searchsorted(pts, t, side="right")) - 1
        return min(i, len(self.values) - 1)

    def __call__(self, t: float) -> float:
        return self.values[self.index(t)]

    def is_constant(self) -> bool:
        return all(v == self.values[0] for v in self.values)

    def integral(self, a: float, b: float) -> float:
        """Exact integral of the step function over ``[a, b]`` within the grid."""
        if b < a:
            return -self.integral(b, a)
        pts = self.grid.points
        if a < pts[0] or b > pts[-1]:
            raise DomainError(f"[{a}, {b}] outside [{pts[0]}, {pts[-1]}]")
        total = 0.0
        for lo, hi, v in zip(pts, pts[1:], self.values):
            left, right = max(lo, a), min(hi, b)
            if right > left:
                total += v * (right - left)
        return total

    def restrict(self, a: float, b: float) -> "PiecewiseConstantFn":
        """The same function on the sub-span ``[a, b]``."""
        if not self.grid.start <= a < b <= self.grid.end:
            raise DomainError(f"[{a}, {b}] not inside the grid span")
        inner = [p for p in self.grid.points if a < p < b]
        pts = (a, *inner, b)
        vals = tuple(self(p) for p in pts[:-1])
        return PiecewiseConstantFn(TimeGrid(pts), vals, self.bounds)

    def pieces(self, a: float, b: float) -> list[tuple[float, float, float]]:
        """(lo, hi, value) for each constant piece overlapping ``(a, b)``."""
        r = self.restrict(a, b)
        return list(zip(r.grid.points, r.grid.points[1:], r.values))

    def to_csv(self) -> str:
        """CSV with columns ``t_start,value``; a final row with an empty value marks the grid end."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_start", "value"])
        for t, v in zip(self.grid.points, self.values):
            w.writerow([repr(t), repr(v)])
        w.writerow([repr(self.grid.end), ""])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, bounds=None) -> "PiecewiseConstantFn":
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows or rows[-1]["value"] not in ("", None):
            raise DomainError("step-function CSV must end with a grid-end row")
        starts = [float(r["t_start"]) for r in rows]
        values = [float(r["value"]) for r in rows[:-1]]
        return cls(TimeGrid(tuple(starts)), tuple(values), bounds)


@dataclass(frozen=True)
class CubicPoly:
    """``a0 + a1 t + a2 t^2 + a3 t^3``."""

    coefficients: tuple[float, float, float, float]

    def __post_init__(self):
        c = tuple(float(a) for a in self.coefficients)
        if len(c) != 4 or not all(math.isfinite(a) for a in c):
            raise DomainError("a cubic needs exactly four finite coefficients")
        object.__setattr__(self, "coefficients", c)

    def __call__(self, t):
        return poly_eval(self, t)

    def to_json(self) -> str:
        return json.dumps(list(self.coefficients))

    @classmethod
    def from_json(cls, text: str) -> "CubicPoly":
        return cls(tuple(json.loads(text)))


def pc_eval(f: PiecewiseConstantFn, t: float) -> float:
    return f(t)


def poly_eval(p: CubicPoly, t):
    """Horner evaluation; ``t`` may be a scalar or an array."""
    a0, a1, a2, a3 = p.coefficients
    return ((a3 * t + a2) * t + a1) * t + a0


def poly_fit_cubic(ts: Iterable[float], ys: Iterable[float]) -> CubicPoly:
    """Least-squares cubic through ``(ts, ys)`` via QR of the power basis.

    Raises
    ------
    FitError
        Fewer than four points, mismatched lengths or a rank-deficient design
        (repeated abscissae).
    """
    t = np.asarray(list(ts), dtype=float)
    y = np.asarray(list(ys), dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise FitError("ts and ys must be one-dimensional and of equal length")
    if t.size < 4:
        raise FitError(f"need at least 4 points for a cubic, got {t.size}")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
        raise FitError("non-finite sample")
    if np.unique(t).size < 4:
        raise FitError("design matrix is rank deficient (fewer than 4 distinct times)")
    # centre and scale t so the powers stay well conditioned, then map back
    c = 0.5 * (t.max() + t.min())
    s = 0.5 * (t.max() - t.min())
    z = (t - c) / s
    design = np.vander(z, 4, increasing=True)
    q, r = np.linalg.qr(design)
    if np.min(np.abs(np.diag(r))) < 1e-12 * np.max(np.abs(np.diag(r))):
        raise FitError("design matrix is rank deficient")
    b = np.linalg.solve(r, q.T @ y)
    # b are coefficients in z = (t - c)/s; expand to powers of t
    coeffs = np.zeros(4)
    for k, bk in enumerate(b):
        # (t - c)^k / s^k
        term = np.polynomial.polynomial.polypow([-c, 1.0], k) / s**k
        coeffs[: term.size] += bk * term
    return CubicPoly(tuple(coeffs))
