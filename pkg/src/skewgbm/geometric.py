"""Geometric skew Brownian motion: pathwise construction and conditional mean.

``G_t = g0 exp(int_0^t (mu - sigma^2/2) ds + int_0^t sigma dX_s)`` where ``X``
is a skew Brownian motion started at 0.  With piecewise-constant parameters
the stochastic integral is a finite sum over the driver's increments.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr, ndtr

from .errors import DomainError
from .quadrature import adaptive_gauss_legendre
from .sbm import SbmPath, density_inhom_batch
from .timefunc import PiecewiseConstantFn, TimeGrid

TAIL_RTOL = 1e-8


@dataclass(frozen=True)
class GsbmModel:
    """Drift, volatility and shape functions on a common grid, plus the initial level."""

    mu: PiecewiseConstantFn
    sigma: PiecewiseConstantFn
    alpha: PiecewiseConstantFn
    g0: float

    def __post_init__(self):
        if not (self.mu.grid == self.sigma.grid == self.alpha.grid):
            raise DomainError("mu, sigma and alpha must share one grid")
        if any(v <= 0 for v in self.sigma.values):
            raise DomainError("sigma must be positive")
        if any(not 0.0 <= a <= 1.0 for a in self.alpha.values):
            raise DomainError("alpha must lie in [0, 1]")
        if not (self.g0 > 0 and math.isfinite(self.g0)):
            raise DomainError("g0 must be positive and finite")

    @classmethod
    def constant(cls, mu: float, sigma: float, alpha: float, g0: float, start: float, end: float) -> "GsbmModel":
        grid = TimeGrid((start, end))
        return cls(
            PiecewiseConstantFn(grid, (mu,)),
            PiecewiseConstantFn(grid, (sigma,)),
            PiecewiseConstantFn(grid, (alpha,), (0.0, 1.0)),
            g0,
        )

    @property
    def grid(self) -> TimeGrid:
        return self.mu.grid

    def log_drift(self, a: float, b: float) -> float:
        """``int_a^b (mu - sigma^2/2) dt``."""
        sq = PiecewiseConstantFn(self.sigma.grid, tuple(v * v for v in self.sigma.values))
        return self.mu.integral(a, b) - 0.5 * sq.integral(a, b)


@dataclass(frozen=True)
class GsbmPath:
    grid: TimeGrid
    levels: np.ndarray = field(repr=False)
    driver: SbmPath | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "g"])
        for t, g in zip(self.grid.points, self.levels):
            w.writerow([repr(float(t)), repr(float(g))])
        return buf.getvalue()


def gsbm_levels(model: GsbmModel, grid: TimeGrid, states: np.ndarray) -> np.ndarray:
    """Levels for driver states of shape ``(..., len(grid))``.

    Parameters are read on each step's left endpoint; the driver grid must
    contain every model breakpoint inside its span.
    """
    pts = grid.array()
    for p in model.grid.points:
        if pts[0] < p < pts[-1] and not np.any(np.abs(pts - p) <= 1e-12 * max(1.0, abs(p))):
            raise DomainError(f"driver grid misses model breakpoint {p}")
    if pts[0] < model.grid.start or pts[-1] > model.grid.end:
        raise DomainError("driver grid extends beyond the model grid")
    states = np.asarray(states, dtype=float)
    mu = np.array([model.mu(t) for t in pts[:-1]])
    sig = np.array([model.sigma(t) for t in pts[:-1]])
    dt = np.diff(pts)
    incr = (mu - 0.5 * sig * sig) * dt + sig * np.diff(states, axis=-1)
    logg = np.concatenate([np.zeros(states.shape[:-1] + (1,)), np.cumsum(incr, axis=-1)], axis=-1)
    return model.g0 * np.exp(logg)


def gsbm_path(model: GsbmModel, driver: SbmPath) -> GsbmPath:
    return GsbmPath(driver.grid, gsbm_levels(model, driver.grid, driver.states), driver)


@dataclass(frozen=True)
class ForecastQuery:
    """Forecast ``E[G_t | G_s = gs]``; sigma must be constant from the model origin to ``t``."""

    s: float
    t: float
    gs: float
    model: GsbmModel

    def __post_init__(self):
        if not self.s < self.t:
            raise DomainError(f"need s < t, got s={self.s}, t={self.t}")
        if not (self.gs > 0 and math.isfinite(self.gs)):
            raise DomainError("observed level gs must be positive")
        origin = self.model.grid.start
        if not origin <= self.s or self.t > self.model.grid.end:
            raise DomainError("[s, t] must lie within the model grid")
        if not self.model.sigma.restrict(origin, self.t).is_constant():
            raise DomainError("sigma must be constant on [0, t]")


def _tail_bound(sigma: float, T: float, half_width: float) -> float:
    """Bound on ``int_{|y - x| > W} e^{sigma (y - x)} p(y) dy`` using ``p <= 2 phi_T(y - x)``."""
    sd = math.sqrt(T)
    return 2.0 * math.exp(0.5 * sigma * sigma * T) * (
        ndtr(-(half_width - sigma * T) / sd) + ndtr(-(half_width + sigma * T) / sd)
    )


def tilted_mass(alpha: PiecewiseConstantFn, s: float, t: float, x: float, sigma: float, rtol: float = 1e-10) -> float:
    """``int e^{sigma (y - x)} p(t, y | s, x) dy`` with the quadrature density.

    The window ``x +- (sigma T + 12) sqrt(T)`` is widened until the tail bound
    falls below ``1e-8`` of the integral; ``sigma = 0`` gives the total mass.
    """
    T = t - s
    sd = math.sqrt(T)
    sigma = float(sigma)
    half = (abs(sigma) * T + 12.0) * sd

    def g(ys):
        return np.exp(sigma * (ys - x)) * density_inhom_batch(alpha, s, t, x, ys)

    lo, hi = x - half, x + half
    cuts = [lo] + ([0.0] if lo < 0.0 < hi else []) + [hi]
    total = 0.0
    for a, b in zip(cuts, cuts[1:]):
        total += adaptive_gauss_legendre(g, a, b, rtol=rtol, atol=1e-14)
    while _tail_bound(abs(sigma), T, half) > TAIL_RTOL * total:
        # extend on both sides until the neglected mass is negligible
        new = half * 1.5
        for a, b in ((x - new, x - half), (x + half, x + new)):
            cuts = [a] + ([0.0] if a < 0.0 < b else []) + [b]
            for c0, c1 in zip(cuts, cuts[1:]):
                total += adaptive_gauss_legendre(g, c0, c1, rtol=rtol, atol=1e-14)
        half = new
    return total


def cond_exp_forecast(q: ForecastQuery) -> float:
    """Conditional mean ``E[G_t | G_s = gs]`` for constant sigma.

    Implemented as::

        gs exp(int_0^t (mu - sigma^2/2) - log(gs/g0)) int e^{sigma y} p(t, y | s, F(gs)) dy

    with ``F(gs) = (log(gs/g0) - int_0^s (mu - sigma^2/2)) / sigma`` the
    driver state implied by the observed level.  The factor ``e^{sigma F}``
    is pulled out of the integral and combined in log space.
    """
    m = q.model
    origin = m.grid.start
    sigma = m.sigma(origin)
    log_ratio = math.log(q.gs / m.g0)
    x = (log_ratio - m.log_drift(origin, q.s)) / sigma
    log_pref = math.log(q.gs) + m.log_drift(origin, q.t) - log_ratio
    mass = tilted_mass(m.alpha, q.s, q.t, x, sigma)
    return math.exp(log_pref + sigma * x) * mass


def cond_exp_const_oracle(alpha: float, sigma: float, dt: float, x: float) -> float:
    """``int e^{sigma y} p(y) dy`` for the constant-alpha kernel from ``x``, in closed form.

    Gaussian part: ``e^{sigma x + sigma^2 dt / 2}``.  The skew part splits
    over the two half-lines into normal-CDF terms.
    """
    if not 0.0 <= alpha <= 1.0:
        raise DomainError("alpha outside [0, 1]")
    if not dt > 0:
        raise DomainError("dt must be positive")
    sd = math.sqrt(dt)
    a = abs(x)
    c = 2.0 * alpha - 1.0
    half_var = 0.5 * sigma * sigma * dt
    gauss = math.exp(sigma * x + half_var)
    pos = math.exp(-sigma * a + half_var + log_ndtr((sigma * dt - a) / sd))
    neg = math.exp(sigma * a + half_var + log_ndtr((-sigma * dt - a) / sd))
    return gauss + c * (pos - neg)
