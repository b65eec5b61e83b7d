"""Skew Brownian motion with a time-dependent shape parameter.

Conventions: ``alpha`` is the probability weight of positive excursions, so
``alpha = 1/2`` is standard Brownian motion, ``alpha = 1`` reflection onto the
positive half-line and ``alpha = 0`` onto the negative one.

For constant ``alpha`` the transition density from ``x`` over a duration
``dt`` is::

    p(y) = phi_dt(y - x) + sign(y) (2 alpha - 1) phi_dt(|x| + |y|)

with ``phi_dt`` the centred normal density of variance ``dt``.  With a
piecewise-constant ``alpha`` the density is an integral over the time of the
last visit to zero, which :func:`density_inhom` evaluates by tanh-sinh
quadrature.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from . import rng as rngmod
from .errors import DomainError, NumericError
from .quadrature import tanh_sinh
from .timefunc import PiecewiseConstantFn, TimeGrid

MIN_DT = 1e-12


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha={alpha} outside [0, 1]")
    return alpha


def _normal_pdf(z, var):
    return np.exp(-0.5 * z * z / var) / np.sqrt(2.0 * math.pi * var)


@dataclass(frozen=True)
class SkewStepKernel:
    """One-step transition law of skew BM with constant shape ``alpha``."""

    alpha: float
    dt: float
    x0: float = 0.0

    def __post_init__(self):
        _check_alpha(self.alpha)
        if not self.dt > 0:
            raise DomainError(f"dt={self.dt} must be positive")
        if not math.isfinite(self.x0):
            raise DomainError("x0 must be finite")


def density_const(k: SkewStepKernel, y):
    """Closed-form transition density; ``y`` may be an array."""
    y = np.asarray(y, dtype=float)
    c = 2.0 * k.alpha - 1.0
    out = _normal_pdf(y - k.x0, k.dt) + np.sign(y) * c * _normal_pdf(abs(k.x0) + np.abs(y), k.dt)
    # clip rounding noise in the reflected cases
    out = np.maximum(out, 0.0)
    return out if out.ndim else float(out)


def _cdf(alpha, dt, x0, y):
    """Vectorised CDF of the constant-alpha kernel."""
    sd = np.sqrt(dt)
    a = np.abs(x0)
    c = 2.0 * alpha - 1.0
    base = ndtr((y - x0) / sd)
    neg = base - c * ndtr((y - a) / sd)
    pos = base - c * ndtr(-(a + y) / sd)
    return np.where(y <= 0.0, neg, pos)


def step_cdf_const(k: SkewStepKernel, y):
    """Distribution function of the constant-alpha kernel, via normal CDFs."""
    out = np.clip(_cdf(k.alpha, k.dt, k.x0, np.asarray(y, dtype=float)), 0.0, 1.0)
    return out if out.ndim else float(out)


def _invert(alpha, dt, x0, u, rtol=1e-12):
    """Solve ``_cdf(alpha, dt, x0, y) = u`` for arrays ``x0`` and ``u``.

    Bisection on ``x0 +- 10 sqrt(dt)`` to a coarse bracket, then Illinois
    (safeguarded secant); any stragglers are finished by bisection.
    """
    x0 = np.asarray(x0, dtype=float)
    u = np.asarray(u, dtype=float)
    x0, u = np.broadcast_arrays(x0, u)
    sd = math.sqrt(dt)
    tol = rtol * sd
    f = lambda y: _cdf(alpha, dt, x0, y) - u  # noqa: E731

    width = 10.0 * sd
    lo = x0 - width
    hi = x0 + width
    flo, fhi = f(lo), f(hi)
    for _ in range(6):
        bad_lo = flo > 0
        bad_hi = fhi < 0
        if not (bad_lo.any() or bad_hi.any()):
            break
        width *= 2.0
        lo = np.where(bad_lo, x0 - width, lo)
        hi = np.where(bad_hi, x0 + width, hi)
        flo, fhi = f(lo), f(hi)
    else:
        if (flo > 0).any() or (fhi < 0).any():
            raise NumericError("inverse-CDF bracket does not contain the root")

    while np.max(hi - lo) > 1e-3 * sd:
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        left = fm >= 0
        hi = np.where(left, mid, hi)
        fhi = np.where(left, fm, fhi)
        lo = np.where(left, lo, mid)
        flo = np.where(left, flo, fm)

    y = 0.5 * (lo + hi)
    done = np.zeros(y.shape, dtype=bool)
    side = np.zeros(y.shape, dtype=int)
    for _ in range(60):
        active = ~done
        denom = fhi - flo
        ok = denom > 0
        cand = np.where(ok, lo - flo * (hi - lo) / np.where(ok, denom, 1.0), 0.5 * (lo + hi))
        cand = np.clip(cand, lo, hi)
        fc = f(cand)
        step = np.abs(cand - y)
        y = np.where(active, cand, y)
        newly = active & ((step <= tol) | (fc == 0) | (hi - lo <= tol))
        done |= newly
        if done.all():
            return y
        upd = active & ~newly
        move_hi = upd & (fc > 0)
        move_lo = upd & (fc < 0)
        # Illinois: halve the residual of an endpoint retained twice in a row
        flo = np.where(move_hi & (side == 1), 0.5 * flo, flo)
        fhi = np.where(move_lo & (side == -1), 0.5 * fhi, fhi)
        hi = np.where(move_hi, cand, hi)
        fhi = np.where(move_hi, fc, fhi)
        lo = np.where(move_lo, cand, lo)
        flo = np.where(move_lo, fc, flo)
        side = np.where(move_hi, 1, np.where(move_lo, -1, side))

    while True:
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        left = fm >= 0
        hi = np.where(done | ~left, hi, mid)
        lo = np.where(done | left, lo, mid)
        y = np.where(done, y, 0.5 * (lo + hi))
        if np.all(done | (hi - lo <= tol)):
            return y


def sample_step(k: SkewStepKernel, rng: np.random.Generator) -> float:
    """Exact draw from the constant-alpha kernel by inverse transform."""
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    return float(_invert(k.alpha, k.dt, k.x0, u))


def sample_steps(k: SkewStepKernel, u) -> np.ndarray:
    """Inverse-transform many draws from given uniforms ``u`` in (0, 1)."""
    return _invert(k.alpha, k.dt, k.x0, np.asarray(u, dtype=float))


@dataclass(frozen=True)
class DensityQuery:
    """Arguments of the transition density ``p(t, y | s, x)``."""

    s: float
    t: float
    x: float
    y: float
    alpha_fn: PiecewiseConstantFn

    def __post_init__(self):
        if not self.s < self.t:
            raise DomainError(f"need s < t, got s={self.s}, t={self.t}")
        if not self.alpha_fn.grid.start <= self.s or not self.t <= self.alpha_fn.grid.end:
            raise DomainError("alpha_fn must cover [s, t]")
        if any(not 0.0 <= a <= 1.0 for a in self.alpha_fn.values):
            raise DomainError("alpha_fn values must lie in [0, 1]")


def _image_term(x, ys, T):
    same = (x * ys) > 0
    img = _normal_pdf(ys - x, T) - _normal_pdf(ys + x, T)
    return np.where(same, img, 0.0)


def density_inhom_batch(alpha_fn: PiecewiseConstantFn, s: float, t: float, x: float, ys, tol: float = 1e-9):
    """Transition density of the inhomogeneous skew BM at every point of ``ys``.

    The last-visit integral is split at the jumps of ``alpha`` so that every
    tanh-sinh panel has a smooth integrand away from its endpoints.  At
    ``y = 0`` the value is the average of the one-sided limits, which is
    ``phi_{t-s}(x)``.
    """
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    T = float(t - s)
    if T <= MIN_DT:
        if x == 0.0 and np.any(ys == 0.0):
            raise NumericError("density at x=y=0 diverges as t - s -> 0")
        raise DomainError(f"t - s = {T} too small")
    x = float(x)
    out = _image_term(x, ys, T)
    zero = ys == 0.0
    out = np.where(zero, _normal_pdf(x, T), out)

    yz = ys[~zero]
    if yz.size:
        sgn = np.sign(yz)
        y2 = (yz * yz)[:, None]
        logabs = np.log(np.abs(yz))[:, None]
        x2 = x * x
        acc = np.zeros(yz.size)
        for lo, hi, a in alpha_fn.pieces(s, t):
            weight = 1.0 + (2.0 * a - 1.0) * sgn
            live = weight > 0
            if not live.any():
                continue
            u_lo, u_hi = lo - s, hi - s
            rest = T - u_hi

            def integrand(da, db, u_lo=u_lo, rest=rest):
                u = u_lo + da
                v = rest + db
                with np.errstate(divide="ignore", over="ignore"):
                    expo = (
                        logabs
                        - y2 / (2.0 * v)
                        - x2 / (2.0 * u)
                        - 1.5 * np.log(v)
                        - 0.5 * np.log(u)
                    )
                return np.exp(expo)

            part = tanh_sinh(integrand, u_lo, u_hi, tol=tol)
            acc += np.where(live, weight, 0.0) * part / (2.0 * math.pi)
        out[~zero] += acc
    return np.maximum(out, 0.0)


def density_inhom(q: DensityQuery, tol: float = 1e-9) -> float:
    """Transition density ``p(t, y | s, x)`` by quadrature; see :func:`density_inhom_batch`."""
    return float(density_inhom_batch(q.alpha_fn, q.s, q.t, q.x, [q.y], tol=tol)[0])


def density_table(alpha_fn: PiecewiseConstantFn, s: float, t: float, x: float, ys) -> str:
    """CSV ``y,p`` of the density on a grid of ``ys``, for plotting."""
    p = density_inhom_batch(alpha_fn, s, t, x, ys)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["y", "p"])
    for yi, pi in zip(np.asarray(ys, dtype=float), p):
        w.writerow([repr(float(yi)), repr(float(pi))])
    return buf.getvalue()


@dataclass(frozen=True)
class SbmPath:
    grid: TimeGrid
    states: np.ndarray = field(repr=False)
    seed: int | None = None
    path_index: int = 0
    alpha: PiecewiseConstantFn | None = None

    def __post_init__(self):
        if len(self.states) != len(self.grid):
            raise DomainError("one state per grid point is required")

    def to_csv(self) -> str:
        buf = io.StringIO()
        if self.alpha is not None:
            bps = ",".join(f"{t!r}:{v!r}" for t, v in zip(self.alpha.grid.points, self.alpha.values))
            buf.write(f"# seed={self.seed} path={self.path_index} alpha={bps}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "x"])
        for t, x in zip(self.grid.points, self.states):
            w.writerow([repr(float(t)), repr(float(x))])
        return buf.getvalue()


def _step_alphas(alpha: PiecewiseConstantFn, grid: TimeGrid) -> list[float]:
    missing = [
        p for p in alpha.grid.points
        if grid.start < p < grid.end and not np.any(np.isclose(grid.array(), p, rtol=0, atol=1e-12 * max(1.0, abs(p))))
    ]
    if grid.start < alpha.grid.start or grid.end > alpha.grid.end:
        raise DomainError("simulation grid extends beyond the alpha grid")
    if missing:
        raise DomainError(f"simulation grid misses alpha breakpoints {missing}")
    return [alpha(t) for t in grid.points[:-1]]


def simulate_paths(
    alpha: PiecewiseConstantFn,
    grid: TimeGrid,
    x0: float,
    seed: int,
    n_paths: int,
    start: int = 0,
) -> np.ndarray:
    """Exact-step simulation of paths ``start .. start+n_paths-1``.

    Returns an array of shape ``(n_paths, len(grid))``.  The uniform used by
    path ``p`` at step ``j`` depends only on ``(seed, j, p)``.
    """
    alphas = _step_alphas(alpha, grid)
    dts = np.diff(grid.array())
    out = np.empty((n_paths, len(grid)))
    out[:, 0] = x0
    x = np.full(n_paths, float(x0))
    for j, (a, dt) in enumerate(zip(alphas, dts)):
        u = rngmod.step_uniforms(seed, j, start, n_paths)
        x = _invert(_check_alpha(a), float(dt), x, u)
        out[:, j + 1] = x
    return out


def simulate_path(
    alpha: PiecewiseConstantFn, grid: TimeGrid, x0: float, seed: int, path_index: int = 0
) -> SbmPath:
    states = simulate_paths(alpha, grid, x0, seed, 1, start=path_index)[0]
    return SbmPath(grid, states, seed=seed, path_index=path_index, alpha=alpha)


def azzalini_marginal_sample(alpha: float, t: float, rng: np.random.Generator, size=None):
    """``2 sqrt(alpha (1 - alpha)) W1_t + (2 alpha - 1) |W2_t|``.

    The marginal is skew-normal with scale ``sqrt(t)`` and shape
    ``(2 alpha - 1) / (2 sqrt(alpha (1 - alpha)))``.  At ``alpha`` in {0, 1}
    the first coefficient vanishes and the draw is ``-|W2|`` or ``|W2|``.
    """
    alpha = _check_alpha(alpha)
    if not t > 0:
        raise DomainError(f"t={t} must be positive")
    sd = math.sqrt(t)
    z1 = rng.standard_normal(size)
    z2 = rng.standard_normal(size)
    return 2.0 * math.sqrt(alpha * (1.0 - alpha)) * sd * z1 + (2.0 * alpha - 1.0) * sd * np.abs(z2)


def local_time_estimate(path: SbmPath, eps: float) -> float:
    """Occupation-time estimate ``(1/2eps) sum 1{|X_i| <= eps} dt_i`` of the local time at 0.

    Biased on coarse grids; meant as a diagnostic only.
    """
    if not eps > 0:
        raise DomainError("eps must be positive")
    if len(path.grid) < 101:
        raise DomainError("local-time estimate needs at least 100 steps")
    x = np.asarray(path.states)[:-1]
    dt = np.diff(path.grid.array())
    return float(np.sum((np.abs(x) <= eps) * dt) / (2.0 * eps))
