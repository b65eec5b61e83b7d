"""Rolling-window calibration of (mu, sigma, alpha) from a positive series.

Each window's one-step log-increments are fitted by a three-parameter
skew-normal law ``SN(xi, omega, lambda)``.  Under the Azzalini construction a
log-increment over ``dt`` is ``SN((mu - sigma^2/2) dt, sigma sqrt(dt), lambda)``
with ``delta = lambda / sqrt(1 + lambda^2) = 2 alpha - 1``, which gives the
map back to model parameters.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_ndtr

from .errors import DomainError, FitError
from .sbm import azzalini_marginal_sample
from .timefunc import CubicPoly, poly_fit_cubic

LAMBDA_MAX = 20.0
MAX_ITER = 2000
XATOL = 1e-8
_LOG2 = math.log(2.0)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_B = math.sqrt(2.0 / math.pi)
_MAX_SKEW = 0.99  # the family's skewness is bounded by ~0.9953


@dataclass(frozen=True)
class SnFit:
    xi: float
    omega: float
    lam: float
    loglik: float
    converged: bool


def sn_loglik(xi: float, omega: float, lam: float, data) -> float:
    """Skew-normal log-likelihood ``sum log[(2/omega) phi(z) Phi(lam z)]``, ``z = (x - xi)/omega``.

    ``log Phi`` is evaluated with an asymptotic expansion in the far left tail,
    so the result only becomes ``-inf`` when that expansion underflows too.
    """
    x = np.asarray(data, dtype=float)
    if x.size == 0:
        raise DomainError("empty sample")
    if not np.all(np.isfinite(x)):
        raise DomainError("non-finite sample")
    if not omega > 0:
        raise DomainError("omega must be positive")
    z = (x - xi) / omega
    return float(np.sum(_LOG2 - math.log(omega) - _HALF_LOG_2PI - 0.5 * z * z + log_ndtr(lam * z)))


def _moment_params(mean: float, sd: float, delta: float) -> tuple[float, float]:
    """(xi, omega) matching mean and sd for a given delta."""
    omega = sd / math.sqrt(1.0 - _B * _B * delta * delta)
    return mean - omega * delta * _B, omega


def sn_moments_start(data) -> SnFit:
    """Method-of-moments estimate (sample skewness clipped into the family's range)."""
    x = np.asarray(data, dtype=float)
    m = x.mean()
    sd = x.std()
    g1 = float(np.mean((x - m) ** 3) / sd**3)
    g1 = max(-_MAX_SKEW, min(_MAX_SKEW, g1))
    r = math.copysign((2.0 * abs(g1) / (4.0 - math.pi)) ** (1.0 / 3.0), g1)
    delta = r / (_B * math.sqrt(1.0 + r * r))
    lam = delta / math.sqrt(1.0 - delta * delta)
    lam = max(-LAMBDA_MAX, min(LAMBDA_MAX, lam))
    xi, omega = _moment_params(m, sd, lam / math.sqrt(1.0 + lam * lam))
    return SnFit(xi, omega, lam, sn_loglik(xi, omega, lam, x), False)


def sn_mle(data: Sequence[float]) -> SnFit:
    """Maximum-likelihood skew-normal fit by multi-start Nelder-Mead.

    Works on standardised data in ``(xi, log omega, lambda)`` with
    ``|lambda| <= 20``.  Starts: method of moments and the moment-consistent
    points at ``lambda_mom +- 2``.  A start counts as converged when the
    simplex shrinks below ``1e-8`` within 2000 iterations.

    Raises
    ------
    FitError
        If no start converges; ``best`` holds the best point found.
    """
    x = np.asarray(data, dtype=float)
    if x.size < 5:
        raise FitError(f"need at least 5 observations, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise DomainError("non-finite sample")
    m, sd = float(x.mean()), float(x.std())
    if not sd > 0:
        raise FitError("sample has zero variance")
    z = (x - m) / sd

    mom = sn_moments_start(z)
    starts = [mom.lam]
    for shift in (2.0, -2.0):
        starts.append(max(-LAMBDA_MAX, min(LAMBDA_MAX, mom.lam + shift)))

    n = z.size

    def nll(p):
        xi, logw, lam = p
        u = (z - xi) * math.exp(-logw)
        return -(n * (_LOG2 - logw - _HALF_LOG_2PI) - 0.5 * u.dot(u) + log_ndtr(lam * u).sum())

    bounds = [(None, None), (None, None), (-LAMBDA_MAX, LAMBDA_MAX)]
    results = []
    for lam0 in starts:
        xi0, w0 = _moment_params(0.0, 1.0, lam0 / math.sqrt(1.0 + lam0 * lam0))
        p0 = np.array([xi0, math.log(w0), lam0])
        simplex = [p0]
        for i in range(3):
            step = np.zeros(3)
            step[i] = 0.1 if not (i == 2 and lam0 + 0.1 > LAMBDA_MAX) else -0.1
            simplex.append(p0 + step)
        res = minimize(
            nll,
            p0,
            method="Nelder-Mead",
            bounds=bounds,
            options={
                "initial_simplex": np.array(simplex),
                "xatol": XATOL,
                "fatol": np.inf,
                "maxiter": MAX_ITER,
                "maxfev": 4 * MAX_ITER,
            },
        )
        results.append((res.success, -float(res.fun), res.x))

    def unscale(p, loglik, ok):
        xi, logw, lam = p
        lam = max(-LAMBDA_MAX, min(LAMBDA_MAX, float(lam)))
        # Jacobian of the standardisation shifts the log-likelihood by -n log(sd)
        return SnFit(m + sd * float(xi), sd * math.exp(float(logw)), lam, loglik - x.size * math.log(sd), ok)

    converged = [r for r in results if r[0] and math.isfinite(r[1])]
    if not converged:
        best = max(results, key=lambda r: r[1])
        raise FitError("no Nelder-Mead start converged", best=unscale(best[2], best[1], False))
    ok, ll, p = max(converged, key=lambda r: r[1])
    if ll < mom.loglik:
        # simplex stalled below its own start: fall back to the moment fit
        return unscale((mom.xi, math.log(mom.omega), mom.lam), mom.loglik, True)
    return unscale(p, ll, True)


def map_sn_to_gsbm(fit: SnFit, dt: float = 1.0) -> tuple[float, float, float]:
    """(mu, sigma, alpha) from a skew-normal fit of log-increments over ``dt``."""
    if not dt > 0:
        raise DomainError("dt must be positive")
    delta = fit.lam / math.sqrt(1.0 + fit.lam * fit.lam)
    alpha = 0.5 * (1.0 + delta)
    sigma = fit.omega / math.sqrt(dt)
    mu = fit.xi / dt + 0.5 * sigma * sigma
    return mu, sigma, alpha


@dataclass(frozen=True)
class WindowEstimates:
    """Estimates for the window ``[t - L + 1, t]`` (1-based series positions).

    ``flag`` is empty for a regular fit; otherwise ``"degenerate"`` (zero
    variance, no estimate), ``"near-degenerate"`` (Gaussian moment estimate
    of a numerically constant drift) or ``"fit-failed"``.
    """

    t: int
    mu_hat: float
    sigma_hat: float
    alpha_hat: float
    loglik: float
    flag: str = ""
    window: tuple[int, int] = (0, 0)

    @property
    def usable(self) -> bool:
        return not self.flag


# relative spread below which log-increments are treated as a pure drift
NEAR_DEGENERATE_RTOL = 1e-9


def calibrate_window(values: Sequence[float], t: int, dt: float = 1.0) -> WindowEstimates:
    """Fit one window of positive values (``t`` is the 1-based position of its last value)."""
    v = np.asarray(values, dtype=float)
    window = (t - v.size + 1, t)
    nan = float("nan")
    if not np.all(np.isfinite(v)) or np.any(v <= 0):
        return WindowEstimates(t, nan, nan, nan, nan, "degenerate", window)
    incr = np.diff(np.log(v))
    sd = float(incr.std())
    scale = max(float(np.abs(incr).max()), 1e-300)
    if sd == 0.0:
        return WindowEstimates(t, nan, nan, nan, nan, "degenerate", window)
    if sd <= NEAR_DEGENERATE_RTOL * scale:
        mean = float(incr.mean())
        sigma = sd / math.sqrt(dt)
        return WindowEstimates(t, mean / dt + 0.5 * sigma * sigma, sigma, 0.5, nan, "near-degenerate", window)
    try:
        fit = sn_mle(incr)
    except FitError:
        return WindowEstimates(t, nan, nan, nan, nan, "fit-failed", window)
    mu, sigma, alpha = map_sn_to_gsbm(fit, dt)
    return WindowEstimates(t, mu, sigma, alpha, fit.loglik, "", window)


def rolling_calibrate(
    series: Sequence[float], L: int, h: int = 1, dt: float = 1.0, workers: int = 1
) -> list[WindowEstimates]:
    """Estimates for every window end ``t = L .. N - h`` (1-based), advancing by one.

    With ``workers > 1`` windows are fitted in a process pool; results are
    identical and in window order either way.
    """
    v = np.asarray(series, dtype=float)
    n = v.size
    if L < 2:
        raise DomainError("window length L must be at least 2")
    if h < 0:
        raise DomainError("horizon h must be nonnegative")
    if n < L + 1:
        raise DomainError(f"series of length {n} too short for L={L}")
    ends = range(L, n - h + 1)
    windows = [v[t - L : t] for t in ends]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(calibrate_window, windows, ends, [dt] * len(ends), chunksize=8))
    return [calibrate_window(w, t, dt) for w, t in zip(windows, ends)]


@dataclass(frozen=True)
class ParamPolys:
    f_mu: CubicPoly
    f_sigma: CubicPoly
    f_alpha: CubicPoly

    def to_dict(self) -> dict:
        return {
            "mu": list(self.f_mu.coefficients),
            "sigma": list(self.f_sigma.coefficients),
            "alpha": list(self.f_alpha.coefficients),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ParamPolys":
        d = json.loads(text)
        return cls(CubicPoly(tuple(d["mu"])), CubicPoly(tuple(d["sigma"])), CubicPoly(tuple(d["alpha"])))


def fit_parameter_polys(estimates: Sequence[WindowEstimates]) -> ParamPolys:
    """Least-squares cubic per parameter over the unflagged ``(t, estimate)`` pairs."""
    good = [e for e in estimates if e.usable]
    if len(good) < 4:
        raise FitError(f"need at least 4 usable estimates, got {len(good)}")
    ts = [e.t for e in good]
    return ParamPolys(
        poly_fit_cubic(ts, [e.mu_hat for e in good]),
        poly_fit_cubic(ts, [e.sigma_hat for e in good]),
        poly_fit_cubic(ts, [e.alpha_hat for e in good]),
    )


def estimates_csv(estimates: Sequence[WindowEstimates]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "mu_hat", "sigma_hat", "alpha_hat", "loglik", "flag"])
    for e in estimates:
        cells = [e.mu_hat, e.sigma_hat, e.alpha_hat, e.loglik]
        w.writerow([e.t] + ["" if math.isnan(c) else repr(c) for c in cells] + [e.flag])
    return buf.getvalue()


def synthetic_series(
    mu: float, sigma: float, alpha: float, n: int, rng: np.random.Generator, g0: float = 1.0, dt: float = 1.0
) -> np.ndarray:
    """Positive series with i.i.d. log-increments ``(mu - sigma^2/2) dt + sigma Z``.

    ``Z`` is an Azzalini-construction draw at time ``dt``, i.e. each step
    restarts the skew driver from 0, which is the law the calibration fits.
    """
    z = azzalini_marginal_sample(alpha, dt, rng, size=n - 1)
    logv = np.concatenate([[0.0], np.cumsum((mu - 0.5 * sigma * sigma) * dt + sigma * z)])
    return g0 * np.exp(logv)
