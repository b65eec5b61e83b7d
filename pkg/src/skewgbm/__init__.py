"""Geometric skew Brownian motion: simulation, transition densities, calibration and forecasting."""

from __future__ import annotations

from .calibrate import (
    ParamPolys,
    SnFit,
    WindowEstimates,
    calibrate_window,
    fit_parameter_polys,
    map_sn_to_gsbm,
    rolling_calibrate,
    sn_loglik,
    sn_mle,
    synthetic_series,
)
from .errors import DomainError, FitError, IngestionError, NumericError, QuadratureError, SkewGbmError
from .geometric import (
    ForecastQuery,
    GsbmModel,
    GsbmPath,
    cond_exp_const_oracle,
    cond_exp_forecast,
    gsbm_levels,
    gsbm_path,
)
from .pipeline import (
    ForecastReport,
    RawSeries,
    VolSeries,
    descriptive_stats,
    ingest_csv,
    moving_variance,
    persistence_baseline,
    rolling_forecast,
)
from .sbm import (
    DensityQuery,
    SbmPath,
    SkewStepKernel,
    azzalini_marginal_sample,
    density_const,
    density_inhom,
    local_time_estimate,
    sample_step,
    simulate_path,
    simulate_paths,
    step_cdf_const,
)
from .timefunc import CubicPoly, PiecewiseConstantFn, TimeGrid, pc_eval, poly_eval, poly_fit_cubic

__version__ = "0.1.0"
