"""Tail-averaged multipass mini-batch SGD for least squares, with its spectral filters."""
__version__ = "0.1.0"

from .errors import ConfigError, DivergenceError, StepSizeError
from .spectral import (
    FilterParams,
    SpectralCurve,
    apply_filter,
    curve,
    evaluate,
    filter_sup_gap,
    gd_filter,
    gd_residual,
    residual_sup_gap,
    tail_filter,
    tail_residual,
)
from .model import (
    Dataset,
    EmpiricalMoments,
    Problem,
    SourceVector,
    Spectrum,
    effective_dimension,
    empirical_moments,
    excess_risk,
    make_problem,
    make_source,
    make_spectrum,
    sample_dataset,
)
from .descent import (
    SgdConfig,
    TailAverager,
    batch_gd_run,
    batch_gd_spectral,
    computational_variance,
    minibatch_sgd_run,
    population_gd_tail_average,
    recursion_probe,
)
from .theory import BoundReport, ScheduleChoice, approx_error, bound_terms, saturation_curves, schedule, slope_fit

__all__ = [name for name in dir() if not name.startswith("_")]
