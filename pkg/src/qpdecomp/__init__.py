"""qpdecomp: decompose quasiperiodically driven time series.

Splits a multivariate series into a quasiperiodic component with identified
generating frequencies and a chaotic residual learned in a kernel
eigenbasis, then reconstructs and predicts the series with a standalone
data-driven dynamical model.
"""

from .decompose import (
    QPModel,
    eval_chaotic,
    eval_periodic,
    fit_chaotic,
    fit_periodic,
    load_model,
    moving_average,
    reconstruct,
    relative_error,
    save_model,
)
from .errors import ConfigError, DataError, NumericalError, QpdecompError
from .freqfilter import (
    FrequencySelection,
    RkhsNormTable,
    merge_adjacent,
    rkhs_norm_table,
    select,
    threshold_diagnostics,
)
from .kernel import KernelSystem, gaussian_kernel, kernel_vector_at, pairwise_sqdist
from .pipeline import PipelineConfig, load_config, report_periods, run_pipeline
from .series import (
    DelayEmbedding,
    TimeSeries,
    delay_embed,
    load_csv,
    resample,
    standardize,
    window,
    write_csv,
)
# spectral.decompose is deliberately not re-exported here: the name would
# shadow the qpdecomp.decompose submodule; use qpdecomp.spectral.decompose
from .spectral import SpectralBasis, nystrom_extend, project, synthesize
from .synth import SimulationResult, SkewProductSystem, TorusDriver, simulate, standard_testbed

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "DelayEmbedding",
    "FrequencySelection",
    "KernelSystem",
    "NumericalError",
    "PipelineConfig",
    "QPModel",
    "QpdecompError",
    "RkhsNormTable",
    "SimulationResult",
    "SkewProductSystem",
    "SpectralBasis",
    "TimeSeries",
    "TorusDriver",
    "delay_embed",
    "eval_chaotic",
    "eval_periodic",
    "fit_chaotic",
    "fit_periodic",
    "gaussian_kernel",
    "kernel_vector_at",
    "load_config",
    "load_csv",
    "load_model",
    "merge_adjacent",
    "moving_average",
    "nystrom_extend",
    "pairwise_sqdist",
    "project",
    "reconstruct",
    "relative_error",
    "report_periods",
    "resample",
    "rkhs_norm_table",
    "run_pipeline",
    "save_model",
    "select",
    "simulate",
    "standard_testbed",
    "standardize",
    "synthesize",
    "threshold_diagnostics",
    "window",
    "write_csv",
]
