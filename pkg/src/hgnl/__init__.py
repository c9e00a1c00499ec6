"""Frame-level feature aggregation: non-local attention, its hierarchical
group-wise variant, exact cost accounting, and a toy training harness.

The dense kernels run on a compiled extension when it is available and fall
back to NumPy otherwise; see :mod:`hgnl.backend`.
"""

from .aggregators import (
    AggregatorConfig,
    AggregatorParams,
    StageCounters,
    aggregate,
    aggregate_backward,
    avg_aggregate,
    max_aggregate,
    hgnl_forward,
    init_params,
    load_params,
    nl_forward,
    save_params,
)
from .backend import active_backend, available_backends
from .costmodel import CostReport, compare, madds, param_count
from .errors import (
    ConfigError,
    ContainerError,
    DimensionError,
    HgnlError,
    SamplingError,
    StateError,
    TrainingError,
)
from .ops import OpCounter

__version__ = "0.1.0"

__all__ = [
    "AggregatorConfig",
    "AggregatorParams",
    "StageCounters",
    "OpCounter",
    "CostReport",
    "aggregate",
    "aggregate_backward",
    "avg_aggregate",
    "max_aggregate",
    "nl_forward",
    "hgnl_forward",
    "init_params",
    "save_params",
    "load_params",
    "param_count",
    "madds",
    "compare",
    "active_backend",
    "available_backends",
    "HgnlError",
    "ConfigError",
    "ContainerError",
    "DimensionError",
    "SamplingError",
    "StateError",
    "TrainingError",
    "__version__",
]
