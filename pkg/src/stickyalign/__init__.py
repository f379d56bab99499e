"""Sticky-particle simulation of 1-D alignment dynamics, with a static
clustering predictor and a verification harness."""

from .exceptions import (
    ConfigError,
    InvalidEnsembleError,
    InvalidScenarioError,
    KernelRangeError,
    NumericalAbortError,
    RecordIOError,
    SingularKernelError,
    StickyAlignError,
)
from .kernels import (
    AllToAll,
    CompactBump,
    Exponential,
    Kernel,
    PowerLaw,
    Zero,
    kernel_from_config,
    kernel_to_config,
)
from .ensemble import Ensemble, QuantileFunction, natural_velocities
from .monotone import (
    PiecewiseLinear,
    cumulative_primitive,
    lower_convex_envelope,
    project_monotone,
    project_subspace,
    project_tangent_cone,
)
from .metrics import energy, metric_D, modulus_bound, velocity_semidistance, wasserstein
from .flux import (
    FluxAnalysis,
    FlockingThresholds,
    Forecast,
    Regime,
    RegionLabel,
    analyze,
    build_flux,
    flocking_thresholds,
    predicted_partition,
    separation_bound,
)
from .dynamics import (
    MergeEvent,
    SimulationRecord,
    StepResult,
    Tolerances,
    drift,
    simulate,
    step,
)
from .records import (
    ensemble_from_json,
    ensemble_to_json,
    load_record,
    read_ensemble_csv,
    save_flux_analysis,
    save_record,
    write_ensemble_csv,
)

__version__ = "0.1.0"
