"""Monte Carlo simulation and analytic design of linear measurement feedback
for a dispersively monitored qubit.

The package splits into:

* :mod:`qfb.model` -- single-step physics (readout sampling, measurement
  backaction, feedback rotation, dissipation),
* :mod:`qfb.chain` -- the classical filter + delay signal path,
* :mod:`qfb.engine` -- reproducible stochastic trajectory ensembles,
* :mod:`qfb.design` -- closed-form feedback design and the deterministic /
  diffusive mean-field cross-check models,
* :mod:`qfb.stats` -- ensemble means, steady-state histograms, peak and
  lobe detection, parameter sweeps,
* :mod:`qfb.cli` -- the ``qfb`` command-line harness.
"""

__version__ = "0.1.0"

from .chain import FeedbackChain, FeedbackLaw, validate_law
from .design import (
    DisturbanceReport,
    TargetSpec,
    design_ideal,
    design_nonideal,
    disturbance,
    integrate_mean_ode,
    integrate_sme_trajectory,
    max_radius,
    optimal_delta1,
    run_sme_ensemble,
    stationary_delta1_roots,
    stationary_state,
)
from .engine import (
    EnsembleResult,
    SteadySampling,
    TrajectoryConfig,
    TrajectoryRecord,
    run_ensemble,
    run_trajectory,
    trajectory_rng,
)
from .model import (
    BlochState,
    ModelParams,
    ReadoutSample,
    composite_step,
    dissipation_step,
    feedback_rotation,
    measurement_backaction,
    sample_readout,
)
from .stats import (
    EnsembleSummary,
    HistogramGrid,
    Lobe,
    MeanAccumulator,
    PeakReport,
    accumulate_mean,
    build_histogram,
    find_peak,
    summarize,
    sweep_chain,
    sweep_targets,
)

__all__ = [
    "__version__",
    "BlochState",
    "ModelParams",
    "ReadoutSample",
    "FeedbackLaw",
    "FeedbackChain",
    "TrajectoryConfig",
    "TrajectoryRecord",
    "SteadySampling",
    "EnsembleResult",
    "TargetSpec",
    "DisturbanceReport",
    "EnsembleSummary",
    "HistogramGrid",
    "PeakReport",
    "Lobe",
    "MeanAccumulator",
    "sample_readout",
    "measurement_backaction",
    "feedback_rotation",
    "dissipation_step",
    "composite_step",
    "validate_law",
    "run_trajectory",
    "run_ensemble",
    "trajectory_rng",
    "design_ideal",
    "design_nonideal",
    "max_radius",
    "stationary_state",
    "stationary_delta1_roots",
    "disturbance",
    "optimal_delta1",
    "integrate_mean_ode",
    "integrate_sme_trajectory",
    "run_sme_ensemble",
    "accumulate_mean",
    "build_histogram",
    "find_peak",
    "summarize",
    "sweep_targets",
    "sweep_chain",
]
