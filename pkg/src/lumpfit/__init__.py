"""lumpfit: neural lumped-parameter thermal model fitting and open-loop control.

Pipeline: generate or ingest temperature/power run records, identify a
first-law energy-balance ODE whose heat-input closure is a small neural
network, then synthesize a power profile that drives the fitted model to a
target temperature.
"""

from .control import (
    ControlProblem,
    SynthesisConfig,
    SynthesisResult,
    control_loss,
    control_loss_and_gradient,
    power_profile,
    synthesize_control,
)
from .dataio import ExperimentRun, RawRecord, load_runs, resample, write_run_csv
from .gradients import (
    LossSpec,
    finite_difference_gradient,
    loss_and_gradient,
    pack_params,
    unpack_params,
)
from .model import (
    LumpedModelParams,
    PowerSignal,
    heat_input,
    heat_loss,
    heat_surface,
    load_model,
    rhs,
    save_model,
    simulate,
)
from .nn import MLPParams, init_glorot, swish
from .ode import (
    SolverConfig,
    TimeGrid,
    Trajectory,
    integrate_adaptive,
    integrate_fixed,
    sample_at,
)
from .synth import GroundTruthSpec, closed_form_linear, generate_ensemble
from .training import (
    FitReport,
    TrainConfig,
    augment_time_shift,
    evaluate,
    fit,
    mse_loss,
    run_protocol,
    shuffle_split,
)

__version__ = "0.1.0"
