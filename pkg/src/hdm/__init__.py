"""Heat diffusion model: DDPM whose forward and reverse processes are coupled
through the propagator of a theta-scheme discretization of the 2-D heat
equation with adiabatic boundaries."""

from .errors import (
    CursorUnderflow,
    DegenerateCovariance,
    DimensionMismatch,
    DivergenceDetected,
    HDMError,
    InvalidDistribution,
    InvalidParams,
    NotPositiveDefinite,
    SingularOperator,
)
from .forward import forward_jump, forward_kernel_params, forward_step
from .heat_operator import (
    Boundary,
    GridShape,
    OperatorSet,
    SchemeParams,
    apply_inverse_propagator,
    apply_propagator,
    build_operators,
    greens_function,
    random_operator,
    select_K,
    validate_against_greens,
)
from .metrics import fid, fid_from_moments, inception_score
from .posterior import (
    StepCache,
    StepMatrices,
    brute_force_posterior,
    coefficients,
    loss_weight,
    posterior_mean,
    posterior_sigma,
    step_matrices,
)
from .predictor import LinearPredictor, OraclePredictor
from .sampler import denoise_from, sample
from .schedule import NoiseSchedule, cursor_at, cursor_step_down, linear_schedule, matrix_power
from .trainer import TrainConfig, loss_term, train

__version__ = "0.1.0"
