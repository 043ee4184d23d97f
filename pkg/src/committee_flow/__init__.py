"""Online SGD and order-parameter ODEs for two-layer teacher-student networks."""

from .activations import Activation
from .errors import (
    CommitteeFlowError,
    DimensionError,
    DivergenceError,
    DomainError,
    IdxFormatError,
)
from .networks import (
    MacroState,
    NetworkParams,
    embed_gram,
    forward,
    gen_error_analytic,
    gen_error_mc,
    measure_macro,
    networks_from_macro,
)
from .moments import CovBlock, i2, i3, i4, j2, mc_moment
from .simulate import (
    FixedSet,
    GaussianStream,
    IdxImages,
    Sample,
    SimRecord,
    TrainConfig,
    balance_update,
    init_student,
    load_idx,
    make_fixed_set,
    make_teacher,
    run,
    sgd_step,
    theorem1_deviation,
)
from .ode import (
    Denoising,
    DenoisingState,
    OdeConfig,
    Perceptron,
    ReducedScm,
    ReducedScmState,
    denoising_rhs,
    embed_denoising,
    embed_scm,
    full_rhs,
    integrate,
    perturbative_eg,
    reduced_scm_rhs,
)
from .asymptotics import (
    eg_both_erf_m1,
    eg_perceptron,
    eg_scm_erf_small_eta,
    eg_scm_linear,
    eta_max,
)

__version__ = "0.1.0"
