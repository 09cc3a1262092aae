"""Max-min fair transmit covariance design for MIMO interference channels."""

from .system import (
    LogBase,
    SystemConfig,
    SystemInstance,
    CovarianceSet,
    PrecoderSet,
    generate_channels,
    validate,
    save_instance,
    load_instance,
)
from .rates import (
    DegenerateDecoderError,
    interference_noise_cov,
    lmmse_decoder,
    rate_with_decoder,
    rate_lmmse,
    rate_from_cov,
    rate_schur,
    rate_vector,
    min_rate,
)
from .subproblem import MinorizerCoefficients, QcqpSolution, embed_real, kkt_residual
from .subproblem import solve as solve_subproblem
from .mm import (
    LiftedBlock,
    MmTrace,
    hermitian_sqrt,
    build_B,
    build_F,
    minorizer_coefficients,
    minorizer_value,
    mm_design_covariance,
    mm_design_precoder_fixed_d,
    extract_precoders,
    stationarity_residual,
)
from .robust import (
    UncertaintyModel,
    EstimatedChannels,
    worst_case_noise,
    effective_noise_cov,
    robust_rate,
    robust_min_rate,
    mm_design_robust,
    loss_parameter,
)
from .oracles import (
    waterfilling_single_user,
    grid_search_scalar_maxmin,
    projected_subgradient_qcqp,
)

__version__ = "0.1.0"
