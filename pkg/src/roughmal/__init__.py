"""roughmal: Gaussian rough paths, RDE flows, Malliavin derivative recursions
and the desk-scale experiments that verify their identities."""

__version__ = "0.1.0"

from .covariance import (
    BROWNIAN,
    FRACTIONAL,
    CovarianceModel,
    covariance_eval,
    increment_covariance,
    rho_variation_2d,
)
from .cameron_martin import CameronMartinCoords, cm_norm, default_q
from .errors import DomainError, ModelError, NumericalError, RegularityError, RoughmalError
from .grid import DyadicGrid, SampledPath
from .roughpath import (
    ControlEvaluation,
    GreedyPartition,
    RoughPathGrid,
    control_omega,
    evaluate_control,
    export_roughpath_json,
    greedy_n_alpha,
    lift_piecewise_linear,
    p_variation,
    roughpath_from_json,
    roughpath_to_json,
)
from .sampling import (
    GaussianSample,
    export_path_csv,
    piecewise_linear_path,
    sample_gaussian,
)
from .tensor_ops import chen_combine, chen_inverse, segment_signature
