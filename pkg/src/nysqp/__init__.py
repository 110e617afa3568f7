"""Matrix-free interior-point proximal method of multipliers for separable convex QPs."""

from .errors import (
    DimensionError,
    IndefiniteError,
    InfeasibleError,
    NonpositiveScalingError,
    NumericalBreakdown,
    NysQPError,
    ParameterError,
    ParseError,
    SketchFailure,
    UnsupportedTaskError,
    ValidationError,
)
from .ippmm import SolveReport, SolverConfig, check_termination, initial_point, solve
from .linops import LinearOperator, MatvecCounter, NormalEquationsOperator, make_dense_operator, make_normal_operator
from .nystrom import NystromFactors, NystromPreconditioner, build_nystrom_preconditioner, nystrom_approximation
from .partial_cholesky import PartialCholeskyPreconditioner, build_partial_cholesky
from .pcg import PcgConfig, PcgResult, pcg_solve
from .problems import (
    PortfolioSpec,
    SvmSpec,
    build_portfolio_qp,
    build_svm_qp,
    read_libsvm,
    synthetic_covariance,
    synthetic_portfolio,
    synthetic_svm,
)
from .qp_model import BOX, FREE, NONNEG, IterateState, PmmParams, QpProblem, validate

__version__ = "0.1.0"
