"""Zeroth-order optimization toolkit built around low-rank gradient estimation.

Core pieces: dense ParamSet containers (linalg), seed-replay perturbation
sampling (sampling), the CGE/RGE/low-rank estimators (estimators), the lazy
subspace optimizer and its momentum variant (optimizers), an independent
subspace-method oracle (subspace), synthetic test problems (problems), and a
benchmark/verification CLI (cli).
"""

from .estimators import (
    EstimatorConfig,
    EvaluationError,
    cge,
    lge,
    lge_scalar,
    perturb_in_place,
    rge,
)
from .linalg import (
    LayerShape,
    ParamSet,
    frobenius_norm,
    numeric_rank,
    outer_product_scaled,
    top_singular_values,
)
from .optimizers import (
    LozoState,
    MomentumState,
    OptimizerConfig,
    RunRecord,
    StepError,
    lozo_m_step,
    lozo_step,
    project_momentum,
    run,
    state_footprint,
    vanilla_lge_step,
    zo_sgd_step,
)
from .problems import (
    LossOracle,
    ProblemSpec,
    gradient_rank_profile,
    make_logistic,
    make_planted_low_rank,
    make_problem,
    make_quadratic,
    make_tiny_mlp,
)
from .sampling import (
    PerturbationSketch,
    SamplerKind,
    derive_seed,
    make_sketch,
    regenerate,
    sample_gaussian,
    sample_v,
)
from .subspace import SubspaceState, least_squares_projection, run_subspace_method

__version__ = "0.1.0"
