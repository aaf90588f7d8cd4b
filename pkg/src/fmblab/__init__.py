"""fmblab: learning updates decomposed into metric x force + bias + noise.

An exact Price-equation engine over finite weighted populations, the
information-geometric measures that fall out of it, a zoo of classic
optimizers that each report their update in metric-force-bias form, an
evolution strategy, Gaussian-process and Kalman updates in the same
form, multilevel (hierarchical) decompositions, and a CLI for running
deterministic desk-scale experiments.
"""

__version__ = "0.1.0"

from .bayes import (
    DiscreteModel,
    ElboReport,
    MeanFieldFamily,
    bayes_update,
    elbo,
    elbo_delta_price,
    free_energy_delta,
    log_evidence,
    partial_likelihood_gain,
    variational_fit,
)
from .evo import EsSample, EsState, es_optimize, es_sample, es_update
from .filters import (
    FilterState,
    GpModel,
    GpUpdate,
    KalmanTrace,
    LinearSystem,
    gp_update,
    kalman_predict,
    kalman_run,
    kalman_update,
    rbf_gram,
    rbf_kernel,
)
from .hierarchy import (
    BaldwinConfig,
    BaldwinResult,
    GroupedPopulation,
    HierFmb,
    LookaheadTrace,
    baldwin_experiment,
    hierarchical_fmb,
    hierarchical_price,
    lookahead_meta,
)
from .infogeo import (
    DistributionPair,
    dalembert_residual,
    fisher_rao_sphere_sq,
    fisher_rao_sq,
    jeffreys,
    kl,
    sqrt_embed,
)
from .objectives import (
    LinregSynthetic,
    NegRosenbrock,
    QuadraticObjective,
    TwoBumps,
    make_objective,
)
from .optim import (
    Objective,
    OptimizerState,
    StepReport,
    gradient_fd_error,
    hessian_fd_error,
    step_adam,
    step_bfgs,
    step_gd,
    step_mirror,
    step_natural_gradient,
    step_newton,
    step_polyak,
    step_regularized,
    step_sgd,
    step_sgld,
)
from .price import (
    FmbDecomposition,
    Population,
    PriceDecomposition,
    expected_gain,
    fmb_decompose,
    lande_step,
    normalize_fitness,
    price_update,
)
