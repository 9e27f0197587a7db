"""Distributionally robust optimization over unmeasured variables.

Linear and multinomial-logistic models trained under four objectives (ERM,
CVaR-DRO, covariate-shift DRO, and the transport-smoothed unmeasured-variable
DRO), plus synthetic data generators, annotation-distance construction, and a
config-driven experiment harness.
"""

from uvdro.models import Dataset, Metrics, ModelParams, evaluate, loss_vector, predict
from uvdro.distances import (
    DistanceMatrix,
    annotation_distance,
    pairwise_euclidean,
    rescale_unit_mean,
    shuffle_distances,
    wasserstein_1d,
)
from uvdro.objectives import (
    DualState,
    ObjectiveValue,
    PrimalWitness,
    RobustnessConfig,
    cvar_objective,
    erm_objective,
    minimize_dual,
    primal_inner_sup_oracle,
    solve_eta,
    uvdro_gradients,
    uvdro_objective,
)
from uvdro.optimizer import TrainConfig, TrainTrace, adagrad_step, train

__version__ = "0.1.0"
