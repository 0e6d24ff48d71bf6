"""Joint embeddings of words and affine relation operators as a Boltzmann
model over (source, relation, target) triples, trained with persistent
contrastive divergence."""

__version__ = "0.1.0"

from ._backend import BACKEND
from .model import (
    ConfigurationError,
    DegenerateInputError,
    EnergyKind,
    Gradient,
    ModelParams,
    RelationOperator,
    apply_relation,
    energy,
    energy_grad,
    init_params,
)
from .sampler import (
    ChainPool,
    ChainState,
    conditional_distribution,
    exact_log_partition,
    exact_model_expectation_grad,
    gibbs_sweep,
)
from .trainer import (
    AdamState,
    TrainConfig,
    Trainer,
    Triple,
    TripleBatch,
    adam_update,
    data_term_grad,
    l2_grad,
    pcd_gradient,
    train,
)

__all__ = [
    "BACKEND", "AdamState", "ChainPool", "ChainState", "ConfigurationError", "DegenerateInputError",
    "EnergyKind", "Gradient", "ModelParams", "RelationOperator", "TrainConfig", "Trainer", "Triple",
    "TripleBatch", "adam_update", "apply_relation", "conditional_distribution", "data_term_grad",
    "energy", "energy_grad", "exact_log_partition", "exact_model_expectation_grad", "gibbs_sweep",
    "init_params", "l2_grad", "pcd_gradient", "train",
]
