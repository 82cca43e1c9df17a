"""Bipartite noisy-or tagging models learned from anchor labels."""

from .data import Dataset
from .model import (
    ModelParams,
    NoiseModel,
    PatientRecord,
    complete_loglik,
    cond_prob_x0,
    prior_logprob,
    quickscore_marginal,
    sample_record,
)
from .infer import Evidence, GibbsConfig, exact_last_tag, gibbs_posterior
from .moments import moments_init
from .train import TrainConfig, train
from .estimators import MomentsNoisyOr, NoisyOrTagger

__all__ = [
    "Dataset",
    "ModelParams",
    "NoiseModel",
    "PatientRecord",
    "prior_logprob",
    "cond_prob_x0",
    "complete_loglik",
    "quickscore_marginal",
    "sample_record",
    "Evidence",
    "GibbsConfig",
    "gibbs_posterior",
    "exact_last_tag",
    "moments_init",
    "TrainConfig",
    "train",
    "MomentsNoisyOr",
    "NoisyOrTagger",
]

__version__ = "0.1.0"
