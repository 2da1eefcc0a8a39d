"""Truncated-normal EMOS for single- and dual-resolution wind-speed ensembles."""

from .distributions import TruncatedNormal
from .emos import EmosCoefficients, EnsembleSummarizer, TruncatedNormalEMOS, fit, link, summarize
from .exceptions import (
    DegenerateDistributionError,
    DomainError,
    FitFailedError,
    InputError,
    InsufficientTrainingData,
    SchemaError,
    UndefinedSkillError,
    WindEmosError,
)
from .training import LloydKMeans, TrainingPlan

__all__ = [
    "DegenerateDistributionError",
    "DomainError",
    "EmosCoefficients",
    "EnsembleSummarizer",
    "FitFailedError",
    "InputError",
    "InsufficientTrainingData",
    "LloydKMeans",
    "SchemaError",
    "TrainingPlan",
    "TruncatedNormal",
    "TruncatedNormalEMOS",
    "UndefinedSkillError",
    "WindEmosError",
    "fit",
    "link",
    "summarize",
]
