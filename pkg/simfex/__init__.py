# -*- coding: utf-8 -*-

__author__ = "The simfex authors"
__version__ = "0.1.1"

from .error_model import (
    BoxCoxParam,
    ErrorModelParams,
    ReplicateData,
    box_cox_transform,
    fit_error_params,
    fit_lambda,
    inverse_box_cox,
    profile_loglik,
)
from .estimator import (
    EtaGrid,
    Extrapolant,
    ExtrapolantKind,
    SimfexResult,
    bootstrap_inference,
    fit_extrapolant,
    naive_map,
    pseudo_sequence,
    simfex_contrast_estimate,
    simfex_estimate,
)
from .exceptions import (
    ConfigError,
    DataError,
    DomainError,
    EmptyCategoryError,
    EstimationError,
    NumericalError,
    SimfexError,
)
from .glm import Dataset, FitResult, Link
from .mcsimex import McsimexConfig, McsimexResult, mcsimex_estimate, misclassify
from .misclass import CategoryProbs, CategoryScheme, categorize, estimate_pi_p, estimate_pi_p_by_group
from .simulate import GenConfig, StudyReport, generate, run_study, sensitivity_sweep
from .stochastic_matrix import StochasticMatrix, fractional_power, naive_map_matrix
