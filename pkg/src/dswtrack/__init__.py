"""Audiovisual azimuth tracking with a Gaussian filter driven by dynamic stream weights."""

from .errors import (
    DSWError,
    InvalidInputError,
    NumericalFailureError,
    TrainingFailureError,
    UnsupportedConfigurationError,
)
from .filtering import GaussianBelief, ObservationFrame, compute_gains, predict, run_filter, step, update
from .model import ObservationStream, SystemModel, TransitionModel, cv_rvm_model, model_from_config
from .odsw import DirichletPrior, GaussianPriorParams, odsw_dirichlet, odsw_sequence
from .dswlearn import DSWLogisticRegression, LogisticPredictor, train_sgd
from .sim import Disturbance, ScenarioSpec, SequenceRecord, simulate_sequence
from .evaluation import EvalConfig, circular_rmse, cross_validate, summarize, timing_benchmark

__version__ = "0.1.0"
