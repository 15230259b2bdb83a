"""Learned functional dictionaries on point clouds."""
from .errors import FuncDictError, InvalidConfig, InvalidInput, InvalidState, NumericError, SolverError
from .model import Architecture, ConstraintMode, ModelParams, OptimizerState
from .numerics import RngStream
from .training import TrainConfig, fit, predict

__version__ = "0.1.0"
