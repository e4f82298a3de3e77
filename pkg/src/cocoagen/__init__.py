"""Feature-partitioned distributed least squares: solver, theory and experiments."""

from __future__ import annotations

from .cocoa import (
    CocoaConfig,
    IterationOperator,
    SolveTrajectory,
    centralized_solve,
    error_decomposition,
    iteration_matrix,
    run_cocoa,
    step_recursion,
    training_error,
)
from .datagen import Bernoulli, CorrGaussian, Empirical, IsoGaussian, PartitionSpec, TrainingSet
from .errors import ValidationError
from .theory import BoundInputs, BoundResult, PartitionDims

__version__ = "0.1.0"
