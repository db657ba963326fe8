"""Learning conserved quantities of Hamiltonian systems by variational model selection."""

__version__ = "0.1.0"

from .conserved import QuadraticObservable, SymmetryBank, TauMeasure  # noqa: E402
from .dynamics import Dataset, DataRecipe, SystemSpec, recipe_for, sample_dataset  # noqa: E402
from .variational import Checkpoint, TrainConfig, train  # noqa: E402
from .analysis import AnalysisReport, analyze, ground_truth_bank  # noqa: E402
from .config import RunConfig, preset  # noqa: E402
from .estimator import NoetherRazorRegressor  # noqa: E402
from .exceptions import (  # noqa: E402
    DivergenceError, DomainError, NoetherError, NumericError, PreconditionError, ShapeError,
    TrainingAborted,
)

__all__ = [
    "QuadraticObservable", "SymmetryBank", "TauMeasure", "Dataset", "DataRecipe", "SystemSpec",
    "recipe_for", "sample_dataset", "Checkpoint", "TrainConfig", "train", "AnalysisReport",
    "analyze", "ground_truth_bank", "RunConfig", "preset", "NoetherRazorRegressor",
    "NoetherError", "ShapeError", "DomainError",
    "PreconditionError", "NumericError", "DivergenceError", "TrainingAborted",
]
