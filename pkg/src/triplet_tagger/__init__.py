"""Joint NER + title/description embedding-contrast training at desk scale.

A small transformer token tagger trained with a cross-entropy tagging loss,
optionally combined with a log-sigmoid triplet loss that pulls a title's
embedding toward its own description and away from a randomly drawn one.
Includes the full experiment protocol: synthetic catalog generation, seeded
holdout split, training, entity-level evaluation, and table rendering.
"""

__version__ = "0.1.0"

from .backend import active_backend, available_backends
from .errors import (
    ContractError,
    DataError,
    DimensionError,
    NumericError,
    TaggerError,
)
from .tensor import Tensor, backward, grad_check, no_grad

__all__ = [
    "Tensor",
    "backward",
    "grad_check",
    "no_grad",
    "active_backend",
    "available_backends",
    "TaggerError",
    "DimensionError",
    "ContractError",
    "DataError",
    "NumericError",
    "__version__",
]
