"""Diffusion tensor cardiac MR: phantoms, tensor fitting, maps, statistics and
tensor de-noising."""
from .core import (AcquisitionProtocol, DwiStack, EigenSystem, MapSet, TensorField, eig_sym3,
                   eig_sym3_batch)
from .exceptions import (DtcmrError, NumericalError, RegistrationError, TrainingDiverged,
                         ValidationError)

__version__ = "0.1.0"

__all__ = [
    "AcquisitionProtocol", "DtcmrError", "DwiStack", "EigenSystem", "MapSet", "NumericalError",
    "RegistrationError", "TensorField", "TrainingDiverged", "ValidationError", "eig_sym3",
    "eig_sym3_batch", "__version__",
]
