"""Teacher-student trajectory forecasting with multi-granular distillation,
adapter-only policy refinement and a complexity curriculum, on a small
reverse-mode autodiff engine over numpy."""

from .errors import (ConfigError, ContractError, DimensionError, DomainError, ParseError, RegistryError,
                     TrainingDivergence, ValidationError)

__version__ = "0.1.0"

__all__ = ["ConfigError", "ContractError", "DimensionError", "DomainError", "ParseError", "RegistryError",
           "TrainingDivergence", "ValidationError", "__version__"]
