"""Counting rho-open oriented paths through directed-polymer thermodynamics."""

from .environment import EnvParams, Environment, generate, m_event_probability
from .errors import ContractError, DomainError, NumericalError, ResourceError

__version__ = "0.1.0"

__all__ = [
    "ContractError",
    "DomainError",
    "EnvParams",
    "Environment",
    "NumericalError",
    "ResourceError",
    "generate",
    "m_event_probability",
]
