"""Forward-start option analytics: Monte Carlo pricing, forward implied
volatility smiles, and closed-form short-maturity ATM limits for the level,
skew and curvature under extended Stein-Stein stochastic volatility."""

from . import asymptotics, blackscholes, forward_smile, mc_engine, models
from .forward_smile import ContractSpec
from .mc_engine import McConfig, McEstimate, SimGrid
from .models import (
    AbsClamped,
    ConstantVol,
    ExtendedSteinStein,
    Identity,
    ModelSpec,
    OuParams,
    SmoothedAbs,
)

__version__ = "0.1.0"

__all__ = [
    "asymptotics", "blackscholes", "forward_smile", "mc_engine", "models",
    "ContractSpec", "McConfig", "McEstimate", "SimGrid",
    "AbsClamped", "ConstantVol", "ExtendedSteinStein", "Identity",
    "ModelSpec", "OuParams", "SmoothedAbs", "__version__",
]
