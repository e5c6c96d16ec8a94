"""Set-membership identification of bilinear systems under bounded noise."""

__version__ = "0.1.0"

from .model import BilinearSystem, Trajectory, generate_structured_system  # noqa: E402
from .sme import FeasibleSet, build_feasible_set, chebyshev_estimate, diameter  # noqa: E402
from .stochastic import BoundedSpec, InputSpec, NoiseSpec, simulate  # noqa: E402

__all__ = [
    "BilinearSystem",
    "BoundedSpec",
    "FeasibleSet",
    "InputSpec",
    "NoiseSpec",
    "Trajectory",
    "build_feasible_set",
    "chebyshev_estimate",
    "diameter",
    "generate_structured_system",
    "simulate",
]
