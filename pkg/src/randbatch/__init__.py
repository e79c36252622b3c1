"""Random-batch methods for interacting particle systems.

Random mini-batch force estimation turns the O(N^2) per-step cost of pairwise
interactions into O(pN).  This package provides the batch estimators with
their exact statistics, the RBM family of SDE integrators, the Random Batch
Ewald pipeline for periodic Coulomb systems, random-batch Monte Carlo and
Stein variational samplers, a model zoo with analytic references, and the
diagnostics used to validate them.
"""

__version__ = "0.1.0"

from .backend import HAVE_NUMBA, USE_NUMBA
from .rng import RngStream, SimStreams
from .state import BatchDivision, KernelSpec, ParticleState

__all__ = [
    "__version__",
    "HAVE_NUMBA",
    "USE_NUMBA",
    "RngStream",
    "SimStreams",
    "BatchDivision",
    "KernelSpec",
    "ParticleState",
]
