"""Meta-learning in the reproducing-kernel Hilbert space of the neural tangent kernel.

Submodules
----------
linalg        dense SPD solves with jitter, Pade matrix exponential
network       small ReLU networks with hand-written reverse mode
ntk           empirical NTK and RBF Gram matrices
objectives    Meta-RKHS-I/II objectives, MAML-family baselines
tasks         sine-regression and Gaussian-blob task distributions
attacks       l-infinity PGD against adapted predictors
verification  ODE / finite-difference oracles and theorem sweeps
config        versioned JSON run configuration
harness       training, evaluation, sweeps and CSV emission
cli           ``rkhsmeta`` command-line entry point
"""

from .linalg import KernelSingularError, PadeSingularError
from .network import NetworkSpec, init_params
from .objectives import ALGORITHMS, AdaptedPredictor, MetaConfig

__version__ = "0.1.0"

__all__ = [
    "ALGORITHMS",
    "AdaptedPredictor",
    "KernelSingularError",
    "MetaConfig",
    "NetworkSpec",
    "PadeSingularError",
    "init_params",
    "__version__",
]
