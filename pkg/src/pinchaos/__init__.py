"""Pinning models in correlated Gaussian environments.

Renewal laws and samplers, long-range correlated Gaussian environments,
exact and Monte Carlo partition functions, finite-dimensional Wick
calculus, continuum chaos-series second moments and a convergence lab.
"""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .renewal import *  # noqa: F401,F403
from .environment import *  # noqa: F401,F403
from .wick import *  # noqa: F401,F403
from .partition import *  # noqa: F401,F403
from .chaos import *  # noqa: F401,F403
from .lab import *  # noqa: F401,F403
