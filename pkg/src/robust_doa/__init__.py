"""Robust domain-of-attraction estimation for set-valued discrete-time plants.

The plant set is a nominal model plus a componentwise error bound. Sampled
negative-definite domains of a Lyapunov candidate yield an inner estimate
of the robust closed-loop domain of attraction, which a particle swarm
enlarges over a sum-of-squares polynomial family. A Gaussian-process
controller fitted inside the domain is validated by noisy simulation.
"""

from .doa import AlphaSearchTrace, LevelSetEstimate, search_alpha, variable_epsilon_search
from .grid import Box, CellMask, UniformGrid
from .lyapunov import FixedLyapunov, LyapunovSOS, basis
from .ndd import NddEstimate, NddProblem, estimate_ndd, prepare
from .plant import PlantSet, builtin
from .sampler import SampleConfig

__version__ = "0.1.0"

__all__ = [
    "AlphaSearchTrace", "Box", "CellMask", "FixedLyapunov", "LevelSetEstimate",
    "LyapunovSOS", "NddEstimate", "NddProblem", "PlantSet", "SampleConfig",
    "UniformGrid", "basis", "builtin", "estimate_ndd", "prepare", "search_alpha",
    "variable_epsilon_search",
]
