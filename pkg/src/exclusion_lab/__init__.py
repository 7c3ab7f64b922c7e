"""Finite-range asymmetric exclusion laboratory.

Simulation, exact small-ring oracles and estimators for the diffusivity
D(t) of stationary exclusion processes on a ring.
"""

from .law import JumpLaw, build_jump_law, symmetric, tasep

__all__ = ["JumpLaw", "build_jump_law", "symmetric", "tasep"]
__version__ = "0.1.0"
