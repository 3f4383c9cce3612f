"""History matching of the two-scale Lorenz-96 model with GP emulators.

Classical (RBF) and quantum fidelity kernels share one GP code path; the
quantum circuits run on a small dense statevector simulator.
"""
from .lorenz96 import PARAM_BOUNDS, TRUTH, ParamPoint, SimConfig
from .rng import RngStream

__all__ = ["PARAM_BOUNDS", "TRUTH", "ParamPoint", "SimConfig", "RngStream"]
__version__ = "0.1.0"
