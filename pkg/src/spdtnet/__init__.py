"""Fit, generate, analyse and simulate epidemics on SPDT dynamic contact networks."""

__version__ = "0.1.0"

import warnings

# numba probes for TBB and warns when the installed one is too old; it then falls back to OpenMP
warnings.filterwarnings("ignore", message="The TBB threading layer")

from .model import ContactNetwork, LinkClass, NetworkError, TimeGrid, classify_link, read_network, validate, write_network

__all__ = ["ContactNetwork", "LinkClass", "NetworkError", "TimeGrid", "classify_link", "read_network",
           "validate", "write_network", "__version__"]
