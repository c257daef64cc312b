"""Federated learning under heterogeneous, temporally correlated client availability.

Submodules:

* :mod:`cafedsim.availability` - two-state availability chains, populations, traces
* :mod:`cafedsim.data` - synthetic and MNIST federations
* :mod:`cafedsim.model` - ridge-regularised linear classifier and oracles
* :mod:`cafedsim.engine` - the round loop and the Unbiased strategy
* :mod:`cafedsim.cafed` - the CA-Fed strategy and its estimators
* :mod:`cafedsim.bounds` - error bounds, divergences and the weight optimiser
* :mod:`cafedsim.harness` - configs, presets, metrics and the CLI
"""

from .errors import CafedError

__version__ = "0.1.0"
__all__ = ["CafedError", "__version__"]
