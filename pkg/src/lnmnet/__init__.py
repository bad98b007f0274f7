"""Spiking network training engine with learnable polynomial neuron dynamics.

Per-layer membrane update functions are degree-N polynomials trained jointly
with the synaptic weights by surrogate-gradient backpropagation through time.
The package also ships the supporting pieces: a deterministic tensor core
(compiled + pure-Python backends), an energy estimator for neuromorphic
operation counts, polynomial degree reduction, and a CLI.
"""

from lnmnet.backend import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
