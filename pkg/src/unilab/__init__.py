"""Structured sensing ensembles, proximal RLS solvers and VAMP dynamics.

The package is organised as

- :mod:`unilab.transforms`: matrix-free orthogonal building blocks
- :mod:`unilab.ensembles`: samplers for structured sensing matrices
- :mod:`unilab.universality`: finite-N checks of the spectral class conditions
- :mod:`unilab.regularization`: convex penalties and their proximal maps
- :mod:`unilab.solver`: the RLS objective and proximal gradient descent
- :mod:`unilab.dynamics`: GFOM / VAMP recursions and state evolution
- :mod:`unilab.experiments`: config-driven experiment harness and CLI
"""

__version__ = "0.1.0"
