"""Numerical toolkit for slow drift in slow-fast Hamiltonian systems.

Frozen periodic orbits and their actions, the averaged slow flows they
generate, symbolic dynamics of cross-form Poincare maps and a harness that
checks drift orbits follow concatenated slow flows to order ``eps``.
"""

__version__ = "0.1.0"
