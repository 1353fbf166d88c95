"""Verification toolkit for boundary-layer transport-diffusion operators.

Symbolically proves the cancellation identities of the classical and MHD
boundary-layer systems, solves both systems with an IMEX finite-difference
scheme, and cross-checks the same identities on discrete fields at
discretization order.
"""

__version__ = "0.1.0"
