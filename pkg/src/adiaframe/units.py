"""Natural units used throughout the package.

All internal formulas are written with hbar and k_B carried symbolically but
bound to 1.0 here.  Callers working in laboratory units should rescale their
inputs at the boundary (energies by hbar*omega_ref, temperatures by k_B, and
so on); nothing inside the package reintroduces dimensional constants.
"""

HBAR = 1.0
KB = 1.0
