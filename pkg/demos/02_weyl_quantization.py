"""
Weyl quantization on a periodic grid
====================================

Turn phase-space functions into matrices and check the cases where the
answer is known exactly.
"""
import numpy as np

from qcsmooth import PotentialModel, SymbolGrid, build_grid, build_hamiltonian, compose_residual, quantize_symbol
from qcsmooth.weyl import multiplier_matrix

g = build_grid(1, 256, 16.0)
print(f"grid: n={g.n}, L={g.L}, dx={g.dx:.4f}, momentum cutoff {g.xi_max:.2f}")

###############################################################################
# Symbols depending on x alone become diagonal matrices; symbols depending on
# xi alone become Fourier multipliers.
A = quantize_symbol(SymbolGrid.from_function(g, lambda x, xi: x[..., 0] ** 2 + 0 * xi[..., 0])).entries
print("Op(x^2) off-diagonal size:", np.abs(A - np.diag(np.diag(A))).max())
K = quantize_symbol(SymbolGrid.from_function(g, lambda x, xi: 0.5 * xi[..., 0] ** 2 + 0 * x[..., 0])).entries
print("Op(xi^2/2) vs multiplier:", np.abs(K - multiplier_matrix(g, 0.5 * g.momenta[:, 0] ** 2)).max())

###############################################################################
# The harmonic oscillator spectrum is k + 1/2.
lam = np.linalg.eigvalsh(build_hamiltonian(PotentialModel(), g).entries)[:6]
print("lowest eigenvalues:", np.round(lam, 10))

###############################################################################
# Composition is not multiplication: Op(x) Op(xi) - Op(x xi) = i/2 exactly.
x = SymbolGrid.from_function(g, lambda x, xi: x[..., 0] + 0 * xi[..., 0])
xi = SymbolGrid.from_function(g, lambda x, xi: xi[..., 0] + 0 * x[..., 0])
rep = compose_residual(x, xi)
print("composition residual for x * xi on well-resolved states:", round(rep.resolved_residual_norm, 6))
