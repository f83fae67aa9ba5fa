"""
Classical against quantum constants
===================================

For a few scales R, compute the largest orbit integral of the weight
``<x/R>^(-2 nu)`` and the top eigenvalue of the time-averaged Gram operator,
and watch their ratio approach one.
"""
import math

from qcsmooth import PotentialModel, SearchConfig, build_grid, build_hamiltonian, classical_constant
from qcsmooth import eigendecompose, gram_operator, quantum_constant

model = PotentialModel("harmonic", 1.0)
grid = build_grid(1, 256, 16.0)
spec = eigendecompose(build_hamiltonian(model, grid))
print(f"{spec.n_resolved} of {grid.n} eigenvectors resolved by the grid")

T, nu = 2 * math.pi, 1.0
search = SearchConfig(E_max=50.0, shells=16, samples_per_shell=32)
for R in (1.0, 2.0, 4.0):
    C0 = classical_constant(model, T, nu, R, search)
    G = gram_operator(model, grid, spec, T, nu, R)
    Q0 = quantum_constant(G, "power_iteration")
    print(f"R={R:3.0f}  C0={C0.value:9.5f} at E={C0.argmax_energy:.3g}  Q0={Q0.value:9.5f} "
          f"({Q0.iterations} iterations)  Q0/C0={Q0.value / C0.value:.5f}")
