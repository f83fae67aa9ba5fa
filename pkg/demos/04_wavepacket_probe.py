"""
Coherent states as probes
=========================

A Gaussian wave packet sees the Gaussian average of a symbol. Feeding it to
the smoothing functional gives a lower bound for the quantum constant that
tracks the orbit integral at its centre.
"""
import math

import numpy as np

from qcsmooth import PhasePoint, PotentialModel, SymbolGrid, build_grid, build_hamiltonian, eigendecompose
from qcsmooth import gaussian_symbol_average, gram_operator, probe_lower_bound, quantum_constant

model = PotentialModel()
grid = build_grid(1, 512, 24.0)
spec = eigendecompose(build_hamiltonian(model, grid))

###############################################################################
# The expectation of Op(a) equals a Gaussian average of a over phase space.
a = SymbolGrid.from_function(grid, lambda x, xi: np.cos(x[..., 0]) * np.exp(-xi[..., 0] ** 2 / 4))
avg = gaussian_symbol_average(a, PhasePoint([0.3], [-0.4]))
print(f"trapezoid {avg.analytic:.12f}, matrix element {avg.matrix:.12f}")

###############################################################################
# Probe value S, orbit integral A at the centre, and the quantum constant.
center = PhasePoint([0.5], [0.5])
for R in (1.0, 2.0, 4.0, 8.0):
    Q0 = quantum_constant(gram_operator(model, grid, spec, 2 * math.pi, 1.0, R), "dense").value
    p = probe_lower_bound(model, grid, spec, center, 2 * math.pi, 1.0, R, quantum_value=Q0)
    print(f"R={R:3.0f}  S={p.S:9.5f}  A={p.A:9.5f}  smoothed A={p.A_smoothed:9.5f}  "
          f"|S/A-1|={p.deviation:.4f}  S<=Q0: {p.below_constant}")
