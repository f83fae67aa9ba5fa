"""
Conjugating by the propagator
=============================

Compare ``e^{itP} Op(a) e^{-itP}`` with the quantization of ``a`` moved along
the classical flow. For the harmonic oscillator they agree up to grid error;
for a sub-quadratic potential the gap shrinks as the symbol gets wider.
"""
import numpy as np

from qcsmooth import PotentialModel, SymbolGrid, build_grid, build_hamiltonian, egorov_residual, eigendecompose


def bump(scale):
    return lambda x, xi: np.exp(-(x[..., 0] ** 2 + xi[..., 0] ** 2) / (2 * scale ** 2))


grid = build_grid(1, 256, 16.0)
for model in (PotentialModel("harmonic", 1.0), PotentialModel("bracket_power", 0.5)):
    spec = eigendecompose(build_hamiltonian(model, grid))
    for scale in (1.0, 2.0, 4.0):
        rep = egorov_residual(model, grid, spec, SymbolGrid.from_function(grid, bump(scale)), 1.0)
        print(f"{model.kind:14s} width {scale:3.0f}  residual {rep.residual:.2e}  "
              f"on resolved states {rep.resolved_residual:.2e}")
