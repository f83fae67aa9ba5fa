"""Classical escape-rate and quantum smoothing constants for Schrödinger
operators with sub-quadratic confining potentials."""

__version__ = "0.1.0"

from .potential import (AssumptionReport, ConfigurationError, PhasePoint, PotentialModel, check_assumption,
                        eval_gradient, eval_potential, eval_symbol)
from .classical_flow import (ClassicalConstantEstimate, IntegrationError, SearchConfig, Trajectory,
                             classical_constant, escape_weight_integral, integrate_flow, occupation_time,
                             step_verlet)
from .weyl import (GridSpec, OperatorMatrix, SymbolGrid, build_grid, compose_residual, gaarding_certificate,
                   gaarding_floor, quantize_symbol, symbol_fR, symbol_power)
from .quantum import (BandLimitWarning, QuantumConstantEstimate, SpectralData, build_hamiltonian,
                      egorov_residual, eigendecompose, gram_operator, propagate, quantum_constant,
                      smoothing_functional)
from .wavepacket import (CoherentState, ProbeRejected, coherent_state, gaussian_symbol_average,
                         probe_lower_bound)
from .experiments import (ConstantsReport, RunConfig, emit_report, run_correspondence, run_escape_scaling,
                          run_probes)
