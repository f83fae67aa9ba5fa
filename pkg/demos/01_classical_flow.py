"""
Hamiltonian flow and time spent near the origin
===============================================

Integrate a few trajectories with the Verlet scheme, measure how long they
stay inside the unit ball, and see the ``E^(-1/2)`` law appear.
"""
import math

import numpy as np

from qcsmooth import PhasePoint, PotentialModel, integrate_flow, occupation_time
from qcsmooth.classical_flow import batch_occupation_times, sample_energy_shell

###############################################################################
# One period of the harmonic oscillator brings every point back to its start.
harmonic = PotentialModel("harmonic", 1.0)
traj = integrate_flow(harmonic, PhasePoint([1.0], [0.5]), 2 * math.pi, h=1e-3)
print("return error after one period:", np.hypot(traj.x[-1, 0] - 1.0, traj.xi[-1, 0] - 0.5))
print("relative energy drift:", traj.energy_drift(harmonic))

###############################################################################
# A sub-quadratic potential: V = <x>^(2m) - 1 with m = 1/2 grows linearly, so
# the period grows with energy instead of staying fixed.
bracket = PotentialModel("bracket_power", 0.5)
for E in (1.0, 10.0, 100.0):
    pt = PhasePoint([0.0], [math.sqrt(2 * E)])
    tr = integrate_flow(bracket, pt, 2 * math.pi, h=1e-3)
    print(f"E={E:6.1f}  time in B_1 over [0, 2 pi]: {occupation_time(tr, 1.0):.4f}")

###############################################################################
# Longest stay in B_1 across an energy shell, against energy. The speed near
# the origin is about sqrt(2E), so the stay shrinks like E^(-1/2).
rng = np.random.default_rng(0)
energies = np.array([10.0, 100.0, 1000.0, 10000.0])
times = []
for E in energies:
    pts = sample_energy_shell(harmonic, E, 64, rng)
    step = min(1e-3, 1 / (50 * math.sqrt(2 * E)))
    times.append(np.max(batch_occupation_times(harmonic, pts[:, :1], pts[:, 1:], 2 * math.pi, 1.0, step)))
slope = np.polyfit(np.log(energies), np.log(times), 1)[0]
print("log-log slope:", round(slope, 4))
