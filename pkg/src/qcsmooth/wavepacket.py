"""Unit-width Gaussian coherent states as phase-space probes.

A coherent state centred at ``(x0, xi0)`` has Wigner function
``pi^-d exp(-|x - x0|^2 - |xi - xi0|^2)``, so its expectation of ``Op(a)`` is a
Gaussian average of ``a``. Feeding it through the smoothing functional and
comparing with the classical orbit integral at its centre shows how the
quantum constant is bounded below by the classical one.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite import hermgauss

from .classical_flow import DEFAULT_STEP, batch_escape_integrals, escape_weight_integral, integrate_flow
from .potential import PhasePoint, PotentialModel
from .quantum import SpectralData, smoothing_functional
from .weyl import MOMENTUM_FRACTION, GridSpec, SymbolGrid, fourier_matrix, quantize_symbol

MARGIN_SIGMAS = 5.0
WINDOW_SIGMAS = 6.0


class ProbeRejected(ValueError):
    """The probe cannot be represented faithfully on the grid."""


@dataclass
class CoherentState:
    center: PhasePoint
    vector: np.ndarray
    grid: GridSpec

    def position_mean(self) -> np.ndarray:
        p = np.abs(self.vector) ** 2
        return p @ self.grid.positions

    def momentum_mean(self) -> np.ndarray:
        p = np.abs(fourier_matrix(self.grid) @ self.vector) ** 2
        return p @ self.grid.momenta


def _margins(x, xi, grid: GridSpec):
    """Distances (in units of the packet width) to the box edge and to 0.7 Xi."""
    x = np.atleast_2d(x)
    xi = np.atleast_2d(xi)
    pos = grid.L - np.max(np.abs(x))
    mom = MOMENTUM_FRACTION * grid.xi_max - np.max(np.abs(xi))
    return float(pos), float(mom)


def check_margin(x, xi, grid: GridSpec, sigmas: float = MARGIN_SIGMAS, what: str = "center"):
    pos, mom = _margins(x, xi, grid)
    if pos < sigmas or mom < sigmas:
        raise ProbeRejected(f"{what} too close to the grid limits: position margin {pos:.3g}, "
                            f"momentum margin {mom:.3g}, need {sigmas:g} on both")


def coherent_state(center: PhasePoint, grid: GridSpec, margin: float = MARGIN_SIGMAS) -> CoherentState:
    """pi^(-d/4) exp(-|x - x0|^2 / 2) exp(i xi0 . x), renormalised on the grid."""
    if center.dimension != grid.d:
        raise ValueError("center and grid dimensions differ")
    check_margin(center.x, center.xi, grid, margin)
    X = grid.positions
    u = np.exp(-0.5 * np.sum((X - center.x) ** 2, axis=1) + 1j * (X @ center.xi))
    u *= np.pi ** (-grid.d / 4) * grid.dx ** (grid.d / 2)
    u /= np.linalg.norm(u)
    return CoherentState(center, u, grid)


@dataclass
class GaussianAverage:
    analytic: float
    matrix: float

    @property
    def discrepancy(self) -> float:
        scale = max(abs(self.analytic), abs(self.matrix), 1e-300)
        return abs(self.analytic - self.matrix) / scale


def gaussian_symbol_average(a: SymbolGrid, center: PhasePoint, window: float = WINDOW_SIGMAS) -> GaussianAverage:
    """pi^-d int a(rho0 + rho) exp(-|rho|^2) drho, two ways.

    ``analytic`` is the tensor trapezoid sum over the symbol nodes within
    ``window`` of the centre (spacing dx/2 in position, dxi in momentum);
    ``matrix`` is ``(u, Op(a) u)`` for the coherent state at ``center``.
    """
    g = a.grid
    d = g.d
    r2 = (np.sum((g.midpoints - center.x) ** 2, axis=1)[:, None]
          + np.sum((g.momenta - center.xi) ** 2, axis=1)[None, :])
    w = np.where(r2 <= window ** 2, np.exp(-r2), 0.0)
    cell = (0.5 * g.dx * g.dxi) ** d / np.pi ** d
    analytic = np.sum(w * a.values) * cell
    u = coherent_state(center, g, margin=0.0).vector
    matrix = np.vdot(u, quantize_symbol(a).entries @ u)
    if a.is_real:
        analytic, matrix = float(np.real(analytic)), float(np.real(matrix))
    return GaussianAverage(analytic, matrix)


def smoothed_escape_integral(model: PotentialModel, center: PhasePoint, T: float, nu: float, R: float,
                             nodes: int | None = None, h: float = DEFAULT_STEP) -> float:
    """int_0^T pi^-d int f_R(phi^t(rho0 + rho)) exp(-|rho|^2) drho dt.

    Swapping the integrals turns this into the Gaussian average of the orbit
    integral ``a_R``, evaluated with a tensor Gauss-Hermite rule in phase space.
    """
    d = model.dimension
    if nodes is None:
        nodes = 16 if d == 1 else 8
    s, w = hermgauss(nodes)
    grids = np.meshgrid(*([s] * (2 * d)), indexing="ij")
    pts = np.stack([q.ravel() for q in grids], axis=1)
    wts = np.ones(len(pts))
    for q in np.meshgrid(*([w] * (2 * d)), indexing="ij"):
        wts *= q.ravel()
    x0 = center.x + pts[:, :d]
    xi0 = center.xi + pts[:, d:]
    vals = batch_escape_integrals(model, x0, xi0, T, nu, R, h, drift_tol=None)
    return float(np.sum(wts * vals) / np.pi ** d)


@dataclass
class ProbeReport:
    center: PhasePoint
    R: float
    S: float
    A: float
    A_smoothed: float
    quantum_constant: float | None = None

    @property
    def ratio(self) -> float:
        return self.S / self.A if self.A else float("nan")

    @property
    def smoothed_ratio(self) -> float:
        return self.A_smoothed / self.A if self.A else float("nan")

    @property
    def deviation(self) -> float:
        return abs(self.ratio - 1.0)

    @property
    def below_constant(self) -> bool | None:
        if self.quantum_constant is None:
            return None
        return bool(self.S <= self.quantum_constant + 1e-9)


def probe_lower_bound(model: PotentialModel, grid: GridSpec, spec: SpectralData, center: PhasePoint,
                      T: float, nu: float, R: float, nq: int = 64, h: float = DEFAULT_STEP,
                      quantum_value: float | None = None) -> ProbeReport:
    """Coherent-state smoothing value S against the orbit integral A at its centre.

    The orbit of ``center`` must stay ``MARGIN_SIGMAS`` inside the grid limits
    over [0, T]; otherwise :class:`ProbeRejected` is raised.
    """
    traj = integrate_flow(model, center, T, h)
    check_margin(traj.x, traj.xi, grid, MARGIN_SIGMAS, what="orbit")
    u = coherent_state(center, grid).vector
    S = smoothing_functional(model, grid, spec, u, T, nu, R, nq)
    A = escape_weight_integral(traj, nu, R)
    A_bar = smoothed_escape_integral(model, center, T, nu, R, h=h)
    return ProbeReport(center, R, S, A, A_bar, quantum_value)
