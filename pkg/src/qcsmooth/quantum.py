"""Discrete Schrödinger operator, propagator, smoothing functional and the
Gram operator whose top eigenvalue is the quantum smoothing constant.

Everything is done in the eigenbasis of the dense Hamiltonian: with
``P = U diag(lam) U^*`` the propagator is exact up to rounding, and a
time-integrated conjugation ``sum_q w_q e^{i t_q P} M e^{-i t_q P}`` becomes
the Hadamard product ``(U^* M U) * K`` with ``K_jk = sum_q w_q e^{i t_q (lam_j - lam_k)}``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from numpy.polynomial.legendre import leggauss

from .classical_flow import DEFAULT_STEP, verlet_steps
from .potential import PotentialModel, japanese_bracket
from .weyl import (GridSpec, OperatorMatrix, SymbolGrid, multiplier_matrix, quantize_symbol,
                   resolved_mask, spectral_norm, symbol_power)

RESIDUAL_TOL = 1e-9
UNITARY_TOL = 1e-10
SPILL_TOL = 1e-6
MAX_GRID = {1: 2048, 2: 64}


class BandLimitWarning(UserWarning):
    """A state carries weight outside the resolved part of the spectrum."""


class SolverError(RuntimeError):
    """Dense eigensolver failed or returned an inaccurate decomposition."""


@dataclass
class SpectralData:
    """Eigen-decomposition of a discretised Hamiltonian.

    ``resolved`` flags eigenvectors that are negligible near the box edge and
    above ``0.7 Xi`` in momentum, with eigenvalue below the band energy.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    grid: GridSpec
    resolved: np.ndarray
    max_residual: float = 0.0
    unitarity_defect: float = 0.0

    @property
    def n_resolved(self) -> int:
        return int(np.count_nonzero(self.resolved))

    def coefficients(self, u) -> np.ndarray:
        return self.eigenvectors.conj().T @ np.asarray(u)

    def unresolved_weight(self, u) -> float:
        """Fraction of ``|u|^2`` on unresolved eigenvectors."""
        c = np.abs(self.coefficients(u)) ** 2
        total = float(np.sum(c))
        return float(np.sum(c[~self.resolved]) / total) if total > 0 else 0.0


@dataclass
class QuantumConstantEstimate:
    value: float
    maximizer: np.ndarray
    R: float | None
    nu: float | None
    T: float | None
    method: str
    quadrature_nodes: int | None
    iterations: int = 0
    converged: bool = True
    note: str = ""


def _check_grid_size(grid: GridSpec):
    if grid.n > MAX_GRID[grid.d]:
        raise ValueError(f"dense algebra capped at n <= {MAX_GRID[grid.d]} per axis in d={grid.d}")


def build_hamiltonian(model: PotentialModel, grid: GridSpec, shift: float = 0.0) -> OperatorMatrix:
    """P = Op(|xi|^2/2) + diag(V(x_j)) (+ shift), kinetic part diagonal in the DFT."""
    if model.dimension != grid.d:
        raise ValueError("model and grid dimensions differ")
    _check_grid_size(grid)
    kinetic = multiplier_matrix(grid, 0.5 * np.sum(grid.momenta ** 2, axis=1))
    P = kinetic + np.diag(model.potential(grid.positions) + shift)
    P = 0.5 * (P + P.conj().T)
    return OperatorMatrix(grid, P, hermitian=True, label="P")


def eigendecompose(P: OperatorMatrix) -> SpectralData:
    """Full dense Hermitian eigendecomposition with residual and unitarity checks."""
    A = P.entries
    if P.hermitian_defect() > 1e-12:
        raise ValueError("eigendecompose needs a Hermitian matrix")
    try:
        lam, U = scipy.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"dense eigensolver failed: {exc}") from exc
    res = np.linalg.norm(A @ U - U * lam, axis=0) / (1.0 + np.abs(lam))
    worst = float(np.max(res)) if res.size else 0.0
    unit = float(np.max(np.abs(U.conj().T @ U - np.eye(len(lam))))) if lam.size else 0.0
    if worst > RESIDUAL_TOL or unit > UNITARY_TOL:
        raise SolverError(f"eigendecomposition inaccurate: residual {worst:.2e}, unitarity {unit:.2e}")
    g = P.grid
    resolved = resolved_mask(U, g) & (lam <= g.band_energy)
    return SpectralData(lam, U, g, resolved, worst, unit)


def propagate(spec: SpectralData, u, t):
    """e^{-itP} u; ``t`` may be a scalar or a 1-D array (columns of the result)."""
    c = spec.coefficients(u)
    t = np.asarray(t, dtype=float)
    if t.ndim == 0:
        return spec.eigenvectors @ (np.exp(-1j * t * spec.eigenvalues) * c)
    phases = np.exp(-1j * np.outer(spec.eigenvalues, t))
    return spec.eigenvectors @ (phases * c[:, None])


def quadrature_rule(T: float, nq: int):
    """Gauss-Legendre nodes and weights on [0, T]."""
    if nq < 1:
        raise ValueError("need at least one quadrature node")
    s, w = leggauss(nq)
    return 0.5 * T * (s + 1.0), 0.5 * T * w


def weighted_root(model: PotentialModel, grid: GridSpec, nu: float, R: float) -> np.ndarray:
    """The matrix W_nu Q with W_nu = diag(<x/R>^-nu) and Q = Op((R^2+p)^(1/4))."""
    if nu <= 0.5 or R < 1:
        raise ValueError("need nu > 1/2 and R >= 1")
    Q = quantize_symbol(symbol_power(model, 0.25, R, grid)).entries
    w = japanese_bracket(grid.positions / R) ** (-nu)
    return w[:, None] * Q


def _warn_band(spec: SpectralData, u, what: str):
    spill = spec.unresolved_weight(u)
    if spill > SPILL_TOL:
        warnings.warn(f"{what}: weight {spill:.2e} outside the resolved band", BandLimitWarning, stacklevel=3)
    return spill


def smoothing_functional(model: PotentialModel, grid: GridSpec, spec: SpectralData, u, T: float,
                         nu: float, R: float, nq: int = 64) -> float:
    """int_0^T |W_nu Q e^{-itP} u|^2 dt by Gauss-Legendre quadrature."""
    if nq < 16:
        raise ValueError("need nq >= 16")
    u = np.asarray(u, dtype=complex)
    if abs(np.linalg.norm(u) - 1.0) > 1e-10:
        raise ValueError("state must be normalised")
    if T == 0:
        return 0.0
    _warn_band(spec, u, "smoothing_functional")
    t, w = quadrature_rule(T, nq)
    Y = weighted_root(model, grid, nu, R) @ propagate(spec, u, t)
    return float(np.sum(w * np.sum(np.abs(Y) ** 2, axis=0)))


def time_kernel(eigenvalues, T: float, nq: int) -> np.ndarray:
    """K_jk = sum_q w_q exp(i t_q (lam_j - lam_k))."""
    t, w = quadrature_rule(T, nq)
    E = np.exp(1j * np.outer(eigenvalues, t))
    return (E * w) @ E.conj().T


def gram_operator(model: PotentialModel, grid: GridSpec, spec: SpectralData, T: float, nu: float,
                  R: float, nq: int = 64, subspace: str = "resolved") -> OperatorMatrix:
    """G = sum_q w_q e^{i t_q P} Q W^2 Q e^{-i t_q P}.

    ``subspace="resolved"`` compresses G to the span of the resolved
    eigenvectors (``Pi G Pi``); ``"full"`` keeps every eigenvector of the
    grid operator, including those that only exist because of the box.
    """
    if nq < 16:
        raise ValueError("need nq >= 16")
    if subspace == "resolved":
        keep = spec.resolved
    elif subspace == "full":
        keep = np.ones_like(spec.resolved)
    else:
        raise ValueError(f"unknown subspace {subspace!r}")
    params = dict(T=T, nu=nu, R=R, nq=nq, subspace=subspace, kept=int(np.count_nonzero(keep)))
    N = grid.size
    if T == 0 or not np.any(keep):
        return OperatorMatrix(grid, np.zeros((N, N), complex), True, "G", params=params)
    U = spec.eigenvectors[:, keep]
    B = weighted_root(model, grid, nu, R) @ U
    G_eig = (B.conj().T @ B) * time_kernel(spec.eigenvalues[keep], T, nq)
    G = U @ G_eig @ U.conj().T
    G = 0.5 * (G + G.conj().T)
    params["eig_block"] = 0.5 * (G_eig + G_eig.conj().T)
    params["basis"] = U
    return OperatorMatrix(grid, G, True, "G", params=params)


def gram_min_eigenvalue(G: OperatorMatrix) -> float:
    """Smallest eigenvalue relative to |G| (PSD check)."""
    lam = np.linalg.eigvalsh(G.entries)
    top = max(abs(lam[0]), abs(lam[-1]))
    return float(lam[0] / top) if top > 0 else 0.0


def power_iteration(A, tol: float = 1e-10, max_iter: int = 10_000, seed: int = 0):
    """Top eigenpair of a Hermitian PSD matrix.

    Stops when the Rayleigh quotient changes by at most ``tol`` relative.
    Returns ``(value, vector, iterations, converged)``.
    """
    rng = np.random.default_rng(seed)
    N = A.shape[0]
    v = rng.standard_normal(N) + 1j * rng.standard_normal(N)
    v /= np.linalg.norm(v)
    rq = float(np.real(np.vdot(v, A @ v)))
    for it in range(1, max_iter + 1):
        w = A @ v
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0, v, it, True
        v = w / nw
        new = float(np.real(np.vdot(v, A @ v)))
        if abs(new - rq) <= tol * abs(new):
            return new, v, it, True
        rq = new
    return rq, v, max_iter, False


def quantum_constant(G, method: str = "power_iteration", seed: int = 0,
                     tol: float = 1e-10, max_iter: int = 10_000) -> QuantumConstantEstimate:
    """Largest eigenvalue of the Gram operator and a maximising state.

    ``G`` is an :class:`OperatorMatrix` from :func:`gram_operator` or any
    Hermitian PSD array. A compressed Gram operator is diagonalised on its
    eigen-block and the maximiser lifted back to grid coordinates.
    """
    p = G.params if isinstance(G, OperatorMatrix) else {}
    A = G.entries if isinstance(G, OperatorMatrix) else np.asarray(G)
    common = dict(R=p.get("R"), nu=p.get("nu"), T=p.get("T"), quadrature_nodes=p.get("nq"))
    basis = p.get("basis")
    if basis is not None:
        A = p["eig_block"]

    def lift(v):
        return v if basis is None else basis @ v

    if method == "power_iteration":
        val, vec, its, ok = power_iteration(A, tol, max_iter, seed)
        if ok:
            return QuantumConstantEstimate(max(val, 0.0), lift(vec), method=method, iterations=its, **common)
        est = quantum_constant(G, "dense_eig")
        est.converged = False
        est.iterations = its
        est.note = f"power iteration stagnated after {its} iterations; dense fallback"
        return est
    if method in ("dense", "dense_eig"):
        lam, V = scipy.linalg.eigh(A)
        return QuantumConstantEstimate(max(float(lam[-1]), 0.0), lift(V[:, -1]), method="dense_eig", **common)
    raise ValueError(f"unknown method {method!r}")


@dataclass
class BandReport:
    top_fraction_mass: float
    unresolved_mass: float
    band_ok: bool


def band_report(spec: SpectralData, u, top_fraction: float = 0.1, tol: float = SPILL_TOL) -> BandReport:
    """Whether ``u`` stays clear of the top of the resolved band.

    ``top_fraction_mass`` is the weight of ``u`` on the highest
    ``top_fraction`` (by count) of resolved eigenvectors.
    """
    c = np.abs(spec.coefficients(u)) ** 2
    c = c / np.sum(c)
    idx = np.flatnonzero(spec.resolved)
    k = max(1, int(np.ceil(top_fraction * idx.size))) if idx.size else 0
    top = float(np.sum(c[idx[-k:]])) if k else 0.0
    outside = float(np.sum(c[~spec.resolved]))
    return BandReport(top, outside, bool(top <= tol and outside <= tol))


@dataclass
class EgorovReport:
    t: float
    residual: float
    resolved_residual: float


def flow_composed_symbol(model: PotentialModel, a: SymbolGrid, t: float, h: float = DEFAULT_STEP) -> SymbolGrid:
    """Samples of a(phi^t(x, xi)) at every symbol node, flowing each node forward by Verlet."""
    if a.func is None:
        raise ValueError("flow composition needs the symbol's generating function")
    g = a.grid
    if t == 0:
        return SymbolGrid(g, a.values.copy(), f"{a.label}@t=0", a.func)
    M, N = a.values.shape
    X = np.broadcast_to(g.midpoints[:, None, :], (M, N, g.d)).reshape(-1, g.d)
    XI = np.broadcast_to(g.momenta[None, :, :], (M, N, g.d)).reshape(-1, g.d)
    steps = max(1, int(np.ceil(abs(t) / h - 1e-9)))
    xt, xit = verlet_steps(model, X, XI, t / steps, steps)
    vals = np.asarray(a.func(xt, xit)).reshape(M, N)
    return SymbolGrid(g, vals, f"{a.label}@t={t:g}")


def egorov_residual(model: PotentialModel, grid: GridSpec, spec: SpectralData, a: SymbolGrid, t: float,
                    h: float = DEFAULT_STEP, basis=None) -> EgorovReport:
    """|e^{itP} Op(a) e^{-itP} - Op(a o phi^t)| / |Op(a)|.

    ``resolved_residual`` compresses the difference onto ``basis`` (default the
    resolved eigenvectors of ``spec``).
    """
    if not a.is_real:
        raise ValueError("Egorov residual needs a real symbol")
    A = quantize_symbol(a).entries
    norm = spectral_norm(A)
    if norm == 0:
        return EgorovReport(t, 0.0, 0.0)
    U, lam = spec.eigenvectors, spec.eigenvalues
    Ut = (U * np.exp(-1j * t * lam)) @ U.conj().T
    lhs = Ut.conj().T @ A @ Ut
    B = quantize_symbol(flow_composed_symbol(model, a, t, h)).entries
    D = lhs - B
    D = 0.5 * (D + D.conj().T)
    if basis is None:
        basis = U[:, spec.resolved]
    Dr = basis.conj().T @ D @ basis
    return EgorovReport(t, spectral_norm(D) / norm, (spectral_norm(Dr) / norm) if Dr.size else 0.0)


@dataclass
class RootComparison:
    full: float
    resolved: float
    q_min_eigenvalue: float


def compare_functional_root(model: PotentialModel, grid: GridSpec, spec: SpectralData, R: float) -> RootComparison:
    """Distance between Op((R^2+p)^(1/4)) and (R^2+P)^(1/4) from functional calculus.

    Reported for context only; the smoothing constant uses the former.
    """
    Q = quantize_symbol(symbol_power(model, 0.25, R, grid)).entries
    lam = np.clip(spec.eigenvalues, -R * R, None)
    U = spec.eigenvectors
    F = (U * (R * R + lam) ** 0.25) @ U.conj().T
    D = Q - F
    Ur = U[:, spec.resolved]
    Dr = Ur.conj().T @ D @ Ur
    return RootComparison(spectral_norm(D), spectral_norm(Dr) if Dr.size else 0.0,
                          float(np.linalg.eigvalsh(Q)[0]))
