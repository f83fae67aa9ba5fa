"""Hamiltonian flow of p = |xi|^2/2 + V(x): Störmer-Verlet integration,
trajectory integrals, occupation times and the classical escape-rate constant.

Batch routines operate on arrays of shape ``(N, d)`` so that sweeps over many
initial conditions advance in lock-step with one Python loop over time.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .potential import ConfigurationError, PhasePoint, PotentialModel, symbol_values

DEFAULT_STEP = 1e-3
DEFAULT_DRIFT_TOL = 1e-6


class IntegrationError(RuntimeError):
    """Energy drift exceeded the tolerance during integration."""


@dataclass
class Trajectory:
    times: np.ndarray      # (N+1,)
    x: np.ndarray          # (N+1, d)
    xi: np.ndarray         # (N+1, d)
    step: float
    energy0: float

    @property
    def samples(self):
        return [(float(t), PhasePoint(x, xi)) for t, x, xi in zip(self.times, self.x, self.xi)]

    @property
    def final(self) -> PhasePoint:
        return PhasePoint(self.x[-1], self.xi[-1])

    def energy_drift(self, model: PotentialModel) -> float:
        e = symbol_values(model, self.x, self.xi)
        return float(np.max(np.abs(e - self.energy0)) / (1.0 + self.energy0))


def _n_steps(T, h):
    if h <= 0:
        raise ValueError("time step must be positive")
    # a hair of slack so T = k*h does not round up to k+1 steps
    return max(1, math.ceil(T / h - 1e-9))


def verlet_steps(model: PotentialModel, x, xi, h, n_steps, observe=None, drift_tol=None):
    """Advance batches of phase points by ``n_steps`` Störmer-Verlet steps.

    ``observe(k, x, xi)`` is called at every sample ``k = 0..n_steps``. With
    ``drift_tol`` set, relative energy drift is checked at each sample and an
    :class:`IntegrationError` names the first offending time.
    Returns the final ``(x, xi)``; inputs are not modified.
    """
    x = np.array(x, dtype=float)
    xi = np.array(xi, dtype=float)
    if drift_tol is not None:
        e0 = symbol_values(model, x, xi)
        scale = 1.0 + e0
    if observe is not None:
        observe(0, x, xi)
    g = model.gradient(x)
    half = 0.5 * h
    for k in range(1, n_steps + 1):
        xi -= half * g
        x += h * xi
        g = model.gradient(x)
        xi -= half * g
        if drift_tol is not None:
            drift = np.abs(symbol_values(model, x, xi) - e0) / scale
            worst = float(np.max(drift))
            if worst > drift_tol:
                raise IntegrationError(f"relative energy drift {worst:.3e} exceeds {drift_tol:.1e} at t={k * h:.6g}")
        if observe is not None:
            observe(k, x, xi)
    return x, xi


def step_verlet(state: PhasePoint, h: float, model: PotentialModel) -> PhasePoint:
    """One symplectic, time-reversible Störmer-Verlet step."""
    if h <= 0:
        raise ValueError("time step must be positive")
    x, xi = verlet_steps(model, state.x[None, :], state.xi[None, :], h, 1)
    return PhasePoint(x[0], xi[0])


def integrate_flow(model: PotentialModel, rho0: PhasePoint, T: float, h: float = DEFAULT_STEP,
                   drift_tol: float | None = DEFAULT_DRIFT_TOL) -> Trajectory:
    """Sample the orbit of ``rho0`` on [0, T].

    Uses ``ceil(T/h)`` steps of the uniform size ``T / ceil(T/h) <= h`` so that
    the last sample sits exactly at ``T``.
    """
    if T <= 0 or not (0 < h <= T):
        raise ValueError("need T > 0 and 0 < h <= T")
    n = _n_steps(T, h)
    step = T / n
    d = rho0.dimension
    xs = np.empty((n + 1, d))
    xis = np.empty((n + 1, d))

    def record(k, x, xi):
        xs[k] = x[0]
        xis[k] = xi[0]

    verlet_steps(model, rho0.x[None, :], rho0.xi[None, :], step, n, observe=record, drift_tol=drift_tol)
    e0 = float(symbol_values(model, rho0.x, rho0.xi))
    return Trajectory(times=step * np.arange(n + 1), x=xs, xi=xis, step=step, energy0=e0)


def escape_weight_integral(traj: Trajectory, nu: float, R: float) -> float:
    """sqrt(R^2 + p(rho0)) * int_0^T <x^t / R>^(-2 nu) dt by the trapezoid rule."""
    if nu <= 0.5 or R < 1:
        raise ValueError("need nu > 1/2 and R >= 1")
    w = (1.0 + np.sum(traj.x ** 2, axis=-1) / R ** 2) ** (-nu)
    integral = traj.step * (np.sum(w) - 0.5 * (w[0] + w[-1]))
    return float(math.sqrt(R * R + traj.energy0) * integral)


def occupation_time(traj: Trajectory, r: float) -> float:
    """Time spent in the open ball |x| < r, left-endpoint rule."""
    if r < 0:
        raise ValueError("radius must be non-negative")
    inside = np.sqrt(np.sum(traj.x[:-1] ** 2, axis=-1)) < r
    return float(traj.step * np.count_nonzero(inside))


def batch_escape_integrals(model: PotentialModel, x0, xi0, T, nu, R, h=DEFAULT_STEP,
                           drift_tol=DEFAULT_DRIFT_TOL):
    """Escape-weight integrals for a batch of initial points ``(N, d)``."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    xi0 = np.atleast_2d(np.asarray(xi0, dtype=float))
    h = min(h, T)
    n = _n_steps(T, h)
    step = T / n
    acc = np.zeros(len(x0))
    inv_r2 = 1.0 / (R * R)

    def accumulate(k, x, xi):
        w = (1.0 + inv_r2 * np.sum(x * x, axis=-1)) ** (-nu)
        acc[:] += w if 0 < k < n else 0.5 * w

    verlet_steps(model, x0, xi0, step, n, observe=accumulate, drift_tol=drift_tol)
    energy = symbol_values(model, x0, xi0)
    return np.sqrt(R * R + energy) * step * acc


def batch_occupation_times(model: PotentialModel, x0, xi0, T, r, h=DEFAULT_STEP,
                           drift_tol=DEFAULT_DRIFT_TOL):
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    xi0 = np.atleast_2d(np.asarray(xi0, dtype=float))
    n = _n_steps(T, h)
    step = T / n
    count = np.zeros(len(x0))

    def accumulate(k, x, xi):
        if k < n:
            count[:] += np.sum(x * x, axis=-1) < r * r

    verlet_steps(model, x0, xi0, step, n, observe=accumulate, drift_tol=drift_tol)
    return step * count


def flow_jacobian(model: PotentialModel, rho0: PhasePoint, t: float, h_fd: float = 1e-5,
                  h: float = DEFAULT_STEP) -> np.ndarray:
    """Central finite-difference Jacobian of the (discrete) flow map at ``rho0``."""
    d = rho0.dimension
    base = rho0.as_array()
    if t == 0:
        return np.eye(2 * d)
    pts = np.repeat(base[None, :], 4 * d, axis=0)
    for i in range(2 * d):
        pts[2 * i, i] += h_fd
        pts[2 * i + 1, i] -= h_fd
    n = _n_steps(abs(t), min(h, abs(t)))
    x, xi = verlet_steps(model, pts[:, :d], pts[:, d:], math.copysign(abs(t) / n, t), n)
    out = np.concatenate([x, xi], axis=1)
    return ((out[0::2] - out[1::2]) / (2.0 * h_fd)).T


# ---------------------------------------------------------------------------
# Sup over phase space


@dataclass
class SearchConfig:
    E_max: float = 1e3
    shells: int = 32
    samples_per_shell: int = 64
    top_k: int = 4
    refine_iters: int = 60
    h: float = DEFAULT_STEP
    drift_tol: float = DEFAULT_DRIFT_TOL
    seed: int = 0
    refine_tol: float = 1e-6

    @classmethod
    def from_dict(cls, d: dict) -> "SearchConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown search config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ClassicalConstantEstimate:
    value: float
    argmax: PhasePoint
    R: float
    nu: float
    T: float
    samples_used: int
    refinement_converged: bool
    argmax_energy: float = 0.0
    cutoff_saturated: bool = False
    diagnostics: np.ndarray | None = field(default=None, repr=False)


def _ray_radius(model, direction, E, s_hi=1.0):
    """Radius s with p(s * direction) = E along a phase-space ray (bisection)."""
    d = model.dimension
    dx, dxi = direction[:, :d], direction[:, d:]

    def p_at(s):
        s = s[:, None]
        return symbol_values(model, s * dx, s * dxi)

    lo = np.zeros(len(direction))
    hi = np.full(len(direction), float(s_hi))
    while True:
        low = p_at(hi) < E
        if not np.any(low):
            break
        hi[low] *= 2.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        below = p_at(mid) < E
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def sample_energy_shell(model: PotentialModel, E: float, count: int, rng) -> np.ndarray:
    """``count`` points on {p = E}, angularly uniform along rays from the origin.

    Returns an array ``(count, 2d)``; for ``E = 0`` this is the origin.
    """
    d = model.dimension
    if E <= 0:
        return np.zeros((1, 2 * d))
    if d == 1:
        # evenly spaced angles with a random offset: a stratified circle
        theta = 2 * np.pi * (np.arange(count) + rng.uniform()) / count
        direction = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    else:
        direction = rng.normal(size=(count, 2 * d))
        direction /= np.linalg.norm(direction, axis=-1, keepdims=True)
    s = _ray_radius(model, direction, E)
    return direction * s[:, None]


def _order_key(values, energies, points):
    # larger value first, ties broken by lower energy then lexicographic coordinates
    keys = [points[:, i] for i in reversed(range(points.shape[1]))] + [energies, -values]
    return np.lexsort(keys)


def classical_constant(model: PotentialModel, T: float, nu: float, R: float,
                       search: SearchConfig | None = None, initial_points=None,
                       diagnostics: bool = False) -> ClassicalConstantEstimate:
    """Estimate sup over phase space of the escape-weight integral.

    Stratified sampling on energy shells ``E_k`` equally spaced in
    ``[0, E_max]`` is followed by a batched compass search (coordinate-wise
    pattern search with step halving) started from the ``top_k`` samples.
    ``initial_points`` (``(M, 2d)``) are evaluated alongside the shells, which
    lets an R-sweep seed each run with the previous argmax.
    """
    search = search or SearchConfig()
    if nu <= 0.5:
        raise ValueError("nu must exceed 1/2")
    if not math.isfinite(search.E_max) or search.E_max <= 0:
        raise ValueError("E_max must be finite and positive")
    d = model.dimension
    rng = np.random.default_rng(search.seed)
    energies = np.linspace(0.0, search.E_max, search.shells)
    pts = [sample_energy_shell(model, E, search.samples_per_shell, rng) for E in energies]
    if initial_points is not None:
        pts.append(np.atleast_2d(np.asarray(initial_points, dtype=float)))
    pts = np.vstack(pts)
    h = min(search.h, T)

    def evaluate(batch):
        return batch_escape_integrals(model, batch[:, :d], batch[:, d:], T, nu, R, h=h,
                                      drift_tol=search.drift_tol)

    vals = evaluate(pts)
    pe = symbol_values(model, pts[:, :d], pts[:, d:])
    diag = np.column_stack([pts, pe, vals]) if diagnostics else None
    order = _order_key(vals, pe, pts)
    starts = pts[order[: search.top_k]].copy()
    start_vals = vals[order[: search.top_k]].copy()

    best, best_val, converged = _compass_search(model, evaluate, starts, start_vals, search)
    cand_e = symbol_values(model, best[:, :d], best[:, d:])
    order = _order_key(best_val, cand_e, best)
    i = order[0]
    arg = PhasePoint.from_array(best[i])
    e_arg = float(cand_e[i])
    return ClassicalConstantEstimate(
        value=float(best_val[i]), argmax=arg, R=R, nu=nu, T=T,
        samples_used=len(pts), refinement_converged=bool(converged[i]),
        argmax_energy=e_arg, cutoff_saturated=bool(e_arg >= 0.95 * search.E_max),
        diagnostics=diag,
    )


def _compass_search(model, evaluate, starts, start_vals, search):
    d2 = starts.shape[1]
    d = d2 // 2
    step = np.full(len(starts), 0.05 * math.sqrt(2.0 * search.E_max) + 0.05)
    cur, cur_val = starts.copy(), start_vals.copy()
    converged = step < search.refine_tol
    dirs = np.vstack([np.eye(d2), -np.eye(d2)])
    for _ in range(search.refine_iters):
        active = ~converged
        if not np.any(active):
            break
        idx = np.flatnonzero(active)
        trial = cur[idx, None, :] + step[idx, None, None] * dirs[None, :, :]
        flat = trial.reshape(-1, d2)
        e = symbol_values(model, flat[:, :d], flat[:, d:])
        vals = np.full(len(flat), -np.inf)
        ok = e <= search.E_max
        if np.any(ok):
            vals[ok] = evaluate(flat[ok])
        vals = vals.reshape(len(idx), len(dirs))
        j = np.argmax(vals, axis=1)
        gain = vals[np.arange(len(idx)), j]
        improved = gain > cur_val[idx]
        for row, i in enumerate(idx):
            if improved[row]:
                cur[i] = trial[row, j[row]]
                cur_val[i] = gain[row]
            else:
                step[i] *= 0.5
        converged = step < search.refine_tol
    return cur, cur_val, converged


def write_diagnostics_csv(estimate: ClassicalConstantEstimate, path) -> None:
    """Per-sample dump with columns x..., xi..., E, integral."""
    if estimate.diagnostics is None:
        raise ValueError("estimate was computed without diagnostics=True")
    d = estimate.argmax.dimension
    header = [f"x{i}" for i in range(d)] + [f"xi{i}" for i in range(d)] + ["E", "integral"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in estimate.diagnostics:
            w.writerow([repr(float(v)) for v in row])
