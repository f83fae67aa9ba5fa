"""Confining potentials, the Hamiltonian symbol, and an empirical check of the
sub-quadratic growth conditions.

Positions are arrays whose last axis has length ``d``; every function here
broadcasts over leading axes.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb

import numpy as np

KINDS = ("harmonic", "bracket_power", "anharmonic_perturbation")


class ConfigurationError(ValueError):
    """Invalid model, grid or run parameters."""


def japanese_bracket(x):
    """<x> = sqrt(1 + |x|^2) over the last axis."""
    x = np.asarray(x, dtype=float)
    return np.sqrt(1.0 + np.sum(x * x, axis=-1))


@dataclass(frozen=True)
class PotentialModel:
    """A non-negative confining potential with ``V(0) = 0``.

    ``kind`` selects the family:

    * ``harmonic``: ``V = |x|^2 / 2``; requires ``m = 1``.
    * ``bracket_power``: ``V = <x>^(2s) - 1`` with ``s = coefficients[0]``
      when given, otherwise ``s = m``. Declaring ``s != m`` is allowed so that
      :func:`check_assumption` can be exercised on mis-declared models.
    * ``anharmonic_perturbation``: ``V = |x|^2/2 + eps (1 - cos(k|x|)) exp(-|x|^2 / (2 w^2))``
      with ``coefficients = (eps, k, w)``, default ``(0.5, 2.0, 3.0)``.
    """

    kind: str = "harmonic"
    m: float = 1.0
    coefficients: tuple = ()
    dimension: int = 1

    def __post_init__(self):
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown potential kind {self.kind!r}; expected one of {KINDS}")
        if not (0.0 < self.m <= 1.0):
            raise ConfigurationError(f"m must lie in (0, 1], got {self.m}")
        if int(self.dimension) != self.dimension or self.dimension < 1:
            raise ConfigurationError(f"dimension must be a positive integer, got {self.dimension}")
        if self.kind == "harmonic":
            if self.m != 1.0:
                raise ConfigurationError("harmonic potential has m = 1")
            if self.coefficients:
                raise ConfigurationError("harmonic potential takes no coefficients")
        elif self.kind == "bracket_power":
            if len(self.coefficients) > 1:
                raise ConfigurationError("bracket_power takes at most one coefficient (growth exponent)")
            if self.coefficients and self.coefficients[0] <= 0:
                raise ConfigurationError("bracket_power growth exponent must be positive")
        else:
            if len(self.coefficients) not in (0, 3):
                raise ConfigurationError("anharmonic_perturbation takes coefficients (eps, k, w)")
            eps, k, w = self._anharmonic_params()
            if eps < 0 or k <= 0 or w <= 0:
                raise ConfigurationError("anharmonic_perturbation needs eps >= 0, k > 0, w > 0")

    @classmethod
    def from_dict(cls, spec: dict) -> "PotentialModel":
        return cls(
            kind=spec.get("kind", "harmonic"),
            m=float(spec.get("m", 1.0)),
            coefficients=tuple(spec.get("coefficients", ())),
            dimension=int(spec.get("dimension", 1)),
        )

    def to_dict(self) -> dict:
        return {"kind": self.kind, "m": self.m, "coefficients": list(self.coefficients),
                "dimension": self.dimension}

    @property
    def growth_exponent(self) -> float:
        """Actual exponent s in V ~ <x>^(2s); differs from ``m`` only for mis-declared models."""
        if self.kind == "bracket_power" and self.coefficients:
            return self.coefficients[0]
        return 1.0 if self.kind != "bracket_power" else self.m

    def _anharmonic_params(self):
        return self.coefficients if self.coefficients else (0.5, 2.0, 3.0)

    def _check_shape(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            x = x[None]
        if x.shape[-1] != self.dimension:
            raise ConfigurationError(f"expected positions with last axis {self.dimension}, got shape {x.shape}")
        return x

    def potential(self, x):
        x = self._check_shape(x)
        r2 = np.sum(x * x, axis=-1)
        if self.kind == "harmonic":
            return 0.5 * r2
        if self.kind == "bracket_power":
            return (1.0 + r2) ** self.growth_exponent - 1.0
        eps, k, w = self._anharmonic_params()
        r = np.sqrt(r2)
        return 0.5 * r2 + eps * (1.0 - np.cos(k * r)) * np.exp(-r2 / (2.0 * w * w))

    def gradient(self, x):
        x = self._check_shape(x)
        r2 = np.sum(x * x, axis=-1, keepdims=True)
        if self.kind == "harmonic":
            return x.copy()
        if self.kind == "bracket_power":
            s = self.growth_exponent
            return 2.0 * s * (1.0 + r2) ** (s - 1.0) * x
        eps, k, w = self._anharmonic_params()
        r = np.sqrt(r2)
        env = np.exp(-r2 / (2.0 * w * w))
        # sin(kr)/r written through sinc so the origin is regular
        sin_over_r = k * np.sinc(k * r / np.pi)
        radial = eps * env * (sin_over_r * k - (1.0 - np.cos(k * r)) / (w * w))
        return x + radial * x


@dataclass
class PhasePoint:
    """A point (x, xi) of phase space."""

    x: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_1d(np.asarray(self.x, dtype=float)).copy()
        self.xi = np.atleast_1d(np.asarray(self.xi, dtype=float)).copy()
        if self.x.shape != self.xi.shape or self.x.ndim != 1:
            raise ValueError(f"x and xi must be vectors of equal length, got {self.x.shape}, {self.xi.shape}")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.xi))):
            raise ValueError("phase point has non-finite components")

    @property
    def dimension(self) -> int:
        return self.x.size

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.x, self.xi])

    @classmethod
    def from_array(cls, rho) -> "PhasePoint":
        rho = np.asarray(rho, dtype=float)
        d = rho.size // 2
        return cls(rho[:d], rho[d:])


def eval_potential(model: PotentialModel, x):
    """V(x); scalar input for a single point, array for a batch."""
    x = np.asarray(x, dtype=float)
    v = model.potential(x)
    return float(v) if x.ndim <= 1 else v


def eval_gradient(model: PotentialModel, x):
    x = np.asarray(x, dtype=float)
    g = model.gradient(x)
    return g.reshape(model.dimension) if x.ndim <= 1 else g


def symbol_values(model: PotentialModel, x, xi):
    """p(x, xi) = |xi|^2/2 + V(x) on broadcast arrays (last axis d)."""
    xi = np.asarray(xi, dtype=float)
    return 0.5 * np.sum(xi * xi, axis=-1) + model.potential(x)


def eval_symbol(model: PotentialModel, rho: PhasePoint) -> float:
    return float(symbol_values(model, rho.x, rho.xi))


# ---------------------------------------------------------------------------
# Empirical check of the growth conditions


@dataclass
class OrderBound:
    order: int
    sup_ratio: float
    nested_sups: list
    growth: float
    divergent: bool


@dataclass
class AssumptionReport:
    m: float
    half_width: float
    max_order: int
    orders: list = field(default_factory=list)
    upper_constant: float = float("nan")
    lower_constant: float = float("nan")
    squeeze_divergent: bool = False
    nonnegative: bool = True
    passed: bool = True
    note: str = ""

    def summary(self) -> str:
        lines = [f"m={self.m} box=[-{self.half_width},{self.half_width}]^d max_order={self.max_order}"]
        for ob in self.orders:
            flag = "DIVERGES" if ob.divergent else "bounded"
            lines.append(f"  |a|={ob.order}: sup ratio {ob.sup_ratio:.4g} (growth {ob.growth:.3f}) {flag}")
        lines.append(f"  squeeze: upper C={self.upper_constant:.4g}, lower C={self.lower_constant:.4g}"
                     f"{' DIVERGES' if self.squeeze_divergent else ''}")
        lines.append(f"  passed={self.passed}; {self.note}")
        return "\n".join(lines)


def _multi_indices(d, order):
    for combo in itertools.combinations_with_replacement(range(d), order):
        alpha = [0] * d
        for i in combo:
            alpha[i] += 1
        yield tuple(alpha)


def _fd_derivative(model, pts, alpha, rel_step):
    """Central finite difference of V for multi-index alpha with step rel_step*<x>."""
    h = rel_step * japanese_bracket(pts)
    total = np.zeros(len(pts))
    axis_stencils = []
    for i, a in enumerate(alpha):
        if a == 0:
            continue
        axis_stencils.append([(i, a / 2.0 - j, (-1) ** j * comb(a, j)) for j in range(a + 1)])
    for terms in itertools.product(*axis_stencils):
        shift = np.zeros_like(pts)
        coef = 1.0
        for i, offset, c in terms:
            shift[:, i] += offset
            coef *= c
        total += coef * model.potential(pts + shift * h[:, None])
    return total / h ** sum(alpha)


def _sample_points(d, half_width, points_per_axis, seed):
    if d <= 2:
        axis = np.linspace(-half_width, half_width, points_per_axis)
        mesh = np.meshgrid(*([axis] * d), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-half_width, half_width, size=(points_per_axis ** 2, d))
    return np.vstack([np.zeros((1, d)), pts])


def _lower_constant(v, bracket_pow):
    """Smallest C >= 1 with bracket_pow / C - C <= v on all samples."""
    def ok(c):
        return np.all(bracket_pow / c - c <= v + 1e-12)
    lo, hi = 1.0, 2.0
    if ok(lo):
        return 1.0
    while not ok(hi):
        hi *= 2.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if ok(mid) else (mid, hi)
    return hi


def check_assumption(model: PotentialModel, sample_box=(10.0, 201), max_order: int = 2,
                     rel_step: float = 0.02, growth_tol: float = 1.25, seed: int = 0) -> AssumptionReport:
    """Estimate the symbol-type bounds on V and its derivatives over a box.

    ``sample_box`` is ``(half_width, points_per_axis)``. For each order
    ``k <= max_order`` the sup of ``|d^a V| / <x>^(2m-k)`` is computed on the
    nested boxes of half-width ``L/4, L/2, L``; a ratio whose sup keeps growing
    by more than ``growth_tol`` between the two outer boxes is reported as
    divergent. Only finitely many orders are checked, which the report states.
    """
    if max_order > 4:
        raise ConfigurationError("max_order above 4 is not supported by the finite-difference estimator")
    half_width, npts = sample_box
    d = model.dimension
    pts = _sample_points(d, float(half_width), int(npts), seed)
    radius = np.max(np.abs(pts), axis=-1)
    brk = japanese_bracket(pts)
    shells = [half_width / 4.0, half_width / 2.0, half_width]
    report = AssumptionReport(m=model.m, half_width=float(half_width), max_order=max_order)

    def nested(values):
        return [float(np.max(values[radius <= s + 1e-12])) for s in shells]

    def diverges(sups):
        # growth across both doublings, and clearly across the outer one
        g_out = sups[2] / sups[1] if sups[1] > 0 else (np.inf if sups[2] > 0 else 1.0)
        g_in = sups[1] / sups[0] if sups[0] > 0 else (np.inf if sups[1] > 0 else 1.0)
        return g_out, bool(g_out > growth_tol and g_in > 1.0)

    v = model.potential(pts)
    report.nonnegative = bool(np.all(v >= -1e-12))
    for order in range(max_order + 1):
        if order == 0:
            deriv = np.abs(v)
        else:
            deriv = np.max([np.abs(_fd_derivative(model, pts, a, rel_step)) for a in _multi_indices(d, order)],
                           axis=0)
        ratio = deriv / brk ** (2.0 * model.m - order)
        sups = nested(ratio)
        growth, div = diverges(sups)
        report.orders.append(OrderBound(order, sups[-1], sups, float(growth), div))

    bp = brk ** (2.0 * model.m)
    report.upper_constant = float(np.max(v / bp))
    lowers = [_lower_constant(v[radius <= s + 1e-12], bp[radius <= s + 1e-12]) for s in shells]
    report.lower_constant = float(lowers[-1])
    _, report.squeeze_divergent = diverges(lowers)
    report.passed = bool(report.nonnegative and not report.squeeze_divergent
                         and not any(ob.divergent for ob in report.orders))
    report.note = f"derivative bounds checked up to order {max_order} only"
    return report
