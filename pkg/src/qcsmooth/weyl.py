"""Weyl quantization on a truncated periodic position grid.

Conventions
-----------
Positions ``x_j = -L + j dx`` (``j = 0..n-1``, ``dx = 2L/n``), momenta
``xi_m = (m - n/2) pi / L`` so the dual grid runs from ``-Xi`` to
``Xi - dxi`` with Nyquist cutoff ``Xi = pi/dx``. Operators act on coefficient
vectors normalised in the plain Euclidean norm, so a function ``u`` is stored
as ``u(x_j) dx^(d/2)``.

The discrete kernel is

    A_jk = n^-d  sum_m  exp(i xi_m . (x_j - x_k)) a(mid_jk, xi_m)

where ``mid_jk`` is by default the midpoint along the minimal-image
displacement on the periodic box (``rule="literal"`` uses ``(x_j + x_k)/2``
as written). Symbols are therefore sampled on the periodic half-grid of
``2n`` midpoints per axis.
"""
from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .potential import ConfigurationError, PotentialModel, japanese_bracket, symbol_values

BOUNDARY_POINTS = 5
BOUNDARY_TOL = 1e-10
MOMENTUM_FRACTION = 0.7
MOMENTUM_TOL = 1e-6


@dataclass(frozen=True)
class GridSpec:
    d: int
    n: int
    L: float

    @property
    def dx(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def dxi(self) -> float:
        return np.pi / self.L

    @property
    def xi_max(self) -> float:
        """Nyquist cutoff pi/dx."""
        return np.pi / self.dx

    @property
    def size(self) -> int:
        return self.n ** self.d

    @property
    def x_axis(self) -> np.ndarray:
        return -self.L + self.dx * np.arange(self.n)

    @property
    def xi_axis(self) -> np.ndarray:
        return (np.arange(self.n) - self.n // 2) * self.dxi

    @property
    def mid_axis(self) -> np.ndarray:
        return -self.L + 0.5 * self.dx * np.arange(2 * self.n)

    @staticmethod
    def _tensor(axis, d):
        mesh = np.meshgrid(*([axis] * d), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    @property
    def positions(self) -> np.ndarray:
        """All grid positions, shape ``(n^d, d)``, row-major."""
        return self._tensor(self.x_axis, self.d)

    @property
    def momenta(self) -> np.ndarray:
        return self._tensor(self.xi_axis, self.d)

    @property
    def midpoints(self) -> np.ndarray:
        return self._tensor(self.mid_axis, self.d)

    @property
    def band_energy(self) -> float:
        """Kinetic energy 1/2 (0.7 Xi)^2 of the resolved momentum band."""
        return 0.5 * (MOMENTUM_FRACTION * self.xi_max) ** 2


def build_grid(d: int, n: int, L: float) -> GridSpec:
    if d not in (1, 2):
        raise ConfigurationError(f"grid dimension must be 1 or 2, got {d}")
    if n < 2 or n & (n - 1):
        raise ConfigurationError(f"points per axis must be a power of two, got {n}")
    if not L > 0:
        raise ConfigurationError(f"box half-width must be positive, got {L}")
    return GridSpec(int(d), int(n), float(L))


@dataclass
class SymbolGrid:
    """Samples of a(x, xi) on (midpoint x momentum) nodes.

    ``values`` has shape ``((2n)^d, n^d)``. ``func`` keeps the generating
    callable when there is one; flow composition and Gaussian averages need it.
    """

    grid: GridSpec
    values: np.ndarray
    label: str = ""
    func: Callable | None = field(default=None, repr=False)

    def __post_init__(self):
        shape = ((2 * self.grid.n) ** self.grid.d, self.grid.size)
        self.values = np.asarray(self.values)
        if self.values.shape != shape:
            raise ValueError(f"symbol array shape {self.values.shape} does not match grid {shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"symbol {self.label!r} has non-finite entries")

    @classmethod
    def from_function(cls, grid: GridSpec, func: Callable, label: str = "") -> "SymbolGrid":
        """Sample ``func(x, xi)``; both arguments carry the dimension on the last axis."""
        x = grid.midpoints[:, None, :]
        xi = grid.momenta[None, :, :]
        vals = np.broadcast_to(func(x, xi), (x.shape[0], xi.shape[1]))
        return cls(grid, np.array(vals), label, func)

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.values) or bool(np.all(self.values.imag == 0))

    def __mul__(self, other: "SymbolGrid") -> "SymbolGrid":
        if other.grid != self.grid:
            raise ValueError("symbols live on different grids")
        func = None
        if self.func is not None and other.func is not None:
            f1, f2 = self.func, other.func
            func = lambda x, xi: f1(x, xi) * f2(x, xi)  # noqa: E731
        return SymbolGrid(self.grid, self.values * other.values, f"({self.label})*({other.label})", func)

    def tensor(self) -> np.ndarray:
        """Values reshaped to ``(2n,)*d + (n,)*d``."""
        g = self.grid
        return self.values.reshape((2 * g.n,) * g.d + (g.n,) * g.d)


@dataclass
class OperatorMatrix:
    grid: GridSpec
    entries: np.ndarray
    hermitian: bool = False
    label: str = ""
    asymmetry: float = 0.0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        N = self.grid.size
        if self.entries.shape != (N, N):
            raise ValueError(f"operator shape {self.entries.shape} does not match grid size {N}")

    def __matmul__(self, other):
        if isinstance(other, OperatorMatrix):
            return OperatorMatrix(self.grid, self.entries @ other.entries, label=f"{self.label}@{other.label}")
        return self.entries @ other

    def norm(self) -> float:
        return spectral_norm(self.entries)

    def hermitian_defect(self) -> float:
        A = self.entries
        scale = np.max(np.abs(A)) or 1.0
        return float(np.max(np.abs(A - A.conj().T)) / scale)

    def save(self, path) -> None:
        """Flat little-endian layout: int64 d, int64 n, float64 L, then row-major complex128."""
        with open(path, "wb") as fh:
            fh.write(struct.pack("<qqd", self.grid.d, self.grid.n, self.grid.L))
            fh.write(np.ascontiguousarray(self.entries, dtype="<c16").tobytes())

    @classmethod
    def load(cls, path, label: str = "") -> "OperatorMatrix":
        with open(path, "rb") as fh:
            d, n, L = struct.unpack("<qqd", fh.read(24))
            grid = build_grid(d, n, L)
            data = np.frombuffer(fh.read(), dtype="<c16")
        if data.size != grid.size ** 2:
            raise ValueError(f"{path}: expected {grid.size ** 2} entries, found {data.size}")
        A = data.reshape(grid.size, grid.size).copy()
        op = cls(grid, A, label=label)
        op.hermitian = op.hermitian_defect() <= 1e-12
        return op


def spectral_norm(A) -> float:
    if np.allclose(A, A.conj().T, atol=0, rtol=0):
        return float(np.max(np.abs(np.linalg.eigvalsh(A)))) if A.size else 0.0
    return float(np.linalg.norm(A, 2))


MIDPOINT_RULES = ("minimal_image", "literal")
MIDPOINT_RULE = "minimal_image"


def _pair_indices(grid: GridSpec, rule: str | None = None):
    """Flattened (midpoint, displacement) indices for every matrix entry.

    ``"minimal_image"`` takes the midpoint along the shortest periodic
    displacement, so a symbol localised in the box gives a kernel with no
    seam artefacts. ``"literal"`` uses ``(x_j + x_k)/2`` verbatim; it is
    exactly Hermitian and reproduces ``(x B + B x)/2`` for symbols linear in x,
    but smooth compactly supported symbols pick up wrap-around terms.
    """
    rule = rule or MIDPOINT_RULE
    if rule not in MIDPOINT_RULES:
        raise ConfigurationError(f"unknown midpoint rule {rule!r}")
    n, d = grid.n, grid.d
    j = np.arange(n)
    J, K = np.meshgrid(j, j, indexing="ij")
    delta = J - K
    if rule == "literal":
        mid1 = J + K
    else:
        wrapped = (delta + n // 2) % n - n // 2
        mid1 = (2 * K + wrapped) % (2 * n)
    disp1 = delta % n
    if d == 1:
        return mid1, disp1
    # d = 2: rows (j1, j2), columns (k1, k2)
    mid = mid1[:, None, :, None] * (2 * n) + mid1[None, :, None, :]
    disp = disp1[:, None, :, None] * n + disp1[None, :, None, :]
    N = n * n
    return mid.reshape(N, N), disp.reshape(N, N)


def _kernel_table(sym: SymbolGrid) -> np.ndarray:
    """F[s, delta] = n^-d sum_m exp(i xi_m . delta dx) a(mid_s, xi_m)."""
    g = sym.grid
    n, d = g.n, g.d
    vals = sym.tensor()
    xi_axes = tuple(range(d, 2 * d))
    F = np.fft.ifftn(vals, axes=xi_axes)
    # xi_m = (m - n/2) dxi contributes a factor (-1)^delta per axis
    sign = (-1.0) ** np.arange(n)
    for ax in xi_axes:
        shape = [1] * (2 * d)
        shape[ax] = n
        F = F * sign.reshape(shape)
    return F.reshape((2 * n) ** d, n ** d)


def quantize_symbol(sym: SymbolGrid, symmetrize: bool | None = None,
                    rule: str | None = None) -> OperatorMatrix:
    """Dense matrix of Op(a) on the grid.

    Real symbols are Hermitian-symmetrised; the pre-symmetrisation defect
    (nonzero only through the seam pairs |j - k| = n/2) is kept in
    ``asymmetry``.
    """
    g = sym.grid
    mid, disp = _pair_indices(g, rule)
    A = _kernel_table(sym)[mid, disp]
    real = sym.is_real
    if symmetrize is None:
        symmetrize = real
    scale = np.max(np.abs(A)) or 1.0
    asym = float(np.max(np.abs(A - A.conj().T)) / scale)
    if symmetrize:
        A = 0.5 * (A + A.conj().T)
    return OperatorMatrix(g, A, hermitian=bool(symmetrize), label=sym.label, asymmetry=asym)


def fourier_matrix(grid: GridSpec) -> np.ndarray:
    """Unitary map from position coefficients to momentum coefficients (order of ``grid.momenta``)."""
    n = grid.n
    x = grid.x_axis
    xi = grid.xi_axis
    F1 = np.exp(-1j * np.outer(xi, x)) / np.sqrt(n)
    F = F1
    for _ in range(grid.d - 1):
        F = np.kron(F, F1)
    return F


def multiplier_matrix(grid: GridSpec, values_on_momenta) -> np.ndarray:
    """Fourier multiplier F^* diag(m) F for values given on ``grid.momenta``."""
    F = fourier_matrix(grid)
    return F.conj().T @ (np.asarray(values_on_momenta)[:, None] * F)


# ---------------------------------------------------------------------------
# Symbols used throughout


def symbol_power(model: PotentialModel, gamma: float, R: float, grid: GridSpec) -> SymbolGrid:
    """(R^2 + p)^gamma on the grid."""
    if R < 1:
        raise ValueError("R must be >= 1")
    if gamma > 0.5:
        raise ValueError("gamma must not exceed 1/2")

    def f(x, xi):
        return (R * R + symbol_values(model, x, xi)) ** gamma

    return SymbolGrid.from_function(grid, f, f"(R^2+p)^{gamma:g}, R={R:g}")


def fR_function(model: PotentialModel, nu: float, R: float):
    def f(x, xi):
        return japanese_bracket(np.asarray(x) / R) ** (-2.0 * nu) * np.sqrt(R * R + symbol_values(model, x, xi))
    return f


def symbol_fR(model: PotentialModel, nu: float, R: float, grid: GridSpec) -> SymbolGrid:
    """<x/R>^(-2 nu) sqrt(R^2 + p)."""
    if nu <= 0.5 or R < 1:
        raise ValueError("need nu > 1/2 and R >= 1")
    return SymbolGrid.from_function(grid, fR_function(model, nu, R), f"f_R, nu={nu:g}, R={R:g}")


# ---------------------------------------------------------------------------
# Resolution diagnostics


def band_masses(vectors, grid: GridSpec):
    """Mass near the box edge and above 0.7 Xi for each column of ``vectors``.

    Returns ``(boundary_mass, high_momentum_mass)``; the boundary layer is
    the outermost ``BOUNDARY_POINTS`` grid points along any axis.
    """
    V = np.asarray(vectors)
    if V.ndim == 1:
        V = V[:, None]
    pos = grid.positions
    edge = np.zeros(grid.size, dtype=bool)
    for i in range(grid.d):
        idx = np.rint((pos[:, i] + grid.L) / grid.dx).astype(int)
        edge |= (idx < BOUNDARY_POINTS) | (idx >= grid.n - BOUNDARY_POINTS)
    p2 = np.abs(V) ** 2
    boundary = p2[edge].sum(axis=0)
    Vf = fourier_matrix(grid) @ V
    high = np.any(np.abs(grid.momenta) > MOMENTUM_FRACTION * grid.xi_max, axis=1)
    momentum = (np.abs(Vf[high]) ** 2).sum(axis=0)
    return boundary, momentum


def resolved_mask(vectors, grid: GridSpec):
    b, m = band_masses(vectors, grid)
    return (b <= BOUNDARY_TOL) & (m <= MOMENTUM_TOL)


def resolved_basis(grid: GridSpec, fraction: float = 1.0) -> np.ndarray:
    """Orthonormal basis of grid functions localised inside the box and the band.

    Eigenvectors of a reference oscillator ``(x/wL)^2/2 + (xi/Xi)^2/2``
    (``w = fraction``) filtered by :func:`resolved_mask`; it gives a
    potential-independent notion of the subspace on which the discretisation
    is faithful. With ``fraction <= 1/2`` the kept vectors also carry at most
    ``BOUNDARY_TOL`` mass outside ``|x_i| < w L``, so no pair of points in
    their support straddles the periodic seam.
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    pos = grid.positions
    K = multiplier_matrix(grid, 0.5 * np.sum((grid.momenta / grid.xi_max) ** 2, axis=1))
    H = K + np.diag(0.5 * np.sum((pos / (fraction * grid.L)) ** 2, axis=1))
    _, U = np.linalg.eigh(0.5 * (H + H.conj().T))
    keep = resolved_mask(U, grid)
    if fraction < 1:
        outside = np.any(np.abs(pos) >= fraction * grid.L, axis=1)
        keep &= (np.abs(U[outside]) ** 2).sum(axis=0) <= BOUNDARY_TOL
    return U[:, keep]


# ---------------------------------------------------------------------------
# Symbol-calculus certificates


def derivative_surrogates(sym: SymbolGrid, max_order: int) -> dict:
    """max |finite difference| per derivative order over the symbol grid.

    Differences use the midpoint spacing dx/2 in position and dxi in momentum.
    Returns ``{order: value}`` for ``1..max_order`` (order 0 is max |a|).
    """
    g = sym.grid
    arr = sym.tensor()
    steps = [0.5 * g.dx] * g.d + [g.dxi] * g.d
    out = {0: float(np.max(np.abs(arr)))}
    for k in range(1, max_order + 1):
        best = 0.0
        for combo in itertools.combinations_with_replacement(range(2 * g.d), k):
            D = arr
            for ax in combo:
                D = np.diff(D, axis=ax) / steps[ax]
            if D.size:
                best = max(best, float(np.max(np.abs(D))))
        out[k] = best
    return out


def seminorm_surrogate(sym: SymbolGrid, max_order: int = 4) -> float:
    return max(derivative_surrogates(sym, max_order).values())


@dataclass
class ComposeReport:
    residual_norm: float
    resolved_residual_norm: float
    gradient_product: float
    factor: float


def compose_residual(a1: SymbolGrid, a2: SymbolGrid, basis=None) -> ComposeReport:
    """Spectral norm of Op(a1) Op(a2) - Op(a1 a2) and its gradient-product control.

    ``resolved_residual_norm`` is the norm compressed to ``basis`` (default
    ``resolved_basis(grid, 0.5)``), discarding the seam and beyond-band
    artefacts of the periodic box. ``factor`` is resolved residual / gradient product.
    """
    if a1.grid != a2.grid:
        raise ValueError("symbols live on different grids")
    A1, A2 = quantize_symbol(a1), quantize_symbol(a2)
    A12 = quantize_symbol(a1 * a2)
    D = A1.entries @ A2.entries - A12.entries
    if basis is None:
        basis = resolved_basis(a1.grid, 0.5)
    Dr = basis.conj().T @ D @ basis
    g1 = derivative_surrogates(a1, 1)[1]
    g2 = derivative_surrogates(a2, 1)[1]
    prod = g1 * g2
    res = float(np.linalg.norm(Dr, 2)) if Dr.size else 0.0
    return ComposeReport(
        residual_norm=float(np.linalg.norm(D, 2)),
        resolved_residual_norm=res,
        gradient_product=prod,
        factor=res / prod if prod > 0 else (0.0 if res == 0 else np.inf),
    )


def gaarding_floor(a: SymbolGrid) -> float:
    """Smallest eigenvalue of Op(a)."""
    if not a.is_real:
        raise ValueError("sharp Gårding floor needs a real symbol")
    return float(np.linalg.eigvalsh(quantize_symbol(a).entries)[0])


@dataclass
class GaardingCertificate:
    min_eigenvalue: float
    hessian_norm: float
    c: float
    passed: bool


def gaarding_certificate(a: SymbolGrid, c: float = 1.0) -> GaardingCertificate:
    """Check Op(a) >= -c |Hess a| with |Hess a| the max second finite difference."""
    lam = gaarding_floor(a)
    hess = derivative_surrogates(a, 2)[2]
    return GaardingCertificate(lam, hess, c, bool(lam >= -c * hess - 1e-12))
