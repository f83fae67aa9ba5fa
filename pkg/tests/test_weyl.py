import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qcsmooth.potential import ConfigurationError, PotentialModel
from qcsmooth.weyl import (OperatorMatrix, SymbolGrid, band_masses, build_grid, compose_residual,
                           derivative_surrogates, fR_function, fourier_matrix, gaarding_certificate, gaarding_floor,
                           multiplier_matrix, quantize_symbol, resolved_basis, seminorm_surrogate, symbol_fR,
                           symbol_power)

FIVE_QUARTER = 1.49534878122122054191189899414
FR_AT_3 = 0.234520787991171477728281505677
# single constant bounding |Op(a)| over the random suite with seminorm surrogate 1
CV_CONSTANT = 1.0

HARMONIC = PotentialModel("harmonic", 1.0)


def sym(grid, f, label=""):
    return SymbolGrid.from_function(grid, f, label)


def one(x, xi):
    return np.ones(np.broadcast_shapes(x.shape[:-1], xi.shape[:-1]))


def xcoord(x, xi):
    return x[..., 0] + 0 * xi[..., 0]


def xicoord(x, xi):
    return xi[..., 0] + 0 * x[..., 0]


@pytest.fixture(scope="module")
def g128():
    return build_grid(1, 128, 8.0)


@pytest.fixture(scope="module")
def g256():
    return build_grid(1, 256, 16.0)


def test_grid_examples():
    g = build_grid(1, 256, 16.0)
    assert g.dx == 0.125
    assert g.xi_max == pytest.approx(8 * np.pi)
    g2 = build_grid(1, 2, 1.0)
    assert g2.dx == 1.0
    assert np.allclose(g2.xi_axis, [-np.pi, 0.0])
    assert build_grid(2, 64, 8.0).size == 4096


@pytest.mark.parametrize("args", [(1, 100, 4.0), (1, 128, 0.0), (3, 8, 1.0), (1, 1, 1.0)])
def test_grid_rejects(args):
    with pytest.raises(ConfigurationError):
        build_grid(*args)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([2, 4, 16, 128]), st.floats(0.5, 50))
def test_dual_consistency(n, L):
    g = build_grid(1, n, L)
    assert g.dx * g.xi_max == pytest.approx(np.pi)
    assert g.dxi == pytest.approx(2 * g.xi_max / n)


def test_identity(g256):
    A = quantize_symbol(sym(g256, one)).entries
    assert np.max(np.abs(A - np.eye(g256.size))) <= 1e-10


def test_position_multiplication(g256):
    A = quantize_symbol(sym(g256, xcoord)).entries
    assert np.max(np.abs(A - np.diag(g256.x_axis))) <= 1e-10 * np.max(np.abs(g256.x_axis))


def test_plane_wave_eigenvalue(g256):
    A = quantize_symbol(sym(g256, lambda x, xi: xi[..., 0] ** 2 + 0 * x[..., 0])).entries
    for m in (0, 3, 100, 128, 255):
        xi0 = g256.xi_axis[m]
        u = np.exp(1j * xi0 * g256.x_axis) / np.sqrt(g256.n)
        assert np.linalg.norm(A @ u - xi0 ** 2 * u) <= 1e-10 * max(xi0 ** 2, 1.0)


@pytest.mark.parametrize("d,n", [(1, 64), (2, 16)])
def test_multiplication_exactness(d, n):
    g = build_grid(d, n, 5.0)
    A = quantize_symbol(sym(g, lambda x, xi: np.cos(np.sum(x, -1)) * np.exp(-np.sum(x * x, -1) / 8)
                            + 0 * xi[..., 0])).entries
    off = A - np.diag(np.diag(A))
    assert np.max(np.abs(off)) <= 1e-10 * np.max(np.abs(A))


@pytest.mark.parametrize("d,n", [(1, 64), (2, 16)])
def test_fourier_multiplier_exactness(d, n):
    g = build_grid(d, n, 5.0)
    vals = lambda x, xi: np.sqrt(1 + np.sum(xi * xi, -1)) + 0 * x[..., 0]  # noqa: E731
    A = quantize_symbol(sym(g, vals)).entries
    F = fourier_matrix(g)
    D = F @ A @ F.conj().T
    expect = np.sqrt(1 + np.sum(g.momenta ** 2, -1))
    assert np.max(np.abs(D - np.diag(expect))) <= 1e-10 * np.max(expect)


def test_multiplier_matrix_matches_quantization(g128):
    A = quantize_symbol(sym(g128, lambda x, xi: 0.5 * xi[..., 0] ** 2 + 0 * x[..., 0])).entries
    B = multiplier_matrix(g128, 0.5 * g128.momenta[:, 0] ** 2)
    assert np.max(np.abs(A - B)) <= 1e-10 * np.max(np.abs(B))


def test_linearity(g128, rng):
    f1 = lambda x, xi: np.exp(-(x[..., 0] ** 2 + xi[..., 0] ** 2) / 3)  # noqa: E731
    f2 = lambda x, xi: np.sin(x[..., 0]) * np.cos(0.5 * xi[..., 0])  # noqa: E731
    a, b = rng.normal(size=2)
    lhs = quantize_symbol(sym(g128, lambda x, xi: a * f1(x, xi) + b * f2(x, xi))).entries
    rhs = a * quantize_symbol(sym(g128, f1)).entries + b * quantize_symbol(sym(g128, f2)).entries
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * np.max(np.abs(rhs))


def test_hermitian_for_real_symbols(g128, g256):
    # the kernel of a unit bump decays like exp(-|x-y|^2/4); on L=16 the seam pairs sit at |x-y| = 16
    op = quantize_symbol(sym(g256, lambda x, xi: np.exp(-((x[..., 0] - 1) ** 2 + (xi[..., 0] + 0.5) ** 2))))
    assert op.hermitian
    assert op.hermitian_defect() <= 1e-12
    assert op.asymmetry <= 1e-8
    # on L=8 the seam sits at distance 8 and the leak exp(-16) shows up before symmetrisation
    tight = quantize_symbol(sym(g128, lambda x, xi: np.exp(-((x[..., 0] - 1) ** 2 + (xi[..., 0] + 0.5) ** 2))))
    assert 1e-8 < tight.asymmetry < 1e-6
    assert tight.hermitian_defect() <= 1e-12


def test_complex_symbol_not_symmetrised(g128):
    op = quantize_symbol(sym(g128, lambda x, xi: np.exp(1j * x[..., 0]) * np.exp(-xi[..., 0] ** 2)))
    assert not op.hermitian


def test_minimal_image_has_no_seam_coupling(g128):
    bump = sym(g128, lambda x, xi: np.exp(-(x[..., 0] ** 2 + xi[..., 0] ** 2)))
    A = quantize_symbol(bump).entries
    B = quantize_symbol(bump, rule="literal").entries
    # opposite box edges: the bump lives at the centre, so they must not interact
    assert abs(A[0, -1]) <= 1e-12
    assert abs(B[0, -1]) > 1e-3
    with pytest.raises(ConfigurationError):
        quantize_symbol(bump, rule="bogus")


def test_shape_mismatch(g128):
    with pytest.raises(ValueError):
        SymbolGrid(g128, np.zeros((10, 10)))
    with pytest.raises(ValueError):
        SymbolGrid(g128, np.full((2 * g128.n, g128.n), np.nan))


def test_symbol_power_examples(g256):
    assert np.all(symbol_power(HARMONIC, 0.0, 3.0, g256).values == 1.0)
    s = symbol_power(HARMONIC, 0.25, 1.0, g256)
    assert s.values[g256.n, g256.n // 2] == pytest.approx(1.0)
    s2 = symbol_power(HARMONIC, 0.25, 2.0, g256)
    assert float(s2.func(np.array([1.0]), np.array([1.0]))) == pytest.approx(FIVE_QUARTER, rel=1e-14)
    assert np.all(s2.values > 0)
    with pytest.raises(ValueError):
        symbol_power(HARMONIC, 0.75, 1.0, g256)
    with pytest.raises(ValueError):
        symbol_power(HARMONIC, 0.25, 0.5, g256)


def test_fR_examples(g256):
    s = symbol_fR(HARMONIC, 1.0, 3.0, g256)
    i0 = g256.n                      # midpoint x = 0
    j0 = g256.n // 2                 # momentum xi = 0
    assert s.values[i0, j0] == pytest.approx(3.0)
    xi = g256.xi_axis
    assert np.allclose(s.values[i0], np.sqrt(9 + 0.5 * xi ** 2))
    i3 = int(round((3.0 + g256.L) / (0.5 * g256.dx)))
    assert g256.mid_axis[i3] == 3.0
    assert symbol_fR(HARMONIC, 1.0, 1.0, g256).values[i3, j0] == pytest.approx(FR_AT_3, rel=1e-14)
    assert float(fR_function(HARMONIC, 1.0, 1.0)(np.array([3.0]), np.array([0.0]))) == pytest.approx(FR_AT_3)
    with pytest.raises(ValueError):
        symbol_fR(HARMONIC, 0.5, 1.0, g256)


def test_compose_with_identity(g128):
    a = sym(g128, lambda x, xi: np.exp(-(x[..., 0] ** 2 + xi[..., 0] ** 2) / 2))
    rep = compose_residual(sym(g128, one), a)
    assert rep.residual_norm <= 1e-10


def test_compose_x_xi(g128):
    # Op(x) Op(xi) = Op(x xi + i/2): the first-order Moyal term is i/2 times the identity
    rep = compose_residual(sym(g128, xcoord), sym(g128, xicoord))
    assert rep.resolved_residual_norm == pytest.approx(0.5, abs=1e-6)
    assert rep.gradient_product == pytest.approx(1.0, rel=1e-9)
    assert rep.factor == pytest.approx(0.5, abs=1e-6)


def test_compose_x_x(g128):
    rep = compose_residual(sym(g128, xcoord), sym(g128, xcoord))
    assert rep.residual_norm <= 1e-8


def test_compose_grid_mismatch(g128, g256):
    with pytest.raises(ValueError):
        compose_residual(sym(g128, one), sym(g256, one))


def test_gaarding_examples(g128):
    assert gaarding_floor(sym(g128, one)) == pytest.approx(1.0, abs=1e-10)
    assert gaarding_floor(sym(g128, lambda x, xi: x[..., 0] ** 2 + 0 * xi[..., 0])) >= -1e-6
    cert = gaarding_certificate(symbol_fR(HARMONIC, 1.0, 1.0, g128))
    assert cert.passed
    assert np.isfinite(cert.hessian_norm) and cert.hessian_norm > 0
    assert cert.min_eigenvalue >= -cert.c * cert.hessian_norm


def test_gaarding_rejects_complex(g128):
    with pytest.raises(ValueError):
        gaarding_floor(sym(g128, lambda x, xi: 1j * x[..., 0] + 0 * xi[..., 0]))


def _random_symbol(rng):
    k = rng.integers(1, 4)
    cs = rng.uniform(-3, 3, (k, 2))
    ws = rng.uniform(0.8, 2.0, k)
    fr = rng.uniform(-1, 1, (k, 2))
    amp = rng.uniform(-1, 1, k)

    def f(x, xi):
        x, xi = x[..., 0], xi[..., 0]
        out = 0.0
        for c, w, q, a in zip(cs, ws, fr, amp):
            out = out + a * np.exp(-((x - c[0]) ** 2 + (xi - c[1]) ** 2) / (2 * w * w)) * np.cos(q[0] * x + q[1] * xi)
        return out
    return f


def test_calderon_vaillancourt_surrogate(g128):
    rng = np.random.default_rng(2024)
    norms = []
    for _ in range(20):
        s = sym(g128, _random_symbol(rng))
        s = SymbolGrid(g128, s.values / seminorm_surrogate(s, 4))
        assert seminorm_surrogate(s, 4) == pytest.approx(1.0)
        norms.append(quantize_symbol(s).norm())
    assert max(norms) <= CV_CONSTANT


def test_derivative_surrogates_linear(g128):
    d = derivative_surrogates(sym(g128, lambda x, xi: 2 * x[..., 0] - 3 * xi[..., 0]), 2)
    assert d[1] == pytest.approx(3.0)
    assert d[2] <= 1e-9


def test_save_load_round_trip(g128, tmp_path):
    op = quantize_symbol(sym(g128, lambda x, xi: np.exp(-(x[..., 0] ** 2 + xi[..., 0] ** 2))))
    path = tmp_path / "op.bin"
    op.save(path)
    raw = path.read_bytes()
    assert len(raw) == 24 + 16 * g128.size ** 2
    assert np.frombuffer(raw[:16], "<i8").tolist() == [1, 128]
    assert np.frombuffer(raw[16:24], "<f8")[0] == 8.0
    back = OperatorMatrix.load(path)
    assert back.grid == g128 and back.hermitian
    assert np.array_equal(back.entries, op.entries)
    path.write_bytes(raw[:-16])
    with pytest.raises(ValueError):
        OperatorMatrix.load(path)


def test_resolved_basis_localised(g128):
    B = resolved_basis(g128)
    assert np.allclose(B.conj().T @ B, np.eye(B.shape[1]), atol=1e-10)
    b, m = band_masses(B, g128)
    assert np.all(b <= 1e-10) and np.all(m <= 1e-6)
    half = resolved_basis(g128, 0.5)
    outside = np.abs(g128.positions[:, 0]) >= 0.5 * g128.L
    assert np.all(np.sum(np.abs(half[outside]) ** 2, axis=0) <= 1e-10)
    assert 0 < half.shape[1] < B.shape[1]
