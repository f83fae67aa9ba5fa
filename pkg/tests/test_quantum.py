import math
import warnings

import numpy as np
import pytest

from qcsmooth.classical_flow import integrate_flow
from qcsmooth.potential import PhasePoint, PotentialModel
from qcsmooth.quantum import (BandLimitWarning, SolverError, band_report, build_hamiltonian, compare_functional_root,
                              egorov_residual, eigendecompose, gram_min_eigenvalue, gram_operator, power_iteration,
                              propagate, quadrature_rule, quantum_constant, smoothing_functional, time_kernel,
                              weighted_root)
from qcsmooth.wavepacket import coherent_state
from qcsmooth.weyl import OperatorMatrix, SymbolGrid, build_grid

TWO_PI = 2 * math.pi


def random_state(rng, spec, resolved_only=True):
    c = rng.normal(size=spec.grid.size) + 1j * rng.normal(size=spec.grid.size)
    if resolved_only:
        c[~spec.resolved] = 0
    u = spec.eigenvectors @ c
    return u / np.linalg.norm(u)


@pytest.fixture(scope="module")
def system256():
    m = PotentialModel("harmonic", 1.0)
    g = build_grid(1, 256, 16.0)
    return m, g, eigendecompose(build_hamiltonian(m, g))


def test_harmonic_spectrum(system256):
    lam = system256[2].eigenvalues
    assert abs(lam[0] - 0.5) <= 1e-8
    assert np.max(np.abs(np.diff(lam[:21]) - 1.0)) <= 1e-6


def test_constant_shift(small_system):
    m, g, spec = small_system
    shifted = eigendecompose(build_hamiltonian(m, g, shift=2.5))
    assert np.allclose(shifted.eigenvalues, spec.eigenvalues + 2.5, atol=1e-10)


def test_spectral_invariants(small_system):
    spec = small_system[2]
    assert spec.max_residual <= 1e-9
    assert spec.unitarity_defect <= 1e-10
    assert np.all(np.diff(spec.eigenvalues) >= 0)
    assert spec.n_resolved > 20


def test_eigendecompose_trivial():
    g = build_grid(1, 8, 1.0)
    spec = eigendecompose(OperatorMatrix(g, np.eye(8, dtype=complex)))
    assert np.allclose(spec.eigenvalues, 1.0)
    spec = eigendecompose(OperatorMatrix(g, np.diag(np.arange(1.0, 9.0)).astype(complex)))
    assert np.allclose(spec.eigenvalues, np.arange(1, 9))
    assert np.allclose(np.abs(spec.eigenvectors), np.eye(8))


def test_eigendecompose_rejects_non_hermitian():
    g = build_grid(1, 4, 1.0)
    with pytest.raises(ValueError):
        eigendecompose(OperatorMatrix(g, np.triu(np.ones((4, 4))).astype(complex)))


def test_solver_error_type():
    assert issubclass(SolverError, RuntimeError)


def test_propagate_identity_and_phase(small_system):
    spec = small_system[2]
    u = random_state(np.random.default_rng(0), spec)
    assert np.allclose(propagate(spec, u, 0.0), u, atol=1e-12)
    v = spec.eigenvectors[:, 3]
    assert np.allclose(propagate(spec, v, 0.7), np.exp(-0.7j * spec.eigenvalues[3]) * v, atol=1e-12)


def test_unitarity_on_quadrature_nodes(small_system):
    spec = small_system[2]
    u = random_state(np.random.default_rng(1), spec, resolved_only=False)
    t, _ = quadrature_rule(TWO_PI, 64)
    norms = np.linalg.norm(propagate(spec, u, t), axis=0)
    assert np.max(np.abs(norms - 1.0)) <= 1e-10


@pytest.mark.parametrize("center,t", [((2.0, 0.0), 1.0), ((-1.0, 1.5), 2.5), ((0.5, -2.0), 4.0)])
def test_coherent_state_follows_flow(system256, center, t):
    m, g, spec = system256
    rho = PhasePoint([center[0]], [center[1]])
    ut = propagate(spec, coherent_state(rho, g).vector, t)
    moved = integrate_flow(m, rho, t, 1e-3).final
    fidelity = abs(np.vdot(coherent_state(moved, g).vector, ut)) ** 2
    assert fidelity >= 1 - 1e-4


def test_stationary_state(small_system):
    m, g, spec = small_system
    u = spec.eigenvectors[:, 0]
    S = smoothing_functional(m, g, spec, u, TWO_PI, 1.0, 1.0)
    direct = TWO_PI * np.linalg.norm(weighted_root(m, g, 1.0, 1.0) @ u) ** 2
    assert S == pytest.approx(direct, rel=1e-12)


def test_short_horizon_bound(small_system):
    m, g, spec = small_system
    u = random_state(np.random.default_rng(2), spec)
    T = 1e-3
    bound = T * np.linalg.norm(weighted_root(m, g, 1.0, 2.0), 2) ** 2
    assert 0 <= smoothing_functional(m, g, spec, u, T, 1.0, 2.0) <= bound


def _trapezoid_oracle(m, g, spec, u, T, nu, R):
    ts = np.linspace(0.0, T, 10_001)
    Y = weighted_root(m, g, nu, R) @ propagate(spec, u, ts)
    return np.trapezoid(np.sum(np.abs(Y) ** 2, axis=0), ts)


@pytest.mark.parametrize("T,resolved_only", [(TWO_PI, True), (1.0, True), (0.05, False)])
def test_matches_trapezoid_oracle(small_system, T, resolved_only):
    m, g, spec = small_system
    u = random_state(np.random.default_rng(3), spec, resolved_only)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BandLimitWarning)
        S = smoothing_functional(m, g, spec, u, T, 1.0, 2.0)
    assert S == pytest.approx(_trapezoid_oracle(m, g, spec, u, T, 1.0, 2.0), rel=1e-6)


def test_band_warning(small_system):
    m, g, spec = small_system
    u = random_state(np.random.default_rng(4), spec, resolved_only=False)
    with pytest.warns(BandLimitWarning):
        smoothing_functional(m, g, spec, u, 0.1, 1.0, 1.0)


def test_smoothing_preconditions(small_system):
    m, g, spec = small_system
    u = spec.eigenvectors[:, 0]
    with pytest.raises(ValueError):
        smoothing_functional(m, g, spec, u, 1.0, 1.0, 1.0, nq=8)
    with pytest.raises(ValueError):
        smoothing_functional(m, g, spec, 2 * u, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        smoothing_functional(m, g, spec, u, 1.0, 0.5, 1.0)
    assert smoothing_functional(m, g, spec, u, 0.0, 1.0, 1.0) == 0.0


def test_time_kernel_diagonal():
    K = time_kernel(np.array([0.0, 1.0, 3.0]), 2.0, 32)
    assert np.allclose(np.diag(K), 2.0)
    assert np.allclose(K, K.conj().T)


def test_gram_zero_horizon(small_system):
    m, g, spec = small_system
    assert np.all(gram_operator(m, g, spec, 0.0, 1.0, 1.0).entries == 0)


@pytest.mark.parametrize("subspace", ["full", "resolved"])
def test_gram_quadratic_form_is_functional(small_system, subspace):
    m, g, spec = small_system
    G = gram_operator(m, g, spec, TWO_PI, 1.0, 2.0, subspace=subspace)
    rng = np.random.default_rng(5)
    for _ in range(10):
        u = random_state(rng, spec, resolved_only=(subspace == "resolved"))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", BandLimitWarning)
            S = smoothing_functional(m, g, spec, u, TWO_PI, 1.0, 2.0)
        assert np.real(np.vdot(u, G.entries @ u)) == pytest.approx(S, rel=1e-9)


@pytest.mark.parametrize("subspace", ["full", "resolved"])
def test_gram_psd(small_system, subspace):
    m, g, spec = small_system
    G = gram_operator(m, g, spec, TWO_PI, 1.0, 4.0, subspace=subspace)
    assert G.hermitian_defect() <= 1e-12
    assert gram_min_eigenvalue(G) >= -1e-9


def test_gram_concentrates_for_large_nu(small_system):
    # a sharper weight at x=0 lowers the effective rank (participation ratio) of G
    m, g, spec = small_system
    x = g.positions[:, 0]
    ranks = []
    for nu in (1.0, 4.0, 32.0, 256.0):
        lam, V = np.linalg.eigh(gram_operator(m, g, spec, TWO_PI, nu, 1.0).entries)
        ranks.append(lam.sum() ** 2 / np.sum(lam ** 2))
        assert np.sum(np.abs(V[np.abs(x) < 2, -1]) ** 2) >= 0.99
    assert all(b < a for a, b in zip(ranks, ranks[1:]))
    assert ranks[-1] < 0.6 * ranks[0]


def test_quantum_constant_trivial():
    for method in ("power_iteration", "dense"):
        est = quantum_constant(np.diag([3.0, 1.0, 2.0]), method)
        assert est.value == pytest.approx(3.0, rel=1e-10)
        assert abs(abs(est.maximizer[0]) - 1.0) <= 1e-5
        assert quantum_constant(np.eye(4), method).value == pytest.approx(1.0, rel=1e-12)


def test_power_iteration_fallback():
    A = np.diag([1.0, 0.999999, 0.5])
    est = quantum_constant(A, "power_iteration", max_iter=3)
    assert not est.converged and est.method == "dense_eig" and "fallback" in est.note
    assert est.value == pytest.approx(1.0)
    with pytest.raises(ValueError):
        quantum_constant(A, "magic")


def test_power_iteration_degenerate_top():
    val, vec, its, ok = power_iteration(np.diag([2.0, 2.0, 1.0]))
    assert ok and val == pytest.approx(2.0, rel=1e-10)


@pytest.mark.parametrize("R", [1.0, 2.0, 4.0])
def test_power_matches_dense(small_system, R):
    m, g, spec = small_system
    G = gram_operator(m, g, spec, TWO_PI, 1.0, R)
    a = quantum_constant(G, "power_iteration")
    b = quantum_constant(G, "dense")
    assert a.value == pytest.approx(b.value, rel=1e-8)
    assert a.quadrature_nodes == 64 and a.R == R
    assert np.linalg.norm(b.maximizer) == pytest.approx(1.0)


@pytest.mark.parametrize("R", [1.0, 4.0])
def test_quadrature_converged(small_system, R):
    m, g, spec = small_system
    a = quantum_constant(gram_operator(m, g, spec, TWO_PI, 1.0, R, 64), "dense").value
    b = quantum_constant(gram_operator(m, g, spec, TWO_PI, 1.0, R, 128), "dense").value
    assert abs(a / b - 1) <= 1e-6


def test_maximizer_band(small_system):
    m, g, spec = small_system
    est = quantum_constant(gram_operator(m, g, spec, TWO_PI, 1.0, 2.0), "dense")
    rep = band_report(spec, est.maximizer)
    assert rep.band_ok and rep.unresolved_mass <= 1e-20


def _bump(g, width, center=(0.0, 0.0)):
    return SymbolGrid.from_function(
        g, lambda x, xi: np.exp(-((x[..., 0] - center[0]) ** 2 + (xi[..., 0] - center[1]) ** 2) / (2 * width ** 2)))


def test_egorov_at_zero(system256):
    m, g, spec = system256
    rep = egorov_residual(m, g, spec, _bump(g, 1.0), 0.0)
    assert rep.residual <= 1e-10


@pytest.mark.parametrize("t", [0.5, 1.0, 3.0])
def test_egorov_harmonic_exact(system256, t):
    m, g, spec = system256
    for a in (_bump(g, 1.0), _bump(g, 0.7, (1.0, -0.5))):
        assert egorov_residual(m, g, spec, a, t).residual <= 1e-3


def test_egorov_bracket_power_improves_with_scale():
    m = PotentialModel("bracket_power", 0.5)
    g = build_grid(1, 256, 16.0)
    spec = eigendecompose(build_hamiltonian(m, g))
    res = [egorov_residual(m, g, spec, _bump(g, R), 1.0).resolved_residual for R in (1.0, 2.0, 4.0)]
    assert res[0] > res[1] > res[2]


def test_egorov_needs_generator(system256):
    m, g, spec = system256
    a = _bump(g, 1.0)
    with pytest.raises(ValueError):
        egorov_residual(m, g, spec, SymbolGrid(g, a.values), 1.0)


def test_functional_root_comparison(small_system):
    m, g, spec = small_system
    rep = compare_functional_root(m, g, spec, 2.0)
    assert np.isfinite(rep.full) and rep.resolved <= rep.full + 1e-12
    # the two operators share leading order; they differ but not grossly on the resolved band
    assert 0 < rep.resolved < 1.0
    assert np.isfinite(rep.q_min_eigenvalue)


def test_grid_cap(harmonic):
    with pytest.raises(ValueError):
        build_hamiltonian(harmonic, build_grid(1, 4096, 100.0))
