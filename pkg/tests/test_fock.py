import numpy as np
import pytest

import keldysh_lab as kl


def anticommutator(a, b):
    return a @ b + b @ a


def single_mode(q=1.0, b=0.0, eps=1.0):
    return kl.preset_model("single-mode", q=q, b=b, epsilon=eps)


def test_single_mode_ladder_matrix():
    fock = kl.build_fock_space(single_mode())
    assert np.allclose(fock.annihilators[0], [[0, 1], [0, 0]])


def test_car_off_diagonal_two_sites():
    m = kl.random_model(2, np.random.default_rng(0))
    fock = kl.build_fock_space(m)
    a0, a1 = fock.annihilators
    assert np.abs(anticommutator(a0, a1.conj().T)).max() < 1e-14
    assert np.abs(anticommutator(a0, a1)).max() < 1e-14


def test_car_normalization_eps4():
    m = kl.random_model(3, np.random.default_rng(1), epsilon=4.0)
    fock = kl.build_fock_space(m)
    for a in fock.annihilators:
        acc = anticommutator(a, a.conj().T)
        assert np.abs(acc - 0.25 * np.eye(fock.dim)).max() < 1e-14
        assert np.abs(a @ a).max() == 0.0


def test_car_random_model_full():
    m = kl.random_model(4, np.random.default_rng(2), epsilon=0.5, dissipative=True)
    fock = kl.build_fock_space(m)
    inv = 1.0 / m.epsilon
    for x, ax in enumerate(fock.annihilators):
        for y, ay in enumerate(fock.annihilators):
            assert np.abs(anticommutator(ax, ay)).max() < 1e-13
            want = inv * np.eye(fock.dim) if x == y else 0.0
            assert np.abs(anticommutator(ax, ay.conj().T) - want).max() < 1e-13


def test_fock_cap():
    m = kl.random_model(3, np.random.default_rng(0))
    with pytest.raises(kl.FockError):
        kl.build_fock_space(m, cap=2)


def test_quadratic_operator_number():
    fock = kl.build_fock_space(single_mode())
    H = kl.quadratic_operator(fock, np.array([[0.7]]))
    assert np.allclose(H, np.diag([0.0, 0.7]))


def test_quadratic_operator_zero():
    fock = kl.build_fock_space(kl.random_model(2, np.random.default_rng(3)))
    assert np.abs(kl.quadratic_operator(fock, np.zeros((2, 2)))).max() == 0.0


def test_quadratic_operator_shape_mismatch():
    fock = kl.build_fock_space(kl.random_model(2, np.random.default_rng(3)))
    with pytest.raises(kl.FockError):
        kl.quadratic_operator(fock, np.zeros((3, 3)))


def test_quadratic_spectrum_subset_sums():
    # Fock spectrum of c^dag K c is every subset sum of eig(K)
    rng = np.random.default_rng(4)
    m = kl.random_model(3, rng)
    fock = kl.build_fock_space(m)
    K = (lambda M: (M + M.conj().T) / 2)(rng.normal(size=(3, 3))
                                         + 1j * rng.normal(size=(3, 3)))
    H = kl.quadratic_operator(fock, K)
    w = np.linalg.eigvalsh(K)
    subset_sums = sorted(sum(w[i] for i in range(3) if mask >> i & 1)
                         for mask in range(8))
    got = sorted(np.linalg.eigvalsh(H))
    assert np.allclose(got, subset_sums, atol=1e-10)


def test_quadratic_matches_matrix_product_form():
    rng = np.random.default_rng(5)
    m = kl.random_model(3, rng, epsilon=2.0)
    fock = kl.build_fock_space(m)
    K = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    H = kl.quadratic_operator(fock, K)
    want = np.zeros_like(H)
    for x in range(3):
        for y in range(3):
            want += m.epsilon ** 2 * K[x, y] * (
                fock.annihilators[x].conj().T @ fock.annihilators[y])
    assert np.abs(H - want).max() < 1e-12


def test_density_density_operator_diagonal():
    m = kl.preset_model("chain-hermitian", 2)
    fock = kl.build_fock_space(m)
    lam = 0.37
    V = kl.density_density(2, [(0, 1)], lam)
    op = kl.interaction_operator(fock, V)
    assert np.abs(op - np.diag([0.0, 0.0, 0.0, lam])).max() < 1e-13


def test_interaction_operator_odd_vertex_rejected():
    with pytest.raises(kl.ModelError, match="odd"):
        kl.Interaction(vertices={(2, 1): np.zeros((2, 2, 2))})


def test_interaction_constant_vertex_rejected():
    with pytest.raises(kl.ModelError):
        kl.Interaction(vertices={(0, 0): np.array(1.0)})


def test_interaction_operator_matches_monomial_assembly():
    # term-by-term brute-force operator product, eps != 1
    rng = np.random.default_rng(6)
    m = kl.random_model(3, rng, epsilon=1.7)
    fock = kl.build_fock_space(m)
    v = kl.random_antisymmetric_vertex(3, 2, 2, rng)
    op = kl.interaction_operator(fock, kl.Interaction(vertices={(2, 2): v}))
    a = fock.annihilators
    want = np.zeros_like(op)
    for x1 in range(3):
        for x2 in range(3):
            for y1 in range(3):
                for y2 in range(3):
                    want += m.epsilon ** 4 * v[x1, x2, y1, y2] * (
                        a[y1].conj().T @ a[y2].conj().T @ a[x1] @ a[x2])
    assert np.abs(op - want).max() < 1e-12


def test_exact_expectation_free_fermi_dirac_evolution():
    # B = 0, V = 0: <a*(x) a(y)>_T = (e^{-iT eps A} f_beta(eps Q) e^{iT eps A})_{yx} / eps
    rng = np.random.default_rng(7)
    m = kl.random_model(3, rng, epsilon=1.0)
    fock = kl.build_fock_space(m)
    st = kl.build_evolution_state(fock, m, kl.Interaction(), beta=0.9, T=1.2)
    P = kl.free_two_point(m, 0.9, 1.2)
    for x in range(3):
        for y in range(3):
            O = fock.annihilators[x].conj().T @ fock.annihilators[y]
            assert abs(kl.exact_expectation(st, O) - P[x, y]) < 1e-10


def test_exact_expectation_static_thermal():
    rng = np.random.default_rng(8)
    m = kl.random_model(2, rng)
    fock = kl.build_fock_space(m)
    st = kl.build_evolution_state(fock, m, kl.Interaction(), beta=0.7, T=0.0)
    from scipy.linalg import expm
    f = np.linalg.inv(np.eye(2) + expm(0.7 * m.Q_scaled))
    for x in range(2):
        for y in range(2):
            O = fock.annihilators[x].conj().T @ fock.annihilators[y]
            assert abs(kl.exact_expectation(st, O) - f[y, x]) < 1e-12


def test_exact_expectation_single_mode_dissipative_closed_form():
    q, b, beta, T = 0.8, 0.35, 1.1, 0.9
    m = single_mode(q=q, b=b)
    fock = kl.build_fock_space(m)
    st = kl.build_evolution_state(fock, m, kl.Interaction(), beta=beta, T=T)
    n_op = fock.annihilators[0].conj().T @ fock.annihilators[0]
    want = np.exp(-beta * q) / (1 + np.exp(-beta * q)) * np.exp(-2 * b * T)
    assert abs(kl.exact_expectation(st, n_op) - want) < 1e-12


def test_hermitian_expectations_real_and_trace_conserved():
    m = kl.preset_model("chain-hermitian", 3)
    fock = kl.build_fock_space(m)
    V = kl.density_density(3, [(0, 1), (1, 2)], 0.8)
    st = kl.build_evolution_state(fock, m, V, beta=0.6, T=1.0)
    n1 = fock.annihilators[1].conj().T @ fock.annihilators[1]
    val = kl.exact_expectation(st, n1)
    assert abs(val.imag) < 1e-10
    assert abs(st.Z_generating() - st.Z0) < 1e-10 * st.Z0


def test_dissipative_trace_decays():
    m = kl.preset_model("dissipative-uniform", 3)
    fock = kl.build_fock_space(m)
    traces = []
    for T in (0.0, 0.5, 1.0, 2.0):
        st = kl.build_evolution_state(fock, m, kl.Interaction(), beta=0.8, T=T)
        traces.append(abs(st.Z_generating()))
    assert all(b <= a + 1e-12 for a, b in zip(traces, traces[1:]))


def test_exact_moments_antisymmetry_and_wick():
    rng = np.random.default_rng(9)
    m = kl.random_model(3, rng, dissipative=True)
    fock = kl.build_fock_space(m)
    st = kl.build_evolution_state(fock, m, kl.Interaction(), beta=0.8, T=0.7)
    moms = kl.exact_moments(st, cap=4)
    g11, g22 = moms[(1, 1)], moms[(2, 2)]
    # x-block antisymmetry: swapping x1 and x2 flips the sign
    assert np.abs(g22 + g22.transpose(1, 0, 2, 3)).max() < 1e-12
    assert np.abs(g22 + g22.transpose(0, 1, 3, 2)).max() < 1e-12
    for x1, x2, y1, y2 in np.ndindex(3, 3, 3, 3):
        wick = g11[x1, y1] * g11[x2, y2] - g11[x1, y2] * g11[x2, y1]
        assert abs(g22[x1, x2, y1, y2] - wick) < 1e-10


def test_exact_moments_cap_enforced():
    m = kl.random_model(2, np.random.default_rng(12))
    fock = kl.build_fock_space(m)
    st = kl.build_evolution_state(fock, m, kl.Interaction(), beta=0.8, T=0.1)
    with pytest.raises(kl.FockError):
        kl.exact_moments(st, cap=8)


def test_exact_moments_static():
    rng = np.random.default_rng(10)
    m = kl.random_model(2, rng)
    fock = kl.build_fock_space(m)
    st = kl.build_evolution_state(fock, m, kl.Interaction(), beta=0.9, T=0.0)
    moms = kl.exact_moments(st, cap=2)
    # direct thermal trace oracle
    for x in range(2):
        for y in range(2):
            want = fock.monomial_trace([x], [y], st.rho0) / st.Z0
            assert abs(moms[(1, 1)][x, y] - want) < 1e-12


def test_trotter_free_is_exact_and_T0():
    from scipy.linalg import expm
    rng = np.random.default_rng(11)
    m = kl.random_model(2, rng, dissipative=True)
    fock = kl.build_fock_space(m)
    beta, T = 0.8, 0.9
    st = kl.build_evolution_state(fock, m, kl.Interaction(), beta=beta, T=T)
    # the free product formula telescopes, so Z_N hits the closed form
    want = np.linalg.det(np.eye(2) + expm(-beta * m.Q_scaled)
                         @ expm(1j * m.A_plus * T) @ expm(-1j * m.A_minus * T))
    assert abs(st.Z_generating() - want) < 1e-12 * abs(want)
    for N in (1, 3, 8):
        Z_N, _ = kl.trotter_generating(st, kl.Interaction(), N)
        assert abs(Z_N - want) < 1e-12 * abs(want)
    st0 = kl.build_evolution_state(fock, m, kl.Interaction(), beta=beta, T=0.0)
    Z_1, _ = kl.trotter_generating(st0, kl.Interaction(), 1)
    assert abs(Z_1 - st0.Z0) < 1e-12 * st0.Z0


def test_trotter_error_halves():
    m = kl.preset_model("chain-hermitian", 3)
    fock = kl.build_fock_space(m)
    V = kl.density_density(3, [(0, 1), (1, 2)], 0.6)
    st = kl.build_evolution_state(fock, m, V, beta=0.8, T=1.0)
    Z = st.Z_generating()
    errs = [abs(kl.trotter_generating(st, V, N)[0] - Z) for N in (16, 32, 64)]
    ratios = [b / a for a, b in zip(errs, errs[1:])]
    assert all(0.4 < r < 0.6 for r in ratios)


def test_trotter_gamma_converges():
    m = kl.preset_model("chain-hermitian", 2)
    fock = kl.build_fock_space(m)
    V = kl.density_density(2, [(0, 1)], 0.9)
    st = kl.build_evolution_state(fock, m, V, beta=0.8, T=0.8)
    exact = kl.exact_moments(st, cap=2)[(1, 1)]
    _, g64 = kl.trotter_generating(st, V, 64)
    _, g8 = kl.trotter_generating(st, V, 8)
    assert np.abs(g64 - exact).max() < np.abs(g8 - exact).max()
    assert np.abs(g64 - exact).max() < 1e-2
