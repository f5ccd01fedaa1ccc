import numpy as np
import pytest

import keldysh_lab as kl
from keldysh_lab.wick import gaussian_ordered_moment


def test_wick_moment_1x1():
    rng = np.random.default_rng(0)
    m = kl.random_model(2, rng, dissipative=True)
    cov = kl.build_continuum_covariance(m, 0.8, 0.9)
    X = kl.KeldyshPoint("+", 0.3, 0)
    Y = kl.KeldyshPoint("-", 0.6, 1)
    q = kl.WickQuery([X], [Y])
    assert abs(kl.wick_moment(cov, q) - cov.kernel(X, Y)) < 1e-14


def test_wick_moment_row_swap_sign():
    rng = np.random.default_rng(1)
    m = kl.random_model(2, rng)
    cov = kl.build_continuum_covariance(m, 0.8, 0.9)
    X = [kl.KeldyshPoint("+", 0.2, 0), kl.KeldyshPoint("-", 0.7, 1)]
    Y = [kl.KeldyshPoint("-", 0.4, 0), kl.KeldyshPoint("+", 0.5, 1)]
    a = kl.wick_moment(cov, kl.WickQuery(X, Y))
    b = kl.wick_moment(cov, kl.WickQuery(X[::-1], Y))
    assert abs(a + b) < 1e-13


def test_wick_moment_unequal_counts_zero_with_warning():
    m = kl.random_model(2, np.random.default_rng(2))
    cov = kl.build_continuum_covariance(m, 0.8, 0.9)
    q = kl.WickQuery([kl.KeldyshPoint("+", 0.1, 0)], [])
    with pytest.warns(UserWarning):
        assert kl.wick_moment(cov, q) == 0.0


def test_equal_time_wick_matches_oracle_gamma22():
    # det[C((+,T,y_j), (-,T,x_i))] = (-1)^m gamma_{m,m}
    rng = np.random.default_rng(3)
    m = kl.random_model(3, rng, dissipative=True)
    beta, T = 0.8, 0.6
    cov = kl.build_continuum_covariance(m, beta, T)
    fock = kl.build_fock_space(m)
    st = kl.build_evolution_state(fock, m, kl.Interaction(), beta, T)
    g22 = kl.exact_moments(st, cap=4)[(2, 2)]
    for xs in [(0, 1), (0, 2)]:
        for ys in [(0, 1), (1, 2)]:
            q = kl.WickQuery(
                psi_points=[kl.KeldyshPoint("+", T, y) for y in ys],
                psibar_points=[kl.KeldyshPoint("-", T, x) for x in xs])
            det = kl.wick_moment(cov, q)
            assert abs(g22[xs + ys] - det) < 1e-10


def test_gaussian_ordered_moment_engine_matches_determinant():
    rng = np.random.default_rng(4)
    m = kl.random_model(3, rng, dissipative=True, epsilon=1.4)
    beta, T = 0.7, 0.8
    cov = kl.build_continuum_covariance(m, beta, T)
    fock = kl.build_fock_space(m)
    st = kl.build_evolution_state(fock, m, kl.Interaction(), beta, T)
    moms = kl.exact_moments(st, cap=4)
    for (xs, ys) in [((0,), (1,)), ((0, 1), (0, 2)), ((1, 2), (1, 2))]:
        got = gaussian_ordered_moment(cov, xs, ys)
        want = moms[(len(xs), len(ys))][tuple(xs) + tuple(ys)]
        assert abs(got - want) < 1e-10


def test_free_moment_tensors_match_oracle():
    for seed, dissip, eps in [(5, False, 1.0), (6, True, 1.0), (7, True, 2.0)]:
        rng = np.random.default_rng(seed)
        m = kl.random_model(3, rng, dissipative=dissip, epsilon=eps)
        beta, T = 0.8, 0.7
        cov = kl.build_continuum_covariance(m, beta, T)
        fock = kl.build_fock_space(m)
        st = kl.build_evolution_state(fock, m, kl.Interaction(), beta, T)
        moms = kl.exact_moments(st, cap=4)
        wick = kl.free_moment_tensors(cov, cap=4)
        for d in moms:
            dev = np.abs(moms[d] - wick[d]).max()
            scale = max(np.abs(wick[d]).max(), 1.0)
            assert dev / scale < 1e-8, (seed, d)


def test_free_two_point_static_and_spectrum():
    rng = np.random.default_rng(8)
    n = 3
    A = np.diag(rng.uniform(0.2, 1.0, n)).astype(complex)
    Q = (lambda M: (M + M.T) / 2)(rng.normal(size=(n, n)))  # real symmetric
    m = kl.OneParticleModel(n, 1.0, A, np.zeros((n, n)), Q.astype(complex))
    from scipy.linalg import expm
    f = np.linalg.inv(np.eye(n) + expm(0.9 * Q))
    P0 = kl.free_two_point(m, 0.9, 0.0)
    assert np.abs(P0 - f).max() < 1e-11
    # unitary conjugation leaves the eigenvalues alone at every T
    for T in (0.5, 2.0):
        PT = kl.free_two_point(m, 0.9, T)
        assert np.allclose(sorted(np.linalg.eigvals(PT).real),
                           sorted(np.linalg.eigvals(P0).real), atol=1e-10)


def test_commuting_covariance_feeds_wick_machinery():
    # the simplified evaluator plugs into every covariance consumer
    m = kl.preset_model("dissipative-uniform", 3)
    beta, T = 0.8, 0.6
    com = kl.commuting_covariance(m, beta, T)
    fock = kl.build_fock_space(m)
    st = kl.build_evolution_state(fock, m, kl.Interaction(), beta, T)
    moms = kl.exact_moments(st, cap=4)
    wick = kl.free_moment_tensors(com, cap=4)
    for d in moms:
        assert np.abs(moms[d] - wick[d]).max() < 1e-9


def test_free_two_point_matches_expectation():
    rng = np.random.default_rng(9)
    m = kl.random_model(3, rng)
    fock = kl.build_fock_space(m)
    st = kl.build_evolution_state(fock, m, kl.Interaction(), 0.8, 1.3)
    P = kl.free_two_point(m, 0.8, 1.3)
    for x in range(3):
        for y in range(3):
            O = fock.annihilators[x].conj().T @ fock.annihilators[y]
            assert abs(P[x, y] - kl.exact_expectation(st, O)) < 1e-8


# ---- first-order corrections ----

def chain3():
    m = kl.preset_model("chain-hermitian", 3)
    V = kl.density_density(3, [(0, 1), (1, 2)], 1.0)
    return m, V


def test_first_order_zero_interaction():
    m, _ = chain3()
    cov = kl.build_continuum_covariance(m, 0.8, 0.5)
    out = kl.first_order_correction(cov, kl.Interaction(), (1, 1))
    assert np.abs(out).max() == 0.0


def test_first_order_linear_in_vertex():
    m, V = chain3()
    cov = kl.build_continuum_covariance(m, 0.8, 0.5)
    one = kl.first_order_correction(cov, V, (1, 1), panels=32)
    two = kl.first_order_correction(cov, V.rescaled(2.0), (1, 1), panels=32)
    assert np.abs(two - 2.0 * one).max() < 1e-12


def test_first_order_matches_finite_difference():
    m, V = chain3()
    beta, T = 0.8, 0.5
    fock = kl.build_fock_space(m)
    cov = kl.build_continuum_covariance(m, beta, T)
    lam = 1e-3
    for degree in ((1, 1), (2, 2)):
        pred = kl.first_order_correction(cov, V, degree, panels=64)
        tp = kl.cumulant_table(kl.build_evolution_state(
            fock, m, V.rescaled(lam), beta, T), cap=sum(degree))
        tm = kl.cumulant_table(kl.build_evolution_state(
            fock, m, V.rescaled(-lam), beta, T), cap=sum(degree))
        fd = (tp.gammaT[degree] - tm.gammaT[degree]) / (2 * lam)
        assert np.abs(pred - fd).max() / np.abs(fd).max() < 1e-4


def test_first_order_quadrature_refinement():
    m, V = chain3()
    cov = kl.build_continuum_covariance(m, 0.8, 0.5)
    ref = kl.first_order_correction(cov, V, (1, 1), panels=256)
    err32 = np.abs(kl.first_order_correction(cov, V, (1, 1), panels=32) - ref).max()
    err64 = np.abs(kl.first_order_correction(cov, V, (1, 1), panels=64) - ref).max()
    assert err64 <= err32 + 1e-14


def test_first_order_unsupported_degree():
    m, V = chain3()
    cov = kl.build_continuum_covariance(m, 0.8, 0.5)
    with pytest.raises(kl.ModelError):
        kl.first_order_correction(cov, V, (3, 3))
    bad = kl.Interaction(vertices={(1, 1): np.eye(3, dtype=complex)})
    with pytest.raises(kl.ModelError):
        kl.first_order_correction(cov, bad, (1, 1))
