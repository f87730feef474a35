import numpy as np
import pytest
from numpy.testing import assert_allclose

from sqpinvit import blockmps as bm
from sqpinvit import oracle
from sqpinvit import secondquant as sq
from sqpinvit.blockmps import SectorShape
from _helpers import dense_hamiltonian, fock_matrix, jw_annihilator, random_coefficients


@pytest.mark.parametrize("K", [1, 3, 5])
def test_operators_match_jordan_wigner(K):
    for i in range(K):
        a = jw_annihilator(K, i)
        assert_allclose(fock_matrix(K, i, create=False), a, atol=0)
        assert_allclose(fock_matrix(K, i, create=True), a.T, atol=0)


def test_anticommutation_small():
    K = 4
    a = [fock_matrix(K, i, False) for i in range(K)]
    ad = [fock_matrix(K, i, True) for i in range(K)]
    eye = np.eye(2 ** K)
    for i in range(K):
        for j in range(K):
            assert_allclose(a[i] @ ad[j] + ad[j] @ a[i], eye * (i == j), atol=1e-13)
            assert_allclose(a[i] @ a[j] + a[j] @ a[i], 0.0, atol=1e-13)


def test_annihilation_of_empty_orbital_is_zero():
    x = bm.from_slater(SectorShape(4, 2), [0, 2])
    assert sq.apply_annihilation(1, x).is_zero()
    assert sq.apply_creation(2, x).is_zero()
    with pytest.raises(IndexError):
        sq.apply_annihilation(4, x)


def test_coefficient_validation():
    with pytest.raises(ValueError):
        sq.CoefficientSet(np.array([[0.0, 1.0], [0.0, 0.0]]), None)
    with pytest.raises(ValueError):
        sq.CoefficientSet(np.eye(2), None, d=[1.0, -1.0])
    with pytest.raises(ValueError):
        sq.CoefficientSet(np.eye(2), np.zeros((2, 2, 2)))


def test_restrict_keeps_leading_block():
    c = random_coefficients(np.random.default_rng(0), 6, 2, gamma=2.0)
    r = c.restrict(4)
    assert r.K == 4 and r.gamma == 2.0 and r.n_particles == 2
    assert_allclose(r.v, c.v[:4, :4, :4, :4])
    assert_allclose(r.d, c.d[:4])


def test_oracle_hamiltonian_matches_fock_construction():
    rng = np.random.default_rng(1)
    K = 5
    c = random_coefficients(rng, K, 2, gamma=0.7, hermitian=False)
    Hfull = dense_hamiltonian(c)
    for N in range(K + 1):
        basis = oracle.SectorBasis(K, N)
        idx = basis.full_indices()
        assert_allclose(oracle.hamiltonian_matrix(c, N), Hfull[np.ix_(idx, idx)], atol=1e-12)


@pytest.mark.parametrize("method", ["operator", "terms"])
def test_apply_hamiltonian_matches_oracle(method):
    rng = np.random.default_rng(2)
    for K, N in [(4, 1), (5, 2), (6, 3)]:
        c = random_coefficients(rng, K, N, gamma=1.5, density=0.6)
        shape = SectorShape(K, N)
        x = bm.random_state(shape, 3, rng)
        basis = oracle.SectorBasis(K, N)
        y = sq.apply_hamiltonian(c, x, method=method)
        assert y.shape == shape
        want = oracle.hamiltonian_matrix(c, N) @ oracle.sector_vector(x, basis)
        got = oracle.sector_vector(y, basis)
        assert_allclose(got, want, rtol=1e-11, atol=1e-11 * np.linalg.norm(want))
        full = bm.to_full(y)
        full[basis.full_indices()] = 0.0
        assert np.all(full == 0.0)


def test_apply_without_shift():
    rng = np.random.default_rng(3)
    c = random_coefficients(rng, 5, 2, gamma=4.0)
    x = bm.random_state(SectorShape(5, 2), 2, rng)
    d = bm.to_full(sq.apply_hamiltonian(c, x)) - bm.to_full(sq.apply_hamiltonian(c, x, False))
    assert_allclose(d, 4.0 * bm.to_full(x), atol=1e-11)


def test_operator_bond_dimension_is_compressed():
    rng = np.random.default_rng(4)
    c = random_coefficients(rng, 6, 2)
    op = sq.hamiltonian_operator(c)
    nterms = len(sq.term_plan(c, include_shift=False))
    assert max(op.ranks) < nterms


def test_particle_number():
    x = bm.random_state(SectorShape(6, 4), 2, rng=5)
    assert_allclose(bm.to_full(sq.apply_particle_number(x)), 4 * bm.to_full(x), atol=1e-12)


def test_unknown_method():
    c = random_coefficients(np.random.default_rng(6), 3, 1)
    with pytest.raises(ValueError):
        sq.apply_hamiltonian(c, bm.from_slater(SectorShape(3, 1), [0]), method="dense")
