import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from sqpinvit import blockmps as bm
from sqpinvit import oracle
from sqpinvit import pinvit as pv
from sqpinvit import precond as pc
from sqpinvit.blockmps import SectorShape


@pytest.fixture(scope="module")
def small(model6):
    shape = SectorShape(6, 2)
    sc = pc.exact_constants(model6, shape)
    p = pc.build_precond(model6, 0.1, sc.C_lower, sc.C_upper, shape)
    ops = oracle.build_dense(model6, shape, p)
    cfg = pv.SolverConfig(c=sc.c, delta=sc.delta, lambda1_lower=sc.lambda1 * (1 - 1e-10))
    return model6, shape, p, ops, cfg, pv.Problem(model6, p)


def vec(x, ops):
    return oracle.sector_vector(x, ops.basis)


def test_config_validation():
    with pytest.raises(ValueError):
        pv.SolverConfig(c=1.0, delta=10.0)
    with pytest.raises(ValueError):
        pv.SolverConfig(c=0.2, delta=1.0)
    with pytest.raises(ValueError):
        pv.SolverConfig(c=0.2, delta=10.0, eps_num=0.9)
    cfg = pv.SolverConfig(c=0.2, delta=10.0)
    assert_allclose(cfg.num, 0.4)
    assert_allclose(cfg.zeta, 0.4 / 1.2)


def test_quadratic_matches_dense(small):
    coeffs, shape, p, ops, cfg, prob = small
    x = bm.random_state(shape, 2, rng=0)
    v = vec(x, ops)
    q = pv.quadratic(prob, x)
    assert_allclose(q.lam, oracle.rayleigh(ops, v), rtol=1e-12)
    assert_allclose(q.anorm, math.sqrt(v @ ops.A @ v), rtol=1e-12)
    assert_allclose(pv.rayleigh(coeffs, p, x), q.lam, rtol=1e-14)


def test_residual_terms_sum_to_residual(small):
    coeffs, shape, p, ops, cfg, prob = small
    x = bm.random_state(shape, 2, rng=1)
    v = vec(x, ops)
    lam = oracle.rayleigh(ops, v)
    rt = pv.residual_terms(prob, x, lam)
    assert np.all(np.diff(rt.norms) >= 0)
    total = sum(vec(t, ops) for t in rt.terms)
    r = ops.A @ v - lam * (ops.E @ v)
    assert_allclose(total, r, atol=1e-11 * np.linalg.norm(r))


@pytest.mark.parametrize("eta_frac", [1e-1, 1e-3, 1e-6])
def test_sum_terms_error(small, eta_frac):
    coeffs, shape, p, ops, cfg, prob = small
    x = bm.random_state(shape, 3, rng=2)
    lam = oracle.rayleigh(ops, vec(x, ops))
    rt = pv.residual_terms(prob, x, lam)
    r = sum(vec(t, ops) for t in rt.terms)
    eta = eta_frac * np.linalg.norm(r)
    res = pv.sum_terms(rt, eta)
    assert np.linalg.norm(vec(res, ops) - r) <= eta * (1 + 1e-8)


def test_assemble_residual_relative_accuracy(small):
    coeffs, shape, p, ops, cfg, prob = small
    x = bm.random_state(shape, 3, rng=3)
    v = vec(x, ops)
    lam = oracle.rayleigh(ops, v)
    r = ops.A @ v - lam * (ops.E @ v)
    out = pv.assemble_residual(prob, x, lam, cfg.zeta)
    assert not out.roundoff
    assert np.linalg.norm(vec(out.res, ops) - r) <= out.eta * (1 + 1e-8)
    assert out.eta <= cfg.zeta * np.linalg.norm(r) * (1 + 1e-8)


def test_assemble_residual_at_eigenvector_hits_floor(small):
    coeffs, shape, p, ops, cfg, prob = small
    lam, u = oracle.dense_eigs(ops, 1)
    x = bm.from_dense_sector(shape, u[:, 0], ops.basis.states)
    out = pv.assemble_residual(prob, x, float(lam[0]), cfg.zeta)
    assert out.roundoff
    assert out.eta > 0


def test_optimal_step_is_ritz_minimum(small):
    coeffs, shape, p, ops, cfg, prob = small
    x = bm.random_state(shape, 2, rng=4)
    v = vec(x, ops)
    lam = oracle.rayleigh(ops, v)
    out = pv.assemble_residual(prob, x, lam, cfg.zeta)
    step = pv.optimal_step(prob, x, out.res)
    Z = np.stack([v, vec(out.res, ops)], axis=1)
    import scipy.linalg
    w = scipy.linalg.eigh(Z.T @ ops.A @ Z, Z.T @ ops.E @ Z, eigvals_only=True)
    assert_allclose(step.lam, w[0], rtol=1e-10)
    assert_allclose(oracle.rayleigh(ops, vec(step.x, ops)), w[0], rtol=1e-10)
    assert step.lam < lam
    xs = vec(step.x, ops)
    assert_allclose(xs @ ops.E @ xs, 1.0, rtol=1e-10)


def test_truncation_keeps_eigenvalue_decrease(small):
    coeffs, shape, p, ops, cfg, prob = small
    x = bm.random_state(shape, 3, rng=5)
    lam = pv.quadratic(prob, x).lam
    out = pv.assemble_residual(prob, x, lam, cfg.zeta)
    step = pv.optimal_step(prob, x, out.res)
    tr = pv.truncate_iterate(prob, step.x, step.lam, lam, 0.5, cfg)
    limit = step.lam + cfg.t_eig * (lam - step.lam)
    assert tr.q.lam <= limit + 1e-13 * abs(step.lam)
    assert_allclose(tr.q.lam, oracle.rayleigh(ops, vec(tr.x, ops)), rtol=1e-12)


def test_inner_iteration_converges_with_valid_bounds(small):
    coeffs, shape, p, ops, cfg, prob = small
    lam, u = oracle.dense_eigs(ops, 2)
    rows = []

    def observe(rec, x):
        v = vec(x, ops)
        rows.append((rec, (oracle.rayleigh(ops, v) - lam[0]) / lam[0],
                     oracle.a_norm_error(ops, u[:, 0], v), oracle.exact_rho(ops, v)))

    res = pv.inner_iterate(coeffs, p, bm.from_slater(shape, [0, 1]), 1e-6, cfg, problem=prob,
                           observer=observe)
    assert res.converged and res.vec_bound <= 1e-6
    assert_allclose(res.lam, lam[0], rtol=1e-10)
    for rec, rel, verr, rho in rows:
        assert rec.rho >= rho * (1 - 1e-9)
        if "inadmissible" not in rec.flags:
            assert rec.eig_bound >= rel - 1e-15
            assert rec.vec_bound >= verr - 1e-12
    lams = [r.lam for r, *_ in rows]
    assert all(b <= a + 1e-12 * a for a, b in zip(lams, lams[1:]))


def test_max_inner_exhausted(small):
    coeffs, shape, p, ops, cfg, prob = small
    cfg2 = pv.SolverConfig(c=cfg.c, delta=cfg.delta, max_inner=2)
    res = pv.inner_iterate(coeffs, p, bm.from_slater(shape, [0, 1]), 1e-12, cfg2, problem=prob)
    assert not res.converged and res.reason == "max_inner exceeded"
    assert len(res.trace) == 3


def test_eigenvector_start_stops_immediately(small):
    coeffs, shape, p, ops, cfg, prob = small
    lam, u = oracle.dense_eigs(ops, 1)
    x = bm.from_dense_sector(shape, u[:, 0], ops.basis.states)
    res = pv.inner_iterate(coeffs, p, x, 1e-6, cfg, problem=prob)
    assert res.steps == 0 and res.converged
