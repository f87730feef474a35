import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from sqpinvit import blockmps as bm
from sqpinvit import oracle
from sqpinvit import outer as ou
from sqpinvit import pinvit as pv
from sqpinvit import precond as pc
from sqpinvit.blockmps import SectorShape


def test_scalar_helpers():
    kap = ou.kappa(0.2, 5)
    assert_allclose(kap, math.sqrt(1.2 / 0.8) * 2.0)
    th = ou.theta(1.0, kap)
    assert 0 < th < 0.5
    assert_allclose(ou.inner_tolerance(1.0, 1.0, kap), 1 / ou.reduction_factor(1.0, kap))
    assert_allclose(ou.initial_eta(th, 4), 1 / (4 * th))
    with pytest.raises(ValueError):
        ou.OuterConfig(alpha=0.0)


def test_rank_reference():
    rng = np.random.default_rng(0)
    v = rng.standard_normal(2 ** 6)
    v /= np.linalg.norm(v)
    assert ou.rank_reference(v, 10.0, 0.1) == [0] * 5
    full = ou.rank_reference(v, 1e-14, 0.1)
    assert full == [2, 4, 8, 4, 2]
    mid = ou.rank_reference(v, 0.5, 0.1)
    assert all(a <= b for a, b in zip(mid, full))


@pytest.fixture(scope="module")
def outer_run(model6):
    shape = SectorShape(6, 2)
    sc = pc.exact_constants(model6, shape)
    p = pc.build_precond(model6, 0.1, sc.C_lower, sc.C_upper, shape)
    ops = oracle.build_dense(model6, shape, p)
    cfg = pv.SolverConfig(c=sc.c, delta=sc.delta, lambda1_lower=sc.lambda1 * (1 - 1e-10))
    ocfg = ou.OuterConfig(alpha=1.0, tau=1e-8)
    res = ou.outer_iterate(model6, p, bm.from_slater(shape, [0, 1]), cfg, ocfg,
                           keep_iterates=True)
    return res, ops, cfg


def test_outer_converges(outer_run):
    res, ops, cfg = outer_run
    lam, u = oracle.dense_eigs(ops, 1)
    assert res.converged
    assert (res.lam - lam[0]) / lam[0] < 1e-8
    assert res.trace[-1].eig_bound < 1e-8
    assert [r.n for r in res.trace] == list(range(len(res.trace)))


def test_outer_error_below_eta(outer_run):
    res, ops, cfg = outer_run
    lam, u = oracle.dense_eigs(ops, 1)
    for y, step in zip(res.iterates, res.steps):
        err = oracle.a_norm_error(ops, u[:, 0], oracle.sector_vector(y, ops.basis))
        assert err <= step.eta


def test_outer_bookkeeping(outer_run):
    res, ops, cfg = outer_run
    etas = [s.eta for s in res.steps]
    assert_allclose(np.array(etas[1:]) / np.array(etas[:-1]), 0.5)
    for s in res.steps[:-1]:
        assert s.ranks_truncated is not None
        assert s.trunc_error <= ou.theta(1.0, ou.kappa(cfg.c, 6)) * s.eta / math.sqrt(1 + cfg.c)
    assert res.steps[-1].ranks_truncated is None
