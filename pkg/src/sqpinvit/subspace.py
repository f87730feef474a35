"""Simultaneous iteration for the D lowest eigenpairs in a joint block state.

The D columns share all orbital cores; one extra site (the joint site) at
position p carries the column index.  Gram matrices of all columns come
from a single environment contraction.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import blockmps as bm
from . import bounds
from .blockmps import BlockMPS
from .outer import OuterConfig, OuterStep, inner_tolerance, initial_eta, kappa, theta
from .pinvit import (IterationRecord, Problem, SolverConfig, assemble_residual, _now)


class DependentColumnsError(ArithmeticError):
    pass


def stack(columns, position: int | None = None) -> BlockMPS:
    """Joint state from D plain states; the position minimizing ranks if not given.

    Ties are broken toward the last position, where the joint site adds no
    extra interior singular values for D = 1.
    """
    cols = list(columns)
    if not cols:
        raise ValueError("need at least one column")
    shape = cols[0].shape
    for x in cols:
        if x.shape != shape or x.joint is not None:
            raise ValueError("columns must be plain states of the same sector")
    D = len(cols)
    positions = range(shape.K + 1) if position is None else [position]
    best = None
    for pos in positions:
        X = bm.compress(bm.concat([bm.insert_joint(x, pos, i, D) for i, x in enumerate(cols)]))
        key = (max(X.ranks, default=0), sum(X.ranks), -pos)
        if best is None or key < best[0]:
            best = (key, X)
    return best[1]


def columns(X: BlockMPS) -> list:
    return [bm.extract(X, i) for i in range(X.ncols)]


def gram(prob: Problem, SX: BlockMPS):
    return bm.bilinear(SX, SX, prob.H), bm.bilinear(SX, SX)


def _orient(V):
    for j in range(V.shape[1]):
        i = j if V[j, j] != 0 else int(np.argmax(np.abs(V[:, j])))
        if V[i, j] < 0:
            V[:, j] = -V[:, j]
    return V


def joint_orthonormalize(prob: Problem, X: BlockMPS):
    """Rotate columns to A-orthonormal Ritz vectors; returns (X', Lambda, S X')."""
    SX = prob.apply_S(X)
    GA, GE = gram(prob, SX)
    ev = np.linalg.eigvalsh(GE)
    if ev[0] <= 1e-12 * ev[-1]:
        raise DependentColumnsError("columns are numerically dependent")
    lam, V = scipy.linalg.eigh(GA, GE)
    V = _orient(V / np.sqrt(lam)[None, :])
    return bm.transform_columns(X, V), lam, bm.transform_columns(SX, V)


@dataclass
class RitzStep:
    X: BlockMPS
    lams: np.ndarray
    anorms: np.ndarray
    W: np.ndarray
    dropped: tuple = ()


def ritz_update(prob: Problem, X: BlockMPS, R: BlockMPS, SX: BlockMPS | None = None) -> RitzStep:
    """Lowest D Ritz pairs of the pencil on span{X, R}."""
    D = X.ncols
    SX = prob.apply_S(X) if SX is None else SX
    SR = prob.apply_S(R)
    big = bm.hstack_columns(X, R)
    Sbig = bm.hstack_columns(SX, SR)
    GA, GE = gram(prob, Sbig)
    nrm = np.sqrt(np.maximum(np.diag(GE), 0.0))
    keep = list(range(D))
    dropped = []
    for i in range(D, 2 * D):
        if nrm[i] > 1e-12 * nrm[i - D]:
            keep.append(i)
        else:
            dropped.append(i - D)
    while True:
        idx = np.array(keep)
        xi = 1.0 / nrm[idx]
        B = GA[np.ix_(idx, idx)] * xi[:, None] * xi[None, :]
        M = GE[np.ix_(idx, idx)] * xi[:, None] * xi[None, :]
        if np.linalg.cond(M) <= 1e14 or len(keep) == D:
            break
        # drop the residual column with the smallest relative norm
        rel = [(nrm[i] / nrm[i - D], i) for i in keep if i >= D]
        worst = min(rel)[1]
        keep.remove(worst)
        dropped.append(worst - D)
        warnings.warn("ill-conditioned Ritz pencil, residual column dropped", RuntimeWarning,
                      stacklevel=2)
    lam, V = scipy.linalg.eigh(B, M, subset_by_index=[0, D - 1])
    V = _orient(V / np.sqrt(lam)[None, :])
    W = np.zeros((2 * D, D))
    W[idx] = V * xi[:, None]
    return RitzStep(bm.transform_columns(big, W), lam, np.ones(D), W, tuple(sorted(dropped)))


def column_rayleigh(prob: Problem, X: BlockMPS):
    SX = prob.apply_S(X)
    GA, GE = gram(prob, SX)
    return np.diag(GA) / np.diag(GE)


@dataclass
class JointTruncation:
    X: BlockMPS
    eta: float
    retries: int


def joint_truncate(prob: Problem, X_star: BlockMPS, lam_star, lam_prev, rho, cfg: SolverConfig,
                   anorms=None) -> JointTruncation:
    """One tolerance (the smallest per-column one) for the whole joint state."""
    lam_star = np.asarray(lam_star, dtype=float)
    lam_prev = np.asarray(lam_prev, dtype=float)
    D = len(lam_star)
    anorms = np.ones(D) if anorms is None else np.asarray(anorms, dtype=float)
    deltas = [bounds.delta_A(rho[i], lam_star[i], lam_prev[i], cfg.t_eig) for i in range(D)]
    eta = min(anorms[i] * deltas[i] for i in range(D)) / math.sqrt(1 + cfg.c)
    limit = lam_star + cfg.t_eig * np.maximum(lam_prev - lam_star, 0.0)
    slack = 1e-13 * np.abs(lam_star)
    retries = 0
    while eta > 0:
        Xt = bm.truncate(X_star, eps=eta)
        if not Xt.is_zero():
            lt = column_rayleigh(prob, Xt)
            if np.all(lt <= limit + slack):
                return JointTruncation(Xt, eta, retries)
        retries += 1
        if retries >= 40:
            break
        eta *= 0.5
    return JointTruncation(bm.compress(X_star), 0.0, retries)


def column_bounds(lams, rhos, cfg: SolverConfig):
    """Certified bounds for column 1, the same formulas (heuristic) for the rest."""
    out = []
    for i, (lam, rho) in enumerate(zip(lams, rhos)):
        lower = cfg.lambda1_lower if i == 0 else None
        out.append(bounds.aposteriori_bounds(lam, rho, cfg.delta, lower))
    return out


@dataclass
class SubspaceResult:
    lams: np.ndarray
    X: BlockMPS
    rhos: np.ndarray
    trace: list
    converged: bool
    reason: str
    steps: int
    col_bounds: list


def subspace_inner(coeffs, p, X0: BlockMPS, tau1: float, cfg: SolverConfig, *, m: int = -1,
                   n_offset: int = 0, problem: Problem | None = None,
                   stop_rel_eig: float | None = None, observer=None) -> SubspaceResult:
    prob = problem if problem is not None else Problem(coeffs, p)
    zeta = cfg.zeta
    X = X0
    trace = []
    eta_res = math.inf
    for n in range(cfg.max_inner + 1):
        t0 = _now()
        X, lams, SX = joint_orthonormalize(prob, X)
        r = assemble_residual(prob, X, lams, zeta, eta_res)
        eta_res = r.eta
        rhos = np.array([bounds.residual_rho_bound(r.norms[i], r.eta, 1.0, cfg.c)
                         for i in range(X.ncols)])
        cb = column_bounds(lams, rhos, cfg)
        flags = [] if cb[0].available else ["inadmissible"]
        if r.roundoff:
            flags.append("roundoff")
        rec = IterationRecord(
            n=n_offset + n, m=m, lam=float(lams[0]), rho=float(rhos[0]), eta_res=r.eta,
            eta_inner=math.nan, eig_bound=cb[0].rel_eig, vec_bound=cb[0].vec_err,
            ranks=list(X.ranks), residual_ranks=list(r.res.ranks),
            lams=tuple(float(v) for v in lams), rhos=tuple(float(v) for v in rhos),
        )
        trace.append(rec)
        if observer is not None:
            observer(rec, X)
        rel = [b.rel_eig for b in cb]
        done = cb[0].available and (cb[0].vec_err <= tau1 or (
            stop_rel_eig is not None and max(rel) < stop_rel_eig))
        if done or r.roundoff or n == cfg.max_inner:
            rec.flags = tuple(flags)
            if cfg.record_timing:
                rec.wall_ms = 1000.0 * (_now() - t0)
            reason = "converged" if done else ("residual at round-off" if r.roundoff
                                               else "max_inner exceeded")
            return SubspaceResult(lams, X, rhos, trace, done, reason, n, cb)
        rs = ritz_update(prob, X, r.res, SX)
        if rs.dropped:
            flags.append(f"dropped={list(rs.dropped)}")
        tr = joint_truncate(prob, rs.X, rs.lams, lams, rhos, cfg, rs.anorms)
        if tr.retries:
            flags.append(f"truncation-retries={tr.retries}")
        rec.eta_inner = tr.eta
        rec.flags = tuple(flags)
        if cfg.record_timing:
            rec.wall_ms = 1000.0 * (_now() - t0)
        X = tr.X
    raise AssertionError("unreachable")


@dataclass
class SubspaceOuterResult:
    lams: np.ndarray
    Y: BlockMPS
    trace: list
    steps: list
    converged: bool
    reason: str
    col_bounds: list


def subspace_outer(coeffs, p, Y0: BlockMPS, cfg: SolverConfig, ocfg: OuterConfig,
                   problem: Problem | None = None, observer=None) -> SubspaceOuterResult:
    """Outer loop driven by column 1; also waits for the heuristic bounds of all columns."""
    prob = problem if problem is not None else Problem(coeffs, p)
    D = Y0.ncols
    kap = kappa(cfg.c, Y0.K)
    th = theta(ocfg.alpha, kap)
    eta = ocfg.eta0 if ocfg.eta0 is not None else initial_eta(th, D)
    Y = Y0
    trace, steps = [], []
    n_total = 0
    res = None
    for m in range(ocfg.max_outer):
        tau_m = inner_tolerance(eta, ocfg.alpha, kap)
        res = subspace_inner(coeffs, p, Y, tau_m, cfg, m=m, n_offset=n_total, problem=prob,
                             stop_rel_eig=ocfg.tau, observer=observer)
        trace.extend(res.trace)
        n_total += res.steps + 1
        rel = [b.rel_eig for b in res.col_bounds]
        step = OuterStep(m, eta, tau_m, res.steps, float(res.lams[0]), float(res.rhos[0]),
                         rel[0], list(res.X.ranks))
        steps.append(step)
        if not res.converged:
            return SubspaceOuterResult(res.lams, res.X, trace, steps, False,
                                       f"inner iteration failed at outer step {m}: {res.reason}",
                                       res.col_bounds)
        if rel[0] < ocfg.tau and max(rel) < ocfg.tau:
            return SubspaceOuterResult(res.lams, res.X, trace, steps, True, "converged",
                                       res.col_bounds)
        Y, err = bm.truncate(res.X, eps=th * eta / math.sqrt(1 + cfg.c), return_error=True)
        step.ranks_truncated = list(Y.ranks)
        step.trunc_error = err
        eta *= 0.5
    return SubspaceOuterResult(res.lams, res.X, trace, steps, False, "max_outer exceeded",
                               res.col_bounds)
