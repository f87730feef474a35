"""Outer iteration: inner solves at halving tolerances followed by rank truncation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import blockmps as bm
from . import tt
from .pinvit import Problem, SolverConfig, inner_iterate, quadratic


@dataclass(frozen=True)
class OuterConfig:
    alpha: float = 1.0
    tau: float = 1e-8
    D: int = 1
    eta0: float | None = None
    max_outer: int = 60

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.tau <= 0:
            raise ValueError("tau must be positive")


def kappa(c: float, K: int) -> float:
    """Quasi-optimality constant of truncation measured in the A-norm."""
    return math.sqrt((1 + c) / (1 - c)) * math.sqrt(max(K - 1, 0))


def theta(alpha: float, kap: float) -> float:
    g = (1 + alpha) * kap
    return g / (2 * (1 + g))


def inner_tolerance(eta: float, alpha: float, kap: float) -> float:
    return eta / (2 * (1 + (1 + alpha) * kap))


def initial_eta(th: float, D: int = 1) -> float:
    return 1.0 / (2 * th * math.sqrt(D))


def reduction_factor(alpha: float, kap: float) -> float:
    """Error reduction the inner solve achieves per outer step."""
    return 2 * (1 + (1 + alpha) * kap)


@dataclass
class OuterStep:
    m: int
    eta: float
    tau_m: float
    inner_steps: int
    lam: float
    rho: float
    rel_eig: float
    ranks_inner: list
    ranks_truncated: list | None = None
    trunc_error: float | None = None


@dataclass
class OuterResult:
    lam: float
    y: bm.BlockMPS
    trace: list
    steps: list
    converged: bool
    reason: str
    iterates: list = field(default_factory=list)


def outer_iterate(coeffs, p, y0: bm.BlockMPS, cfg: SolverConfig, ocfg: OuterConfig,
                  problem: Problem | None = None, keep_iterates: bool = False,
                  observer=None) -> OuterResult:
    prob = problem if problem is not None else Problem(coeffs, p)
    K = y0.K
    kap = kappa(cfg.c, K)
    th = theta(ocfg.alpha, kap)
    eta = ocfg.eta0 if ocfg.eta0 is not None else initial_eta(th, ocfg.D)
    y = bm.scale(y0, 1.0 / quadratic(prob, y0).anorm)
    trace, steps, iterates = [], [], []
    n_total = 0
    inner = None
    for m in range(ocfg.max_outer):
        if keep_iterates:
            iterates.append(y)
        tau_m = inner_tolerance(eta, ocfg.alpha, kap)
        inner = inner_iterate(coeffs, p, y, tau_m, cfg, m=m, n_offset=n_total, problem=prob,
                              stop_rel_eig=ocfg.tau, observer=observer)
        trace.extend(inner.trace)
        n_total += inner.steps + 1
        step = OuterStep(m, eta, tau_m, inner.steps, inner.lam, inner.rho, inner.eig_bound,
                         list(inner.x.ranks))
        steps.append(step)
        if not inner.converged:
            return OuterResult(inner.lam, inner.x, trace, steps, False,
                               f"inner iteration failed at outer step {m}: {inner.reason}", iterates)
        if inner.eig_bound < ocfg.tau:
            return OuterResult(inner.lam, inner.x, trace, steps, True, "converged", iterates)
        y, err = bm.truncate(inner.x, eps=th * eta / math.sqrt(1 + cfg.c), return_error=True)
        step.ranks_truncated = list(y.ranks)
        step.trunc_error = err
        eta *= 0.5
    return OuterResult(inner.lam, inner.x, trace, steps, False, "max_outer exceeded", iterates)


def rank_reference(u1_full: np.ndarray, eps_A: float, c: float) -> list:
    """Ranks of the TT-SVD truncation of a dense vector at Euclidean tolerance eps_A/sqrt(1+c).

    ``u1_full`` is the full 2^K vector.  Ranks are 0 if the zero tensor is
    within tolerance.
    """
    v = np.asarray(u1_full, dtype=float)
    K = int(round(math.log2(v.size)))
    eps = eps_A / math.sqrt(1 + c)
    if np.linalg.norm(v) <= eps:
        return [0] * (K - 1)
    x, _ = tt.tt_svd(v)
    y = tt.truncate(x, eps=eps)
    if tt.norm(y) == 0.0:
        return [0] * (K - 1)
    return list(y.ranks)
