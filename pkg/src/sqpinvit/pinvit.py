"""Perturbed preconditioned inverse iteration on block-sparse states.

The pencil is (A, E) = (S H S, S^2) with S the exponential-sum
preconditioner.  Iterates live in the original coordinates; S is applied
term by term and recompressed at round-off level only.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import blockmps as bm
from . import bounds
from . import precond as pc
from .blockmps import BlockMPS
from .secondquant import hamiltonian_operator

ROUNDOFF_FLOOR = 1e-13
TRUNC_RETRIES = 40


class ResidualAtRoundoff(ArithmeticError):
    """The residual cannot be resolved relative to its own size any more."""


@dataclass(frozen=True)
class SolverConfig:
    c: float
    delta: float
    eps_num: float | None = None
    t_eig: float = 0.5
    max_inner: int = 200
    lambda1_lower: float | None = None
    optimistic_rho: bool = False
    record_timing: bool = False

    def __post_init__(self):
        if not 0 <= self.c < 1:
            raise ValueError(f"c must lie in [0, 1), got {self.c}")
        if not self.delta > 1:
            raise ValueError(f"delta must exceed 1, got {self.delta}")
        if not 0 < self.t_eig < 1:
            raise ValueError("t_eig must lie in (0, 1)")
        if not 0 < self.num < 1 - self.c:
            raise ValueError("need 0 < eps_num < 1 - c")

    @property
    def eps_iter(self) -> float:
        return self.c

    @property
    def num(self) -> float:
        return 0.5 * (1 - self.c) if self.eps_num is None else self.eps_num

    @property
    def zeta(self) -> float:
        return self.num / (1 + self.c)


@dataclass
class IterationRecord:
    n: int
    m: int
    lam: float
    rho: float
    eta_res: float
    eta_inner: float
    eig_bound: float
    vec_bound: float
    ranks: list
    residual_ranks: list
    omega: float = math.nan
    flags: tuple = ()
    wall_ms: float | None = None
    lams: tuple = ()
    rhos: tuple = ()

    @property
    def max_rank(self) -> int:
        return max(self.ranks) if self.ranks else 0


@dataclass
class InnerResult:
    lam: float
    x: BlockMPS
    rho: float
    trace: list
    converged: bool
    reason: str
    steps: int
    vec_bound: float = math.inf
    eig_bound: float = math.inf


class Problem:
    """Coefficients, preconditioner and cached operators for one run."""

    def __init__(self, coeffs, p: pc.ExpSumPrecond):
        self.coeffs = coeffs
        self.p = p
        self.H = hamiltonian_operator(coeffs, shift=coeffs.gamma)

    def shifted(self, lam: float):
        return hamiltonian_operator(self.coeffs, shift=self.coeffs.gamma - lam)

    def apply_S(self, x: BlockMPS) -> BlockMPS:
        return bm.compress(pc.apply_full(self.p, x))


def _as_problem(problem_or_coeffs, p=None) -> Problem:
    if isinstance(problem_or_coeffs, Problem):
        return problem_or_coeffs
    return Problem(problem_or_coeffs, p)


# ---------------------------------------------------------------------------
# Rayleigh quotient


@dataclass
class Quadratic:
    """S x together with <A x, x> and <E x, x>."""

    Sx: BlockMPS
    num: float
    den: float

    @property
    def lam(self) -> float:
        return self.num / self.den

    @property
    def anorm(self) -> float:
        return math.sqrt(max(self.num, 0.0))


def quadratic(prob: Problem, x: BlockMPS) -> Quadratic:
    Sx = prob.apply_S(x)
    den = bm.inner(Sx, Sx)
    if den <= 0:
        raise ZeroDivisionError("Rayleigh quotient of the zero vector")
    num = float(bm.bilinear(Sx, Sx, prob.H))
    return Quadratic(Sx, num, den)


def rayleigh(coeffs, p, x: BlockMPS) -> float:
    return quadratic(_as_problem(coeffs, p), x).lam


# ---------------------------------------------------------------------------
# residual


@dataclass
class ResidualTerms:
    terms: list
    norms: np.ndarray
    # size of the summands before the cancellation in (H - lambda)
    scale: float = 0.0

    @property
    def total(self) -> float:
        return float(self.norms.sum())


def residual_terms(prob: Problem, x: BlockMPS, lams) -> ResidualTerms:
    """All summands S_k (H - lambda) S_k' x, sorted by ascending norm.

    ``lams`` is a scalar for plain states or one value per column of a
    joint state.
    """
    p = prob.p
    ws = []
    lam_max = float(np.max(np.abs(lams)))
    vnorm = 0.0
    for k2 in range(p.nterms):
        v = pc.apply_term(p, k2, x)
        vnorm += bm.norm(v)
        if x.joint is None:
            w = bm.apply_operator(prob.shifted(float(lams)), v)
        else:
            shifted = bm.transform_columns(v, -np.diag(np.asarray(lams, dtype=float)))
            w = bm.concat([bm.apply_operator(prob.H, v), shifted])
        ws.append(bm.compress(w))
    terms, norms = [], []
    for k in range(p.nterms):
        for w in ws:
            s = pc.apply_term(p, k, w)
            terms.append(s)
            norms.append(bm.norm(s))
    norms = np.array(norms)
    order = np.argsort(norms, kind="stable")
    peaks = np.exp(p.log_alpha - p.beta * p.t_min).sum()
    return ResidualTerms([terms[i] for i in order], norms[order], float(peaks * lam_max * vnorm))


def _column_norms(x: BlockMPS) -> np.ndarray:
    if x.joint is None:
        return np.array([bm.norm(x)])
    g = bm.bilinear(x, x)
    return np.sqrt(np.maximum(np.diag(g), 0.0))


def sum_terms(rt: ResidualTerms, eta: float) -> BlockMPS:
    """Truncated accumulation with total error at most eta."""
    cums = np.cumsum(rt.norms)
    J0 = int(np.searchsorted(cums, eta / 3, side="right"))
    rest = rt.norms[J0:].sum()
    y = None
    for j in range(J0, len(rt.terms)):
        s = rt.terms[j]
        y = s if y is None else bm.concat([y, s])
        eps_j = eta * rt.norms[j] / (3 * rest) if rest > 0 else 0.0
        y = bm.truncate(y, eps=eps_j)
    if y is None:
        return bm.zero_like(rt.terms[0])
    return bm.truncate(y, eps=eta / 3)


@dataclass
class Residual:
    res: BlockMPS
    eta: float
    norms: np.ndarray
    roundoff: bool = False
    rounds: int = 1


def assemble_residual(prob: Problem, x: BlockMPS, lams, zeta: float,
                      eta_prev: float = math.inf, terms: ResidualTerms | None = None) -> Residual:
    """Approximate residual res with ||res - r|| <= eta <= zeta ||r||.

    If the accepted tolerance would fall below round-off relative to the
    summands, the assembly stops at the round-off floor; it is flagged when
    the leading column cannot be resolved there.  The absolute guarantee
    ||res - r|| <= eta still holds then.
    """
    rt = residual_terms(prob, x, lams) if terms is None else terms
    total = rt.total
    floor = ROUNDOFF_FLOOR * max(total, rt.scale)
    eta = min(2 * eta_prev, 0.8 * zeta * total)
    rounds = 0
    while True:
        rounds += 1
        eta_used = max(eta, floor)
        res = sum_terms(rt, eta_used) if total > 0 else bm.zero_like(x)
        norms = _column_norms(res)
        if total == 0.0:
            return Residual(res, 0.0, norms, True, rounds)
        if eta_used <= floor:
            # only the leading column decides; other columns may already be exact
            stuck = norms[0] < (1 + 1 / zeta) * floor
            return Residual(res, floor, norms, bool(stuck), rounds)
        if norms.min() >= (1 + 1 / zeta) * eta:
            return Residual(res, eta, norms, False, rounds)
        eta *= 0.8


# ---------------------------------------------------------------------------
# step size


@dataclass
class Step:
    x: BlockMPS
    lam: float
    omega: float
    fixed: bool = False


def optimal_step(prob: Problem, x: BlockMPS, res: BlockMPS, qx: Quadratic | None = None) -> Step:
    """Minimize the Rayleigh quotient over span{x, res} via the 2x2 pencil."""
    qx = quadratic(prob, x) if qx is None else qx
    Sr = prob.apply_S(res)
    n1 = math.sqrt(qx.den)
    n2 = bm.norm(Sr)
    if n2 == 0.0:
        return Step(x, qx.lam, 0.0)
    a11 = qx.num / (n1 * n1)
    a12 = float(bm.bilinear(qx.Sx, Sr, prob.H)) / (n1 * n2)
    a22 = float(bm.bilinear(Sr, Sr, prob.H)) / (n2 * n2)
    e12 = bm.inner(qx.Sx, Sr) / (n1 * n2)
    Ah = np.array([[a11, a12], [a12, a22]])
    Eh = np.array([[1.0, e12], [e12, 1.0]])
    if 1 - e12 * e12 < 1e-13:
        xs = bm.concat([x, bm.scale(res, -1.0)])
        return Step(xs, quadratic(prob, xs).lam, 1.0, fixed=True)
    w, v = scipy.linalg.eigh(Ah, Eh)
    v1, v2 = v[0, 0], v[1, 0]
    if v1 < 0:
        v1, v2 = -v1, -v2
    if v1 == 0.0:
        xs = bm.concat([x, bm.scale(res, -1.0)])
        return Step(xs, quadratic(prob, xs).lam, 1.0, fixed=True)
    a, b = v1 / n1, v2 / n2
    xs = bm.concat([bm.scale(x, a), bm.scale(res, b)])
    omega = -(v2 * n1) / (v1 * n2)
    return Step(xs, float(w[0]), float(omega))


# ---------------------------------------------------------------------------
# iterate truncation


@dataclass
class Truncation:
    x: BlockMPS
    eta: float
    q: Quadratic
    retries: int


def truncate_iterate(prob: Problem, x_star: BlockMPS, lam_star: float, lam_prev: float,
                     rho: float, cfg: SolverConfig, anorm_star: float | None = None) -> Truncation:
    """Truncate x_star while keeping lambda(x') <= lam_star + t_eig (lam_prev - lam_star)."""
    d = bounds.delta_A(rho, lam_star, lam_prev, cfg.t_eig)
    anorm = math.sqrt(max(lam_star, 0.0)) if anorm_star is None else anorm_star
    eta = d * anorm / math.sqrt(1 + cfg.c)
    limit = lam_star + cfg.t_eig * max(lam_prev - lam_star, 0.0)
    slack = 1e-13 * abs(lam_star)
    retries = 0
    while eta > 0:
        xt = bm.truncate(x_star, eps=eta)
        if not xt.is_zero():
            q = quadratic(prob, xt)
            if q.lam <= limit + slack:
                return Truncation(xt, eta, q, retries)
        retries += 1
        if retries >= TRUNC_RETRIES:
            break
        eta *= 0.5
    xs = bm.compress(x_star)
    return Truncation(xs, 0.0, quadratic(prob, xs), retries)


# ---------------------------------------------------------------------------
# inner iteration


def _now():
    return time.perf_counter()


def inner_iterate(coeffs, p, x0: BlockMPS, tau: float, cfg: SolverConfig, *,
                  m: int = -1, n_offset: int = 0, problem: Problem | None = None,
                  stop_rel_eig: float | None = None, observer=None) -> InnerResult:
    """Iterate until the a posteriori eigenvector bound drops below tau.

    ``stop_rel_eig`` additionally stops once the relative eigenvalue bound is
    below it (used for inner-only runs).  ``observer(record, x)`` is called
    for every iterate.
    """
    prob = problem if problem is not None else Problem(coeffs, p)
    zeta = cfg.zeta
    trace = []
    eta_res = math.inf
    x = x0
    q = quadratic(prob, x)
    best = None
    for n in range(cfg.max_inner + 1):
        t0 = _now()
        lam = q.lam
        # A-normalize
        s = 1.0 / q.anorm
        x = bm.scale(x, s)
        q = Quadratic(bm.scale(q.Sx, s), q.num * s * s, q.den * s * s)
        r = assemble_residual(prob, x, lam, zeta, eta_res)
        eta_res = r.eta
        res_norm = float(r.norms[0])
        rho = bounds.residual_rho_bound(res_norm, r.eta, q.anorm, cfg.c)
        pb = bounds.aposteriori_bounds(lam, rho, cfg.delta, cfg.lambda1_lower)
        flags = []
        if not pb.available:
            flags.append("inadmissible")
        if r.roundoff:
            flags.append("roundoff")
        rec = IterationRecord(
            n=n_offset + n, m=m, lam=lam, rho=rho, eta_res=r.eta, eta_inner=math.nan,
            eig_bound=pb.rel_eig, vec_bound=pb.vec_err, ranks=list(x.ranks),
            residual_ranks=list(r.res.ranks),
        )
        trace.append(rec)
        if observer is not None:
            observer(rec, x)
        if best is None or lam < best[0]:
            best = (lam, x, rho, pb)
        if pb.available and (pb.vec_err <= tau or (stop_rel_eig is not None
                                                   and pb.rel_eig < stop_rel_eig)):
            rec.flags = tuple(flags)
            _stamp(rec, t0, cfg)
            return InnerResult(lam, x, rho, trace, True, "converged", n, pb.vec_err, pb.rel_eig)
        if r.roundoff:
            rec.flags = tuple(flags)
            _stamp(rec, t0, cfg)
            return InnerResult(lam, x, rho, trace, False, "residual at round-off", n,
                               pb.vec_err, pb.rel_eig)
        if n == cfg.max_inner:
            rec.flags = tuple(flags)
            _stamp(rec, t0, cfg)
            break
        step = optimal_step(prob, x, r.res, q)
        if step.fixed:
            flags.append("fixed-step")
        rec.omega = step.omega
        rho_t = res_norm / q.anorm if cfg.optimistic_rho else rho
        tr = truncate_iterate(prob, step.x, step.lam, lam, rho_t, cfg)
        if tr.retries:
            flags.append(f"truncation-retries={tr.retries}")
        rec.eta_inner = tr.eta
        rec.flags = tuple(flags)
        _stamp(rec, t0, cfg)
        x, q = tr.x, tr.q
    lam, x, rho, pb = best
    return InnerResult(lam, x, rho, trace, False, "max_inner exceeded", cfg.max_inner,
                       pb.vec_err, pb.rel_eig)


def _stamp(rec, t0, cfg):
    if cfg.record_timing:
        rec.wall_ms = 1000.0 * (_now() - t0)
