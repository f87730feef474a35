"""Exponential-sum approximation of the inverse square root as a preconditioner.

The scalar sum

    S(t) = h / sqrt(pi) * sum_{m=M-}^{M+} exp(m h / 2) * exp(-exp(m h) t)

approximates t^{-1/2} on [1, T] with relative accuracy c0.  Applied to the
diagonal operator D (sum of d_i over occupied orbitals) each summand is a
Kronecker product of 2x2 diagonal factors, i.e. a rank-one operator.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import blockmps as bm
from .blockmps import BlockMPS, SectorShape

_LOG_TINY = math.log(np.finfo(float).tiny)


@dataclass(frozen=True)
class ExpSumParams:
    c0: float
    T: float
    h: float
    M_minus: int
    M_plus: int

    @property
    def nterms(self) -> int:
        return self.M_plus - self.M_minus + 1

    @property
    def m_values(self) -> np.ndarray:
        return np.arange(self.M_minus, self.M_plus + 1)


def build_params(c0: float, T: float) -> ExpSumParams:
    if not 0 < c0 < 1:
        raise ValueError(f"c0 must lie in (0, 1), got {c0}")
    if not T >= 1:
        raise ValueError(f"T must be at least 1, got {T}")
    h = math.pi**2 / math.log(8 * math.sqrt(2) / c0 + 1)
    ell = abs(math.log(math.sqrt(math.pi) * c0 / 4))
    m_plus = math.ceil(math.log(ell) / h)
    m_minus = -math.ceil((2 * ell + math.log(T)) / h)
    return ExpSumParams(c0, float(T), h, m_minus, m_plus)


def exp_sum(t, params: ExpSumParams):
    """Evaluate S(t) for scalar or array t."""
    t = np.asarray(t, dtype=float)
    m = params.m_values
    h = params.h
    e = np.exp(m * h)
    terms = np.exp(0.5 * m * h - np.multiply.outer(t, e))
    return h / math.sqrt(math.pi) * terms.sum(axis=-1)


def spectral_constant(c0: float, C_lower: float, C_upper: float) -> float:
    up = C_upper * (1 + c0) ** 2
    lo = C_lower * (1 - c0) ** 2
    return (up - lo) / (up + lo)


def sector_bounds(d, N: int) -> tuple[float, float]:
    """Extreme eigenvalues of sum_{i in S} d_i over N-element sets S."""
    s = np.sort(np.asarray(d, dtype=float))
    return float(s[:N].sum()), float(s[::-1][:N].sum())


@dataclass(frozen=True, eq=False)
class ExpSumPrecond:
    params: ExpSumParams
    t_min: float
    t_max: float
    alpha0: float
    m_values: np.ndarray
    log_alpha: np.ndarray
    beta: np.ndarray
    d: np.ndarray
    c: float
    C_lower: float
    C_upper: float
    dropped: tuple = ()

    @property
    def nterms(self) -> int:
        return len(self.m_values)

    @property
    def K(self) -> int:
        return len(self.d)

    def site_log_factors(self, m: int) -> np.ndarray:
        """(K, 2) log of the diagonal site factors of term index m."""
        la = self.log_alpha[m] / self.K
        return np.stack([np.full(self.K, la), la - self.beta[m] * self.d], axis=1)

    def scalar(self, t):
        """Diagonal value of S on an occupation vector with sum of d equal to t."""
        t = np.asarray(t, dtype=float)
        return np.exp(self.log_alpha[None, :] - np.multiply.outer(t, self.beta)).sum(axis=-1)


def build_precond(coeffs, c0: float, C_lower: float, C_upper: float,
                  shape: SectorShape) -> ExpSumPrecond:
    """Scaled exponential sum S = alpha0 * S(D / t_min) for the sector."""
    if coeffs.d is None or np.any(np.asarray(coeffs.d) <= 0):
        raise ValueError("preconditioner diagonal must be positive")
    if not 0 < C_lower <= C_upper:
        raise ValueError("need 0 < C_lower <= C_upper")
    t_min, t_max = sector_bounds(coeffs.d, shape.N)
    if shape.N == 0:
        t_min = t_max = 1.0
    params = build_params(c0, max(1.0, t_max / t_min))
    alpha0 = math.sqrt(2.0 / (t_min * (C_lower * (1 - c0) ** 2 + C_upper * (1 + c0) ** 2)))
    m = params.m_values
    h = params.h
    log_alpha = math.log(h * alpha0 / math.sqrt(math.pi)) + 0.5 * m * h
    beta = np.exp(m * h) / t_min
    # largest value a term takes on the sector is at the smallest occupied sum
    peak = log_alpha - beta * t_min
    keep = peak > _LOG_TINY
    dropped = tuple(int(v) for v in m[~keep])
    if dropped:
        warnings.warn(f"exponential-sum terms {dropped} underflow and were dropped",
                      RuntimeWarning, stacklevel=2)
    return ExpSumPrecond(
        params=params, t_min=t_min, t_max=t_max, alpha0=alpha0,
        m_values=m[keep], log_alpha=log_alpha[keep], beta=beta[keep],
        d=np.array(coeffs.d, dtype=float),
        c=spectral_constant(c0, C_lower, C_upper), C_lower=C_lower, C_upper=C_upper,
        dropped=dropped,
    )


def apply_term(p: ExpSumPrecond, m: int, x: BlockMPS) -> BlockMPS:
    """Apply summand m (0-based position in the stored term list)."""
    f = np.exp(p.site_log_factors(m))
    factors = [None] * x.nsites
    for o, s in enumerate(x.orbital_sites()):
        factors[s] = f[o]
    return bm.diag_scale(x, factors)


def apply_full(p: ExpSumPrecond, x: BlockMPS) -> BlockMPS:
    return bm.concat([apply_term(p, m, x) for m in range(p.nterms)])


# ---------------------------------------------------------------------------
# spectral constants


@dataclass(frozen=True)
class SpectralConstants:
    c: float
    delta: float
    C_lower: float
    C_upper: float
    lambda1: float
    c0: float
    source: str

    def as_dict(self):
        return dict(c=self.c, delta=self.delta, C_lower=self.C_lower, C_upper=self.C_upper,
                    lambda1=self.lambda1, c0=self.c0, source=self.source)


def _dense_constants(coeffs, N, cap):
    from . import oracle

    shape = SectorShape(coeffs.K, N)
    ops = oracle.build_dense(coeffs, shape, cap=cap)
    dm = 1.0 / np.sqrt(np.diag(ops.D))
    w = np.linalg.eigvalsh(dm[:, None] * ops.H * dm[None, :])
    lam = np.linalg.eigvalsh(ops.H)
    if lam[0] <= 0:
        raise ValueError(f"shifted Hamiltonian not positive (lowest eigenvalue {lam[0]:.4g}); "
                         "increase gamma")
    delta = lam[1] / (lam[1] - lam[0]) if lam.size > 1 else 1.0 + 1e-12
    return float(w[0]), float(w[-1]), float(delta), float(lam[0])


def exact_constants(coeffs, shape: SectorShape, c0: float = 0.1, cap=None) -> SpectralConstants:
    """Constants from dense spectra at the problem size itself."""
    Cl, Cu, delta, lam1 = _dense_constants(coeffs, shape.N, cap)
    return SpectralConstants(spectral_constant(c0, Cl, Cu), delta, Cl, Cu, lam1, c0, "oracle-exact")


def estimate_constants(coeffs, shape: SectorShape, K_low=(12, 14), c0: float = 0.1,
                       cap=None) -> SpectralConstants:
    """Dense constants at two smaller orbital counts, extrapolated geometrically.

    With K_low = (Ka, Kb) and k = (K - Kb) / (Kb - Ka) the extrapolated value
    is X_Kb^(1+k) * X_Ka^(-k); the gap constant never drops below its value
    at Kb.
    """
    Ka, Kb = sorted(K_low)
    if Kb > coeffs.K:
        raise ValueError(f"coefficients have only {coeffs.K} orbitals, need {Kb}")
    lo = _dense_constants(coeffs.restrict(Ka), shape.N, cap)
    hi = _dense_constants(coeffs.restrict(Kb), shape.N, cap)
    k = (shape.K - Kb) / (Kb - Ka)

    def extra(a, b):
        return b ** (1 + k) * a ** (-k)

    Cl = extra(lo[0], hi[0])
    Cu = extra(lo[1], hi[1])
    delta = max(hi[2], extra(lo[2], hi[2]))
    lam1 = min(hi[3], extra(lo[3], hi[3]))
    return SpectralConstants(spectral_constant(c0, Cl, Cu), delta, Cl, Cu, lam1, c0,
                             "extrapolated")
