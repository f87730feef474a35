"""Scalar error bounds for perturbed preconditioned inverse iteration.

Everything here is plain arithmetic on a handful of reals: residual bounds,
a posteriori eigenvalue/eigenvector bounds, the a priori step count and
the Rayleigh-quotient perturbation estimates they rest on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class BoundUnavailable(ValueError):
    """Raised when a bound's admissibility condition does not hold."""


def residual_rho_bound(res_norm: float, eta_res: float, xnorm_A: float, c: float) -> float:
    """Upper bound (1-c)^(-1/2) (||res|| + eta_res) / ||x||_A on rho(x)."""
    if xnorm_A <= 0:
        raise ValueError("||x||_A must be positive")
    if not 0 <= c < 1:
        raise ValueError("c must lie in [0, 1)")
    return (res_norm + eta_res) / (math.sqrt(1 - c) * xnorm_A)


def b_delta(rho: float, delta: float) -> float:
    """Coefficient b with 1 - lambda_1/lambda(x) <= b * rho^2."""
    if delta <= 1:
        raise ValueError("delta must exceed 1")
    r2 = rho * rho
    disc = 1 - 4 * (delta - 1) * delta * r2
    if disc < -1e-12:
        raise BoundUnavailable(f"rho = {rho:.3e} too large for delta = {delta:.4g}")
    return 2 * delta / (1 + 2 * delta * r2 + math.sqrt(max(disc, 0.0)))


@dataclass(frozen=True)
class PosterioriBounds:
    rel_eig: float
    vec_err: float
    sin_bound: float
    available: bool = True


UNAVAILABLE = PosterioriBounds(math.inf, math.inf, math.inf, False)


def admissible(lam: float, rho: float, delta: float, lambda1_lower: float | None) -> bool:
    """Both conditions under which the a posteriori bounds are valid.

    The angle condition is checked through lambda_1/lambda(x) >= (2 delta - 2)/(2 delta - 1)
    using a lower estimate of lambda_1; without an estimate it is assumed.
    """
    if rho * rho * 4 * delta * (delta - 1) > 1:
        return False
    if lambda1_lower is not None and lambda1_lower / lam < (2 * delta - 2) / (2 * delta - 1):
        return False
    return True


def aposteriori_bounds(lam: float, rho: float, delta: float,
                       lambda1_lower: float | None = None) -> PosterioriBounds:
    if not admissible(lam, rho, delta, lambda1_lower):
        return UNAVAILABLE
    b = b_delta(rho, delta)
    br2 = b * rho * rho
    rel = br2 / (1 - br2) if br2 < 1 else math.inf
    s = math.sqrt(delta * b) * rho
    vec = 2 * math.sin(0.5 * math.asin(min(s, 1.0)))
    return PosterioriBounds(rel, vec, s)


def relative_eig_bound(rho: float, delta: float) -> float:
    b = b_delta(rho, delta)
    br2 = b * rho * rho
    return br2 / (1 - br2)


def delta_A(rho: float, lam_star: float, lam_prev: float, t_eig: float) -> float:
    """Largest Delta in [0, 1] with sqrt(1 - Delta^2) - rho Delta >= q.

    Here q = sqrt(lam_star / (lam_star + t_eig (lam_prev - lam_star))).  The
    left side is decreasing on [0, 1], so the equality root is the answer;
    it has the closed form of a quadratic.
    """
    gain = t_eig * max(lam_prev - lam_star, 0.0)
    if gain <= 0 or lam_star <= 0:
        return 0.0
    q = math.sqrt(lam_star / (lam_star + gain))
    r2 = rho * rho
    disc = q * q * r2 + (1 + r2) * (1 - q * q)
    d = (-q * rho + math.sqrt(disc)) / (1 + r2)
    return min(max(d, 0.0), 1.0)


def delta_A_bisect(rho, lam_star, lam_prev, t_eig, tol=1e-14):
    """Reference root of the same equation by bisection (used in tests)."""
    gain = t_eig * max(lam_prev - lam_star, 0.0)
    if gain <= 0 or lam_star <= 0:
        return 0.0
    q = math.sqrt(lam_star / (lam_star + gain))
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if math.sqrt(1 - mid * mid) - rho * mid >= q:
            lo = mid
        else:
            hi = mid
    return lo


def contraction_factor(eps: float, lam1: float, lam2: float, t_eig: float) -> float:
    """q~^2 = (1 - t_eig) q^2 + t_eig with q = 1 - (1 - eps)(1 - lam1/lam2)."""
    q = 1 - (1 - eps) * (1 - lam1 / lam2)
    return (1 - t_eig) * q * q + t_eig


def apriori_step_count(delta: float, eps: float, t_eig: float, u: float) -> int:
    """Steps guaranteeing an eigenvector error reduction by the factor u."""
    if not eps < 1:
        raise ValueError("eps must be below 1")
    if u < 1 or delta <= 1:
        raise ValueError("need u >= 1 and delta > 1")
    num = math.log(1.0 / (4 * u * u * delta - 1))
    den = math.log((1 - t_eig) * (1 - (1 - eps) / delta) ** 2 + t_eig)
    if den == 0.0:
        return math.inf
    return max(0, math.ceil(num / den))


# ---------------------------------------------------------------------------
# two-dimensional Rayleigh-quotient identities and estimates


def temple_residual_sq(a: float, b: float, mu: float) -> float:
    """Squared projected residual (a - mu)(mu - b) in a 2D subspace with Ritz values a >= b."""
    return (a - mu) * (mu - b)


def perturbation_lower_ratio(rho: float, mu_v: float, L: float, alpha: float) -> float:
    """Lower bound on (mu(p) - L)/(mu(v) - L) for angle(v, p) <= alpha."""
    gap = mu_v - L
    if gap <= 0:
        return 0.0
    return max(math.cos(alpha) - rho / gap * math.sin(alpha), 0.0) ** 2


def rayleigh_in_plane(a: float, b: float, kappa: float, beta: float) -> float:
    """mu(p) for p at angle beta from v (mu(v) = kappa) rotated toward the lower Ritz vector."""
    return b + (math.sqrt(kappa - b) * math.cos(beta) - math.sqrt(a - kappa) * math.sin(beta)) ** 2


def sin2_angle_bound(mu_x: float, mu1: float, gamma: float) -> float:
    """sin^2 of the angle to the top eigenvector <= (1 - mu(x)/mu1)/(1 - gamma)."""
    return (1 - mu_x / mu1) / (1 - gamma)


def q_lower(gamma: float, tau: float) -> float:
    """Lower bound q(gamma, tau) on mu(x)/mu1 given tau = varrho(x)/mu(x)."""
    disc = (gamma - 1) ** 2 - 4 * gamma * tau * tau
    if disc < 0:
        raise BoundUnavailable("tau exceeds (1 - gamma)/(2 sqrt(gamma))")
    return (gamma + 1 + math.sqrt(disc)) / (2 * (tau * tau + 1))
