"""Dense reference operators on the N-particle sector.

Matrices are assembled from occupation bit patterns directly (sign of the
annihilator = parity of occupied orbitals before it), independent of the
block-state code they are used to check.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np
import scipy.linalg

from .blockmps import BlockMPS, SectorShape
from .config import DEFAULTS


class OracleCapacityError(ValueError):
    pass


class SectorBasis:
    """Occupied-orbital tuples of the sector in lexicographic order."""

    def __init__(self, K: int, N: int):
        self.K, self.N = K, N
        self.states = list(combinations(range(K), N)) if 0 <= N <= K else []
        self.index = {s: i for i, s in enumerate(self.states)}

    def __len__(self):
        return len(self.states)

    def full_indices(self) -> np.ndarray:
        """Positions in the 2^K vector (orbital 0 most significant)."""
        K = self.K
        return np.array([sum(1 << (K - 1 - i) for i in s) for s in self.states], dtype=np.int64)

    def occupation_sums(self, d) -> np.ndarray:
        d = np.asarray(d, dtype=float)
        return np.array([d[list(s)].sum() for s in self.states])


def annihilators(K: int, N: int) -> np.ndarray:
    """Stack of a_i restricted to sector N -> N-1, shape (K, C(K,N-1), C(K,N))."""
    src, dst = SectorBasis(K, N), SectorBasis(K, N - 1)
    out = np.zeros((K, len(dst), len(src)))
    for col, s in enumerate(src.states):
        for pos, i in enumerate(s):
            rest = s[:pos] + s[pos + 1:]
            out[i, dst.index[rest], col] = (-1.0) ** pos
    return out


def hamiltonian_matrix(coeffs, N: int, include_shift: bool = True) -> np.ndarray:
    K = coeffs.K
    dim = comb(K, N)
    H = np.zeros((dim, dim))
    if N >= 1:
        a1 = annihilators(K, N)
        H += np.einsum("ij,iab,jac->bc", coeffs.t, a1, a1)
    if N >= 2 and np.any(coeffs.v):
        a2 = annihilators(K, N - 1)
        d2 = a2.shape[1]
        # pair[k, l] = a_k a_l : N -> N-2
        pair = np.einsum("kab,lbc->klac", a2, a1)
        q = coeffs.v.reshape(K * K, K * K) @ pair.reshape(K * K, d2 * dim)
        # creator pair a_i^* a_j^* = (a_j a_i)^T
        pt = pair.transpose(1, 0, 2, 3).reshape(K * K * d2, dim)
        H += pt.T @ q.reshape(K * K * d2, dim)
    if include_shift:
        H += coeffs.gamma * np.eye(dim)
    return H


@dataclass(frozen=True, eq=False)
class DenseOperators:
    basis: SectorBasis
    H: np.ndarray
    D: np.ndarray
    P: np.ndarray
    S: np.ndarray | None = None
    A: np.ndarray | None = None
    E: np.ndarray | None = None


def check_cap(shape: SectorShape, cap=None):
    cap = DEFAULTS.oracle_cap if cap is None else cap
    if shape.dimension > cap:
        raise OracleCapacityError(
            f"sector dimension C({shape.K},{shape.N}) = {shape.dimension} exceeds oracle cap {cap}; "
            "reduce K"
        )


def build_dense(coeffs, shape: SectorShape, p=None, cap=None) -> DenseOperators:
    check_cap(shape, cap)
    K, N = shape.K, shape.N
    basis = SectorBasis(K, N)
    H = hamiltonian_matrix(coeffs, N)
    H = 0.5 * (H + H.T)
    dvals = basis.occupation_sums(coeffs.d) if coeffs.d is not None else np.zeros(len(basis))
    D = np.diag(dvals)
    if N >= 1:
        a1 = annihilators(K, N)
        P = np.einsum("iab,iac->bc", a1, a1)
    else:
        P = np.zeros((len(basis), len(basis)))
    if p is None:
        return DenseOperators(basis, H, D, P)
    s = p.scalar(dvals)
    S = np.diag(s)
    A = s[:, None] * H * s[None, :]
    E = np.diag(s * s)
    return DenseOperators(basis, H, D, P, S, A, E)


def _fix_sign(u):
    for j in range(u.shape[1]):
        col = u[:, j]
        big = np.flatnonzero(np.abs(col) > 1e-12 * np.abs(col).max())
        if big.size and col[big[0]] < 0:
            u[:, j] = -col
    return u


def dense_eigs(ops: DenseOperators, count: int = 1):
    """Lowest eigenpairs of the pencil (A, E), eigenvectors A-normalized."""
    if ops.A is None:
        lam, u = scipy.linalg.eigh(ops.H, subset_by_index=[0, count - 1])
        return lam, _fix_sign(u)
    lam, u = scipy.linalg.eigh(ops.A, ops.E, subset_by_index=[0, count - 1])
    u = u / np.sqrt(np.einsum("ij,ik,kj->j", u, ops.A, u))
    return lam, _fix_sign(u)


def sector_vector(x: BlockMPS, basis: SectorBasis) -> np.ndarray:
    """Coefficients of a block state in the sector basis (via full expansion)."""
    from .blockmps import to_full

    return to_full(x)[basis.full_indices()]


def embed(vec, basis: SectorBasis) -> np.ndarray:
    full = np.zeros(1 << basis.K)
    full[basis.full_indices()] = vec
    return full


def rayleigh(ops: DenseOperators, x) -> float:
    return float(x @ ops.A @ x / (x @ ops.E @ x))


def exact_rho(ops: DenseOperators, x) -> float:
    lam = rayleigh(ops, x)
    r = ops.A @ x - lam * (ops.E @ x)
    return float(np.sqrt(r @ np.linalg.solve(ops.A, r)) / np.sqrt(x @ ops.A @ x))


def exact_angle(ops: DenseOperators, u, x) -> float:
    """Angle between the lines spanned by u and x in the A-inner product."""
    uu = u @ ops.A @ u
    xx = x @ ops.A @ x
    cos = abs(u @ ops.A @ x) / np.sqrt(uu * xx)
    return float(np.arccos(min(1.0, cos)))


def a_norm_error(ops: DenseOperators, u, x) -> float:
    """||u - x/||x||_A||_A with u A-normalized and oriented like x."""
    xn = x / np.sqrt(x @ ops.A @ x)
    un = u / np.sqrt(u @ ops.A @ u)
    if un @ ops.A @ xn < 0:
        un = -un
    e = un - xn
    return float(np.sqrt(max(e @ ops.A @ e, 0.0)))
