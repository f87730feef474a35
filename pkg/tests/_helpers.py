"""Shared independent reference computations for the tests."""

import itertools

import numpy as np
import scipy.linalg

from sqpinvit import blockmps as bm
from sqpinvit import secondquant as sq
from sqpinvit.blockmps import SectorShape
from sqpinvit.secondquant import CoefficientSet

# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def random_coefficients(rng, K, N, gamma=0.0, hermitian=True, density=1.0):
    t = rng.standard_normal((K, K))
    t = 0.5 * (t + t.T)
    v = rng.standard_normal((K,) * 4)
    if density < 1.0:
        v *= rng.random((K,) * 4) < density
    if hermitian:
        v = 0.5 * (v + v.transpose(3, 2, 1, 0))
    d = np.abs(rng.standard_normal(K)) + 0.5
    return CoefficientSet(t, v, gamma, d, N)


def jw_annihilator(K, i):
    """Dense a_i on (R^2)^K by explicit Kronecker products, orbital 0 leftmost."""
    S = np.diag([1.0, -1.0])
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    out = np.ones((1, 1))
    for s in range(K):
        f = S if s < i else (A if s == i else np.eye(2))
        out = np.kron(out, f)
    return out


def fock_matrix(K, i, create):
    """Full 2^K matrix of a_i (or a_i^*) assembled from block-state applications."""
    M = np.zeros((2 ** K, 2 ** K))
    for N in range(K + 1):
        shape = SectorShape(K, N)
        for occ in itertools.combinations(range(K), N):
            x = bm.from_slater(shape, occ)
            col = bm.to_full(x).argmax()
            y = sq.apply_creation(i, x) if create else sq.apply_annihilation(i, x)
            M[:, col] = bm.to_full(y)
    return M


def matricization_sigmas(v, k):
    """Singular values of the full vector v (length 2^K) split after site k."""
    K = int(round(np.log2(v.size)))
    return np.linalg.svd(v.reshape(2 ** (k + 1), 2 ** (K - k - 1)), compute_uv=False)


def dense_hamiltonian(coeffs, include_shift=True):
    """H on the full Fock space from Kronecker-product fermion operators."""
    K = coeffs.K
    a = [jw_annihilator(K, i) for i in range(K)]
    H = sum(coeffs.t[i, j] * a[i].T @ a[j] for i in range(K) for j in range(K))
    for i, j, k, l in zip(*np.nonzero(coeffs.v)):
        H = H + coeffs.v[i, j, k, l] * a[i].T @ a[j].T @ a[k] @ a[l]
    if include_shift:
        H = H + coeffs.gamma * np.eye(2 ** K)
    return H


class InnerProductSpace:
    """R^n with <x, y>_A = x^T A y and an A-selfadjoint B = A^{-1} M."""

    def __init__(self, A, M):
        self.A = A
        self.M = M
        self.B = np.linalg.solve(A, M)

    @classmethod
    def random(cls, rng, n, spectrum=None):
        G = rng.standard_normal((n, n))
        A = G @ G.T + n * np.eye(n)
        if spectrum is None:
            spectrum = rng.uniform(0.5, 5.0, n)
        # A-orthonormal eigenvectors: columns W with W^T A W = I
        L = np.linalg.cholesky(A)
        Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        W = np.linalg.solve(L.T, Q)
        Ainv_W = W
        M = A @ Ainv_W @ np.diag(spectrum) @ Ainv_W.T @ A
        space = cls(A, 0.5 * (M + M.T))
        space.eigvecs = W
        space.eigvals = np.asarray(spectrum, dtype=float)
        return space

    def norm(self, x):
        return float(np.sqrt(x @ self.A @ x))

    def mu(self, x):
        return float(x @ self.M @ x / (x @ self.A @ x))

    def varrho(self, x):
        r = self.B @ x - self.mu(x) * x
        return self.norm(r) / self.norm(x)

    def angle(self, x, y):
        c = abs(x @ self.A @ y) / (self.norm(x) * self.norm(y))
        return float(np.arccos(min(1.0, c)))

    def ritz_values(self, X):
        """Ritz values (a >= b) of B on span of the columns of X."""
        w = scipy.linalg.eigh(X.T @ self.M @ X, X.T @ self.A @ X, eigvals_only=True)
        return float(w[-1]), float(w[0])

    def projected_varrho(self, X, x):
        """Residual of x measured after A-orthogonal projection onto span(X)."""
        r = self.B @ x - self.mu(x) * x
        G = X.T @ self.A @ X
        Pr = X @ np.linalg.solve(G, X.T @ self.A @ r)
        return self.norm(Pr) / self.norm(x)
