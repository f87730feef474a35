"""One-dimensional model problem and coefficient files.

Particles on [-b, b] with the attractive point potential -N*delta(x) and the
pair interaction strength*exp(-|x - y|).  Orbitals are the lowest
eigenfunctions of the one-particle operator in a Dirichlet sine basis.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .secondquant import CoefficientSet


class QuadratureError(RuntimeError):
    pass


class CoefficientFileError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    N: int = 2
    K: int = 14
    b: float = 5.0
    gamma: float | None = None
    strength: float = 1.0
    panels: int | None = None
    nodes: int = 8
    big_basis: int = 64
    check_quadrature: bool = True

    def __post_init__(self):
        if self.b <= 0:
            raise ValueError("half-interval length b must be positive")
        if self.nodes < 7:
            raise ValueError("use at least 7 Gauss nodes per panel")
        if self.big_basis < self.K:
            raise ValueError("big_basis must be at least K")
        if not 0 <= self.N <= self.K:
            raise ValueError("need 0 <= N <= K")

    def as_dict(self):
        return dict(N=self.N, K=self.K, b=self.b, gamma=self.gamma, strength=self.strength,
                    panels=self.panels, nodes=self.nodes, big_basis=self.big_basis)


# ---------------------------------------------------------------------------
# one-particle problem


def sine_basis(x, B: int, b: float) -> np.ndarray:
    """Values of the B Dirichlet sine modes at points x, shape (len(x), B)."""
    n = np.arange(1, B + 1)
    return np.sin(np.multiply.outer(np.asarray(x, float) + b, n * math.pi / (2 * b))) / math.sqrt(b)


def one_particle_matrix(B: int, b: float, N: int, point_potential: bool = True) -> np.ndarray:
    n = np.arange(1, B + 1)
    T = np.diag(0.5 * (n * math.pi / (2 * b)) ** 2)
    if point_potential:
        at0 = np.sin(n * math.pi / 2) / math.sqrt(b)
        T = T - N * np.outer(at0, at0)
    return T


def orbitals(spec: ModelSpec, point_potential: bool = True):
    """Lowest K one-particle energies and their sine-basis coefficients."""
    T = one_particle_matrix(spec.big_basis, spec.b, spec.N, point_potential)
    w, q = np.linalg.eigh(T)
    q = q[:, : spec.K]
    for j in range(spec.K):
        if q[np.argmax(np.abs(q[:, j])), j] < 0:
            q[:, j] = -q[:, j]
    return w[: spec.K], q


# ---------------------------------------------------------------------------
# two-particle integrals


def _gauss(n):
    xi, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (xi + 1), 0.5 * w


def _pair_rule(b: float, panels: int, nodes: int):
    """Nodes/weights for the double integral of f(x) exp(-|x-y|) g(y) over [-b, b]^2.

    Off-diagonal panel pairs use the tensor Gauss rule; each diagonal panel
    is split along x = y and integrated on the lower triangle with a
    collapsed Gauss rule, the upper triangle being its mirror image.
    """
    edges = np.linspace(-b, b, panels + 1)
    xi, w = _gauss(nodes)
    h = np.diff(edges)
    X = (edges[:-1, None] + h[:, None] * xi[None, :]).reshape(-1)
    W = (h[:, None] * w[None, :]).reshape(-1)
    kern = np.exp(-np.abs(X[:, None] - X[None, :])) * W[:, None] * W[None, :]
    pid = np.repeat(np.arange(panels), nodes)
    kern[pid[:, None] == pid[None, :]] = 0.0
    # lower triangle a <= y <= x <= a + h:  x = a + h s, y = a + (x - a) u
    s, u = np.meshgrid(xi, xi, indexing="ij")
    ws, wu = np.meshgrid(w, w, indexing="ij")
    xs, ys, wt = [], [], []
    for a, hp in zip(edges[:-1], h):
        x = a + hp * s
        y = a + (x - a) * u
        xs.append(x.ravel())
        ys.append(y.ravel())
        wt.append((hp * ws * (x - a) * wu * np.exp(-(x - y))).ravel())
    return X, kern, np.concatenate(xs), np.concatenate(ys), np.concatenate(wt)


def _pair_products(q, pts, B, b):
    phi = sine_basis(pts, B, b) @ q
    K = q.shape[1]
    return (phi[:, :, None] * phi[:, None, :]).reshape(len(pts), K * K)


def two_particle_tensor(q, spec: ModelSpec, panels: int) -> np.ndarray:
    """v[i,j,k,l] = strength/2 * int int phi_i(x) phi_l(x) e^{-|x-y|} phi_j(y) phi_k(y)."""
    K = q.shape[1]
    B, b = spec.big_basis, spec.b
    X, kern, x1, y1, w1 = _pair_rule(b, panels, spec.nodes)
    G = _pair_products(q, X, B, b)
    V = G.T @ kern @ G
    Gx = _pair_products(q, x1, B, b)
    Gy = _pair_products(q, y1, B, b)
    low = Gx.T @ (w1[:, None] * Gy)
    V += low + low.T
    V = 0.5 * (V + V.T)
    v = 0.5 * spec.strength * V.reshape(K, K, K, K)  # axes (i, l, j, k)
    return np.ascontiguousarray(v.transpose(0, 2, 3, 1))


def preconditioner_diagonal(t, v, gamma: float, N: int) -> np.ndarray:
    """Diagonal approximation theta_i = gamma/N + t_ii + sum_j (v_ijji - v_ijij).

    The sum runs over the N consecutive orbitals j = k_i+1..k_i+N (1-based)
    with k_i = max(0, i - N).
    """
    K = t.shape[0]
    theta = np.empty(K)
    for i in range(K):
        k = max(0, i + 1 - N)
        js = range(k, k + N)
        theta[i] = gamma / N + t[i, i] + sum(v[i, j, j, i] - v[i, j, i, j] for j in js)
    return theta


def _default_panels(spec: ModelSpec) -> int:
    p = max(16, 2 * spec.big_basis)
    return p + (p % 2)


def auto_gamma(t, v, N: int, K_ref: int = 10, margin: float = 1.0) -> float:
    """Shift making the shifted operator and the diagonal theta positive.

    Uses the dense lowest eigenvalue of the unshifted Hamiltonian on the
    first ``K_ref`` orbitals; the result is rounded up to a multiple of 1/2.
    """
    from . import oracle

    K = min(t.shape[0], K_ref)
    sub = CoefficientSet(t[:K, :K], v[:K, :K, :K, :K], 0.0, None, N)
    e0 = np.linalg.eigvalsh(oracle.hamiltonian_matrix(sub, N, include_shift=False))[0]
    g = margin - e0
    theta0 = preconditioner_diagonal(t, v, 0.0, N)
    g = max(g, N * (margin - theta0.min()))
    return math.ceil(2 * g) / 2


def generate_coefficients(spec: ModelSpec) -> CoefficientSet:
    w, q = orbitals(spec)
    t = np.diag(w)
    panels = spec.panels or _default_panels(spec)
    v = two_particle_tensor(q, spec, panels)
    if spec.check_quadrature and spec.strength != 0.0:
        v2 = two_particle_tensor(q, spec, 2 * panels)
        diff = np.abs(v2 - v).max()
        if diff > 1e-8:
            raise QuadratureError(
                f"two-particle integrals not resolved: doubling the panels changes v by {diff:.2e}; "
                "increase panels or nodes"
            )
    gamma = spec.gamma if spec.gamma is not None else auto_gamma(t, v, spec.N)
    d = preconditioner_diagonal(t, v, gamma, spec.N)
    return CoefficientSet(t, v, gamma, d, spec.N)


# ---------------------------------------------------------------------------
# coefficient files


def write_coefficients(coeffs: CoefficientSet, path) -> None:
    K = coeffs.K
    N = coeffs.n_particles if coeffs.n_particles is not None else 0
    lines = [f"{K} {N} {coeffs.gamma:.17g}"]
    t = coeffs.t
    for i in range(K):
        for j in range(i, K):
            if t[i, j] != 0.0:
                lines.append(f"T {i + 1} {j + 1} {t[i, j]:.17g}")
    for i, j, k, l, val in coeffs.v_terms():
        lines.append(f"V {i + 1} {j + 1} {k + 1} {l + 1} {val:.17g}")
    if coeffs.d is not None:
        for i, val in enumerate(coeffs.d):
            lines.append(f"D {i + 1} {val:.17g}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_coefficients(path) -> CoefficientSet:
    with open(path) as f:
        raw = f.readlines()
    header = None
    t = v = d = None
    seen_d = False
    for lineno, line in enumerate(raw, start=1):
        s = line.split("#", 1)[0].split()
        if not s:
            continue
        try:
            if header is None:
                if len(s) != 3:
                    raise ValueError("header must be 'K N GAMMA'")
                header = (int(s[0]), int(s[1]), float(s[2]))
                K = header[0]
                if K < 1:
                    raise ValueError("K must be positive")
                t = np.zeros((K, K))
                v = np.zeros((K,) * 4)
                d = np.zeros(K)
                continue
            tag = s[0]
            if tag == "T" and len(s) == 4:
                i, j = int(s[1]) - 1, int(s[2]) - 1
                _bounds(K, i, j)
                t[i, j] = t[j, i] = float(s[3])
            elif tag == "V" and len(s) == 6:
                i, j, k, l = (int(z) - 1 for z in s[1:5])
                _bounds(K, i, j, k, l)
                v[i, j, k, l] = float(s[5])
            elif tag == "D" and len(s) == 3:
                i = int(s[1]) - 1
                _bounds(K, i)
                d[i] = float(s[2])
                seen_d = True
            else:
                raise ValueError(f"unrecognized record {line.strip()!r}")
        except ValueError as exc:
            raise CoefficientFileError(f"{path}:{lineno}: {exc}") from None
    if header is None:
        raise CoefficientFileError(f"{path}: empty coefficient file")
    K, N, gamma = header
    if not seen_d:
        warnings.warn(f"{path}: no D section, recomputing the preconditioner diagonal",
                      RuntimeWarning, stacklevel=2)
        d = preconditioner_diagonal(t, v, gamma, N)
    return CoefficientSet(t, v, gamma, d, N)


def _bounds(K, *idx):
    for i in idx:
        if not 0 <= i < K:
            raise ValueError(f"index {i + 1} outside 1..{K}")
