"""Dense tensor trains over binary physical indices.

A tensor train of order K stores cores of shape (r_{k-1}, 2, r_k) with
boundary ranks 1.  Site indices are 0-based throughout the package.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .config import DEFAULTS


class CapacityError(ValueError):
    """Raised when a dense expansion would exceed the configured size cap."""


class TensorTrain:
    """Immutable sequence of order-3 cores representing a vector in (R^2)^K."""

    __slots__ = ("_cores",)

    def __init__(self, cores):
        cores = [np.array(c, dtype=float) for c in cores]
        if not cores:
            raise ValueError("a tensor train needs at least one core")
        for k, c in enumerate(cores):
            if c.ndim != 3 or c.shape[1] != 2:
                raise ValueError(f"core {k} has shape {c.shape}, expected (r, 2, r')")
            if k > 0 and cores[k - 1].shape[2] != c.shape[0]:
                raise ValueError(f"rank mismatch between cores {k - 1} and {k}")
            c.setflags(write=False)
        if cores[0].shape[0] != 1 or cores[-1].shape[2] != 1:
            raise ValueError("boundary ranks must be 1")
        self._cores = tuple(cores)

    @property
    def cores(self):
        return self._cores

    @property
    def order(self) -> int:
        return len(self._cores)

    @property
    def ranks(self) -> list[int]:
        return [c.shape[2] for c in self._cores[:-1]]

    def __repr__(self):
        return f"TensorTrain(K={self.order}, ranks={self.ranks})"

    @classmethod
    def zeros(cls, K: int) -> "TensorTrain":
        return cls([np.zeros((1, 2, 1)) for _ in range(K)])

    @classmethod
    def basis(cls, alpha) -> "TensorTrain":
        cores = []
        for a in alpha:
            c = np.zeros((1, 2, 1))
            c[0, int(a), 0] = 1.0
            cores.append(c)
        return cls(cores)

    @classmethod
    def random(cls, K: int, ranks, rng=None) -> "TensorTrain":
        rng = np.random.default_rng(rng)
        if np.isscalar(ranks):
            ranks = [int(ranks)] * (K - 1)
        r = [1, *ranks, 1]
        return cls([rng.standard_normal((r[k], 2, r[k + 1])) for k in range(K)])


def strong_kronecker(a, b) -> np.ndarray:
    """Core-level strong Kronecker product with merged physical index.

    Slice ``(ia, ib)`` of the result, stored at physical index
    ``ia * nb + ib``, is the matrix product ``a[:, ia, :] @ b[:, ib, :]``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[2] != b.shape[0]:
        raise ValueError(f"rank mismatch: {a.shape} and {b.shape}")
    out = np.einsum("ipk,kql->ipql", a, b)
    return out.reshape(a.shape[0], a.shape[1] * b.shape[1], b.shape[2])


def evaluate(x: TensorTrain, alpha) -> float:
    if len(alpha) != x.order:
        raise IndexError(f"index of length {len(alpha)} for order {x.order}")
    v = np.ones((1, 1))
    for c, a in zip(x.cores, alpha):
        v = v @ c[:, int(a), :]
    return float(v[0, 0])


def to_full(x: TensorTrain, cap: int | None = None) -> np.ndarray:
    """Expand to a vector of length 2^K, first site most significant."""
    cap = DEFAULTS.full_tensor_cap if cap is None else cap
    if x.order > cap:
        raise CapacityError(f"K={x.order} exceeds the dense expansion cap {cap}")
    v = np.ones((1, 1))
    for c in x.cores:
        v = (v @ c.reshape(c.shape[0], -1)).reshape(-1, c.shape[2])
    return v.reshape(-1)


def _svd(m):
    try:
        return scipy.linalg.svd(m, full_matrices=False, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        return scipy.linalg.svd(m, full_matrices=False, lapack_driver="gesvd")


def _left_qr(core, nxt):
    r0, _, r1 = core.shape
    q, r = np.linalg.qr(core.reshape(r0 * 2, r1))
    return q.reshape(r0, 2, -1), np.tensordot(r, nxt, axes=(1, 0))


def _right_qr(prev, core):
    r0, _, r1 = core.shape
    q, r = np.linalg.qr(core.reshape(r0, 2 * r1).T)
    return np.tensordot(prev, r.T, axes=(2, 0)), q.T.reshape(-1, 2, r1)


def orthogonalize(x: TensorTrain, pivot: int) -> TensorTrain:
    """Left-orthogonalize cores before ``pivot`` and right-orthogonalize after it."""
    K = x.order
    if not 0 <= pivot < K:
        raise IndexError(f"pivot {pivot} outside 0..{K - 1}")
    cores = list(x.cores)
    for k in range(pivot):
        cores[k], cores[k + 1] = _left_qr(cores[k], cores[k + 1])
    for k in range(K - 1, pivot, -1):
        cores[k - 1], cores[k] = _right_qr(cores[k - 1], cores[k])
    return TensorTrain(cores)


def _reverse(x: TensorTrain) -> TensorTrain:
    return TensorTrain([c.transpose(2, 1, 0) for c in reversed(x.cores)])


def _collect_sigmas(x: TensorTrain):
    """Right-to-left SVD sweep of a left-orthogonal train.

    Returns the right-orthogonal train (norm carried by core 0) and the
    singular values of each interior matricization, ordered by cut.
    """
    cores = list(x.cores)
    sig = [None] * (len(cores) - 1)
    for k in range(len(cores) - 1, 0, -1):
        c = cores[k]
        u, s, vt = _svd(c.reshape(c.shape[0], -1))
        sig[k - 1] = s
        cores[k] = vt.reshape(-1, 2, c.shape[2])
        cores[k - 1] = np.tensordot(cores[k - 1], u * s, axes=(2, 0))
    return cores, sig


def _cap_sweep(cores, caps):
    """Left-to-right truncating SVD sweep of a right-orthogonal train."""
    cores = list(cores)
    discarded = 0.0
    for k in range(len(cores) - 1):
        c = cores[k]
        u, s, vt = _svd(c.reshape(-1, c.shape[2]))
        keep = min(int(caps[k]), s.size)
        discarded += float(np.sum(s[keep:] ** 2))
        cores[k] = u[:, :keep].reshape(c.shape[0], 2, keep)
        cores[k + 1] = np.tensordot(s[:keep, None] * vt[:keep], cores[k + 1], axes=(1, 0))
    return cores, np.sqrt(discarded)


def _norm_is_zero(x: TensorTrain) -> bool:
    return any(not np.any(c) for c in x.cores)


def tt_svd(x, rtol: float | None = None):
    """Exact TT-SVD of a full tensor or tensor train.

    Returns ``(train, sigmas)`` where ``sigmas[k]`` holds the nonzero singular
    values of the matricization separating sites ``0..k`` from the rest.
    Singular values below ``rtol * norm`` are treated as round-off zeros.
    """
    rtol = DEFAULTS.roundoff_rtol if rtol is None else rtol
    if isinstance(x, TensorTrain):
        K = x.order
        if _norm_is_zero(x):
            return TensorTrain.zeros(K), [np.zeros(0) for _ in range(K - 1)]
        cores, sig = _collect_sigmas(orthogonalize(x, K - 1))
        nrm = np.linalg.norm(cores[0])
        caps = [int(np.sum(s > rtol * nrm)) for s in sig]
        if min(caps, default=1) == 0:
            return TensorTrain.zeros(K), [np.zeros(0) for _ in range(K - 1)]
        out, _ = _cap_sweep(cores, caps)
        return TensorTrain(out), [s[:c] for s, c in zip(sig, caps)]

    v = np.asarray(x, dtype=float).reshape(-1)
    K = int(round(np.log2(v.size)))
    if 2**K != v.size:
        raise ValueError("full tensor length must be a power of two")
    nrm = np.linalg.norm(v)
    if nrm == 0.0:
        return TensorTrain.zeros(K), [np.zeros(0) for _ in range(K - 1)]
    cores, sig = [], []
    r = 1
    rest = v.reshape(1, -1)
    for k in range(K - 1):
        u, s, vt = _svd(rest.reshape(r * 2, -1))
        keep = max(1, int(np.sum(s > rtol * nrm)))
        cores.append(u[:, :keep].reshape(r, 2, keep))
        sig.append(s[:keep])
        rest = s[:keep, None] * vt[:keep]
        r = keep
    cores.append(rest.reshape(r, 2, 1))
    return TensorTrain(cores), sig


def _pooled_caps(sigmas, eps):
    """Rank caps after discarding the globally smallest singular values."""
    flat = sorted(
        (float(s), k, j) for k, sk in enumerate(sigmas) for j, s in enumerate(sk)
    )
    caps = [len(s) for s in sigmas]
    budget = eps * eps
    used = 0.0
    for s, k, _ in flat:
        if used + s * s > budget:
            break
        used += s * s
        caps[k] -= 1
    return caps


def truncate(x: TensorTrain, eps: float | None = None, caps=None,
             sweep: str | None = None, return_error: bool = False):
    """Quasi-optimal rank truncation by rank caps or by an absolute tolerance.

    In tolerance mode the singular values of all matricizations are pooled
    and removed smallest first while their root-sum-square stays below
    ``eps``.  The realized error (exact, from the discarded values of the
    truncating sweep) is returned with ``return_error=True``.
    """
    if (eps is None) == (caps is None):
        raise ValueError("give exactly one of eps or caps")
    sweep = DEFAULTS.sweep if sweep is None else sweep
    if sweep == "rtl":
        res = truncate(_reverse(x), eps=eps,
                       caps=None if caps is None else list(reversed(caps)),
                       sweep="ltr", return_error=True)
        out = (_reverse(res[0]), res[1])
        return out if return_error else out[0]
    if sweep != "ltr":
        raise ValueError(f"unknown sweep direction {sweep!r}")

    K = x.order
    if eps is not None and eps <= 0:
        return (x, 0.0) if return_error else x
    if K == 1 or _norm_is_zero(x):
        return (x, 0.0) if return_error else x

    cores, sig = _collect_sigmas(orthogonalize(x, K - 1))
    if eps is not None:
        caps = _pooled_caps(sig, eps)
    caps = list(caps)
    if len(caps) != K - 1:
        raise ValueError(f"need {K - 1} rank caps, got {len(caps)}")
    if min(caps) <= 0:
        out = TensorTrain.zeros(K)
        err = float(np.linalg.norm(cores[0]))
    else:
        out_cores, err = _cap_sweep(cores, caps)
        out = TensorTrain(out_cores)
    if eps is not None and err > eps * (1 + 1e-10):
        raise ArithmeticError(f"truncation error {err:.3e} exceeds tolerance {eps:.3e}")
    return (out, err) if return_error else out


def add(x: TensorTrain, y: TensorTrain) -> TensorTrain:
    if x.order != y.order:
        raise ValueError("order mismatch")
    K = x.order
    if K == 1:
        return TensorTrain([x.cores[0] + y.cores[0]])
    cores = []
    for k, (a, b) in enumerate(zip(x.cores, y.cores)):
        if k == 0:
            c = np.concatenate([a, b], axis=2)
        elif k == K - 1:
            c = np.concatenate([a, b], axis=0)
        else:
            c = np.zeros((a.shape[0] + b.shape[0], 2, a.shape[2] + b.shape[2]))
            c[: a.shape[0], :, : a.shape[2]] = a
            c[a.shape[0]:, :, a.shape[2]:] = b
        cores.append(c)
    return TensorTrain(cores)


def scale(x: TensorTrain, s: float) -> TensorTrain:
    cores = list(x.cores)
    cores[0] = cores[0] * s
    return TensorTrain(cores)


def inner(x: TensorTrain, y: TensorTrain) -> float:
    if x.order != y.order:
        raise ValueError("order mismatch")
    e = np.ones((1, 1))
    for a, b in zip(x.cores, y.cores):
        e = np.einsum("ab,apc,bpd->cd", e, a, b)
    return float(e[0, 0])


def norm(x: TensorTrain) -> float:
    if _norm_is_zero(x):
        return 0.0
    z = orthogonalize(x, x.order - 1)
    return float(np.linalg.norm(z.cores[-1]))
