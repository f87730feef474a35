"""Fermionic creation/annihilation operators and Hamiltonians on block states.

Orbitals are 0-based.  The annihilator on orbital i acts as
``S x ... x S x A x I x ... x I`` with ``S = diag(1, -1)`` and
``A = [[0, 1], [0, 0]]`` (occupation 1 -> 0); the creator is its transpose.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from . import blockmps as bm
from .blockmps import BlockMPS, BlockTT, SectorShape
from .config import DEFAULTS


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    """One-particle matrix t, two-particle tensor v, shift gamma, diagonal d."""

    t: np.ndarray
    v: np.ndarray
    gamma: float = 0.0
    d: np.ndarray | None = None
    n_particles: int | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        t = np.array(self.t, dtype=float)
        K = t.shape[0]
        v = np.zeros((K,) * 4) if self.v is None else np.array(self.v, dtype=float)
        if t.shape != (K, K):
            raise ValueError("t must be square")
        if not np.allclose(t, t.T, rtol=0, atol=1e-12 * max(1.0, np.abs(t).max())):
            raise ValueError("t must be symmetric")
        if v.shape != (K,) * 4:
            raise ValueError(f"v must have shape {(K,) * 4}")
        if not np.all(np.isfinite(v)):
            raise ValueError("v has non-finite entries")
        d = self.d
        if d is not None:
            d = np.array(d, dtype=float)
            if d.shape != (K,):
                raise ValueError("d must have one entry per orbital")
            if np.any(d <= 0):
                raise ValueError(
                    "preconditioner diagonal must be positive; increase the shift gamma "
                    "so that the shifted operator is elliptic on the sector"
                )
            d.setflags(write=False)
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def K(self) -> int:
        return self.t.shape[0]

    def t_terms(self):
        """Nonzero one-particle coefficients in lexicographic (i, j) order."""
        for i, j in zip(*np.nonzero(self.t)):
            yield int(i), int(j), float(self.t[i, j])

    def v_terms(self):
        for i, j, k, l in zip(*np.nonzero(self.v)):
            yield int(i), int(j), int(k), int(l), float(self.v[i, j, k, l])

    def restrict(self, K: int) -> "CoefficientSet":
        """Coefficients of the first K orbitals."""
        d = None if self.d is None else self.d[:K]
        return CoefficientSet(self.t[:K, :K], self.v[:K, :K, :K, :K], self.gamma, d,
                              self.n_particles)

    def with_gamma(self, gamma: float) -> "CoefficientSet":
        return CoefficientSet(self.t, self.v, gamma, self.d, self.n_particles)


# ---------------------------------------------------------------------------
# local operator algebra

_MATS = {
    "I": np.array([[1, 0], [0, 1]]),
    "S": np.array([[1, 0], [0, -1]]),
    "A": np.array([[0, 1], [0, 0]]),
    "A*": np.array([[0, 0], [1, 0]]),
    "A*A": np.array([[0, 0], [0, 1]]),
    "AA*": np.array([[1, 0], [0, 0]]),
}


def _classify(m):
    if not np.any(m):
        return None
    for name, ref in _MATS.items():
        if np.array_equal(m, ref):
            return 1, name
        if np.array_equal(m, -ref):
            return -1, name
    raise AssertionError(f"unexpected local product {m}")


_PRODUCT = {
    (a, b): _classify(_MATS[a] @ _MATS[b]) for a, b in product(_MATS, _MATS)
}

# physical index p = 2*out + in with its entry for each symbol
_ENTRIES = {
    name: [(2 * o + i, float(m[o, i])) for o in (0, 1) for i in (0, 1) if m[o, i] != 0]
    for name, m in _MATS.items()
}
_CHARGE = {"I": 0, "S": 0, "A": -1, "A*": 1, "A*A": 0, "AA*": 0}


@dataclass(frozen=True)
class OperatorTerm:
    weight: float
    symbols: tuple


def operator_string(K: int, ops):
    """Per-site symbols of a product of creators/annihilators.

    ``ops`` is a sequence of ``(orbital, dagger)`` in left-to-right operator
    order.  Returns ``(sign, symbols)`` or None for the zero operator.
    """
    sign = 1
    symbols = []
    top = max(o for o, _ in ops)
    for s in range(K):
        if s > top:
            symbols.append("I")
            continue
        cur = "I"
        for orb, dag in ops:
            f = "S" if s < orb else ("A*" if dag else "A") if s == orb else "I"
            if f == "I":
                continue
            r = _PRODUCT[(cur, f)]
            if r is None:
                return None
            sign *= r[0]
            cur = r[1]
        symbols.append(cur)
    return sign, tuple(symbols)


def term_plan(coeffs: CoefficientSet, include_shift: bool = True) -> list[OperatorTerm]:
    """Hamiltonian summands as weighted operator strings in lexicographic order."""
    K = coeffs.K
    plan = []
    for i, j, t in coeffs.t_terms():
        r = operator_string(K, [(i, True), (j, False)])
        if r is not None:
            plan.append(OperatorTerm(r[0] * t, r[1]))
    for i, j, k, l, v in coeffs.v_terms():
        r = operator_string(K, [(i, True), (j, True), (k, False), (l, False)])
        if r is not None:
            plan.append(OperatorTerm(r[0] * v, r[1]))
    if include_shift and coeffs.gamma != 0.0:
        plan.append(OperatorTerm(coeffs.gamma, ("I",) * K))
    return plan


# ---------------------------------------------------------------------------
# matrix-free relabeling


def _relabel(x: BlockMPS, site: int, create: bool) -> BlockMPS:
    K, N = x.K, x.N
    if x.joint is not None:
        raise ValueError("relabeling operators act on plain states")
    shift = 1 if create else -1
    shape = SectorShape(K, N + shift)
    if shape.dimension == 0 or x.is_zero():
        return bm.zero_state(shape)
    dims, blocks = [], []
    for c in range(K + 1):
        off = shift if c > site else 0
        allowed = shape.counts(c)
        dims.append({n + off: r for n, r in x.dims[c].items() if n + off in allowed})
    src_p, dst_p = (0, 1) if create else (1, 0)
    for s in range(K):
        bk = {}
        for (l, p), b in x.blocks[s].items():
            if s < site:
                key, b = (l, p), (b if p == 0 else -b)
            elif s == site:
                if p != src_p:
                    continue
                key = (l, dst_p)
            else:
                key = (l + shift, p)
            l2 = key[0]
            m2 = l2 + key[1]
            if l2 in dims[s] and m2 in dims[s + 1]:
                bk[key] = b
        blocks.append(bk)
    dims, blocks = bm._freeze(dims, blocks)
    out = BlockMPS(x.charges, tuple(dims), tuple(blocks), shape)
    return bm.zero_state(shape) if out.is_zero() else out


def apply_annihilation(i: int, x: BlockMPS) -> BlockMPS:
    _check_orbital(i, x.K)
    return _relabel(x, i, create=False)


def apply_creation(i: int, x: BlockMPS) -> BlockMPS:
    _check_orbital(i, x.K)
    return _relabel(x, i, create=True)


def _check_orbital(i, K):
    if not 0 <= i < K:
        raise IndexError(f"orbital {i} outside 0..{K - 1}")


def apply_one_particle(t: float, i: int, j: int, x: BlockMPS) -> BlockMPS:
    """t * a_i^* a_j x."""
    _check_orbital(i, x.K)
    _check_orbital(j, x.K)
    if i != j:
        return bm.scale(apply_creation(i, apply_annihilation(j, x)), t)
    blocks = list(x.blocks)
    blocks[i] = {(l, p): t * b for (l, p), b in x.blocks[i].items() if p == 1}
    dims, blocks = bm._freeze(x.dims, blocks)
    out = x._with(dims, blocks)
    return bm.zero_state(x.shape) if out.is_zero() else out


def apply_two_particle(v: float, i: int, j: int, k: int, l: int, x: BlockMPS) -> BlockMPS:
    """v * a_i^* a_j^* a_k a_l x."""
    y = apply_annihilation(l, x)
    y = apply_annihilation(k, y)
    y = apply_creation(j, y)
    y = apply_creation(i, y)
    return bm.scale(y, v)


def apply_particle_number(x: BlockMPS) -> BlockMPS:
    terms = [apply_one_particle(1.0, i, i, x) for i in range(x.K)]
    terms = [y for y in terms if not y.is_zero()]
    return bm.concat(terms) if terms else bm.zero_state(x.shape)


def apply_hamiltonian(coeffs: CoefficientSet, x: BlockMPS, include_shift: bool = True,
                      method: str = "operator") -> BlockMPS:
    """H x (or H_gamma x) without truncation.

    ``method="terms"`` concatenates every summand separately in lexicographic
    order; ``method="operator"`` applies the compressed sum of the same
    operator strings (identical up to round-off, far smaller output ranks).
    """
    if method == "terms":
        parts = []
        for i, j, t in coeffs.t_terms():
            parts.append(apply_one_particle(t, i, j, x))
        for i, j, k, l, v in coeffs.v_terms():
            parts.append(apply_two_particle(v, i, j, k, l, x))
        if include_shift and coeffs.gamma != 0.0:
            parts.append(bm.scale(x, coeffs.gamma))
        parts = [y for y in parts if not y.is_zero()]
        return bm.concat(parts) if parts else bm.zero_like(x)
    if method != "operator":
        raise ValueError(f"unknown method {method!r}")
    op = hamiltonian_operator(coeffs, shift=coeffs.gamma if include_shift else 0.0)
    return bm.apply_operator(op, x)


# ---------------------------------------------------------------------------
# compressed operator strings


def _batch_train(K: int, terms) -> BlockTT:
    """Exact sum of rank-one operator strings with charge-labelled bonds."""
    labels = []
    for term in terms:
        lab = [0]
        for sym in term.symbols:
            lab.append(lab[-1] + _CHARGE[sym])
        labels.append(lab)
    index, dims = [], []
    for c in range(K + 1):
        counts, idx = {}, []
        for lab in labels:
            d = lab[c]
            if c in (0, K):
                idx.append(0)
                counts[d] = 1
            else:
                idx.append(counts.get(d, 0))
                counts[d] = counts.get(d, 0) + 1
        index.append(idx)
        dims.append(counts)
    blocks = []
    for s in range(K):
        bk = {}
        for t, term in enumerate(terms):
            sym = term.symbols[s]
            dl = labels[t][s]
            w = term.weight if s == 0 else 1.0
            for p, val in _ENTRIES[sym]:
                key = (dl, p)
                blk = bk.get(key)
                if blk is None:
                    blk = bk[key] = np.zeros((dims[s][dl], dims[s + 1][dl + bm.OPERATOR[p]]))
                blk[index[s][t], index[s + 1][t]] += w * val
        blocks.append(bk)
    dims, blocks = bm._freeze(dims, blocks)
    return BlockTT((bm.OPERATOR,) * K, tuple(dims), tuple(blocks))


def compile_terms(K: int, plan, batch: int = 200, rtol: float | None = None) -> BlockTT:
    """Charge-blocked operator train equal (to round-off) to the sum of ``plan``.

    Identical operator strings are merged first; batches are summed and
    recompressed at round-off level, so bond dimensions end up minimal.
    """
    rtol = DEFAULTS.roundoff_rtol if rtol is None else rtol
    merged: dict = {}
    for term in plan:
        merged[term.symbols] = merged.get(term.symbols, 0.0) + term.weight
    terms = [OperatorTerm(w, s) for s, w in merged.items() if w != 0.0]
    if not terms:
        return _batch_train(K, [OperatorTerm(0.0, ("I",) * K)])
    total = None
    for start in range(0, len(terms), batch):
        part = _batch_train(K, terms[start: start + batch])
        total = part if total is None else bm.concat([total, part])
        total = bm.truncate(total, rtol=rtol)
    return total


def hamiltonian_operator(coeffs: CoefficientSet, shift: float = 0.0) -> BlockTT:
    """Compressed operator of H (without gamma) plus ``shift`` times identity."""
    key = "H"
    if key not in coeffs._cache:
        coeffs._cache[key] = compile_terms(coeffs.K, term_plan(coeffs, include_shift=False))
    op = coeffs._cache[key]
    if shift == 0.0:
        return op
    ident = _batch_train(coeffs.K, [OperatorTerm(shift, ("I",) * coeffs.K)])
    return bm.concat([op, ident])


def number_operator(K: int) -> BlockTT:
    plan = [OperatorTerm(1.0, operator_string(K, [(i, True), (i, False)])[1]) for i in range(K)]
    return compile_terms(K, plan)
