"""Particle-number block-sparse tensor trains.

Every bond carries a conserved label (the particle count to the left of the
cut for states, the accumulated particle-number change for operators).  A
site maps a left label ``l`` and physical index ``p`` to the right label
``l + charges[site][p]``; the corresponding matrix block has shape
``(dims[site][l], dims[site + 1][l + charge])``.  Missing blocks are zero and
missing labels have dimension zero.

For sector states the physical index is the occupation (charges ``(0, 1)``).
A joint state of D vectors carries one extra site whose physical index
enumerates the vectors (charges all zero).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from math import comb

import numpy as np

from . import tt
from .config import DEFAULTS

OCCUPATION = (0, 1)


@dataclass(frozen=True)
class SectorShape:
    """K orbitals holding N particles."""

    K: int
    N: int

    def counts(self, k: int) -> range:
        """Admissible particle counts left of cut k (0 <= k <= K)."""
        if not 0 <= self.N <= self.K:
            return range(0)
        return range(max(0, self.N - self.K + k), min(self.N, k) + 1)

    @property
    def admissible_counts(self) -> list[range]:
        return [self.counts(k) for k in range(self.K + 1)]

    @property
    def dimension(self) -> int:
        return comb(self.K, self.N) if 0 <= self.N <= self.K else 0

    def max_block(self, k: int, n: int) -> int:
        """Largest useful block size for label n at cut k."""
        return min(comb(k, n), comb(self.K - k, self.N - n))


@dataclass(frozen=True, eq=False)
class BlockTT:
    charges: tuple
    dims: tuple
    blocks: tuple

    @property
    def nsites(self) -> int:
        return len(self.charges)

    @property
    def ranks(self) -> list[int]:
        return [sum(d.values()) for d in self.dims[1:-1]]

    def label_ranks(self, cut: int) -> dict:
        return dict(self.dims[cut])

    def is_zero(self) -> bool:
        return any(not d for d in self.dims) or any(
            not b for b in self.blocks
        )

    def _with(self, dims, blocks, **kw):
        return dataclasses.replace(self, dims=tuple(dims), blocks=tuple(blocks), **kw)


@dataclass(frozen=True, eq=False)
class BlockMPS(BlockTT):
    """Sector-N state, optionally with one joint site holding D columns."""

    shape: SectorShape = None
    joint: int | None = None

    @property
    def K(self) -> int:
        return self.shape.K

    @property
    def N(self) -> int:
        return self.shape.N

    @property
    def ncols(self) -> int:
        return 1 if self.joint is None else len(self.charges[self.joint])

    def orbital_sites(self) -> list[int]:
        return [s for s in range(self.nsites) if s != self.joint]

    def cut_counts(self, cut: int) -> range:
        k = cut if self.joint is None or cut <= self.joint else cut - 1
        return self.shape.counts(k)

    def __repr__(self):
        j = "" if self.joint is None else f", joint={self.joint}, D={self.ncols}"
        return f"BlockMPS(K={self.K}, N={self.N}, ranks={self.ranks}{j})"


# ---------------------------------------------------------------------------
# construction


def _freeze(dims, blocks):
    dims = [{l: int(r) for l, r in sorted(d.items()) if r > 0} for d in dims]
    out = []
    for k, bk in enumerate(blocks):
        cleaned = {}
        for key, b in sorted(bk.items()):
            if b is None or b.size == 0:
                continue
            b = np.asarray(b, dtype=float)
            b.setflags(write=False)
            cleaned[key] = b
        out.append(cleaned)
    return dims, out


def zero_state(shape: SectorShape) -> BlockMPS:
    K = shape.K
    dims = [{} for _ in range(K + 1)]
    if shape.counts(0):
        dims[0] = {0: 1}
        dims[K] = {shape.N: 1}
    return BlockMPS((OCCUPATION,) * K, tuple(dims), tuple({} for _ in range(K)), shape)


def from_slater(shape: SectorShape, occupied) -> BlockMPS:
    """Occupation basis vector with the given (0-based) occupied orbitals."""
    occ = sorted(set(int(i) for i in occupied))
    if len(occ) != shape.N or len(occ) != len(list(occupied)):
        raise ValueError(f"need {shape.N} distinct occupied orbitals, got {list(occupied)}")
    if occ and not (0 <= occ[0] and occ[-1] < shape.K):
        raise ValueError("orbital index out of range")
    dims, blocks = [{0: 1}], []
    n = 0
    for k in range(shape.K):
        a = 1 if k in occ else 0
        blocks.append({(n, a): np.ones((1, 1))})
        n += a
        dims.append({n: 1})
    dims, blocks = _freeze(dims, blocks)
    return BlockMPS((OCCUPATION,) * shape.K, tuple(dims), tuple(blocks), shape)


def random_state(shape: SectorShape, rank: int, rng=None) -> BlockMPS:
    """Gaussian random sector state with label ranks capped at ``rank``."""
    rng = np.random.default_rng(rng)
    K = shape.K
    dims = [
        {n: min(rank, shape.max_block(k, n)) for n in shape.counts(k)} for k in range(K + 1)
    ]
    blocks = []
    for k in range(K):
        bk = {}
        for n, r in dims[k].items():
            for a in OCCUPATION:
                m = n + a
                if m in dims[k + 1]:
                    bk[(n, a)] = rng.standard_normal((r, dims[k + 1][m]))
        blocks.append(bk)
    dims, blocks = _freeze(dims, blocks)
    return BlockMPS((OCCUPATION,) * K, tuple(dims), tuple(blocks), shape)


def from_dense_sector(shape: SectorShape, vec, basis) -> BlockMPS:
    """Lift a sector coefficient vector (ordered like ``basis``) to block form."""
    out = [scale(from_slater(shape, occ), float(c)) for occ, c in zip(basis, vec) if c != 0.0]
    if not out:
        return zero_state(shape)
    return truncate(concat(out), rtol=DEFAULTS.roundoff_rtol)


# ---------------------------------------------------------------------------
# dense conversion


def to_dense_tt(x: BlockMPS) -> tt.TensorTrain:
    if x.joint is not None:
        raise ValueError("extract a column before densifying a joint state")
    K = x.nsites
    if x.is_zero():
        return tt.TensorTrain.zeros(K)
    offs = []
    for d in x.dims:
        o, pos = {}, 0
        for l in sorted(d):
            o[l] = pos
            pos += d[l]
        offs.append((o, pos))
    cores = []
    for k in range(K):
        (lo, lr), (ro, rr) = offs[k], offs[k + 1]
        c = np.zeros((lr, 2, rr))
        for (l, p), b in x.blocks[k].items():
            m = l + x.charges[k][p]
            c[lo[l]: lo[l] + b.shape[0], p, ro[m]: ro[m] + b.shape[1]] = b
        cores.append(c)
    return tt.TensorTrain(cores)


def to_full(x: BlockMPS) -> np.ndarray:
    return tt.to_full(to_dense_tt(x))


# ---------------------------------------------------------------------------
# linear algebra


def _check_compatible(xs):
    x0 = xs[0]
    for x in xs[1:]:
        if x.charges != x0.charges:
            raise ValueError("incompatible site structure")
        if getattr(x, "shape", None) != getattr(x0, "shape", None):
            raise ValueError(f"shape mismatch: {x.shape} vs {x0.shape}")


def concat(xs) -> BlockTT:
    """Sum by blockwise concatenation (exact, ranks add on interior cuts)."""
    xs = list(xs)
    _check_compatible(xs)
    S = xs[0].nsites
    if len(xs) == 1:
        return xs[0]
    # offsets of each summand per (cut, label)
    dims, offs = [], []
    for c in range(S + 1):
        d, o = {}, []
        for x in xs:
            oo = {}
            for l, r in x.dims[c].items():
                if c in (0, S):
                    d[l] = r
                    oo[l] = 0
                else:
                    oo[l] = d.get(l, 0)
                    d[l] = d.get(l, 0) + r
            o.append(oo)
        dims.append(d)
        offs.append(o)
    blocks = []
    for k in range(S):
        ch = xs[0].charges[k]
        bk = {}
        for i, x in enumerate(xs):
            for (l, p), b in x.blocks[k].items():
                m = l + ch[p]
                if (l, p) not in bk:
                    bk[(l, p)] = np.zeros((dims[k][l], dims[k + 1][m]))
                r0, c0 = offs[k][i][l], offs[k + 1][i][m]
                bk[(l, p)][r0: r0 + b.shape[0], c0: c0 + b.shape[1]] += b
        blocks.append(bk)
    dims, blocks = _freeze(dims, blocks)
    return xs[0]._with(dims, blocks)


def add(x, y):
    return concat([x, y])


def scale(x, s: float, site: int = 0):
    blocks = list(x.blocks)
    blocks[site] = {key: b * s for key, b in blocks[site].items()}
    dims, blocks = _freeze(x.dims, blocks)
    return x._with(dims, blocks)


def diag_scale(x, site_factors):
    """Multiply blocks by per-site, per-physical-index factors (None skips a site)."""
    blocks = []
    for k, bk in enumerate(x.blocks):
        f = site_factors[k]
        if f is None:
            blocks.append(bk)
        else:
            blocks.append({(l, p): b * f[p] for (l, p), b in bk.items()})
    dims, blocks = _freeze(x.dims, blocks)
    return x._with(dims, blocks)


def inner(x, y) -> float:
    """Euclidean inner product (Frobenius pairing across joint columns)."""
    _check_compatible([x, y])
    env = {l: np.ones((1, 1)) for l in x.dims[0]}
    for k in range(x.nsites):
        ch = x.charges[k]
        new = {}
        for l, e in env.items():
            for p in range(len(ch)):
                a = x.blocks[k].get((l, p))
                b = y.blocks[k].get((l, p))
                if a is None or b is None:
                    continue
                t = a.T @ e @ b
                m = l + ch[p]
                new[m] = new[m] + t if m in new else t
        env = new
    return float(sum(e[0, 0] for e in env.values()))


# --- orthogonalization helpers -----------------------------------------------


def _left_groups(x, k, dims_k, dims_k1, blocks_k):
    """Row-stacked matrices per right label m at site k."""
    ch = x.charges[k]
    out = {}
    for m, rm in dims_k1.items():
        parts = []
        for p in range(len(ch)):
            l = m - ch[p]
            if l in dims_k:
                parts.append((l, p, dims_k[l]))
        if not parts:
            continue
        rows = sum(r for _, _, r in parts)
        mat = np.zeros((rows, rm))
        pos = 0
        for l, p, r in parts:
            b = blocks_k.get((l, p))
            if b is not None:
                mat[pos: pos + r] = b
            pos += r
        out[m] = (mat, parts)
    return out


def _right_groups(x, k, dims_k, dims_k1, blocks_k):
    """Column-stacked matrices per left label l at site k."""
    ch = x.charges[k]
    out = {}
    for l, rl in dims_k.items():
        parts = []
        for p in range(len(ch)):
            m = l + ch[p]
            if m in dims_k1:
                parts.append((m, p, dims_k1[m]))
        if not parts:
            continue
        cols = sum(r for _, _, r in parts)
        mat = np.zeros((rl, cols))
        pos = 0
        for m, p, r in parts:
            b = blocks_k.get((l, p))
            if b is not None:
                mat[:, pos: pos + r] = b
            pos += r
        out[l] = (mat, parts)
    return out


def _split_rows(mat, parts):
    pos, res = 0, {}
    for l, p, r in parts:
        res[(l, p)] = mat[pos: pos + r]
        pos += r
    return res


def _split_cols(mat, parts, l):
    pos, res = 0, {}
    for m, p, r in parts:
        res[(l, p)] = mat[:, pos: pos + r]
        pos += r
    return res


def _push_right(x, k, blocks, factor):
    """Multiply site k blocks from the left by factor[l] per left label."""
    ch = x.charges[k]
    out = {}
    for (l, p), b in blocks[k].items():
        f = factor.get(l)
        if f is None or f.shape[0] == 0:
            continue
        out[(l, p)] = f @ b
    blocks[k] = out


def _push_left(x, k, blocks, factor):
    """Multiply site k blocks from the right by factor[m] per right label."""
    ch = x.charges[k]
    out = {}
    for (l, p), b in blocks[k].items():
        f = factor.get(l + ch[p])
        if f is None or f.shape[1] == 0:
            continue
        out[(l, p)] = b @ f
    blocks[k] = out


def _left_orth_site(x, k, dims, blocks):
    groups = _left_groups(x, k, dims[k], dims[k + 1], blocks[k])
    newb, carry, newd = {}, {}, {}
    for m, (mat, parts) in groups.items():
        q, r = np.linalg.qr(mat)
        newb.update(_split_rows(q, parts))
        carry[m] = r
        newd[m] = q.shape[1]
    blocks[k] = newb
    dims[k + 1] = newd
    _push_right(x, k + 1, blocks, carry)


def _right_orth_site(x, k, dims, blocks):
    groups = _right_groups(x, k, dims[k], dims[k + 1], blocks[k])
    newb, carry, newd = {}, {}, {}
    for l, (mat, parts) in groups.items():
        q, r = np.linalg.qr(mat.T)
        newb.update(_split_cols(q.T, parts, l))
        carry[l] = r.T
        newd[l] = q.shape[1]
    blocks[k] = newb
    dims[k] = newd
    _push_left(x, k - 1, blocks, carry)


def orthogonalize(x, pivot: int):
    """Blockwise QR sweeps: sites before ``pivot`` left-, after it right-orthogonal."""
    S = x.nsites
    if not 0 <= pivot < S:
        raise IndexError(f"pivot {pivot} outside 0..{S - 1}")
    dims = [dict(d) for d in x.dims]
    blocks = [dict(b) for b in x.blocks]
    for k in range(pivot):
        _left_orth_site(x, k, dims, blocks)
    for k in range(S - 1, pivot, -1):
        _right_orth_site(x, k, dims, blocks)
    dims, blocks = _freeze(dims, blocks)
    return x._with(dims, blocks)


def _pivot_norm(blocks_k) -> float:
    return float(np.sqrt(sum(np.sum(b * b) for b in blocks_k.values())))


def norm(x) -> float:
    if x.is_zero():
        return 0.0
    z = orthogonalize(x, x.nsites - 1)
    return _pivot_norm(z.blocks[-1])


def zero_like(x):
    S = x.nsites
    dims = [dict(x.dims[0])] + [{} for _ in range(S - 1)] + [dict(x.dims[-1])]
    return x._with(dims, [{} for _ in range(S)])


# --- truncation ----------------------------------------------------------------


def _collect_sigmas(x, dims, blocks):
    """Right-to-left SVD sweep of a left-orthogonal state (in place).

    Returns {(cut, label): singular values}.
    """
    sig = {}
    for k in range(x.nsites - 1, 0, -1):
        groups = _right_groups(x, k, dims[k], dims[k + 1], blocks[k])
        newb, carry, newd = {}, {}, {}
        for l, (mat, parts) in groups.items():
            u, s, vt = tt._svd(mat)
            newb.update(_split_cols(vt, parts, l))
            carry[l] = u * s
            newd[l] = s.size
            sig[(k, l)] = s
        blocks[k] = newb
        dims[k] = newd
        _push_left(x, k - 1, blocks, carry)
    return sig


def _cap_sweep(x, dims, blocks, caps):
    """Left-to-right truncating sweep of a right-orthogonal state (in place)."""
    discarded = 0.0
    for k in range(x.nsites - 1):
        groups = _left_groups(x, k, dims[k], dims[k + 1], blocks[k])
        newb, carry, newd = {}, {}, {}
        for m, (mat, parts) in groups.items():
            u, s, vt = tt._svd(mat)
            keep = min(caps.get((k + 1, m), s.size), s.size)
            discarded += float(np.sum(s[keep:] ** 2))
            if keep == 0:
                continue
            newb.update(_split_rows(u[:, :keep], parts))
            carry[m] = s[:keep, None] * vt[:keep]
            newd[m] = keep
        blocks[k] = newb
        dims[k + 1] = newd
        _push_right(x, k + 1, blocks, carry)
    return np.sqrt(discarded)


def singular_values(x) -> dict:
    """Singular values of every (cut, label) block of the matricizations."""
    if x.is_zero():
        return {}
    z = orthogonalize(x, x.nsites - 1)
    dims = [dict(d) for d in z.dims]
    blocks = [dict(b) for b in z.blocks]
    return _collect_sigmas(z, dims, blocks)


def truncate(x, eps: float | None = None, caps=None, rtol: float | None = None,
             max_rank: int | None = None, return_error: bool = False):
    """Blockwise quasi-optimal truncation.

    Exactly one policy is used: ``eps`` (absolute Euclidean tolerance with
    singular values pooled over all cuts and labels), ``rtol`` (tolerance
    relative to the norm), ``caps`` (total rank per interior cut) or
    ``max_rank`` (uniform cap).
    """
    S = x.nsites
    if x.is_zero() or S == 1:
        return (x, 0.0) if return_error else x
    if eps is not None and eps <= 0 and rtol is None:
        return (x, 0.0) if return_error else x
    z = orthogonalize(x, S - 1)
    nrm = _pivot_norm(z.blocks[-1])
    dims = [dict(d) for d in z.dims]
    blocks = [dict(b) for b in z.blocks]
    sig = _collect_sigmas(z, dims, blocks)

    if rtol is not None:
        eps = max(eps or 0.0, rtol * nrm)
    if max_rank is not None:
        caps = [max_rank] * (S - 1)
    if caps is not None:
        label_caps = {}
        for c in range(1, S):
            pool = sorted(
                ((-float(v), l, j) for (cc, l), s in sig.items() if cc == c for j, v in enumerate(s))
            )
            kept = pool[: int(caps[c - 1])]
            for (cc, l), s in sig.items():
                if cc == c:
                    label_caps[(c, l)] = 0
            for _, l, _ in kept:
                label_caps[(c, l)] += 1
    else:
        label_caps = {key: s.size for key, s in sig.items()}
        flat = sorted((float(v), key, j) for key, s in sig.items() for j, v in enumerate(s))
        used, budget = 0.0, eps * eps
        for v, key, _ in flat:
            if used + v * v > budget:
                break
            used += v * v
            label_caps[key] -= 1

    for c in range(1, S):
        if sum(label_caps.get((c, l), 0) for l in dims[c]) == 0:
            out = zero_like(x)
            return (out, nrm) if return_error else out

    err = _cap_sweep(z, dims, blocks, label_caps)
    dims, blocks = _freeze(dims, blocks)
    out = x._with(dims, blocks)
    if out.is_zero():
        out = zero_like(x)
    return (out, float(err)) if return_error else out


def compress(x):
    """Round-off level recompression (removes numerically redundant rank)."""
    return truncate(x, rtol=DEFAULTS.roundoff_rtol)


# ---------------------------------------------------------------------------
# joint states


def insert_joint(x: BlockMPS, position: int, column: int, D: int) -> BlockMPS:
    """Embed a plain state as column ``column`` of a D-column joint state."""
    if x.joint is not None:
        raise ValueError("state is already joint")
    S = x.nsites
    if not 0 <= position <= S:
        raise IndexError("joint position out of range")
    d = x.dims[position]
    core = {(l, column): np.eye(r) for l, r in d.items()}
    charges = x.charges[:position] + ((0,) * D,) + x.charges[position:]
    dims = list(x.dims[: position + 1]) + list(x.dims[position:])
    blocks = list(x.blocks[:position]) + [core] + list(x.blocks[position:])
    dims, blocks = _freeze(dims, blocks)
    return BlockMPS(tuple(charges), tuple(dims), tuple(blocks), x.shape, position)


def extract(x: BlockMPS, column: int) -> BlockMPS:
    """Column ``column`` of a joint state as a plain sector state."""
    if x.joint is None:
        if column != 0:
            raise IndexError("plain state has a single column")
        return x
    j = x.joint
    S = x.nsites
    carry = {l: x.blocks[j][(l, column)] for l in x.dims[j] if (l, column) in x.blocks[j]}
    blocks = [dict(b) for b in x.blocks]
    dims = [dict(d) for d in x.dims]
    if j > 0:
        _push_left(x, j - 1, blocks, carry)
        dims = dims[:j] + dims[j + 1:]
    else:
        _push_right(x, j + 1, blocks, carry)
        dims = dims[:j + 1] + dims[j + 2:]
    del blocks[j]
    charges = x.charges[:j] + x.charges[j + 1:]
    dims, blocks = _freeze(dims, blocks)
    out = BlockMPS(tuple(charges), tuple(dims), tuple(blocks), x.shape, None)
    return zero_state(x.shape) if out.is_zero() else out


def transform_columns(x: BlockMPS, mat) -> BlockMPS:
    """Right-multiply the column index of a joint state by ``mat`` (D x D')."""
    mat = np.asarray(mat, dtype=float)
    j = x.joint
    D = x.ncols
    if mat.shape[0] != D:
        raise ValueError("column transform has wrong row count")
    Dn = mat.shape[1]
    bj = {}
    for l in x.dims[j]:
        stack = [x.blocks[j].get((l, i)) for i in range(D)]
        for i2 in range(Dn):
            acc = None
            for i in range(D):
                if stack[i] is None or mat[i, i2] == 0.0:
                    continue
                term = mat[i, i2] * stack[i]
                acc = term if acc is None else acc + term
            if acc is not None:
                bj[(l, i2)] = acc
    blocks = list(x.blocks)
    blocks[j] = bj
    charges = x.charges[:j] + ((0,) * Dn,) + x.charges[j + 1:]
    dims, blocks = _freeze(x.dims, blocks)
    return dataclasses.replace(x, charges=tuple(charges), dims=tuple(dims), blocks=tuple(blocks))


def hstack_columns(x: BlockMPS, y: BlockMPS) -> BlockMPS:
    """Joint state whose columns are those of x followed by those of y."""
    if x.joint != y.joint or x.joint is None:
        raise ValueError("column stacking needs joint states at the same position")
    j = x.joint
    Dx, Dy = x.ncols, y.ncols
    xe = transform_columns(x, np.hstack([np.eye(Dx), np.zeros((Dx, Dy))]))
    ye = transform_columns(y, np.hstack([np.zeros((Dy, Dx)), np.eye(Dy)]))
    return concat([xe, ye])


# ---------------------------------------------------------------------------
# operator strings with charges (0, -1, +1, 0) on physical index 2*out + in

OPERATOR = (0, -1, 1, 0)


def _output_groups(x, op, smap, shape):
    """Bond bookkeeping for op applied to x: per cut, m -> {(delta, n): (offset, w, r)}."""
    S = x.nsites
    groups = []
    for c in range(S + 1):
        oc = sum(1 for s in range(c) if smap[s] is not None)
        allowed = BlockMPS.cut_counts(
            dataclasses.replace(x, shape=shape), c
        )
        g = {}
        for delta in sorted(op.dims[oc]):
            w = op.dims[oc][delta]
            for n in sorted(x.dims[c]):
                m = n + delta
                if m not in allowed:
                    continue
                g.setdefault(m, []).append((delta, n, w, x.dims[c][n]))
        out = {}
        for m, parts in g.items():
            pos, d = 0, {}
            for delta, n, w, r in parts:
                d[(delta, n)] = (pos, w, r)
                pos += w * r
            out[m] = (d, pos)
        groups.append(out)
    return groups


def apply_operator(op: BlockTT, x: BlockMPS) -> BlockMPS:
    """Apply a charge-blocked operator train to a (possibly joint) state.

    The joint site, if present, is passed through as identity.
    """
    orb = x.orbital_sites()
    if op.nsites != len(orb):
        raise ValueError("operator and state have different orbital counts")
    smap = [None] * x.nsites
    for o, s in enumerate(orb):
        smap[s] = o
    total = next(iter(op.dims[-1])) if op.dims[-1] else 0
    shape = SectorShape(x.K, x.N + total)
    if x.is_zero() or op.is_zero() or shape.dimension == 0:
        return zero_state(shape) if x.joint is None else dataclasses.replace(
            zero_like(x), shape=shape
        )
    groups = _output_groups(x, op, smap, shape)
    blocks = []
    for s in range(x.nsites):
        gl, gr = groups[s], groups[s + 1]
        bk = {}
        o = smap[s]
        for m, (parts, rows) in gl.items():
            for (delta, n), (r0, w, _) in parts.items():
                if o is None:
                    eye = np.eye(w)
                    for i in range(len(x.charges[s])):
                        xb = x.blocks[s].get((n, i))
                        if xb is None or m not in gr:
                            continue
                        rp, cols = gr[m]
                        if (delta, n) not in rp:
                            continue
                        c0 = rp[(delta, n)][0]
                        blk = bk.get((m, i))
                        if blk is None:
                            blk = bk[(m, i)] = np.zeros((rows, cols))
                        kr = np.kron(eye, xb)
                        blk[r0: r0 + kr.shape[0], c0: c0 + kr.shape[1]] += kr
                    continue
                for a_out in (0, 1):
                    for a_in in (0, 1):
                        wb = op.blocks[o].get((delta, 2 * a_out + a_in))
                        xb = x.blocks[s].get((n, a_in))
                        if wb is None or xb is None:
                            continue
                        d2, n2 = delta + a_out - a_in, n + a_in
                        m2 = n2 + d2
                        if m2 not in gr or (d2, n2) not in gr[m2][0]:
                            continue
                        c0 = gr[m2][0][(d2, n2)][0]
                        blk = bk.get((m, a_out))
                        if blk is None:
                            blk = bk[(m, a_out)] = np.zeros((rows, gr[m2][1]))
                        kr = np.kron(wb, xb)
                        blk[r0: r0 + kr.shape[0], c0: c0 + kr.shape[1]] += kr
        blocks.append(bk)
    dims = [{m: size for m, (_, size) in g.items()} for g in groups]
    dims, blocks = _freeze(dims, blocks)
    out = dataclasses.replace(x, dims=tuple(dims), blocks=tuple(blocks), shape=shape)
    if out.is_zero():
        out = dataclasses.replace(zero_like(out), shape=shape)
    return out


def _env_step_left(env, yb, zb, wb_of, ych, zch):
    """Advance a left environment {(ny, d, nz): E[ry, w, rz]} through one site."""
    new = {}
    for (ny, d, nz), e in env.items():
        for a_out in range(len(ych)):
            y = yb.get((ny, a_out))
            if y is None:
                continue
            t1 = np.tensordot(e, y, axes=(0, 0))  # w, rz, ry'
            for a_in in range(len(zch)):
                z = zb.get((nz, a_in))
                if z is None:
                    continue
                w, dd = wb_of(d, a_out, a_in)
                if w is None:
                    continue
                t2 = np.tensordot(t1, w, axes=(0, 0))  # rz, ry', w'
                t3 = np.tensordot(t2, z, axes=(0, 0))  # ry', w', rz'
                key = (ny + ych[a_out], d + dd, nz + zch[a_in])
                new[key] = new[key] + t3 if key in new else t3
    return new


def _env_step_right(env, yb, zb, wb_of, ych, zch, ylabels, zlabels):
    new = {}
    for (ny2, d2, nz2), e in env.items():
        for a_out in range(len(ych)):
            ny = ny2 - ych[a_out]
            if ny not in ylabels:
                continue
            y = yb.get((ny, a_out))
            if y is None:
                continue
            t1 = np.tensordot(y, e, axes=(1, 0))  # ry, w', rz'
            for a_in in range(len(zch)):
                nz = nz2 - zch[a_in]
                if nz not in zlabels:
                    continue
                z = zb.get((nz, a_in))
                if z is None:
                    continue
                w, dd = wb_of(d2, a_out, a_in, right=True)
                if w is None:
                    continue
                t2 = np.tensordot(t1, w, axes=(1, 1))  # ry, rz', w
                t3 = np.tensordot(t2, z, axes=(1, 1))  # ry, w, rz
                key = (ny, d2 - dd, nz)
                new[key] = new[key] + t3 if key in new else t3
    return new


def _site_weights(op, o, identity_dim):
    """Callable returning (block, charge) of the operator at site o for (out, in)."""
    if op is None or o is None:
        one = np.ones((1, 1))

        def wb(d, a_out, a_in, right=False):
            return (one, 0) if a_out == a_in else (None, 0)

        return wb
    blocks = op.blocks[o]

    def wb(d, a_out, a_in, right=False):
        dd = a_out - a_in
        left = d - dd if right else d
        return blocks.get((left, 2 * a_out + a_in)), dd

    return wb


def bilinear(y: BlockMPS, z: BlockMPS, op: BlockTT | None = None):
    """<y, op z> for plain states, or the D_y x D_z matrix for joint states."""
    if y.joint != z.joint or y.shape != z.shape and op is None:
        raise ValueError("incompatible states")
    orb = y.orbital_sites()
    smap = [None] * y.nsites
    for o, s in enumerate(orb):
        smap[s] = o
    S = y.nsites
    j = y.joint
    stop = S if j is None else j
    env = {(l, 0, l2): np.ones((1, 1, 1)) for l in y.dims[0] for l2 in z.dims[0]}
    for s in range(stop):
        env = _env_step_left(env, y.blocks[s], z.blocks[s], _site_weights(op, smap[s], 1),
                             y.charges[s], z.charges[s])
    if j is None:
        return float(sum(e.sum() for e in env.values()))
    renv = {(l, dl, l2): np.ones((1, 1, 1))
            for l in y.dims[S] for l2 in z.dims[S] for dl in ([l - l2])}
    for s in range(S - 1, j, -1):
        renv = _env_step_right(renv, y.blocks[s], z.blocks[s], _site_weights(op, smap[s], 1),
                               y.charges[s], z.charges[s], y.dims[s], z.dims[s])
    Dy, Dz = y.ncols, z.ncols
    g = np.zeros((Dy, Dz))
    for key, e in env.items():
        r = renv.get(key)
        if r is None:
            continue
        ny, d, nz = key
        # e[a, w, b], r[c, w, d]; joint blocks y[a, c], z[b, d]
        for i in range(Dy):
            yb = y.blocks[j].get((ny, i))
            if yb is None:
                continue
            t = np.tensordot(e, yb, axes=(0, 0))  # w, b, c
            t = np.tensordot(t, r, axes=([0, 2], [1, 0]))  # b, d
            for i2 in range(Dz):
                zb = z.blocks[j].get((nz, i2))
                if zb is not None:
                    g[i, i2] += np.sum(t * zb)
    return g
