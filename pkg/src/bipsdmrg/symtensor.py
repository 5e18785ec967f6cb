"""Block-sparse real tensors with Abelian (particle number, 2Sz) quantum numbers.

Every leg of a :class:`BlockTensor` is an :class:`Index`: an ordered list of
sectors ``(QNum, dim)`` plus a direction.  A block is stored for a tuple of
sector positions (one per leg) only if the directed sum of the sector labels
equals the tensor flux::

    sum(q for outgoing legs) - sum(q for incoming legs) == flux

Dense embeddings place sectors consecutively in the canonical order
(sorted by ``(n_particles, two_sz)``).
"""

from __future__ import annotations

import struct
from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.linalg

from .errors import EmptySpectrum, IncompatibleIndex, NoConvergence, RankError

OUT = 1
IN = -1


@dataclass(frozen=True, order=True)
class QNum:
    """Conserved label: electron count and twice the z-spin projection."""

    n_particles: int = 0
    two_sz: int = 0

    def __add__(self, other: "QNum") -> "QNum":
        return QNum(self.n_particles + other.n_particles, self.two_sz + other.two_sz)

    def __sub__(self, other: "QNum") -> "QNum":
        return QNum(self.n_particles - other.n_particles, self.two_sz - other.two_sz)

    def __neg__(self) -> "QNum":
        return QNum(-self.n_particles, -self.two_sz)

    def __mul__(self, k: int) -> "QNum":
        return QNum(k * self.n_particles, k * self.two_sz)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"QNum({self.n_particles}, {self.two_sz:+d})"

    def __str__(self) -> str:
        return f"({self.n_particles},{self.two_sz:+d})"


ZERO = QNum(0, 0)

#: sector labels of a spatial orbital: empty, one down, one up, doubly occupied
ORBITAL_QNUMS = (QNum(0, 0), QNum(1, -1), QNum(1, 1), QNum(2, 0))


@dataclass(frozen=True)
class Index:
    sectors: tuple
    direction: int = OUT

    def __post_init__(self):
        secs = tuple((QNum(*q) if not isinstance(q, QNum) else q, int(d)) for q, d in self.sectors)
        object.__setattr__(self, "sectors", secs)
        if self.direction not in (IN, OUT):
            raise ValueError("direction must be IN (-1) or OUT (+1)")
        qs = [q for q, _ in secs]
        if any(d < 1 for _, d in secs):
            raise ValueError("sector dimensions must be >= 1")
        if qs != sorted(set(qs)):
            raise ValueError("sectors must be distinct and sorted by (n_particles, two_sz)")

    @classmethod
    def from_dims(cls, dims: dict, direction: int = OUT) -> "Index":
        """Build from a ``{QNum: dim}`` mapping; zero-dim entries are dropped."""
        return cls(tuple(sorted((q, d) for q, d in dims.items() if d > 0)), direction)

    @cached_property
    def dim(self) -> int:
        return sum(d for _, d in self.sectors)

    @cached_property
    def qnums(self) -> tuple:
        return tuple(q for q, _ in self.sectors)

    @cached_property
    def dims(self) -> tuple:
        return tuple(d for _, d in self.sectors)

    @cached_property
    def offsets(self) -> tuple:
        return tuple(np.concatenate([[0], np.cumsum(self.dims)[:-1]]).astype(int).tolist())

    @cached_property
    def _lookup(self) -> dict:
        return {q: i for i, q in enumerate(self.qnums)}

    def position(self, q: QNum):
        return self._lookup.get(q)

    def dual(self) -> "Index":
        return Index(self.sectors, -self.direction)

    def same_space(self, other: "Index") -> bool:
        return self.sectors == other.sectors

    def dense_qnums(self) -> list:
        """QNum of every dense position."""
        out = []
        for q, d in self.sectors:
            out.extend([q] * d)
        return out


def _allowed_keys(indices: Sequence[Index], flux: QNum) -> list:
    if not indices:
        return [()] if flux == ZERO else []
    *head, last = indices
    keys = []

    def rec(pos, acc, key):
        if pos == len(head):
            need = (flux - acc) * last.direction
            j = last.position(need)
            if j is not None:
                keys.append(key + (j,))
            return
        ix = head[pos]
        for i, q in enumerate(ix.qnums):
            rec(pos + 1, acc + q * ix.direction, key + (i,))

    rec(0, ZERO, ())
    return sorted(keys)


class BlockTensor:
    """Real block-sparse tensor; treat instances as immutable values."""

    __slots__ = ("indices", "flux", "blocks")

    def __init__(self, indices: Sequence[Index], blocks: dict | None = None, flux: QNum = ZERO,
                 check: bool = True):
        self.indices = tuple(indices)
        self.flux = flux
        self.blocks = {} if blocks is None else dict(blocks)
        if check:
            self._validate()

    def _validate(self):
        for key, blk in self.blocks.items():
            if len(key) != len(self.indices):
                raise RankError(f"block key {key} does not match rank {len(self.indices)}")
            tot = ZERO
            for ix, i in zip(self.indices, key):
                tot = tot + ix.qnums[i] * ix.direction
            if tot != self.flux:
                raise IncompatibleIndex(f"block {key} violates flux {self.flux}")
            shape = tuple(ix.dims[i] for ix, i in zip(self.indices, key))
            if blk.shape != shape:
                raise IncompatibleIndex(f"block {key} has shape {blk.shape}, expected {shape}")

    # ---- constructors -------------------------------------------------
    @classmethod
    def zeros(cls, indices: Sequence[Index], flux: QNum = ZERO) -> "BlockTensor":
        blocks = {}
        for key in _allowed_keys(indices, flux):
            blocks[key] = np.zeros(tuple(ix.dims[i] for ix, i in zip(indices, key)))
        return cls(indices, blocks, flux, check=False)

    @classmethod
    def random(cls, indices: Sequence[Index], flux: QNum = ZERO, rng=None) -> "BlockTensor":
        rng = np.random.default_rng(rng)
        t = cls.zeros(indices, flux)
        return t.map_blocks(lambda b: rng.standard_normal(b.shape))

    @classmethod
    def from_dense(cls, array, indices: Sequence[Index], flux: QNum = ZERO,
                   atol: float | None = None) -> "BlockTensor":
        """Extract the flux-allowed blocks of a dense array.

        With ``atol`` set, raise if weight outside the allowed blocks exceeds it.
        """
        array = np.asarray(array, dtype=float)
        if array.shape != tuple(ix.dim for ix in indices):
            raise IncompatibleIndex(f"dense shape {array.shape} does not match indices")
        blocks = {}
        for key in _allowed_keys(indices, flux):
            sl = tuple(slice(ix.offsets[i], ix.offsets[i] + ix.dims[i]) for ix, i in zip(indices, key))
            blocks[key] = array[sl].copy()
        t = cls(indices, blocks, flux, check=False)
        if atol is not None:
            resid = np.linalg.norm(array - t.to_dense())
            if resid > atol:
                raise IncompatibleIndex(f"dense array has weight {resid:.3e} outside flux {flux}")
        return t

    # ---- basic properties ---------------------------------------------
    @property
    def ndim(self) -> int:
        return len(self.indices)

    @property
    def shape(self) -> tuple:
        return tuple(ix.dim for ix in self.indices)

    def keys(self) -> list:
        return sorted(self.blocks)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for key, blk in self.blocks.items():
            sl = tuple(slice(ix.offsets[i], ix.offsets[i] + ix.dims[i]) for ix, i in zip(self.indices, key))
            out[sl] = blk
        return out

    def item(self) -> float:
        if self.ndim != 0:
            raise RankError("item() needs a rank-0 tensor")
        blk = self.blocks.get(())
        return 0.0 if blk is None else float(blk)

    def copy(self) -> "BlockTensor":
        return BlockTensor(self.indices, {k: v.copy() for k, v in self.blocks.items()}, self.flux, check=False)

    def map_blocks(self, fn: Callable) -> "BlockTensor":
        return BlockTensor(self.indices, {k: fn(v) for k, v in self.blocks.items()}, self.flux, check=False)

    def transpose(self, perm: Sequence[int]) -> "BlockTensor":
        perm = tuple(perm)
        if sorted(perm) != list(range(self.ndim)):
            raise RankError(f"invalid permutation {perm}")
        return BlockTensor(
            [self.indices[p] for p in perm],
            {tuple(k[p] for p in perm): np.transpose(v, perm) for k, v in self.blocks.items()},
            self.flux,
            check=False,
        )

    def conj(self) -> "BlockTensor":
        """Complex conjugate: every leg is dualised and the flux negated."""
        return BlockTensor([ix.dual() for ix in self.indices], self.blocks, -self.flux, check=False)

    def with_indices(self, indices: Sequence[Index]) -> "BlockTensor":
        """Relabel leg directions (sectors must be unchanged)."""
        for a, b in zip(self.indices, indices):
            if not a.same_space(b):
                raise IncompatibleIndex("with_indices may only change directions")
        return BlockTensor(indices, self.blocks, self.flux, check=True)

    def norm(self) -> float:
        return float(np.sqrt(sum(np.vdot(b, b) for b in self.blocks.values())))

    def dot(self, other: "BlockTensor") -> float:
        """Full inner product sum(self * other) over matching blocks."""
        return float(sum(np.vdot(b, other.blocks[k]) for k, b in self.blocks.items() if k in other.blocks))

    def _binary(self, other, op):
        if [ix.sectors for ix in self.indices] != [ix.sectors for ix in other.indices]:
            raise IncompatibleIndex("operands have different index structure")
        if self.flux != other.flux:
            raise IncompatibleIndex("operands have different flux")
        blocks = {k: v.copy() for k, v in self.blocks.items()}
        for k, v in other.blocks.items():
            if k in blocks:
                blocks[k] = op(blocks[k], v)
            else:
                blocks[k] = op(np.zeros_like(v), v)
        return BlockTensor(self.indices, blocks, self.flux, check=False)

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, s: float):
        return self.map_blocks(lambda b: b * s)

    __rmul__ = __mul__

    def __truediv__(self, s: float):
        return self.map_blocks(lambda b: b / s)

    def __neg__(self):
        return self.map_blocks(np.negative)

    def __repr__(self) -> str:
        return f"BlockTensor(shape={self.shape}, flux={self.flux}, nblocks={len(self.blocks)})"

    # ---- flat vector layout (for iterative solvers) ---------------------
    def to_vector(self) -> np.ndarray:
        keys = self.keys()
        if not keys:
            return np.zeros(0)
        return np.concatenate([self.blocks[k].ravel() for k in keys])

    def from_vector(self, vec: np.ndarray) -> "BlockTensor":
        """New tensor with this tensor's block layout and values from ``vec``."""
        blocks, pos = {}, 0
        for k in self.keys():
            shp = self.blocks[k].shape
            n = int(np.prod(shp))
            blocks[k] = np.asarray(vec[pos:pos + n]).reshape(shp).copy()
            pos += n
        return BlockTensor(self.indices, blocks, self.flux, check=False)

    @property
    def size(self) -> int:
        return sum(b.size for b in self.blocks.values())

    def prune(self, tol: float = 0.0) -> "BlockTensor":
        """Drop blocks whose max-abs entry is <= tol."""
        return BlockTensor(self.indices, {k: v for k, v in self.blocks.items()
                                          if v.size and np.max(np.abs(v)) > tol}, self.flux, check=False)

    # ---- serialization --------------------------------------------------
    def to_bytes(self) -> bytes:
        out = [b"BTSR", struct.pack("<I", self.ndim), struct.pack("<qq", self.flux.n_particles, self.flux.two_sz)]
        for ix in self.indices:
            out.append(struct.pack("<bI", ix.direction, len(ix.sectors)))
            for q, d in ix.sectors:
                out.append(struct.pack("<qqq", q.n_particles, q.two_sz, d))
        keys = self.keys()
        out.append(struct.pack("<Q", len(keys)))
        for k in keys:
            out.append(struct.pack(f"<{self.ndim}I", *k))
            out.append(np.ascontiguousarray(self.blocks[k], dtype="<f8").tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes, offset: int = 0):
        """Inverse of :meth:`to_bytes`; returns ``(tensor, new_offset)``."""
        if data[offset:offset + 4] != b"BTSR":
            raise ValueError("not a serialized BlockTensor")
        pos = offset + 4
        (rank,) = struct.unpack_from("<I", data, pos)
        pos += 4
        n, sz = struct.unpack_from("<qq", data, pos)
        pos += 16
        indices = []
        for _ in range(rank):
            direction, ns = struct.unpack_from("<bI", data, pos)
            pos += 5
            secs = []
            for _ in range(ns):
                qn, qs, d = struct.unpack_from("<qqq", data, pos)
                pos += 24
                secs.append((QNum(qn, qs), d))
            indices.append(Index(tuple(secs), direction))
        (nb,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        blocks = {}
        for _ in range(nb):
            key = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            shape = tuple(ix.dims[i] for ix, i in zip(indices, key))
            cnt = int(np.prod(shape))
            blocks[tuple(key)] = np.frombuffer(data, dtype="<f8", count=cnt, offset=pos).reshape(shape).copy()
            pos += 8 * cnt
        return cls(indices, blocks, QNum(n, sz)), pos


def identity(ix: Index) -> BlockTensor:
    """Identity map with legs ``(ix.dual(), ix)``."""
    return BlockTensor([ix.dual(), ix], {(i, i): np.eye(d) for i, d in enumerate(ix.dims)}, ZERO, check=False)


def contract(a: BlockTensor, b: BlockTensor, pairs: Iterable[tuple]) -> BlockTensor:
    """Contract leg pairs ``(axis_of_a, axis_of_b)``; free legs of a come first."""
    pairs = list(pairs)
    ca = [p[0] for p in pairs]
    cb = [p[1] for p in pairs]
    for i in ca:
        if not 0 <= i < a.ndim:
            raise RankError(f"axis {i} out of range for rank-{a.ndim} tensor")
    for i in cb:
        if not 0 <= i < b.ndim:
            raise RankError(f"axis {i} out of range for rank-{b.ndim} tensor")
    if len(set(ca)) != len(ca) or len(set(cb)) != len(cb):
        raise RankError("repeated axis in contraction pairs")
    for i, j in zip(ca, cb):
        ia, ib = a.indices[i], b.indices[j]
        if not ia.same_space(ib) or ia.direction != -ib.direction:
            raise IncompatibleIndex(f"cannot contract axis {i} with axis {j}")
    fa = [i for i in range(a.ndim) if i not in ca]
    fb = [i for i in range(b.ndim) if i not in cb]
    groups = defaultdict(list)
    for kb, vb in b.blocks.items():
        groups[tuple(kb[i] for i in cb)].append((tuple(kb[i] for i in fb), vb))
    out = {}
    for ka, va in a.blocks.items():
        matches = groups.get(tuple(ka[i] for i in ca))
        if not matches:
            continue
        fka = tuple(ka[i] for i in fa)
        for fkb, vb in matches:
            r = np.tensordot(va, vb, axes=(ca, cb))
            rk = fka + fkb
            if rk in out:
                out[rk] += r
            else:
                out[rk] = r
    return BlockTensor([a.indices[i] for i in fa] + [b.indices[i] for i in fb], out, a.flux + b.flux, check=False)


# ---- matricization ---------------------------------------------------------

def matricize(t: BlockTensor, row_axes: Sequence[int], col_axes: Sequence[int] | None = None):
    """Group blocks into dense matrices, one per row-group QNum.

    Returns ``{q_row: (matrix, row_layout, col_layout)}`` where ``q_row`` is the
    directed QNum sum over the row legs and each layout is a list of
    ``(sector_key, offset, sector_shape)``.
    """
    row_axes = list(row_axes)
    if col_axes is None:
        col_axes = [i for i in range(t.ndim) if i not in row_axes]
    col_axes = list(col_axes)
    if sorted(row_axes + col_axes) != list(range(t.ndim)) or not row_axes or not col_axes:
        raise RankError("row/col axes must be a bipartition of all legs")
    rows = defaultdict(set)
    cols = defaultdict(set)
    for key in t.blocks:
        rk = tuple(key[i] for i in row_axes)
        ck = tuple(key[i] for i in col_axes)
        q = ZERO
        for i in row_axes:
            q = q + t.indices[i].qnums[key[i]] * t.indices[i].direction
        rows[q].add(rk)
        cols[q].add(ck)

    def layout(keys, axes):
        lay, off = [], 0
        for k in sorted(keys):
            shp = tuple(t.indices[a].dims[i] for a, i in zip(axes, k))
            lay.append((k, off, shp))
            off += int(np.prod(shp))
        return lay, off

    out = {}
    for q in sorted(rows):
        rlay, nr = layout(rows[q], row_axes)
        clay, nc = layout(cols[q], col_axes)
        out[q] = [np.zeros((nr, nc)), rlay, clay]
    perm = row_axes + col_axes
    roff = {q: {k: (o, s) for k, o, s in v[1]} for q, v in out.items()}
    coff = {q: {k: (o, s) for k, o, s in v[2]} for q, v in out.items()}
    for key, blk in t.blocks.items():
        rk = tuple(key[i] for i in row_axes)
        ck = tuple(key[i] for i in col_axes)
        q = ZERO
        for i in row_axes:
            q = q + t.indices[i].qnums[key[i]] * t.indices[i].direction
        ro, rs = roff[q][rk]
        co, cs = coff[q][ck]
        m = np.transpose(blk, perm).reshape(int(np.prod(rs)), int(np.prod(cs)))
        out[q][0][ro:ro + m.shape[0], co:co + m.shape[1]] = m
    return {q: tuple(v) for q, v in out.items()}


def _unmatricize_rows(mat, layout, indices_rows, bond_pos: int, new_index: Index, bond_first: bool):
    blocks = {}
    for key, off, shp in layout:
        n = int(np.prod(shp))
        piece = mat[off:off + n, :]
        if bond_first:
            blocks[(bond_pos,) + key] = np.ascontiguousarray(piece.T.reshape((piece.shape[1],) + shp))
        else:
            blocks[key + (bond_pos,)] = np.ascontiguousarray(piece.reshape(shp + (piece.shape[1],)))
    return blocks


@dataclass
class SvdResult:
    u: BlockTensor
    singular_values: list
    vt: BlockTensor
    discarded_weight: float

    @property
    def bond(self) -> Index:
        return self.u.indices[-1]

    def s_tensor(self) -> BlockTensor:
        """Diagonal singular-value tensor with legs ``(bond.dual(), bond)``."""
        b = self.bond
        return BlockTensor([b.dual(), b], {(i, i): np.diag(s) for i, (_, s) in enumerate(self.singular_values)},
                           ZERO, check=False)

    def us(self) -> BlockTensor:
        return contract(self.u, self.s_tensor(), [(self.u.ndim - 1, 0)])

    def svt(self) -> BlockTensor:
        return contract(self.s_tensor(), self.vt, [(1, 0)])

    def reconstruct(self) -> BlockTensor:
        return contract(self.us(), self.vt, [(self.u.ndim - 1, 0)])

    def all_values(self) -> np.ndarray:
        if not self.singular_values:
            return np.zeros(0)
        return np.sort(np.concatenate([s for _, s in self.singular_values]))[::-1]


def _dense_svd(m):
    try:
        return scipy.linalg.svd(m, full_matrices=False, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        return scipy.linalg.svd(m, full_matrices=False, lapack_driver="gesvd")


TIE_RTOL = 1e-9


def _group_ties(entries: list) -> list:
    """Reorder runs of near-equal weights (already sorted descending) by sector key."""
    if not entries:
        return entries
    tol = TIE_RTOL * max(-entries[0][0], np.finfo(float).tiny)
    out, group = [], [entries[0]]
    for e in entries[1:]:
        if group[0][0] - e[0] >= -tol:
            group.append(e)
        else:
            out.extend(sorted(group, key=lambda x: (x[1], x[2])))
            group = [e]
    out.extend(sorted(group, key=lambda x: (x[1], x[2])))
    return out


def select_states(spectra: dict, max_states: int | None, weight_threshold: float) -> dict:
    """Global descending selection over sectors.

    ``spectra`` maps a sortable sector key to descending nonnegative weights
    (squared singular values).  Keeps the fewest values whose discarded weight
    is <= ``weight_threshold``, then caps at ``max_states``.  Weights equal to
    within ``TIE_RTOL`` of the largest one are ties and go to the
    lower-sorted sector.  Returns ``{key: kept_count}``.
    """
    entries = []
    for key in sorted(spectra):
        for j, w in enumerate(spectra[key]):
            entries.append((-float(w), key, j))
    entries.sort()
    entries = _group_ties(entries)
    weights = np.array([-e[0] for e in entries])
    # tail[i] = weight discarded if we keep the first i entries
    tail = np.concatenate([np.cumsum(weights[::-1])[::-1], [0.0]]) if len(weights) else np.zeros(1)
    # a negative threshold keeps everything up to max_states, zero weights included
    n_keep = len(entries) if weight_threshold < 0 else int(np.argmax(tail <= weight_threshold))
    if max_states is not None:
        n_keep = min(n_keep, int(max_states))
    kept = defaultdict(int)
    for _, key, _ in entries[:n_keep]:
        kept[key] += 1
    return dict(kept)


def svd_truncate(t: BlockTensor, row_axes: Sequence[int], max_states: int | None = None,
                 weight_threshold: float = 0.0, col_axes: Sequence[int] | None = None) -> SvdResult:
    """Block-wise SVD across the ``row_axes | col_axes`` bipartition with truncation.

    ``u`` carries the row legs plus an outgoing bond, ``vt`` an incoming bond
    plus the column legs.  All flux sits on ``vt``.
    """
    row_axes = list(row_axes)
    if col_axes is None:
        col_axes = [i for i in range(t.ndim) if i not in row_axes]
    mats = matricize(t, row_axes, col_axes)
    decomp = {}
    for q, (m, rlay, clay) in mats.items():
        u, s, vt = _dense_svd(m)
        decomp[-q] = (u, s, vt, rlay, clay)
    kept = select_states({q: d[1] ** 2 for q, d in decomp.items()}, max_states, weight_threshold)
    if sum(kept.values()) == 0:
        raise EmptySpectrum("no singular values kept")
    bond = Index.from_dims(kept, OUT)
    discarded = 0.0
    ublocks, vblocks, svals = {}, {}, []
    rows_ix = [t.indices[i] for i in row_axes]
    cols_ix = [t.indices[i] for i in col_axes]
    for qb, (u, s, vt, rlay, clay) in sorted(decomp.items()):
        nk = kept.get(qb, 0)
        discarded += float(np.sum(s[nk:] ** 2))
        if nk == 0:
            continue
        bpos = bond.position(qb)
        svals.append((qb, s[:nk].copy()))
        ublocks.update(_unmatricize_rows(u[:, :nk], rlay, rows_ix, bpos, bond, bond_first=False))
        vblocks.update(_unmatricize_rows(vt[:nk, :].T, clay, cols_ix, bpos, bond, bond_first=True))
    U = BlockTensor(rows_ix + [bond], ublocks, ZERO, check=False)
    V = BlockTensor([bond.dual()] + cols_ix, vblocks, t.flux, check=False)
    return SvdResult(U, svals, V, discarded)


def qr(t: BlockTensor, row_axes: Sequence[int]):
    """Block QR: ``t = Q R`` with Q isometric over ``row_axes``; flux goes to R."""
    row_axes = list(row_axes)
    col_axes = [i for i in range(t.ndim) if i not in row_axes]
    mats = matricize(t, row_axes, col_axes)
    dims, parts = {}, {}
    for q, (m, rlay, clay) in mats.items():
        qm, rm = np.linalg.qr(m)
        dims[-q] = qm.shape[1]
        parts[-q] = (qm, rm, rlay, clay)
    bond = Index.from_dims(dims, OUT)
    rows_ix = [t.indices[i] for i in row_axes]
    cols_ix = [t.indices[i] for i in col_axes]
    qb, rb = {}, {}
    for q, (qm, rm, rlay, clay) in parts.items():
        p = bond.position(q)
        qb.update(_unmatricize_rows(qm, rlay, rows_ix, p, bond, bond_first=False))
        rb.update(_unmatricize_rows(rm.T, clay, cols_ix, p, bond, bond_first=True))
    return (BlockTensor(rows_ix + [bond], qb, ZERO, check=False),
            BlockTensor([bond.dual()] + cols_ix, rb, t.flux, check=False))


def lq(t: BlockTensor, row_axes: Sequence[int]):
    """Block LQ: ``t = L Q`` with Q isometric over the column legs; flux goes to Q.

    ``L`` carries the row legs plus an outgoing bond, ``Q`` the incoming bond
    and the column legs (same leg layout as :func:`svd_truncate`).
    """
    row_axes = list(row_axes)
    col_axes = [i for i in range(t.ndim) if i not in row_axes]
    mats = matricize(t, row_axes, col_axes)
    dims, parts = {}, {}
    for q, (m, rlay, clay) in mats.items():
        qm, rm = np.linalg.qr(m.T)
        dims[-q] = qm.shape[1]
        parts[-q] = (rm.T, qm, rlay, clay)
    bond = Index.from_dims(dims, OUT)
    rows_ix = [t.indices[i] for i in row_axes]
    cols_ix = [t.indices[i] for i in col_axes]
    lb, qb = {}, {}
    for q, (lm, qm, rlay, clay) in parts.items():
        p = bond.position(q)
        lb.update(_unmatricize_rows(lm, rlay, rows_ix, p, bond, bond_first=False))
        qb.update(_unmatricize_rows(qm, clay, cols_ix, p, bond, bond_first=True))
    return (BlockTensor(rows_ix + [bond], lb, ZERO, check=False),
            BlockTensor([bond.dual()] + cols_ix, qb, t.flux, check=False))


def full_layout(indices: Sequence[Index], axes: Sequence[int]) -> dict:
    """``{q: (layout, size)}`` over every sector combination of ``axes``.

    ``q`` is the directed QNum sum; layout entries are ``(key, offset, shape)``.
    """
    groups = defaultdict(list)

    def rec(pos, key, q):
        if pos == len(axes):
            groups[q].append(key)
            return
        ix = indices[axes[pos]]
        for i, qi in enumerate(ix.qnums):
            rec(pos + 1, key + (i,), q + qi * ix.direction)

    rec(0, (), ZERO)
    out = {}
    for q, keys in groups.items():
        lay, off = [], 0
        for k in sorted(keys):
            shp = tuple(indices[a].dims[i] for a, i in zip(axes, k))
            lay.append((k, off, shp))
            off += int(np.prod(shp))
        out[q] = (lay, off)
    return out


#: density-matrix eigenvalues below this fraction of the trace count as exact zeros
RHO_ZERO = 1e-14


def density_truncate(parts, keep_axes: Sequence[int], max_states: int | None = None,
                     weight_threshold: float = 0.0, side: str = "left", sector_order: Callable | None = None):
    """Truncate by diagonalizing ``rho = sum_k w_k T_k T_k^T`` over ``keep_axes``.

    ``parts`` is a list of ``(tensor, weight)``; all tensors share the legs in
    ``keep_axes`` (the remaining legs may differ).  With ``side='left'`` the
    result is an isometry with the kept legs then an outgoing bond (like the
    ``u`` of :func:`svd_truncate`); with ``side='right'`` it has an incoming
    bond then the kept legs (like ``vt``) and carries the common flux.
    ``sector_order`` maps a bond QNum to the sort key used to break ties
    between equal eigenvalues of different sectors (default: the QNum).
    Returns ``(isometry, [(bond QNum, eigenvalues)], discarded_weight)``.
    """
    keep_axes = list(keep_axes)
    t0 = parts[0][0]
    kept_ix = [t0.indices[a] for a in keep_axes]
    for t, _ in parts:
        if [t.indices[a] for a in keep_axes] != kept_ix:
            raise IncompatibleIndex("density_truncate parts disagree on the kept legs")
    flux = t0.flux if side == "right" else ZERO
    layouts = full_layout(t0.indices, keep_axes)
    rho = {}
    for t, w in parts:
        other = [i for i in range(t.ndim) if i not in keep_axes]
        perm = keep_axes + other
        loc = {q: {k: (o, s) for k, o, s in lay} for q, (lay, _) in layouts.items()}
        cols = defaultdict(dict)
        for key, blk in t.blocks.items():
            kk = tuple(key[a] for a in keep_axes)
            q = ZERO
            for a in keep_axes:
                q = q + t.indices[a].qnums[key[a]] * t.indices[a].direction
            cols[q][tuple(key[a] for a in other)] = cols[q].get(tuple(key[a] for a in other), []) + [(kk, blk, perm)]
        for q, by_col in cols.items():
            lay, size = layouts[q]
            for entries in by_col.values():
                ncol = int(np.prod(np.transpose(entries[0][1], entries[0][2]).shape[len(keep_axes):]))
                mat = np.zeros((size, ncol))
                for kk, blk, pm in entries:
                    o, s = loc[q][kk]
                    n = int(np.prod(s))
                    mat[o:o + n] = np.transpose(blk, pm).reshape(n, ncol)
                r = rho.setdefault(q, np.zeros((size, size)))
                r += w * (mat @ mat.T)
    decomp = {}
    floor = RHO_ZERO * sum(float(np.trace(r)) for r in rho.values())
    for q, r in rho.items():
        ev, vec = np.linalg.eigh(0.5 * (r + r.T))
        ev = ev[::-1]
        ev[ev <= floor] = 0.0
        decomp[(-q if side == "left" else q - flux)] = (ev, vec[:, ::-1], q)
    order = sector_order or (lambda b: b)
    ranked = select_states({(order(b), b): d[0] for b, d in decomp.items()}, max_states, weight_threshold)
    kept = {b: n for (_, b), n in ranked.items()}
    if sum(kept.values()) == 0:
        raise EmptySpectrum("no density-matrix eigenvalues kept")
    bond = Index.from_dims(kept, OUT)
    blocks, spectrum, discarded = {}, [], 0.0
    for b, (ev, vec, q) in sorted(decomp.items()):
        nk = kept.get(b, 0)
        discarded += float(np.sum(ev[nk:]))
        if nk == 0:
            continue
        spectrum.append((b, ev[:nk].copy()))
        blocks.update(_unmatricize_rows(vec[:, :nk], layouts[q][0], kept_ix, bond.position(b), bond,
                                        bond_first=(side == "right")))
    if side == "left":
        return BlockTensor(kept_ix + [bond], blocks, ZERO, check=False), spectrum, discarded
    return BlockTensor([bond.dual()] + kept_ix, blocks, flux, check=False), spectrum, discarded


# ---- iterative eigensolver ---------------------------------------------------

def davidson(matvec: Callable, dim: int, n_roots: int = 1, guess: np.ndarray | None = None,
             diag: np.ndarray | None = None, tol: float = 1e-8, max_iterations: int = 300,
             max_subspace: int | None = None, rng=None):
    """Lowest eigenpairs of a real symmetric operator given as ``matvec``.

    Uses a diagonal preconditioner and restarts with the best Ritz vectors
    once the subspace reaches ``max_subspace`` (default ``20 * n_roots``).
    Problems no larger than the subspace limit are solved exactly.
    """
    if n_roots < 1:
        raise ValueError("n_roots must be >= 1")
    if dim < n_roots:
        raise ValueError(f"problem dimension {dim} smaller than n_roots={n_roots}")
    max_subspace = max(max_subspace or 20 * n_roots, 2 * n_roots + 2)
    if dim <= max_subspace:
        eye = np.eye(dim)
        H = np.column_stack([matvec(eye[:, i]) for i in range(dim)])
        w, v = np.linalg.eigh(0.5 * (H + H.T))
        return w[:n_roots], v[:, :n_roots]
    rng = np.random.default_rng(12345 if rng is None else rng)
    if diag is None:
        diag = np.zeros(dim)
    cols = []
    if guess is not None:
        g = np.asarray(guess, dtype=float)
        cols = [g] if g.ndim == 1 else [g[:, i] for i in range(g.shape[1])]
    while len(cols) < n_roots:
        cols.append(rng.standard_normal(dim))
    V = np.zeros((dim, 0))
    for c in cols:
        V = _extend(V, c)
    while V.shape[1] < n_roots:
        V = _extend(V, rng.standard_normal(dim))
    AV = np.column_stack([matvec(V[:, i]) for i in range(V.shape[1])])
    norms = None
    for _ in range(max_iterations):
        Hs = V.T @ AV
        w, s = np.linalg.eigh(0.5 * (Hs + Hs.T))
        theta = w[:n_roots]
        X = V @ s[:, :n_roots]
        R = AV @ s[:, :n_roots] - X * theta
        norms = np.linalg.norm(R, axis=0)
        if np.all(norms <= tol):
            X, _ = np.linalg.qr(X) if n_roots > 1 else (X / np.linalg.norm(X), None)
            return theta, X
        new = []
        for j in range(n_roots):
            if norms[j] <= tol:
                continue
            denom = theta[j] - diag
            denom = np.where(np.abs(denom) < 1e-4, np.copysign(1e-4, denom), denom)
            new.append(R[:, j] / denom)
        if V.shape[1] + len(new) > max_subspace:
            keep = min(2 * n_roots, V.shape[1])
            V = V @ s[:, :keep]
            AV = AV @ s[:, :keep]
        added = 0
        for t in new:
            before = V.shape[1]
            V = _extend(V, t)
            if V.shape[1] > before:
                AV = np.column_stack([AV, matvec(V[:, -1])])
                added += 1
        if added == 0:
            for j in range(n_roots):
                before = V.shape[1]
                V = _extend(V, R[:, j] if norms[j] > tol else rng.standard_normal(dim))
                if V.shape[1] > before:
                    AV = np.column_stack([AV, matvec(V[:, -1])])
                    added += 1
            if added == 0:
                V = _extend(V, rng.standard_normal(dim))
                AV = np.column_stack([AV, matvec(V[:, -1])])
    raise NoConvergence(max_iterations, None if norms is None else norms.tolist())


def _extend(V: np.ndarray, t: np.ndarray) -> np.ndarray:
    t = np.array(t, dtype=float)
    nt = np.linalg.norm(t)
    if nt == 0:
        return V
    t = t / nt
    for _ in range(2):
        if V.shape[1]:
            t = t - V @ (V.T @ t)
    n = np.linalg.norm(t)
    if n < 1e-10:
        return V
    return np.column_stack([V, t / n])


def hermitian_eigensolve_lowest(apply: Callable, guess, n_roots: int = 1, tol: float = 1e-8,
                                diagonal: BlockTensor | None = None, max_iterations: int = 300):
    """Davidson over block tensors sharing the layout of ``guess``.

    ``guess`` is a BlockTensor (or list of them for several starting vectors)
    holding every block of the variational space.  Returns
    ``(eigenvalues, [BlockTensor, ...])``.
    """
    guesses = guess if isinstance(guess, (list, tuple)) else [guess]
    template = guesses[0]
    layout_keys = template.keys()
    for g in guesses[1:]:
        if g.keys() != layout_keys:
            raise IncompatibleIndex("all guesses must share one block layout")
    dim = template.size

    def mv(x):
        y = apply(template.from_vector(x))
        return np.concatenate([y.blocks[k].ravel() if k in y.blocks else np.zeros(template.blocks[k].size)
                               for k in layout_keys]) if layout_keys else np.zeros(0)

    g = np.column_stack([x.to_vector() for x in guesses])
    d = None if diagonal is None else diagonal.to_vector()
    w, v = davidson(mv, dim, n_roots, g, d, tol, max_iterations)
    return w, [template.from_vector(v[:, i]) for i in range(v.shape[1])]
