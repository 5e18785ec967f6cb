"""Symbolic MPO construction from second-quantized operator strings.

Every term is a mode-ordered string with a coefficient.  At each cut of the
chain a term is filed under one channel:

* ``'I'``               nothing applied yet (all operators to the right)
* ``('N', left_ops)``   normal operator: the left part is kept explicitly
* ``('C', right_ops)``  complementary operator: the right part is kept and
                        the coefficient has already been absorbed
* ``'H'``               the term is complete

A term walks I -> N -> C -> H monotonically, so its coefficient is attached
on exactly one transition.  Labels depend only on the term and the cut, which
makes the link spaces of an MPO over single orbitals and of an MPO over
larger blocks of orbitals agree at every shared cut.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .fermion import (IDENTITY4, PARITY, canonical_string, factor_matrix, block_factors,
                      orbital_index, string_qnum)
from .symtensor import IN, OUT, ZERO, BlockTensor, Index, QNum

COEF_TOL = 1e-14
_TYPE_ORDER = {"I": 0, "N": 1, "C": 2, "H": 3}


# ---- terms -----------------------------------------------------------------

def hamiltonian_terms(h: np.ndarray, v: np.ndarray, order: Sequence[int] | None = None) -> dict:
    """``{mode-ordered ops: coefficient}`` for the spin-orbital Hamiltonian.

    ``order[i]`` is the orbital placed at chain position ``i``.
    """
    k = h.shape[0]
    order = list(range(k)) if order is None else [int(o) for o in order]
    if sorted(order) != list(range(k)):
        raise ValueError(f"order must be a permutation of 0..{k - 1}")
    pos = np.empty(k, dtype=int)
    pos[order] = np.arange(k)
    terms: dict = {}

    def add(coef, ops):
        sign, ordered = canonical_string(ops)
        if sign:
            terms[ordered] = terms.get(ordered, 0.0) + sign * coef

    for p, q in np.argwhere(np.abs(h) > 0):
        for s in (0, 1):
            add(h[p, q], [(2 * pos[p] + s, True), (2 * pos[q] + s, False)])
    for p, q, r, s in np.argwhere(np.abs(v) > 0):
        c = 0.5 * v[p, q, r, s]
        for a in (0, 1):
            for b in (0, 1):
                add(c, [(2 * pos[p] + a, True), (2 * pos[r] + b, True),
                        (2 * pos[s] + b, False), (2 * pos[q] + a, False)])
    return {ops: c for ops, c in terms.items() if abs(c) > COEF_TOL}


def normal_cut(cut: int, n_sites: int) -> bool:
    return (cut + 1) * 2 <= n_sites


def channel_label(ops: tuple, cut: int, n_sites: int):
    """Channel of a mode-ordered string at the cut after site ``cut``."""
    n_left = sum(1 for m, _ in ops if m // 2 <= cut)
    n_right = len(ops) - n_left
    if n_left == 0:
        return "I"
    if n_right == 0:
        return "H"
    if n_left < n_right or (n_left == n_right and normal_cut(cut, n_sites)):
        return ("N", ops[:n_left])
    return ("C", ops[n_left:])


def label_qnum(label) -> QNum:
    if label in ("I", "H"):
        return ZERO
    kind, ops = label
    q = string_qnum(ops)
    return q if kind == "N" else -q


def label_sort_key(label):
    if isinstance(label, str):
        return (_TYPE_ORDER[label], ())
    return (_TYPE_ORDER[label[0]], label[1])


def link_space(labels, direction: int = OUT):
    """Sort labels into an Index; returns ``(index, ordered labels, {label: dense position})``."""
    by_q: dict = {}
    for lab in sorted(set(labels), key=label_sort_key):
        by_q.setdefault(label_qnum(lab), []).append(lab)
    index = Index(tuple((q, len(by_q[q])) for q in sorted(by_q)), direction)
    ordered = [lab for q in sorted(by_q) for lab in by_q[q]]
    return index, ordered, {lab: i for i, lab in enumerate(ordered)}


# ---- generic block builder ---------------------------------------------------

@dataclass
class MpoChain:
    """MPO over a chain of blocks (single orbitals or fragments).

    ``tensors[i]`` has legs ``(b_left IN, b_right OUT, out IN, in OUT)``: the
    last two legs are the row (σ*) and column (σ) of the local operator.
    """

    tensors: list
    constant_shift: float = 0.0
    link_labels: list = field(default_factory=list)
    phys: list = field(default_factory=list)
    blocks: list = field(default_factory=list)
    terms: dict = field(default_factory=dict)
    order: list = field(default_factory=list)

    def __len__(self):
        return len(self.tensors)

    @property
    def link_dims(self) -> list:
        return [self.tensors[0].indices[0].dim] + [w.indices[1].dim for w in self.tensors]

    @property
    def max_link_dim(self) -> int:
        return max(self.link_dims)


def _assemble(entries: dict, left: Index, right: Index, phys: Index) -> BlockTensor:
    """BlockTensor from ``{(l, r): dense d x d matrix}``."""
    indices = [left.dual() if left.direction == OUT else left, right, phys, phys.dual()]
    ploc = [(q, off, d) for q, off, d in zip(phys.qnums, phys.offsets, phys.dims)]
    lsec = _dense_to_sector(left)
    rsec = _dense_to_sector(right)
    blocks: dict = {}
    for (l, r), mat in entries.items():
        ls, lp = lsec[l]
        rs, rp = rsec[r]
        dq = right.qnums[rs] - left.qnums[ls]
        for a, (qa, oa, da) in enumerate(ploc):
            for b, (qb, ob, db) in enumerate(ploc):
                if qa - qb != dq:
                    continue
                sub = mat[oa:oa + da, ob:ob + db]
                if not np.any(sub):
                    continue
                key = (ls, rs, a, b)
                blk = blocks.get(key)
                if blk is None:
                    blk = blocks[key] = np.zeros((left.dims[ls], right.dims[rs], da, db))
                blk[lp, rp] += sub
    return BlockTensor(indices, blocks, ZERO, check=False)


def _dense_to_sector(ix: Index) -> list:
    out = []
    for s, d in enumerate(ix.dims):
        out.extend((s, p) for p in range(d))
    return out


def build_block_mpo(terms: dict, blocks: Sequence[Sequence[int]], phys: Sequence[Index],
                    provider: Callable, n_sites: int, constant: float = 0.0) -> MpoChain:
    """Assemble an MPO over consecutive blocks of orbital sites.

    ``provider(block_number, ops_in_block, parity_after)`` returns the dense
    local matrix of the string restricted to the block, followed by the
    parity string ``P**parity_after``.
    """
    blocks = [list(b) for b in blocks]
    cuts = [-1] + [b[-1] for b in blocks]
    nb = len(blocks)
    if not terms:
        return _constant_mpo(phys, blocks, constant)
    term_list = sorted(terms.items())
    labels = [[channel_label(ops, c, n_sites) for ops, _ in term_list] for c in cuts]
    spaces = [link_space(labs) for labs in labels]
    tensors = []
    for i, blk in enumerate(blocks):
        lo, hi = blk[0], blk[-1]
        _, _, lpos = spaces[i]
        _, _, rpos = spaces[i + 1]
        entries: dict = {}
        structural: set = set()
        cache: dict = {}
        for t, (ops, coef) in enumerate(term_list):
            la, lb = labels[i][t], labels[i + 1][t]
            inside = tuple(o for o in ops if lo <= o[0] // 2 <= hi)
            after = sum(1 for o in ops if o[0] // 2 > hi) % 2
            key = (lpos[la], rpos[lb])
            bears = (la == "I" or la[0] == "N") and (lb == "H" or lb[0] == "C")
            if not bears and key in structural:
                continue
            ck = (inside, after)
            mat = cache.get(ck)
            if mat is None:
                mat = cache[ck] = provider(i, inside, after)
            if bears:
                if key in entries:
                    entries[key] = entries[key] + coef * mat
                else:
                    entries[key] = coef * mat
            else:
                structural.add(key)
                entries[key] = mat
        tensors.append(_assemble(entries, spaces[i][0], spaces[i + 1][0], phys[i]))
    return MpoChain(tensors, constant, [s[1] for s in spaces], list(phys), blocks, dict(terms))


def _constant_mpo(phys, blocks, constant):
    one = Index(((ZERO, 1),), OUT)
    tensors = []
    for i, p in enumerate(phys):
        if i == 0:
            tensors.append(BlockTensor([one.dual(), one, p, p.dual()], {}, ZERO, check=False))
        else:
            tensors.append(_assemble({(0, 0): np.eye(p.dim)}, one, one, p))
    return MpoChain(tensors, constant, [["I"]] * (len(phys) + 1), list(phys), blocks, {})


def identity_mpo(phys: Sequence[Index]) -> MpoChain:
    one = Index(((ZERO, 1),), OUT)
    tensors = [_assemble({(0, 0): np.eye(p.dim)}, one, one, p) for p in phys]
    return MpoChain(tensors, 0.0, [["I"]] * (len(phys) + 1), list(phys), [[i] for i in range(len(phys))], {})


# ---- orbital-site MPO ----------------------------------------------------------

def orbital_provider(block_sites):
    def provider(i, inside, after):
        (f,) = block_factors(inside, block_sites[i], after)
        return factor_matrix(f)
    return provider


def build_orbital_mpo(terms: dict, n_sites: int, constant: float = 0.0) -> MpoChain:
    blocks = [[i] for i in range(n_sites)]
    phys = [orbital_index(IN)] * n_sites
    return build_block_mpo(terms, blocks, phys, orbital_provider(blocks), n_sites, constant)


def build_hamiltonian_mpo(ints, order: Sequence[int] | None = None) -> MpoChain:
    """Hamiltonian MPO with orbital ``order[i]`` at chain position ``i``."""
    terms = hamiltonian_terms(ints.h, ints.v, order)
    mpo = build_orbital_mpo(terms, ints.n_orb, float(ints.e_core))
    mpo.order = list(range(ints.n_orb)) if order is None else [int(o) for o in order]
    return mpo


# ---- dense helpers (small systems) ---------------------------------------------

def mpo_to_dense(mpo: MpoChain) -> np.ndarray:
    """Full operator matrix; site 0 is the most significant digit."""
    acc = None
    for w in mpo.tensors:
        wd = w.to_dense()
        if acc is None:
            acc = wd[0]
        else:
            acc = np.einsum("xab,xycd->yacbd", acc, wd).reshape(
                wd.shape[1], acc.shape[1] * wd.shape[2], acc.shape[2] * wd.shape[3])
    out = acc[0]
    return out + mpo.constant_shift * np.eye(out.shape[0])


def mpo_matvec_dense(mpo: MpoChain, vec: np.ndarray) -> np.ndarray:
    """Apply the MPO to a dense vector without forming the full matrix."""
    dims = [w.indices[3].dim for w in mpo.tensors]
    x = np.asarray(vec, dtype=float).reshape(1, 1, -1)
    for w, d in zip(mpo.tensors, dims):
        wd = w.to_dense()
        b, n_out, rest = x.shape
        x = x.reshape(b, n_out, d, rest // d)
        x = np.einsum("bOiR,bcoi->cOoR", x, wd, optimize=True).reshape(wd.shape[1], n_out * wd.shape[2], -1)
    return x.reshape(-1) + mpo.constant_shift * np.asarray(vec, dtype=float)


def dense_terms_operator(terms: dict, n_sites: int, constant: float = 0.0) -> np.ndarray:
    """Independent dense construction by Kronecker products of JW strings."""
    from .fermion import dense_string_operator
    out = constant * np.eye(4 ** n_sites)
    for ops, c in terms.items():
        out = out + c * dense_string_operator(ops, n_sites)
    return out


__all__ = ["MpoChain", "hamiltonian_terms", "channel_label", "build_block_mpo", "build_orbital_mpo",
           "build_hamiltonian_mpo", "identity_mpo", "mpo_to_dense", "mpo_matvec_dense",
           "dense_terms_operator", "PARITY", "IDENTITY4"]
