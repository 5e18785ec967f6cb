"""Matrix product states: canonical forms, contractions and checkpoints.

Site tensors have legs ``(a_left IN, sigma IN, a_right OUT)`` and zero flux.
The left boundary bond is the vacuum sector; the right boundary bond holds
the target ``(N, 2Sz)`` so the state's quantum numbers live in the last leg.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ShapeMismatch, TooLarge, ZeroNorm
from .fermion import local_op, orbital_index, PARITY
from .symtensor import (IN, OUT, ZERO, BlockTensor, Index, QNum, contract, lq, qr, svd_truncate)

_VACUUM = Index(((ZERO, 1),), IN)


@dataclass
class Mps:
    """``center`` is the orthogonality site.  In bond-canonical form ``bond = p``
    and ``singular_values`` hold the Schmidt values of the cut after site p;
    then ``tensors[p]`` is left- and ``tensors[p + 1]`` right-normalized."""

    tensors: list
    flux: QNum
    center: int | None = None
    bond: int | None = None
    singular_values: list | None = None

    def __len__(self):
        return len(self.tensors)

    @property
    def phys(self) -> list:
        return [t.indices[1] for t in self.tensors]

    @property
    def bond_dims(self) -> list:
        return [t.indices[2].dim for t in self.tensors[:-1]]

    def copy(self) -> "Mps":
        return Mps(list(self.tensors), self.flux, self.center, self.bond,
                   None if self.singular_values is None else list(self.singular_values))

    def site_form(self) -> "Mps":
        """Absorb stored singular values into the site right of the bond."""
        if self.bond is None:
            return self
        p = self.bond
        ts = list(self.tensors)
        ts[p + 1] = contract(_s_matrix(ts[p].indices[2], self.singular_values), ts[p + 1], [(1, 0)])
        return Mps(ts, self.flux, p + 1)

    def norm(self) -> float:
        if self.bond is not None:
            return float(np.sqrt(sum(np.sum(s ** 2) for _, s in self.singular_values)))
        if self.center is not None:
            return self.tensors[self.center].norm()
        return float(np.sqrt(max(overlap(self, self), 0.0)))


def _s_matrix(bond_out: Index, svals) -> BlockTensor:
    blocks = {}
    for q, s in svals:
        i = bond_out.position(q)
        blocks[(i, i)] = np.diag(s)
    return BlockTensor([bond_out.dual(), bond_out], blocks, ZERO, check=False)


# ---- construction -------------------------------------------------------------

def product_state(phys: Sequence[Index], local_states: Sequence[int]) -> Mps:
    """Product MPS with dense local state ``local_states[i]`` on site i."""
    tensors = []
    left = _VACUUM
    q = ZERO
    for ix, st in zip(phys, local_states):
        dq = ix.dense_qnums()[st]
        sec = ix.position(dq)
        off = st - ix.offsets[sec]
        q = q + dq
        right = Index(((q, 1),), OUT)
        blk = np.zeros((1, ix.dims[sec], 1))
        blk[0, off, 0] = 1.0
        tensors.append(BlockTensor([left, ix, right], {(0, sec, 0): blk}, ZERO, check=False))
        left = right.dual()
    return Mps(tensors, q, center=0)


def reachable_sectors(phys: Sequence[Index], flux: QNum) -> list:
    """Allowed QNums on each internal bond (after site i) for the given flux."""
    n = len(phys)
    fwd = [{ZERO}]
    for ix in phys:
        fwd.append({a + b for a in fwd[-1] for b in ix.qnums})
    bwd = [set() for _ in range(n + 1)]
    bwd[n] = {flux}
    for i in range(n - 1, -1, -1):
        bwd[i] = {a - b for a in bwd[i + 1] for b in phys[i].qnums}
    return [sorted(fwd[i] & bwd[i]) for i in range(n + 1)]


def random_mps(phys: Sequence[Index], flux: QNum, m: int, rng=None) -> Mps:
    """Random state in sector ``flux`` with at most ``m`` states per bond sector."""
    rng = np.random.default_rng(rng)
    secs = reachable_sectors(phys, flux)
    if not secs[0] or not secs[-1]:
        raise ZeroNorm(f"sector {flux} unreachable")
    n = len(phys)
    bonds = [Index(tuple((q, 1 if i in (0, n) else m) for q in secs[i]), OUT) for i in range(n + 1)]
    tensors = [BlockTensor.random([bonds[i].dual(), ix, bonds[i + 1]], ZERO, rng) for i, ix in enumerate(phys)]
    mps = Mps(tensors, flux)
    return canonicalize(mps, site=0, normalize=True, max_states=m)


# ---- canonical forms -------------------------------------------------------------

def canonicalize(mps: Mps, site: int | None = None, bond: int | None = None, normalize: bool = False,
                 max_states: int | None = None) -> Mps:
    """Move the orthogonality center to ``site`` or to the cut after site ``bond``."""
    mps = mps.site_form()
    n = len(mps)
    target = site if bond is None else bond
    if target is None or not 0 <= target < n:
        raise ValueError(f"canonical target {target} out of range")
    ts = list(mps.tensors)
    for i in range(target):
        if max_states is None:
            qm, r = qr(ts[i], [0, 1])
            ts[i], carry = qm, r
        else:
            res = svd_truncate(ts[i], [0, 1], max_states=max_states)
            ts[i], carry = res.u, res.svt()
        ts[i + 1] = contract(carry, ts[i + 1], [(1, 0)])
    for i in range(n - 1, target, -1):
        if max_states is None:
            l, qm = lq(ts[i], [0])
            ts[i], carry = qm, l
        else:
            res = svd_truncate(ts[i], [0], max_states=max_states)
            ts[i], carry = res.vt, res.us()
        ts[i - 1] = contract(ts[i - 1], carry, [(2, 0)])
    nrm = ts[target].norm()
    if nrm == 0.0:
        raise ZeroNorm("state has zero norm")
    if normalize:
        ts[target] = ts[target] / nrm
    out = Mps(ts, mps.flux, target)
    if bond is None:
        return out
    if bond == n - 1:
        raise ValueError("bond index must be below the last site")
    res = svd_truncate(ts[bond], [0, 1], weight_threshold=0.0)
    ts[bond] = res.u
    ts[bond + 1] = contract(res.vt, ts[bond + 1], [(1, 0)])
    return Mps(ts, mps.flux, None, bond, res.singular_values)


def normalized(mps: Mps) -> Mps:
    return canonicalize(mps, site=0 if mps.center is None else mps.center, normalize=True)


def reduced_density_matrix(mps: Mps, bond: int):
    """Blocked RDM of sites ``0..bond`` in the left Schmidt basis and its eigenvalues."""
    bc = canonicalize(mps, bond=bond)
    nrm2 = sum(float(np.sum(s ** 2)) for _, s in bc.singular_values)
    if nrm2 == 0.0:
        raise ZeroNorm("state has zero norm")
    blocks = {q: np.diag(s ** 2 / nrm2) for q, s in bc.singular_values}
    ev = np.sort(np.concatenate([np.diag(b) for b in blocks.values()]))[::-1]
    return blocks, ev


# ---- contractions ------------------------------------------------------------------

def _left_boundary(bra_left: Index, ket_left: Index, mpo_left: Index | None = None) -> BlockTensor:
    if mpo_left is None:
        return BlockTensor([bra_left, ket_left.dual()], {(0, 0): np.ones((1, 1))}, ZERO, check=False)
    return BlockTensor([bra_left, mpo_left.dual(), ket_left.dual()], {(0, 0, 0): np.ones((1, 1, 1))},
                       ZERO, check=False)


def overlap(bra: Mps, ket: Mps) -> float:
    if len(bra) != len(ket):
        raise ShapeMismatch("MPS lengths differ")
    if bra.flux != ket.flux:
        return 0.0
    bra, ket = bra.site_form(), ket.site_form()
    env = _left_boundary(bra.tensors[0].indices[0], ket.tensors[0].indices[0])
    for b, k in zip(bra.tensors, ket.tensors):
        if not b.indices[1].same_space(k.indices[1]):
            raise ShapeMismatch("physical indices differ")
        t = contract(env, k, [(1, 0)])
        env = contract(b.conj(), t, [(0, 0), (1, 1)])
    return env.blocks.get((0, 0), np.zeros((1, 1))).item()


def left_env_step(env: BlockTensor, bra: BlockTensor, w: BlockTensor, ket: BlockTensor) -> BlockTensor:
    t = contract(env, ket, [(2, 0)])
    t = contract(t, w, [(1, 0), (2, 3)])
    t = contract(bra.conj(), t, [(0, 0), (1, 3)])
    return t.transpose([0, 2, 1])


def right_env_step(env: BlockTensor, bra: BlockTensor, w: BlockTensor, ket: BlockTensor) -> BlockTensor:
    t = contract(ket, env, [(2, 2)])                 # (a, s, x', w')
    t = contract(t, w, [(3, 1), (1, 3)])             # (a, x', wl, o)
    t = contract(bra.conj(), t, [(2, 1), (1, 3)])    # (a*, a, wl)
    return t.transpose([0, 2, 1])


def left_boundary_env(bra: Mps, ket: Mps, mpo) -> BlockTensor:
    return _left_boundary(bra.tensors[0].indices[0], ket.tensors[0].indices[0], mpo.tensors[0].indices[0])


def right_boundary_env(bra: Mps, ket: Mps, mpo) -> BlockTensor:
    bl = bra.tensors[-1].indices[2]
    kl = ket.tensors[-1].indices[2]
    wl = mpo.tensors[-1].indices[1]
    return BlockTensor([bl, wl.dual(), kl.dual()], {(0, 0, 0): np.ones((1, 1, 1))}, ZERO, check=False)


def expectation(bra: Mps, mpo, ket: Mps) -> float:
    """``<bra|H|ket>`` including the MPO's constant shift."""
    if not (len(bra) == len(ket) == len(mpo.tensors)):
        raise ShapeMismatch("MPS/MPO lengths differ")
    bra, ket = bra.site_form(), ket.site_form()
    if bra.flux != ket.flux:
        return 0.0
    env = left_boundary_env(bra, ket, mpo)
    for b, w, k in zip(bra.tensors, mpo.tensors, ket.tensors):
        if not (b.indices[1].same_space(w.indices[2]) and k.indices[1].same_space(w.indices[3])):
            raise ShapeMismatch("physical index mismatch between MPS and MPO")
        env = left_env_step(env, b, w, k)
    val = env.blocks.get((0, 0, 0), np.zeros((1, 1, 1))).item()
    if mpo.constant_shift:
        val += mpo.constant_shift * overlap(bra, ket)
    return float(val)


def mps_to_dense(mps: Mps) -> np.ndarray:
    """Dense amplitude vector; site 0 is the most significant digit."""
    total = 1
    for ix in mps.phys:
        total *= ix.dim
    if total > 4 ** 10:
        raise TooLarge(f"dense vector of size {total}")
    mps = mps.site_form()
    acc = mps.tensors[0].to_dense()[0]
    for t in mps.tensors[1:]:
        acc = np.tensordot(acc, t.to_dense(), axes=(1, 0)).reshape(-1, t.indices[2].dim)
    return acc[:, 0]


# ---- MPO application ---------------------------------------------------------------

def apply_mpo(mpo, mps: Mps, max_states: int | None = None, weight_threshold: float = 1e-14) -> Mps:
    """Zip-up application of an MPO followed by SVD compression at each step."""
    mps = mps.site_form()
    w0 = mpo.tensors[0]
    nl = _VACUUM
    carry = BlockTensor([nl, mps.tensors[0].indices[0].dual(), w0.indices[0].dual()],
                        {(0, 0, 0): np.ones((1, 1, 1))}, ZERO, check=False)
    out = []
    for m, w in zip(mps.tensors, mpo.tensors):
        x = contract(carry, m, [(1, 0)])             # (nl, wl, s, b)
        x = contract(x, w, [(1, 0), (2, 3)])         # (nl, b, wr, o)
        x = x.transpose([0, 3, 1, 2])                # (nl, o, b, wr)
        res = svd_truncate(x, [0, 1], max_states=max_states, weight_threshold=weight_threshold)
        out.append(res.u)
        carry = res.svt()                            # (bond, b, wr)
    last = contract(out[-1], carry, [(2, 0)])        # (nl, o, b, wr)
    qb, qw = last.indices[2].qnums[0], last.indices[3].qnums[0]
    right = Index(((qb + qw, 1),), OUT)
    blocks = {(k[0], k[1], 0): v.reshape(v.shape[0], v.shape[1], 1) for k, v in last.blocks.items()}
    out[-1] = BlockTensor([last.indices[0], last.indices[1], right], blocks, ZERO, check=False)
    return Mps(out, qb + qw, center=len(out) - 1)


def creation_mpo(coeffs: Sequence[float], spin: int, phys: Sequence[Index] | None = None):
    """MPO of ``sum_p coeffs[p] a+_{p, spin}`` over orbital sites."""
    from .mpo import MpoChain, _assemble
    n = len(coeffs)
    phys = [orbital_index(IN)] * n if phys is None else list(phys)
    q = QNum(1, 1 if spin == 0 else -1)
    first = Index(((ZERO, 1),), OUT)
    mid = Index(((ZERO, 1), (q, 1)) if ZERO < q else ((q, 1), (ZERO, 1)), OUT)
    last = Index(((q, 1),), OUT)
    pos = {ZERO: mid.position(ZERO), q: mid.position(q)}
    tensors = []
    for p in range(n):
        lix = first if p == 0 else mid
        rix = last if p == n - 1 else mid
        li = {ZERO: 0 if p == 0 else pos[ZERO], q: None if p == 0 else pos[q]}
        ri = {ZERO: None if p == n - 1 else pos[ZERO], q: 0 if p == n - 1 else pos[q]}
        ent = {}
        if ri[ZERO] is not None:
            ent[(li[ZERO], ri[ZERO])] = PARITY
        ent[(li[ZERO], ri[q])] = coeffs[p] * local_op(spin, True)
        if li[q] is not None:
            ent[(li[q], ri[q])] = np.eye(4)
        tensors.append(_assemble(ent, lix, rix, phys[p]))
    return MpoChain(tensors, 0.0, [], phys, [[i] for i in range(n)], {})


def slater_mps(orbitals_up: np.ndarray, orbitals_dn: np.ndarray) -> Mps:
    """Determinant built from columns of the given orbital coefficient matrices."""
    n = orbitals_up.shape[0] if orbitals_up.size else orbitals_dn.shape[0]
    mps = product_state([orbital_index(IN)] * n, [0] * n)
    for spin, orbs in ((0, orbitals_up), (1, orbitals_dn)):
        for j in range(orbs.shape[1] if orbs.size else 0):
            mps = apply_mpo(creation_mpo(orbs[:, j], spin), mps)
    return canonicalize(mps, site=0, normalize=True)


def hf_mps(mf, n_up: int | None = None, n_dn: int | None = None) -> Mps:
    """Restricted determinant MPS from a mean-field result."""
    c = mf.orbital_coeffs
    n_up = mf.occupied_count if n_up is None else n_up
    n_dn = mf.occupied_count if n_dn is None else n_dn
    return slater_mps(c[:, :n_up], c[:, :n_dn])


# ---- checkpoints ---------------------------------------------------------------------

def save_mps(mps: Mps, directory, stage: int | None = None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    mps = mps.site_form()
    offsets, blob = [], bytearray()
    for t in mps.tensors:
        offsets.append(len(blob))
        blob += t.to_bytes()
    (d / "tensors.bin").write_bytes(bytes(blob))
    manifest = {"length": len(mps), "flux": [mps.flux.n_particles, mps.flux.two_sz],
                "center": mps.center, "stage": stage, "offsets": offsets}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return d


def load_mps(directory):
    """Returns ``(mps, stage)``."""
    d = Path(directory)
    man = json.loads((d / "manifest.json").read_text())
    data = (d / "tensors.bin").read_bytes()
    tensors = [BlockTensor.from_bytes(data, off)[0] for off in man["offsets"]]
    if len(tensors) != man["length"]:
        raise ShapeMismatch("checkpoint length does not match manifest")
    return Mps(tensors, QNum(*man["flux"]), man["center"]), man["stage"]
