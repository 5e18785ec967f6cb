"""Exact diagonalization in a fixed (N, 2Sz) determinant basis.

Determinants are integers whose bit ``2*i + s`` marks spin-orbital (i, s)
as occupied (s = 0 up, 1 down).  Ascending bit order is the creation order,
the same Jordan-Wigner order the MPO uses, so amplitudes carry over to
MPS coefficients without extra signs.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import combinations
from math import comb

import numpy as np
import scipy.sparse as sp

from .errors import BasisTooLarge, TooLarge
from .symtensor import davidson

MAX_BASIS = 4_000_000
MAX_DENSE_SITES = 10


def _popcount(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint64)
    c = np.zeros(x.shape, dtype=np.int64)
    while np.any(x):
        c += (x & np.uint64(1)).astype(np.int64)
        x >>= np.uint64(1)
    return c


@dataclass(frozen=True)
class DeterminantBasis:
    n_orb: int
    n_up: int
    n_dn: int

    def __post_init__(self):
        if not (0 <= self.n_up <= self.n_orb and 0 <= self.n_dn <= self.n_orb):
            raise ValueError("electron counts outside orbital range")
        if self.size > MAX_BASIS:
            raise BasisTooLarge(f"basis size {self.size} exceeds {MAX_BASIS}")

    @property
    def size(self) -> int:
        return comb(self.n_orb, self.n_up) * comb(self.n_orb, self.n_dn)

    @cached_property
    def patterns(self) -> np.ndarray:
        ups = [sum(1 << (2 * i) for i in c) for c in combinations(range(self.n_orb), self.n_up)]
        dns = [sum(1 << (2 * i + 1) for i in c) for c in combinations(range(self.n_orb), self.n_dn)]
        return np.sort(np.array([u | d for u in ups for d in dns], dtype=np.int64))

    def index_of(self, pattern) -> np.ndarray:
        pats = self.patterns
        pos = np.searchsorted(pats, pattern)
        pos = np.minimum(pos, len(pats) - 1)
        return np.where(pats[pos] == pattern, pos, -1)

    @cached_property
    def excitation_ops(self) -> list:
        """Spin-summed ``E_pq`` as sparse matrices, indexed ``[p * k + q]``."""
        k = self.n_orb
        pats = self.patterns
        n = len(pats)
        mats = []
        for p in range(k):
            for q in range(k):
                rows, cols, vals = [], [], []
                for s in (0, 1):
                    mp, mq = 2 * p + s, 2 * q + s
                    occ_q = (pats >> mq) & 1 == 1
                    src = np.nonzero(occ_q)[0]
                    d = pats[src] ^ (1 << mq)
                    sign = (-1) ** _popcount(d & ((1 << mq) - 1))
                    ok = (d >> mp) & 1 == 0
                    src, d, sign = src[ok], d[ok], sign[ok]
                    sign = sign * (-1) ** _popcount(d & ((1 << mp) - 1))
                    dst = self.index_of(d | (1 << mp))
                    rows.append(dst)
                    cols.append(src)
                    vals.append(sign.astype(float))
                mats.append(sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                          shape=(n, n)))
        return mats


class FciHamiltonian:
    """Matrix-free Hamiltonian over a determinant basis."""

    def __init__(self, ints, basis: DeterminantBasis):
        k = ints.n_orb
        self.ints = ints
        self.basis = basis
        self.h_eff = (ints.h - 0.5 * np.einsum("prrq->pq", ints.v)).reshape(-1)
        self.v_mat = ints.v.reshape(k * k, k * k)
        self.e = basis.excitation_ops
        self._active = [i for i in range(k * k)]

    def matvec(self, c: np.ndarray) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        if c.ndim == 1:
            return self.matvec(c[:, None])[:, 0]
        ec = np.stack([e @ c for e in self.e])  # (k*k, n, ncol)
        t = np.tensordot(self.v_mat, ec, axes=(1, 0))
        out = self.ints.e_core * c
        for pq, e in enumerate(self.e):
            if self.h_eff[pq] != 0.0:
                out = out + self.h_eff[pq] * ec[pq]
            out = out + 0.5 * (e @ t[pq])
        return out

    def diagonal(self) -> np.ndarray:
        n = self.basis.size
        return np.array([self.matvec(np.eye(n, 1, -i).ravel())[i] for i in range(n)]) if n <= 64 else \
            self._diag_fast()

    def _diag_fast(self) -> np.ndarray:
        k = self.ints.n_orb
        pats = self.basis.patterns
        occ = np.stack([((pats >> (2 * i)) & 1) + ((pats >> (2 * i + 1)) & 1) for i in range(k)], axis=1)
        occ_up = np.stack([(pats >> (2 * i)) & 1 for i in range(k)], axis=1).astype(float)
        occ_dn = np.stack([(pats >> (2 * i + 1)) & 1 for i in range(k)], axis=1).astype(float)
        h, v = self.ints.h, self.ints.v
        j = np.einsum("ppqq->pq", v)
        kx = np.einsum("pqqp->pq", v)
        d = occ @ np.diag(h) + 0.5 * np.einsum("np,pq,nq->n", occ.astype(float), j, occ.astype(float))
        d -= 0.5 * (np.einsum("np,pq,nq->n", occ_up, kx, occ_up) + np.einsum("np,pq,nq->n", occ_dn, kx, occ_dn))
        return d + self.ints.e_core

    def dense(self) -> np.ndarray:
        n = self.basis.size
        if n > 6000:
            raise TooLarge(f"dense FCI matrix of size {n}")
        return self.matvec(np.eye(n))


def fci_hamiltonian(ints, n_up: int | None = None, n_dn: int | None = None) -> np.ndarray:
    n_up = ints.n_up if n_up is None else n_up
    n_dn = ints.n_dn if n_dn is None else n_dn
    return FciHamiltonian(ints, DeterminantBasis(ints.n_orb, n_up, n_dn)).dense()


def fci_solve(ints, n_up: int | None = None, n_dn: int | None = None, n_roots: int = 1,
              tol: float = 1e-10):
    """Lowest ``n_roots`` energies and vectors; returns ``(energies, vectors, basis)``.

    ``vectors[:, i]`` is root ``i`` in ``basis.patterns`` order.
    """
    n_up = ints.n_up if n_up is None else n_up
    n_dn = ints.n_dn if n_dn is None else n_dn
    basis = DeterminantBasis(ints.n_orb, n_up, n_dn)
    ham = FciHamiltonian(ints, basis)
    n = basis.size
    n_roots = min(n_roots, n)
    if n <= 400:
        w, v = np.linalg.eigh(ham.dense())
        return w[:n_roots], v[:, :n_roots], basis
    diag = ham._diag_fast()
    guess = np.zeros((n, n_roots))
    for i, j in enumerate(np.argsort(diag, kind="stable")[:n_roots]):
        guess[j, i] = 1.0
    w, v = davidson(ham.matvec, n, n_roots, guess, diag, tol=tol, max_iterations=1000)
    return w, v, basis


def basis_to_full_index(basis: DeterminantBasis) -> np.ndarray:
    """Dense 4^k position of each determinant (site 0 most significant)."""
    k = basis.n_orb
    pats = basis.patterns
    idx = np.zeros(len(pats), dtype=np.int64)
    for i in range(k):
        up = (pats >> (2 * i)) & 1
        dn = (pats >> (2 * i + 1)) & 1
        local = np.where(up == 1, np.where(dn == 1, 3, 2), np.where(dn == 1, 1, 0))
        idx = idx * 4 + local
    return idx


def embed_vector(basis: DeterminantBasis, c: np.ndarray) -> np.ndarray:
    if basis.n_orb > MAX_DENSE_SITES:
        raise TooLarge(f"dense vector for {basis.n_orb} sites")
    out = np.zeros(4 ** basis.n_orb)
    out[basis_to_full_index(basis)] = c
    return out


def restrict_vector(basis: DeterminantBasis, full: np.ndarray) -> np.ndarray:
    return np.asarray(full)[basis_to_full_index(basis)]


def dense_overlap(vector: np.ndarray, mps, basis: DeterminantBasis | None = None) -> float:
    """``<vector|mps>``; ``vector`` is full (4^k) or in ``basis`` order."""
    from .mps import mps_to_dense
    full = mps_to_dense(mps)
    if basis is not None:
        return float(np.dot(vector, restrict_vector(basis, full)))
    return float(np.dot(vector, full))
