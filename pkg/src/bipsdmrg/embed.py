"""Fragment partitions, one-shot bath construction and embedded Hamiltonians."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import NonIntegerElectronCount, NonSymmetricRdm
from .hamio import Integrals, coulomb_exchange

SV_CUTOFF = 1e-8
_LINE = re.compile(r"^\s*fragment\s+(\S+)\s*:\s*(.*)$", re.IGNORECASE)


@dataclass(frozen=True)
class FragmentPartition:
    """Disjoint orbital lists covering ``0..k-1``; list order is the chain order."""

    fragments: tuple
    ids: tuple = ()

    def __post_init__(self):
        frags = tuple(tuple(int(i) for i in f) for f in self.fragments)
        object.__setattr__(self, "fragments", frags)
        if not self.ids:
            object.__setattr__(self, "ids", tuple(range(len(frags))))
        if len(self.ids) != len(frags) or len(set(self.ids)) != len(self.ids):
            raise ValueError("fragment ids must be unique, one per fragment")
        if not frags or any(len(f) == 0 for f in frags):
            raise ValueError("fragments must be nonempty")
        flat = [i for f in frags for i in f]
        if sorted(flat) != list(range(len(flat))):
            raise ValueError("fragments must be disjoint and cover 0..k-1")

    @property
    def n_orb(self) -> int:
        return sum(len(f) for f in self.fragments)

    @property
    def sizes(self) -> list:
        return [len(f) for f in self.fragments]

    @property
    def order(self) -> list:
        """Parent orbital order of the concatenated fragments."""
        return [i for f in self.fragments for i in f]

    @classmethod
    def contiguous(cls, sizes) -> "FragmentPartition":
        out, start = [], 0
        for s in sizes:
            out.append(tuple(range(start, start + s)))
            start += s
        return cls(tuple(out))


def parse_fragment_file(text: str) -> FragmentPartition:
    frags, ids = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        m = _LINE.match(s)
        if not m:
            raise ValueError(f"line {lineno}: expected 'fragment <id>: <orbitals>'")
        ids.append(m.group(1))
        frags.append(tuple(int(x) for x in m.group(2).split()))
    return FragmentPartition(tuple(frags), tuple(ids))


def read_fragment_file(path) -> FragmentPartition:
    with open(path) as fh:
        return parse_fragment_file(fh.read())


def format_fragment_file(part: FragmentPartition) -> str:
    return "".join(f"fragment {fid}: {' '.join(str(i) for i in f)}\n" for fid, f in zip(part.ids, part.fragments))


@dataclass
class EmbeddingSpace:
    fragment_id: int
    fragment_orbitals: tuple
    rotation: np.ndarray          # k x (k_I + n_bath)
    n_bath: int
    core_orbitals: np.ndarray     # k x n_core
    virtual_orbitals: np.ndarray  # k x n_virt
    entanglement_spectrum: np.ndarray
    environment_occupations: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_model(self) -> int:
        return self.rotation.shape[1]


def _fix_sign(vecs: np.ndarray) -> np.ndarray:
    out = vecs.copy()
    for j in range(out.shape[1]):
        nz = np.nonzero(np.abs(out[:, j]) > 1e-12)[0]
        if len(nz) and out[nz[0], j] < 0:
            out[:, j] *= -1
    return out


def _order_columns(values: np.ndarray, vecs: np.ndarray, tol: float = 1e-12):
    """Descending by value; near-equal values ordered lexicographically by vector."""
    idx = list(range(len(values)))
    idx.sort(key=lambda j: -values[j])
    groups, cur = [], [idx[0]] if idx else []
    for j in idx[1:]:
        if abs(values[j] - values[cur[-1]]) <= tol:
            cur.append(j)
        else:
            groups.append(cur)
            cur = [j]
    if cur:
        groups.append(cur)
    order = []
    for g in groups:
        order.extend(sorted(g, key=lambda j: tuple(np.round(-vecs[:, j], 12))))
    return np.asarray(order, dtype=int)


def build_bath(rdm1: np.ndarray, part: FragmentPartition, fragment_id: int,
               sv_cutoff: float = SV_CUTOFF) -> EmbeddingSpace:
    """Bath from the SVD of the fragment-environment block of the 1-RDM."""
    p = np.asarray(rdm1, dtype=float)
    k = p.shape[0]
    if np.max(np.abs(p - p.T), initial=0.0) > 1e-10:
        raise NonSymmetricRdm("1-RDM is not symmetric")
    if not 0 <= fragment_id < len(part.fragments):
        raise IndexError(f"fragment {fragment_id} out of range")
    frag = list(part.fragments[fragment_id])
    env = [i for i in range(k) if i not in set(frag)]
    kf = len(frag)
    if env:
        _, s, vt = np.linalg.svd(p[np.ix_(frag, env)], full_matrices=True)
    else:
        s, vt = np.zeros(0), np.zeros((0, 0))
    spectrum = s.copy()
    n_bath = int(np.sum(s > sv_cutoff))
    bath_env = _fix_sign(vt[:n_bath].T) if n_bath else np.zeros((len(env), 0))
    if n_bath:
        order = _order_columns(s[:n_bath], bath_env)
        bath_env = bath_env[:, order]
    rot = np.zeros((k, kf + n_bath))
    for j, i in enumerate(frag):
        rot[i, j] = 1.0
    rot[env, kf:] = bath_env
    # remaining environment: diagonalize P on the orthogonal complement of the bath
    comp = scipy.linalg.null_space(bath_env.T) if n_bath else np.eye(len(env))
    if comp.shape[1]:
        pe = comp.T @ p[np.ix_(env, env)] @ comp
        occ, u = np.linalg.eigh(0.5 * (pe + pe.T))
        occ = occ[::-1]
        u = _fix_sign(comp @ u[:, ::-1])
    else:
        occ, u = np.zeros(0), np.zeros((len(env), 0))
    full = np.zeros((k, u.shape[1]))
    full[env] = u
    core = full[:, occ > 1.0]
    virt = full[:, occ <= 1.0]
    return EmbeddingSpace(fragment_id, tuple(frag), rot, n_bath, core, virt, spectrum, occ)


@dataclass
class EmbeddedProblem:
    integrals: Integrals
    n_elec_model: int
    space: EmbeddingSpace

    @property
    def fragment_orbitals(self) -> tuple:
        return self.space.fragment_orbitals

    @property
    def n_fragment(self) -> int:
        return len(self.space.fragment_orbitals)


def core_density(space: EmbeddingSpace) -> np.ndarray:
    c = space.core_orbitals
    return 2.0 * c @ c.T


def build_embedded_problem(ints: Integrals, space: EmbeddingSpace, rdm1: np.ndarray) -> EmbeddedProblem:
    """Project the parent Hamiltonian onto fragment + bath with a frozen core."""
    r = space.rotation
    pc = core_density(space)
    j, kx = coulomb_exchange(ints.v, pc)
    veff = j - 0.5 * kx
    h_eff = r.T @ (ints.h + veff) @ r
    h_eff = 0.5 * (h_eff + h_eff.T)
    e_core = ints.e_core + float(np.sum(pc * ints.h) + 0.5 * np.sum(pc * veff))
    v = np.einsum("pqrs,pi->iqrs", ints.v, r, optimize=True)
    v = np.einsum("iqrs,qj->ijrs", v, r, optimize=True)
    v = np.einsum("ijrs,rk->ijks", v, r, optimize=True)
    v = np.einsum("ijks,sl->ijkl", v, r, optimize=True)
    n_model = float(np.trace(r.T @ rdm1 @ r))
    n_int = int(round(n_model))
    if abs(n_model - n_int) > 1e-6:
        raise NonIntegerElectronCount(f"model-space electron count {n_model:.8f} is not an integer")
    two_sz = ints.two_sz_target if abs(ints.two_sz_target) <= n_int else 0
    model = Integrals(h_eff, v, e_core, n_int, two_sz)
    return EmbeddedProblem(model, n_int, space)


def embed_all(ints: Integrals, part: FragmentPartition, rdm1: np.ndarray, sv_cutoff: float = SV_CUTOFF) -> list:
    return [build_embedded_problem(ints, build_bath(rdm1, part, i, sv_cutoff), rdm1)
            for i in range(len(part.fragments))]
