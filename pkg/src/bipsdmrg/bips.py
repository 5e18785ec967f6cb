"""Renormalized local bases, the cluster MPO and DMRG over cluster sites."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .dmrg import SweepSchedule, SweepStage, dmrg_sweep
from .errors import EmptyBasis, OrderMismatch, UnreachableSector, ZeroNorm
from .fermion import block_factors, factor_matrix
from .mpo import MpoChain, build_block_mpo
from .mps import Mps, canonicalize, expectation, product_state, random_mps, reachable_sectors
from .symtensor import IN, OUT, ZERO, BlockTensor, Index, QNum, contract, density_truncate


@dataclass
class LocalBasisSet:
    """Left-normalized MPS segment whose open right bond enumerates local states.

    The dense position of a state on that bond is its index on the cluster
    site; sectors follow QNum order with weights descending inside each.
    """

    fragment_id: int
    tensors: list
    weights: list                 # [(QNum, descending array)]
    fragment_orbitals: tuple = ()
    discarded_weight: float = 0.0

    @property
    def n_state(self) -> int:
        return self.tensors[-1].indices[2].dim

    @property
    def n_sites(self) -> int:
        return len(self.tensors)

    @property
    def phys_index(self) -> Index:
        return self.tensors[-1].indices[2].dual()

    @property
    def labels(self) -> list:
        return self.tensors[-1].indices[2].dense_qnums()

    @property
    def lambdas(self) -> np.ndarray:
        return np.concatenate([w for _, w in self.weights]) if self.weights else np.zeros(0)

    @cached_property
    def dense_tensors(self) -> list:
        return [t.to_dense() for t in self.tensors]

    @cached_property
    def segment_cache(self) -> dict:
        """Operator environments keyed by per-site factor prefixes."""
        return {}

    def state_matrix(self) -> np.ndarray:
        """Dense ``(4**n_sites, n_state)`` matrix of the local states."""
        acc = self.tensors[0].to_dense()[0]
        for t in self.tensors[1:]:
            acc = np.tensordot(acc, t.to_dense(), axes=(1, 0)).reshape(-1, t.indices[2].dim)
        return acc

    def gram(self) -> np.ndarray:
        u = self.state_matrix()
        return u.T @ u


def neutral_first(n_avg: float):
    """Sector tie-break key: closest to the mean electron count, then low |2Sz|."""
    # rounded so that a mean of 2 +- 1e-15 still treats N = 1 and N = 3 alike
    return lambda q: (round(abs(q.n_particles - n_avg), 6), abs(q.two_sz), q.n_particles, q.two_sz)


def extract_local_basis(solution, n_fragment: int, n_state: int, weight_threshold: float = 1e-12,
                        fragment_id: int = 0, fragment_orbitals=()) -> LocalBasisSet:
    """Local states of the first ``n_fragment`` sites of a model-space solution.

    ``solution`` is an :class:`Mps` or a list of MPSs sharing all but the
    center tensor (state-averaged, equal weights).  The kept states
    diagonalize the fragment's reduced density matrix.
    """
    states = solution if isinstance(solution, (list, tuple)) else [solution]
    if n_state < 1:
        raise EmptyBasis("n_state must be at least 1")
    if not 1 <= n_fragment <= len(states[0]):
        raise ValueError("fragment size outside the model chain")
    norms = [s.norm() for s in states]
    if min(norms) == 0.0:
        raise ZeroNorm("model solution has zero norm")
    # common left basis of all roots: sites 0..n_fragment-2 keep their full support
    centered = []
    for s in states:
        c = canonicalize(s, site=0)
        centered.append((c.tensors, c.tensors[0] / c.tensors[0].norm()))
    thetas = [c for _, c in centered]
    rights = [ts for ts, _ in centered]
    inner_thr = -1.0 if weight_threshold < 0 else 0.0
    left = []
    for i in range(n_fragment - 1):
        u, _, _ = density_truncate([(t, 1.0 / len(thetas)) for t in thetas], [0, 1], None, inner_thr, "left")
        left.append(u)
        thetas = [contract(contract(u.conj(), t, [(0, 0), (1, 1)]), r[i + 1], [(1, 0)])
                  for t, r in zip(thetas, rights)]
    rho_parts = [(t, 1.0 / len(thetas)) for t in thetas]
    _, full_spec, _ = density_truncate(rho_parts, [0, 1], None, -1.0, "left")
    tot = sum(float(np.sum(ev)) for _, ev in full_spec)
    n_avg = sum(float(np.sum(ev)) * q.n_particles for q, ev in full_spec) / tot
    u, spec, disc = density_truncate(rho_parts, [0, 1], n_state, weight_threshold, "left",
                                     sector_order=neutral_first(n_avg))
    left.append(u)
    weights = [(q, ev / tot) for q, ev in spec]
    return LocalBasisSet(fragment_id, left, weights, tuple(fragment_orbitals), disc / tot)


# ---- cluster MPO ----------------------------------------------------------------------

def _check_layout(parent: MpoChain, bases) -> list:
    blocks, start = [], 0
    for b in bases:
        blocks.append(list(range(start, start + b.n_sites)))
        start += b.n_sites
    if start != len(parent.tensors):
        raise OrderMismatch(f"bases cover {start} sites, parent chain has {len(parent.tensors)}")
    if parent.order and all(b.fragment_orbitals for b in bases):
        flat = [o for b in bases for o in b.fragment_orbitals]
        if flat != list(parent.order):
            raise OrderMismatch("basis fragments are not contiguous in the parent orbital order")
    return blocks


def _sandwich(block_ws, basis: LocalBasisSet) -> BlockTensor:
    """``<alpha*| W_s ... W_e |alpha>`` with the outer MPO links left open."""
    e = None
    for w, a in zip(block_ws, basis.tensors):
        if e is None:
            t = contract(a, w, [(1, 3)])                        # (a, b, bl, br, o)
            e = contract(a.conj(), t, [(0, 0), (1, 4)])         # (b*, b, bl, br)
            continue
        t = contract(e, a, [(1, 0)])                            # (b*, bl, w, s, b')
        t = contract(t, w, [(2, 0), (3, 3)])                    # (b*, bl, b', wr, o)
        t = contract(a.conj(), t, [(0, 0), (1, 4)])             # (b*', bl, b', wr)
        e = t.transpose([0, 2, 1, 3])
    return e.transpose([2, 3, 0, 1])


def _segment_operator(basis: LocalBasisSet, factors) -> np.ndarray:
    """Local-basis matrix of a product of per-site 4x4 factors.

    Environments are cached by factor prefix; strings that agree on their
    first sites share that part of the contraction.
    """
    cache = basis.segment_cache
    env, start = np.ones((1, 1)), 0
    for n in range(len(factors), 0, -1):
        hit = cache.get(factors[:n])
        if hit is not None:
            env, start = hit, n
            break
    for i in range(start, len(factors)):
        a = basis.dense_tensors[i]
        left = np.tensordot(env, a, axes=(0, 0))                                # (y, s, X)
        af = np.tensordot(factor_matrix(factors[i]), a, axes=(1, 1))            # (s, y, Y)
        env = np.tensordot(left, af, axes=([0, 1], [1, 0]))                     # (X, Y)
        cache[factors[:i + 1]] = env
    return env


def build_cluster_mpo(parent: MpoChain, bases, method: str = "deferred_integrals") -> MpoChain:
    """MPO over cluster sites whose physical states are the local bases."""
    blocks = _check_layout(parent, bases)
    phys = [b.phys_index for b in bases]
    if method == "direct":
        tensors = [_sandwich(parent.tensors[blk[0]:blk[-1] + 1], b) for blk, b in zip(blocks, bases)]
        labels = [parent.link_labels[0]] + [parent.link_labels[blk[-1] + 1] for blk in blocks] \
            if parent.link_labels else []
        return MpoChain(tensors, parent.constant_shift, labels, phys, blocks, parent.terms, list(parent.order))
    if method != "deferred_integrals":
        raise ValueError(f"unknown cMPO method {method!r}")
    if not parent.terms:
        return build_cluster_mpo(parent, bases, "direct")

    def provider(i, inside, after):
        return _segment_operator(bases[i], block_factors(inside, blocks[i], after))

    mpo = build_block_mpo(parent.terms, blocks, phys, provider, len(parent.tensors), parent.constant_shift)
    mpo.order = list(parent.order)
    return mpo


# ---- cluster DMRG ------------------------------------------------------------------------

def cluster_schedule(m: int, tol: float = 1e-8, weight_threshold: float = 1e-12,
                     algorithm: str = "one_site", final_sweeps: int = 20) -> SweepSchedule:
    """Noisy warm-up then noiseless sweeps, one-site with subspace expansion by default.

    Each noise level runs two full sweeps: one-site expansion adds one
    inter-fragment hop per pass, and states two hops away are otherwise
    never offered before the noiseless stage freezes the bond sectors.
    """
    stages = [SweepStage(m, weight_threshold, 1e-4 * 0.1 ** i, algorithm, tol, 2) for i in range(4)]
    stages.append(SweepStage(m, weight_threshold, 0.0, algorithm, tol, final_sweeps))
    return SweepSchedule(tuple(stages))


def check_reachable(phys, flux: QNum):
    secs = reachable_sectors(phys, flux)
    if secs[-1]:
        return
    totals = {ZERO}
    for ix in phys:
        totals = {a + b for a in totals for b in ix.qnums}
    nearest = sorted(totals, key=lambda q: (abs(q.n_particles - flux.n_particles) + abs(q.two_sz - flux.two_sz),
                                            q))
    d0 = abs(nearest[0].n_particles - flux.n_particles) + abs(nearest[0].two_sz - flux.two_sz)
    raise UnreachableSector(flux, [q for q in nearest
                                   if abs(q.n_particles - flux.n_particles) + abs(q.two_sz - flux.two_sz) == d0])


def low_energy_product(cmpo: MpoChain, flux: QNum, per_site: int = 4, max_candidates: int = 256) -> Mps:
    """Best product of local states (by energy) among the lowest diagonal elements per site."""
    phys = cmpo.phys
    ranked = []
    for i, ix in enumerate(phys):
        diag = np.array([_local_diag(cmpo, i, j) for j in range(ix.dim)])
        ranked.append(list(np.argsort(diag, kind="stable")[:max(per_site, 1)]))
    qn = [ix.dense_qnums() for ix in phys]
    best, best_e = None, np.inf
    secs = reachable_sectors(phys, flux)
    beams = [((), ZERO)]
    for i in range(len(phys)):
        allowed = set(secs[i + 1])
        beams = [(c + (j,), q + qn[i][j]) for c, q in beams for j in ranked[i] if q + qn[i][j] in allowed]
        beams = beams[:max_candidates]
    for combo, _ in beams:
        st = product_state(phys, list(combo))
        e = expectation(st, cmpo, st)
        if e < best_e - 1e-12:
            best, best_e = st, e
    if best is None:
        # ranking too narrow: fall back to any reachable product
        combo, q = [], ZERO
        for i in range(len(phys)):
            for j, qq in enumerate(qn[i]):
                if q + qq in set(secs[i + 1]):
                    combo.append(j)
                    q = q + qq
                    break
        best = product_state(phys, combo)
    return best


def _local_diag(cmpo: MpoChain, site: int, state: int) -> float:
    """Diagonal element of the single-site part of the cMPO (I -> H channel)."""
    labels = cmpo.link_labels
    if not labels or "I" not in labels[site] or "H" not in labels[site + 1]:
        return 0.0
    dense = cmpo.tensors[site].to_dense()
    return float(dense[labels[site].index("I"), labels[site + 1].index("H"), state, state])


def cluster_dmrg(cmpo: MpoChain, flux: QNum, schedule: SweepSchedule | None = None, n_roots: int = 1,
                 init: str = "low_energy_products", m: int = 64, rng=None):
    """DMRG over cluster sites; returns ``(state(s), report)``."""
    check_reachable(cmpo.phys, flux)
    schedule = schedule or cluster_schedule(m)
    if init == "random_qn":
        start = random_mps(cmpo.phys, flux, max(1, min(schedule.stages[0].m, 4)), rng=rng)
    elif init == "low_energy_products":
        start = low_energy_product(cmpo, flux)
    else:
        raise ValueError(f"unknown init {init!r}")
    return dmrg_sweep(start, cmpo, schedule, n_roots)


def cluster_to_dense(vector: np.ndarray, bases) -> np.ndarray:
    """Expand a dense cluster-basis vector into the orbital-space dense vector."""
    c = np.asarray(vector).reshape([b.n_state for b in bases])
    for axis, b in enumerate(bases):
        c = np.moveaxis(np.tensordot(c, b.state_matrix(), axes=([axis], [1])), -1, axis)
    return c.reshape(-1)
