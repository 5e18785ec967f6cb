"""One- and two-site DMRG sweeps, optionally state-averaged over several roots."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch
from .mps import (Mps, canonicalize, left_boundary_env, left_env_step, right_boundary_env,
                  right_env_step)
from .symtensor import BlockTensor, contract, density_truncate, hermitian_eigensolve_lowest

log = logging.getLogger(__name__)

ALGORITHMS = ("one_site", "two_site")


@dataclass(frozen=True)
class SweepStage:
    m: int
    weight_threshold: float = 1e-12
    noise: float = 0.0
    algorithm: str = "two_site"
    davidson_tol: float = 1e-8
    sweeps: int = 1

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("bond cap m must be >= 1")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.sweeps < 1:
            raise ValueError("sweeps must be >= 1")


@dataclass(frozen=True)
class SweepSchedule:
    stages: tuple

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if not self.stages:
            raise ValueError("schedule needs at least one stage")


def default_schedule(m: int, tol: float = 1e-8, weight_threshold: float = 1e-12,
                     max_final_sweeps: int = 20) -> SweepSchedule:
    """Two-site warm-up with decaying noise, then noiseless one-site sweeps."""
    stages = [SweepStage(m, weight_threshold, 1e-4 * 0.1 ** i, "two_site", tol, 1) for i in range(4)]
    stages.append(SweepStage(m, weight_threshold, 1e-8, "one_site", tol, 1))
    stages.append(SweepStage(m, weight_threshold, 0.0, "one_site", tol, max_final_sweeps))
    return SweepSchedule(tuple(stages))


def two_site_schedule(m: int, sweeps: int = 10, tol: float = 1e-8, weight_threshold: float = 0.0,
                      warmup_noise: float = 1e-5) -> SweepSchedule:
    stages = []
    if warmup_noise:
        stages.append(SweepStage(m, weight_threshold, warmup_noise, "two_site", tol, 2))
    stages.append(SweepStage(m, weight_threshold, 0.0, "two_site", tol, sweeps))
    return SweepSchedule(tuple(stages))


@dataclass
class SweepReport:
    energies: list = field(default_factory=list)        # per half-sweep, array of n_roots
    discarded: list = field(default_factory=list)       # per half-sweep maximum
    stage_of_half_sweep: list = field(default_factory=list)
    max_bond: int = 0
    wall_time: float = 0.0
    converged: bool = False

    @property
    def final_energies(self) -> np.ndarray:
        return np.asarray(self.energies[-1])

    @property
    def max_discarded(self) -> float:
        return max(self.discarded, default=0.0)


# ---- effective Hamiltonians -------------------------------------------------------

def apply_one_site(le, w, re, m):
    t = contract(le, m, [(2, 0)])
    t = contract(t, w, [(1, 0), (2, 3)])
    return contract(t, re, [(1, 2), (2, 1)])


def apply_two_site(le, w1, w2, re, theta):
    t = contract(le, theta, [(2, 0)])
    t = contract(t, w1, [(1, 0), (2, 3)])
    t = contract(t, w2, [(3, 0), (1, 3)])
    return contract(t, re, [(1, 2), (3, 1)])


def _env_diag(env) -> dict:
    out = {}
    for (a, w, b), blk in env.blocks.items():
        if a == b:
            out.setdefault(a, []).append((w, np.einsum("awa->aw", blk)))
    return out


def _mpo_diag(w) -> dict:
    out = {}
    for (l, r, o, i), blk in w.blocks.items():
        if o == i:
            out.setdefault(o, []).append((l, r, np.einsum("lroo->lro", blk)))
    return out


def diagonal_one_site(le, w, re, template: BlockTensor) -> BlockTensor:
    ld, wd, rd = _env_diag(le), _mpo_diag(w), _env_diag(re)
    out = template.map_blocks(np.zeros_like)
    for (a, o, b), blk in out.blocks.items():
        rmap = dict(rd.get(b, []))
        for wl, lmat in ld.get(a, []):
            for l, r, wm in wd.get(o, []):
                if l == wl and r in rmap:
                    blk += np.einsum("aw,wvo,bv->aob", lmat, wm, rmap[r], optimize=True)
    return out


def diagonal_two_site(le, w1, w2, re, template: BlockTensor) -> BlockTensor:
    ld, w1d, w2d, rd = _env_diag(le), _mpo_diag(w1), _mpo_diag(w2), _env_diag(re)
    out = template.map_blocks(np.zeros_like)
    for (a, o1, o2, b), blk in out.blocks.items():
        rmap = dict(rd.get(b, []))
        lmap = dict(ld.get(a, []))
        for l1, r1, m1 in w1d.get(o1, []):
            if l1 not in lmap:
                continue
            left = np.einsum("aw,wuo->auo", lmap[l1], m1)
            for l2, r2, m2 in w2d.get(o2, []):
                if l2 == r1 and r2 in rmap:
                    blk += np.einsum("auo,uvp,bv->aopb", left, m2, rmap[r2], optimize=True)
    return out


def _fill(template: BlockTensor, t: BlockTensor) -> BlockTensor:
    out = template.map_blocks(np.zeros_like)
    for k, v in t.blocks.items():
        if k in out.blocks:
            out.blocks[k] = out.blocks[k] + v
    return out


# ---- sweeping state ----------------------------------------------------------------

class _Sweeper:
    def __init__(self, mps: Mps, mpo, n_roots: int):
        if len(mps) != len(mpo.tensors):
            raise ShapeMismatch(f"MPS has {len(mps)} sites but MPO has {len(mpo.tensors)}")
        for t, w in zip(mps.tensors, mpo.tensors):
            if not t.indices[1].same_space(w.indices[3]):
                raise ShapeMismatch("MPS and MPO physical indices differ")
        mps = canonicalize(mps, site=0, normalize=True)
        self.n = len(mps)
        self.mpo = mpo
        self.flux = mps.flux
        self.tensors = list(mps.tensors)
        self.centers = [self.tensors[0]]
        self.n_roots = n_roots
        self.le = [None] * (self.n + 1)
        self.re = [None] * (self.n + 1)
        self.le[0] = left_boundary_env(mps, mps, mpo)
        self.re[self.n] = right_boundary_env(mps, mps, mpo)
        for i in range(self.n - 1, 0, -1):
            self.re[i] = right_env_step(self.re[i + 1], self.tensors[i], mpo.tensors[i], self.tensors[i])
        self.energies = None
        self.max_bond = max([t.indices[2].dim for t in self.tensors] + [1])

    def _solve(self, apply, diag_fn, guesses, tol):
        template = BlockTensor.zeros(guesses[0].indices, guesses[0].flux)
        gs = [_fill(template, g) for g in guesses if g.norm() > 0] or [template.map_blocks(np.ones_like)]
        n_roots = min(self.n_roots, template.size)
        w, vecs = hermitian_eigensolve_lowest(apply, gs[:n_roots] if len(gs) >= n_roots else gs, n_roots, tol,
                                              diag_fn(template))
        self.energies = np.asarray(w) + self.mpo.constant_shift
        return vecs

    def _truncate(self, states, noise_parts, keep, side, stage):
        wt = 1.0 / len(states)
        parts = [(s, wt) for s in states]
        for p in noise_parts:
            nrm = p.norm()
            if nrm > 0 and stage.noise > 0:
                parts.append((p, stage.noise / nrm ** 2))
        iso, spec, disc = density_truncate(parts, keep, stage.m, stage.weight_threshold, side)
        self.max_bond = max(self.max_bond, iso.indices[-1 if side == "left" else 0].dim)
        return iso, disc

    # two-site steps
    def two_site(self, i, direction, stage):
        w1, w2 = self.mpo.tensors[i], self.mpo.tensors[i + 1]
        le, re = self.le[i], self.re[i + 2]
        if direction > 0:
            thetas = [contract(c, self.tensors[i + 1], [(2, 0)]) for c in self.centers]
        else:
            thetas = [contract(self.tensors[i], c, [(2, 0)]) for c in self.centers]
        vecs = self._solve(lambda x: apply_two_site(le, w1, w2, re, x),
                           lambda t: diagonal_two_site(le, w1, w2, re, t), thetas, stage.davidson_tol)
        if direction > 0:
            noise = []
            if stage.noise > 0:
                for v in vecs:
                    t = contract(contract(le, v, [(2, 0)]), w1, [(1, 0), (2, 3)])
                    noise.append(t.transpose([0, 4, 1, 2, 3]))
            u, disc = self._truncate(vecs, noise, [0, 1], "left", stage)
            self.tensors[i] = u
            self.le[i + 1] = left_env_step(le, u, w1, u)
            self.centers = [contract(u.conj(), v, [(0, 0), (1, 1)]) for v in vecs]
            self.tensors[i + 1] = self.centers[0]
        else:
            noise = []
            if stage.noise > 0:
                for v in vecs:
                    t = contract(contract(v, re, [(3, 2)]), w2, [(4, 1), (2, 3)])
                    noise.append(t.transpose([0, 1, 4, 2, 3]))
            vt, disc = self._truncate(vecs, noise, [2, 3], "right", stage)
            self.tensors[i + 1] = vt
            self.re[i + 1] = right_env_step(re, vt, w2, vt)
            self.centers = [contract(v, vt.conj(), [(2, 1), (3, 2)]) for v in vecs]
            self.tensors[i] = self.centers[0]
        return disc

    # one-site steps
    def one_site(self, i, direction, stage):
        w = self.mpo.tensors[i]
        le, re = self.le[i], self.re[i + 1]
        vecs = self._solve(lambda x: apply_one_site(le, w, re, x),
                           lambda t: diagonal_one_site(le, w, re, t), self.centers, stage.davidson_tol)
        if direction > 0 and i < self.n - 1:
            noise = []
            if stage.noise > 0:
                for v in vecs:
                    t = contract(contract(le, v, [(2, 0)]), w, [(1, 0), (2, 3)])
                    noise.append(t.transpose([0, 3, 1, 2]))
            u, disc = self._truncate(vecs, noise, [0, 1], "left", stage)
            self.tensors[i] = u
            self.le[i + 1] = left_env_step(le, u, w, u)
            self.centers = [contract(contract(u.conj(), v, [(0, 0), (1, 1)]), self.tensors[i + 1], [(1, 0)])
                            for v in vecs]
            self.tensors[i + 1] = self.centers[0]
            return disc
        if direction < 0 and i > 0:
            noise = []
            if stage.noise > 0:
                for v in vecs:
                    t = contract(contract(v, re, [(2, 2)]), w, [(3, 1), (1, 3)])
                    noise.append(t.transpose([0, 3, 1, 2]))
            vt, disc = self._truncate(vecs, noise, [1, 2], "right", stage)
            self.tensors[i] = vt
            self.re[i] = right_env_step(re, vt, w, vt)
            self.centers = [contract(self.tensors[i - 1], contract(v, vt.conj(), [(1, 1), (2, 2)]), [(2, 0)])
                            for v in vecs]
            self.tensors[i - 1] = self.centers[0]
            return disc
        self.centers = list(vecs)
        self.tensors[i] = self.centers[0]
        return 0.0

    def half_sweep(self, direction, stage):
        algo = stage.algorithm if self.n > 1 else "one_site"
        disc = 0.0
        if algo == "two_site":
            rng = range(self.n - 1) if direction > 0 else range(self.n - 2, -1, -1)
            for i in rng:
                disc = max(disc, self.two_site(i, direction, stage))
        else:
            rng = range(self.n - 1) if direction > 0 else range(self.n - 1, 0, -1)
            if self.n == 1:
                rng = [0]
            for i in rng:
                disc = max(disc, self.one_site(i, direction, stage))
        return disc

    def states(self, center: int) -> list:
        out = []
        for c in self.centers:
            ts = list(self.tensors)
            ts[center] = c
            out.append(Mps(ts, self.flux, center))
        return out


def dmrg_sweep(mps: Mps, mpo, schedule: SweepSchedule | None = None, n_roots: int = 1):
    """Optimize ``mps`` for the lowest ``n_roots`` eigenstates of ``mpo``.

    Returns ``(state, report)``; ``state`` is an :class:`Mps` for one root or
    a list of MPSs sharing all but the center tensor for several roots.
    """
    schedule = schedule or default_schedule(256)
    start = time.perf_counter()
    sw = _Sweeper(mps, mpo, n_roots)
    report = SweepReport()
    prev = None
    done = False
    for si, stage in enumerate(schedule.stages):
        for _ in range(stage.sweeps):
            for direction in (+1, -1):
                disc = sw.half_sweep(direction, stage)
                report.energies.append(sw.energies.copy())
                report.discarded.append(disc)
                report.stage_of_half_sweep.append(si)
                log.debug("stage %d dir %+d E=%s disc=%.2e", si, direction, sw.energies, disc)
            cur = sw.energies.copy()
            if stage.noise == 0 and prev is not None and np.max(np.abs(cur - prev)) < stage.davidson_tol * 10:
                done = True
                break
            prev = cur
        if done:
            break
    report.converged = done
    report.max_bond = sw.max_bond
    report.wall_time = time.perf_counter() - start
    center = 0
    states = sw.states(center)
    return (states[0] if n_roots == 1 else states), report
