"""Integrals, FCIDUMP input/output, lattice models and restricted Hartree-Fock."""

from __future__ import annotations

import io
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import (DuplicateConflict, IndexOutOfRange, MalformedHeader, ScfNoConvergence)

_SYM8 = ((0, 1, 2, 3), (1, 0, 2, 3), (0, 1, 3, 2), (1, 0, 3, 2),
         (2, 3, 0, 1), (3, 2, 0, 1), (2, 3, 1, 0), (3, 2, 1, 0))


@dataclass
class Integrals:
    """Orbital-basis Hamiltonian in chemist notation.

    ``v[p, q, r, s] = (pq|rs)``; ``h`` is the one-electron matrix and
    ``e_core`` a constant.  ``n_elec`` and ``two_sz_target`` give the
    target sector.
    """

    h: np.ndarray
    v: np.ndarray
    e_core: float = 0.0
    n_elec: int = 0
    two_sz_target: int = 0
    orbsym: list = field(default_factory=list)

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        k = self.h.shape[0]
        if self.h.shape != (k, k) or self.v.shape != (k, k, k, k):
            raise ValueError("h must be k x k and v must be k^4")
        if not 0 <= self.n_elec <= 2 * k:
            raise ValueError(f"n_elec={self.n_elec} outside [0, {2 * k}]")
        if abs(self.two_sz_target) > self.n_elec or (self.n_elec - self.two_sz_target) % 2:
            raise ValueError("two_sz_target incompatible with n_elec")

    @property
    def n_orb(self) -> int:
        return self.h.shape[0]

    @property
    def n_up(self) -> int:
        return (self.n_elec + self.two_sz_target) // 2

    @property
    def n_dn(self) -> int:
        return (self.n_elec - self.two_sz_target) // 2

    def check_symmetry(self, tol: float = 1e-12) -> bool:
        if np.max(np.abs(self.h - self.h.T), initial=0.0) > tol:
            return False
        return all(np.max(np.abs(self.v - self.v.transpose(p)), initial=0.0) <= tol for p in _SYM8)

    def permuted(self, order) -> "Integrals":
        """Integrals with orbitals relabelled so new orbital i is old ``order[i]``."""
        o = np.asarray(order)
        return Integrals(self.h[np.ix_(o, o)], self.v[np.ix_(o, o, o, o)], self.e_core,
                         self.n_elec, self.two_sz_target)

    def rotated(self, c: np.ndarray) -> "Integrals":
        """Integrals in the orbitals given by the columns of ``c``."""
        h = c.T @ self.h @ c
        v = np.einsum("pqrs,pi,qj,rk,sl->ijkl", self.v, c, c, c, c, optimize=True)
        return Integrals(h, v, self.e_core, self.n_elec, self.two_sz_target)


# ---- FCIDUMP ---------------------------------------------------------------

_HEADER_END = re.compile(r"(&END|/)\s*$", re.IGNORECASE | re.MULTILINE)


def parse_fcidump(stream) -> Integrals:
    """Read a Molpro-style FCIDUMP (1-based indices, chemist notation)."""
    text = stream.read() if hasattr(stream, "read") else str(stream)
    m = re.search(r"&FCI\b", text, re.IGNORECASE)
    if not m:
        raise MalformedHeader("missing &FCI namelist")
    end = _HEADER_END.search(text, m.end())
    if not end:
        raise MalformedHeader("namelist not terminated by &END or /")
    header = text[m.end():end.start()]
    body = text[end.end():]
    fields = {}
    keys = list(re.finditer(r"([A-Za-z_][A-Za-z0-9_]*)\s*=", header))
    for key, nxt in zip(keys, keys[1:] + [None]):
        val = header[key.end():nxt.start() if nxt else len(header)]
        fields[key.group(1).upper()] = val.strip().strip(",").strip()
    try:
        norb = int(fields["NORB"])
        nelec = int(fields["NELEC"])
        ms2 = int(fields.get("MS2", "0"))
    except (KeyError, ValueError) as exc:
        raise MalformedHeader(f"bad or missing NORB/NELEC/MS2: {exc}") from None
    orbsym = [int(x) for x in re.findall(r"-?\d+", fields.get("ORBSYM", ""))]
    h = np.zeros((norb, norb))
    v = np.zeros((norb,) * 4)
    seen_h, seen_v = {}, {}
    e_core = 0.0
    for lineno, line in enumerate(body.splitlines()):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 5:
            raise MalformedHeader(f"integral line {lineno + 1} must have 5 fields: {line!r}")
        val = float(parts[0].replace("D", "E").replace("d", "e"))
        i, j, k, l = (int(x) for x in parts[1:])
        for x in (i, j, k, l):
            if not 0 <= x <= norb:
                raise IndexOutOfRange(f"index {x} outside 0..{norb} in line {line!r}")
        if i == j == k == l == 0:
            e_core = val
        elif k == 0 and l == 0:
            if i == 0 or j == 0:
                raise IndexOutOfRange(f"one-electron line with zero index: {line!r}")
            key = (min(i, j), max(i, j))
            if key in seen_h and abs(seen_h[key] - val) > 1e-10:
                raise DuplicateConflict(f"conflicting values for h{key}")
            seen_h[key] = val
            h[i - 1, j - 1] = h[j - 1, i - 1] = val
        else:
            if 0 in (i, j, k, l):
                raise IndexOutOfRange(f"two-electron line with zero index: {line!r}")
            idx = (i - 1, j - 1, k - 1, l - 1)
            key = min(tuple(idx[p] for p in perm) for perm in _SYM8)
            if key in seen_v and abs(seen_v[key] - val) > 1e-10:
                raise DuplicateConflict(f"conflicting values for (ij|kl) {key}")
            seen_v[key] = val
            for perm in _SYM8:
                v[tuple(idx[p] for p in perm)] = val
    return Integrals(h, v, e_core, nelec, ms2, orbsym)


def write_fcidump(ints: Integrals, stream=None, tol: float = 0.0) -> str:
    """Write unique integrals (|value| > tol) in FCIDUMP format; returns the text."""
    k = ints.n_orb
    orbsym = ints.orbsym or [1] * k
    lines = [f"&FCI NORB={k},NELEC={ints.n_elec},MS2={ints.two_sz_target},",
             "  ORBSYM=" + ",".join(str(s) for s in orbsym) + ",", "  ISYM=1,", "&END"]
    for i in range(k):
        for j in range(i + 1):
            for kk in range(k):
                for l in range(kk + 1):
                    if i * (i + 1) // 2 + j < kk * (kk + 1) // 2 + l:
                        continue
                    val = ints.v[i, j, kk, l]
                    if abs(val) > tol:
                        lines.append(f"{float(val)!r:>24} {i + 1:4d} {j + 1:4d} {kk + 1:4d} {l + 1:4d}")
    for i in range(k):
        for j in range(i + 1):
            if abs(ints.h[i, j]) > tol:
                lines.append(f"{float(ints.h[i, j])!r:>24} {i + 1:4d} {j + 1:4d} {0:4d} {0:4d}")
    lines.append(f"{float(ints.e_core)!r:>24} {0:4d} {0:4d} {0:4d} {0:4d}")
    text = "\n".join(lines) + "\n"
    if stream is not None:
        stream.write(text)
    return text


def read_fcidump(path) -> Integrals:
    with open(path) as fh:
        return parse_fcidump(fh)


# ---- lattice models ----------------------------------------------------------

def build_hubbard(n_sites: int, t_pattern, u: float, n_elec: int | None = None,
                  two_sz: int = 0) -> Integrals:
    """Open Hubbard chain: ``h[i, i+1] = -t_pattern[i]``, ``(ii|ii) = u``.

    ``n_elec`` defaults to half filling.
    """
    t_pattern = list(t_pattern)
    if n_sites < 1 or len(t_pattern) != n_sites - 1:
        raise ValueError(f"t_pattern needs {n_sites - 1} entries for {n_sites} sites")
    h = np.zeros((n_sites, n_sites))
    for i, t in enumerate(t_pattern):
        h[i, i + 1] = h[i + 1, i] = -t
    v = np.zeros((n_sites,) * 4)
    for i in range(n_sites):
        v[i, i, i, i] = u
    return Integrals(h, v, 0.0, n_sites if n_elec is None else n_elec, two_sz)


def dimerized_hubbard(n_sites: int, t_intra: float, t_inter: float, u: float, **kw) -> Integrals:
    """Hubbard chain alternating intra-dimer and inter-dimer hoppings."""
    pattern = [t_intra if i % 2 == 0 else t_inter for i in range(n_sites - 1)]
    return build_hubbard(n_sites, pattern, u, **kw)


# ---- restricted Hartree-Fock -------------------------------------------------

@dataclass
class MeanFieldResult:
    orbital_coeffs: np.ndarray
    occupied_count: int
    energy: float
    rdm1: np.ndarray
    orbital_energies: np.ndarray
    iterations: int = 0

    @property
    def fock_eigenvalues(self) -> np.ndarray:
        return self.orbital_energies


def coulomb_exchange(v: np.ndarray, p: np.ndarray):
    j = np.einsum("pqrs,rs->pq", v, p, optimize=True)
    k = np.einsum("prqs,rs->pq", v, p, optimize=True)
    return j, k


def rhf_energy(ints: Integrals, p: np.ndarray) -> float:
    j, k = coulomb_exchange(ints.v, p)
    return float(np.sum(p * ints.h) + 0.5 * np.sum(p * (j - 0.5 * k)) + ints.e_core)


def _density(c, nocc):
    return 2.0 * c[:, :nocc] @ c[:, :nocc].T


def restricted_hartree_fock(ints: Integrals, max_cycles: int = 200, conv_tol: float = 1e-10,
                            diis_space: int = 8) -> MeanFieldResult:
    """Closed-shell SCF with DIIS extrapolation in an orthonormal basis."""
    if ints.n_elec % 2:
        raise ValueError("restricted HF needs an even electron count")
    nocc = ints.n_elec // 2
    eps, c = np.linalg.eigh(ints.h)
    p = _density(c, nocc)
    focks, errs = [], []
    err_norm = np.inf
    for it in range(1, max_cycles + 1):
        j, k = coulomb_exchange(ints.v, p)
        f = ints.h + j - 0.5 * k
        err = f @ p - p @ f
        err_norm = float(np.max(np.abs(err), initial=0.0))
        if err_norm < conv_tol:
            eps, c = np.linalg.eigh(f)
            p = _density(c, nocc)
            return MeanFieldResult(c, nocc, rhf_energy(ints, p), p, eps, it)
        focks.append(f)
        errs.append(err)
        if len(focks) > diis_space:
            focks.pop(0)
            errs.pop(0)
        f_use = f
        if len(focks) > 1:
            n = len(focks)
            b = -np.ones((n + 1, n + 1))
            b[n, n] = 0.0
            for a in range(n):
                for bb in range(n):
                    b[a, bb] = np.sum(errs[a] * errs[bb])
            rhs = np.zeros(n + 1)
            rhs[n] = -1.0
            try:
                coef = np.linalg.solve(b, rhs)[:n]
                f_use = sum(ci * fi for ci, fi in zip(coef, focks))
            except np.linalg.LinAlgError:
                f_use = f
        eps, c = np.linalg.eigh(f_use)
        p = _density(c, nocc)
    raise ScfNoConvergence(max_cycles, err_norm)


def hf_occupations(mf: MeanFieldResult) -> list:
    return list(range(mf.occupied_count))


def to_text(ints: Integrals) -> str:
    buf = io.StringIO()
    write_fcidump(ints, buf)
    return buf.getvalue()


from .mpo import build_hamiltonian_mpo  # noqa: E402  (MPO construction lives with the MPO builder)
