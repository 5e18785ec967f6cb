"""Important product states of a cluster MPS and effective Hamiltonians between them."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import InvalidLabel, ThresholdOutOfRange, ZeroNorm
from .mps import Mps, canonicalize, expectation, mps_to_dense, product_state
from .symtensor import ZERO, QNum

DEFAULT_THRESHOLD = 0.1


@dataclass(frozen=True, order=True)
class BipsLabel:
    """One local-state index per cluster site, with the sector of each."""

    indices: tuple
    qnums: tuple

    @classmethod
    def from_indices(cls, phys, indices) -> "BipsLabel":
        indices = tuple(int(i) for i in indices)
        if len(indices) != len(phys):
            raise InvalidLabel(f"label has {len(indices)} entries for {len(phys)} cluster sites")
        qn = []
        for site, (ix, j) in enumerate(zip(phys, indices)):
            if not 0 <= j < ix.dim:
                raise InvalidLabel(f"state {j} out of range on cluster site {site} (n_state {ix.dim})")
            qn.append(ix.dense_qnums()[j])
        return cls(indices, tuple(qn))

    @property
    def flux(self) -> QNum:
        total = ZERO
        for q in self.qnums:
            total = total + q
        return total

    def __str__(self):
        return "|" + " ".join(f"{i}{q}" for i, q in zip(self.indices, self.qnums)) + ">"


@dataclass(frozen=True)
class SampledState:
    label: BipsLabel
    coefficient: float


def _check_threshold(threshold: float) -> float:
    threshold = float(threshold)
    if not 0.0 < threshold <= 1.0:
        raise ThresholdOutOfRange(f"threshold must lie in (0, 1], got {threshold}")
    return threshold


def _right_canonical(state: Mps) -> list:
    st = canonicalize(state.site_form(), site=0)
    norm = st.norm()
    if norm == 0.0:
        raise ZeroNorm("cannot sample a zero-norm state")
    dense = [t.to_dense() for t in st.tensors]
    dense[0] = dense[0] / norm
    return dense


def _ranked(hits) -> list:
    return sorted(hits, key=lambda s: (-abs(s.coefficient), s.label.indices))


def sample_bips(state: Mps, threshold: float = DEFAULT_THRESHOLD) -> list:
    """All product-state coefficients with ``|c| >= threshold``.

    Depth-first over cluster sites, left to right.  With the sites to the
    right of the prefix right-normalized, the norm of the partial row vector
    bounds every completion of that prefix, so branches below the threshold
    are cut without losing any qualifying state.
    """
    threshold = _check_threshold(threshold)
    tensors = _right_canonical(state)
    phys = state.phys
    n = len(tensors)
    hits = []
    stack = [(0, (), np.ones(1))]
    while stack:
        depth, prefix, vec = stack.pop()
        t = tensors[depth]
        for j in range(t.shape[1] - 1, -1, -1):
            w = vec @ t[:, j, :]
            if np.linalg.norm(w) < threshold:
                continue
            if depth == n - 1:
                hits.append(SampledState(BipsLabel.from_indices(phys, prefix + (j,)), float(w[0])))
            else:
                stack.append((depth + 1, prefix + (j,), w))
    return _ranked(hits)


def exhaustive_coefficients(state: Mps) -> list:
    """Every nonzero product-state coefficient, from the dense state vector."""
    st = state.site_form()
    vec = mps_to_dense(st)
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        raise ZeroNorm("cannot expand a zero-norm state")
    phys = state.phys
    dims = [ix.dim for ix in phys]
    out = []
    for flat in np.flatnonzero(vec):
        out.append(SampledState(BipsLabel.from_indices(phys, np.unravel_index(flat, dims)), float(vec[flat] / norm)))
    return _ranked(out)


def exhaustive_sample(state: Mps, threshold: float) -> list:
    threshold = _check_threshold(threshold)
    return [s for s in exhaustive_coefficients(state) if abs(s.coefficient) >= threshold]


# ---- effective Hamiltonian ------------------------------------------------------------

@dataclass
class EffectiveHamiltonian:
    basis: list
    matrix: np.ndarray

    @property
    def reference_energy(self) -> float:
        return float(self.matrix[0, 0]) if len(self.basis) else float("nan")

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["label"] + [str(b) for b in self.basis])
        for b, row in zip(self.basis, self.matrix):
            writer.writerow([str(b)] + [repr(float(x)) for x in row])
        return buf.getvalue()

    def to_text(self, digits: int = 6) -> str:
        names = [str(b) for b in self.basis]
        width = max([len(n) for n in names] + [digits + 8])
        lines = [" " * width + " " + " ".join(f"{i:>{digits + 8}d}" for i in range(len(names)))]
        for i, (n, row) in enumerate(zip(names, self.matrix)):
            lines.append(f"{n:>{width}} " + " ".join(f"{x:>{digits + 8}.{digits}f}" for x in row))
        return "\n".join(lines) + "\n"


def matrix_from_csv(text: str) -> tuple:
    """``(label strings, matrix)`` from :meth:`EffectiveHamiltonian.to_csv` output."""
    rows = list(csv.reader(io.StringIO(text)))
    labels = rows[0][1:]
    mat = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
    return labels, mat


def effective_hamiltonian(cmpo, basis) -> EffectiveHamiltonian:
    """``H[i, j] = <BIPS_i| cMPO |BIPS_j>`` from bond-dimension-1 product states."""
    phys = cmpo.phys
    labels = []
    for b in basis:
        idx = b.indices if isinstance(b, BipsLabel) else b
        lab = BipsLabel.from_indices(phys, idx)
        if isinstance(b, BipsLabel) and b.qnums != lab.qnums:
            raise InvalidLabel(f"sector labels of {b} do not match the cluster sites")
        labels.append(lab)
    states = [product_state(phys, lab.indices) for lab in labels]
    n = len(labels)
    h = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            if labels[i].flux != labels[j].flux:
                continue
            h[i, j] = expectation(states[i], cmpo, states[j])
            if j != i:
                h[j, i] = expectation(states[j], cmpo, states[i])
    return EffectiveHamiltonian(labels, 0.5 * (h + h.T))


# ---- report -----------------------------------------------------------------------------

def format_report(result=None, sampled=None, h_eff: EffectiveHamiltonian | None = None,
                  threshold: float | None = None, reference: float | None = None,
                  reference_name: str = "reference") -> str:
    """Energy table in milli-units, sampled-state table and H_eff (text and CSV)."""
    out = []
    if result is not None:
        out.append("== energies ==")
        ref = reference if reference is not None else result.energies[0]
        out.append(f"{reference_name:<14} {ref:18.10f}")
        rows = [("HF", result.hf_energy)] + [(f"BIPS root {i}", e) for i, e in enumerate(result.energies)]
        out.append(f"{'method':<14} {'energy':>18} {'delta (milli)':>14}")
        for name, e in rows:
            out.append(f"{name:<14} {e:18.10f} {1000.0 * (e - ref):14.4f}")
        out.append("")
    if sampled is not None:
        roots = sampled if sampled and isinstance(sampled[0], list) else [sampled]
        thr = "unset" if threshold is None else f"{threshold:g}"
        out.append(f"== sampled product states (threshold {thr}) ==")
        for r, hits in enumerate(roots):
            if len(roots) > 1:
                out.append(f"root {r}")
            if not hits:
                out.append("no product state reaches the threshold (0 hits)")
            for k, s in enumerate(hits):
                out.append(f"{k:4d} {s.coefficient:+.8f}  {s.label}")
            if hits:
                out.append(f"sum |c|^2 = {sum(s.coefficient ** 2 for s in hits):.8f}")
        out.append("")
    if h_eff is not None:
        out.append("== effective Hamiltonian ==")
        out.append(h_eff.to_text().rstrip("\n"))
        out.append("")
        out.append("== effective Hamiltonian (csv) ==")
        out.append(h_eff.to_csv().rstrip("\n"))
        out.append("")
    return "\n".join(out) + ("\n" if out else "")
