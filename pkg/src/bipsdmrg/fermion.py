"""Spatial-orbital Fock space, local operator matrices and operator strings.

A chain position ``i`` holds one spatial orbital with the local basis
ordered like its sectors: ``0 = empty, 1 = down, 2 = up, 3 = up+down``.
Spin-orbital modes are numbered ``2*i`` (up) and ``2*i + 1`` (down); the
Jordan-Wigner order is ascending mode number, so a determinant is
``a+_{m1} a+_{m2} ... |vac>`` with ``m1 < m2 < ...``.

An operator string is a tuple of ``(mode, dagger)`` pairs.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .symtensor import IN, ORBITAL_QNUMS, OUT, Index, QNum

#: (n_up, n_down) of each local basis state
LOCAL_OCC = ((0, 0), (0, 1), (1, 0), (1, 1))


def orbital_index(direction: int = IN) -> Index:
    return Index(tuple((q, 1) for q in ORBITAL_QNUMS), direction)


def _build_local_ops():
    lookup = {occ: i for i, occ in enumerate(LOCAL_OCC)}
    ann = [np.zeros((4, 4)), np.zeros((4, 4))]
    for i, (nu, nd) in enumerate(LOCAL_OCC):
        if nu:
            ann[0][lookup[(0, nd)], i] = 1.0
        if nd:
            ann[1][lookup[(nu, 0)], i] = (-1.0) ** nu
    cre = [a.T.copy() for a in ann]
    parity = np.diag([(-1.0) ** (nu + nd) for nu, nd in LOCAL_OCC])
    return cre, ann, parity


_CRE, _ANN, PARITY = _build_local_ops()
IDENTITY4 = np.eye(4)


def local_op(spin: int, dagger: bool) -> np.ndarray:
    return _CRE[spin] if dagger else _ANN[spin]


def op_qnum(op) -> QNum:
    mode, dag = op
    q = QNum(1, 1 if mode % 2 == 0 else -1)
    return q if dag else -q


def string_qnum(ops) -> QNum:
    q = QNum(0, 0)
    for op in ops:
        q = q + op_qnum(op)
    return q


def canonical_string(ops):
    """Stable-sort a product of mode operators into ascending mode order.

    Returns ``(sign, ordered_ops)`` or ``(0, None)`` when the product
    vanishes (two equal adjacent operators on one mode).
    """
    ops = list(ops)
    inv = 0
    for i in range(len(ops)):
        for j in range(i + 1, len(ops)):
            if ops[i][0] > ops[j][0]:
                inv += 1
    ordered = tuple(sorted(ops, key=lambda o: o[0]))
    for a, b in zip(ordered, ordered[1:]):
        if a == b:
            return 0, None
    return (-1 if inv % 2 else 1), ordered


@lru_cache(maxsize=None)
def site_string_matrix(spins_dags: tuple) -> np.ndarray:
    """4x4 matrix of an in-site product, e.g. ``((0, True), (1, False))``."""
    m = IDENTITY4
    for spin, dag in spins_dags:
        m = m @ local_op(spin, dag)
    return m


def split_by_site(ops) -> dict:
    """``{site: ((spin, dagger), ...)}`` for a mode-ordered string."""
    out = {}
    for mode, dag in ops:
        out.setdefault(mode // 2, []).append((mode % 2, dag))
    return {s: tuple(v) for s, v in out.items()}


def block_factors(ops, sites, parity_after: int = 0):
    """Per-site factor keys of a string restricted to consecutive ``sites``.

    Each factor is ``(in-site string, parity exponent)``, meaning the local
    matrix ``site_string_matrix(string) @ PARITY**exponent``; the exponent
    counts odd operators further right (inside the block plus ``parity_after``).
    """
    by_site = split_by_site(ops)
    factors = []
    later = parity_after
    for s in reversed(list(sites)):
        sub = by_site.get(s, ())
        factors.append((sub, later % 2))
        later += len(sub)
    return tuple(reversed(factors))


def factor_matrix(factor) -> np.ndarray:
    sub, pexp = factor
    m = site_string_matrix(sub)
    return m @ PARITY if pexp else m


def dense_string_operator(ops, n_sites: int) -> np.ndarray:
    """Dense 4^n matrix of a mode-ordered operator string (small n only)."""
    out = np.ones((1, 1))
    for f in block_factors(ops, range(n_sites)):
        out = np.kron(out, factor_matrix(f))
    return out


def determinant_local_states(bits: int, n_sites: int) -> list:
    """Local basis indices of a determinant given as a 2n-bit mode pattern."""
    lookup = {occ: i for i, occ in enumerate(LOCAL_OCC)}
    return [lookup[((bits >> (2 * i)) & 1, (bits >> (2 * i + 1)) & 1)] for i in range(n_sites)]
