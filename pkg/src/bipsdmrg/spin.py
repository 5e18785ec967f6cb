"""SU(2) coupling coefficients and the spin-adapted cMPO propagation kernel.

Every spin is handled through its twice-value, so triangle and parity tests
are integer arithmetic.  Factorial ratios are accumulated as exact
fractions; the only floating-point step is the final square root.

Conventions (Condon-Shortley phases throughout):

* Wigner-Eckart: ``<j' m'| T^k_q |j m> = C(j m, k q | j' m') <j'||T||j>``.
* Site tensors couple ``|a m_a> x |s m_s> -> |a' m'>`` with ``C(a m_a, s m_s | a' m')``.
* An operator tensor with bond legs ``(b_l, b_r)`` and rank ``k`` carries the
  bond coupling ``C(b_l m_l, k q | b_r m_r)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import factorial, sqrt

import numpy as np

from .errors import InconsistentSpinLabels


@dataclass(frozen=True, order=True)
class HalfInt:
    """Nonnegative spin stored as its twice-value."""

    twice_value: int

    def __post_init__(self):
        if not isinstance(self.twice_value, (int, np.integer)) or self.twice_value < 0:
            raise ValueError(f"twice_value must be a nonnegative integer, got {self.twice_value!r}")
        object.__setattr__(self, "twice_value", int(self.twice_value))

    @classmethod
    def of(cls, value) -> "HalfInt":
        """From a HalfInt, int, float or Fraction equal to a multiple of 1/2."""
        if isinstance(value, HalfInt):
            return value
        tw = Fraction(value) * 2
        if tw.denominator != 1:
            raise ValueError(f"{value!r} is not a multiple of 1/2")
        return cls(int(tw))

    @property
    def value(self) -> float:
        return self.twice_value / 2

    @property
    def multiplicity(self) -> int:
        return self.twice_value + 1

    def __str__(self):
        tw = self.twice_value
        return str(tw // 2) if tw % 2 == 0 else f"{tw}/2"


def _tw(x) -> int:
    return HalfInt.of(x).twice_value


def triangle(ta: int, tb: int, tc: int) -> bool:
    """Triangle rule on twice-values, including integer perimeter."""
    return abs(ta - tb) <= tc <= ta + tb and (ta + tb + tc) % 2 == 0


def _f(tw: int) -> int:
    """Factorial of ``tw / 2`` for an even twice-value."""
    return factorial(tw // 2)


def _delta_sq(ta: int, tb: int, tc: int) -> Fraction:
    return Fraction(_f(ta + tb - tc) * _f(ta - tb + tc) * _f(-ta + tb + tc), _f(ta + tb + tc + 2))


def _signed_sqrt(x: Fraction, sign: int) -> float:
    return sign * sqrt(float(x))


# ---- Clebsch-Gordan and 3j ------------------------------------------------------

@lru_cache(maxsize=None)
def _cg_tw(j1: int, m1: int, j2: int, m2: int, j: int, m: int) -> float:
    if m1 + m2 != m or not triangle(j1, j2, j):
        return 0.0
    if abs(m1) > j1 or abs(m2) > j2 or abs(m) > j:
        return 0.0
    if (j1 + m1) % 2 or (j2 + m2) % 2 or (j + m) % 2:
        return 0.0
    pre = Fraction((j + 1) * _f(j + j1 - j2) * _f(j - j1 + j2) * _f(j1 + j2 - j), _f(j1 + j2 + j + 2))
    pre *= _f(j + m) * _f(j - m) * _f(j1 - m1) * _f(j1 + m1) * _f(j2 - m2) * _f(j2 + m2)
    total = Fraction(0)
    for t in range(0, j1 + j2 + j + 1, 2):
        args = (t, j1 + j2 - j - t, j1 - m1 - t, j2 + m2 - t, j - j2 + m1 + t, j - j1 - m2 + t)
        if min(args) < 0:
            continue
        den = 1
        for a in args:
            den *= _f(a)
        total += Fraction((-1) ** (t // 2), den)
    if total == 0:
        return 0.0
    return _signed_sqrt(pre * total * total, 1 if total > 0 else -1)


def clebsch_gordan(j1, m1, j2, m2, j, m) -> float:
    """``<j1 m1, j2 m2 | j m>``; arguments are spins (multiples of 1/2)."""
    return _cg_tw(_tw(j1), int(Fraction(m1) * 2), _tw(j2), int(Fraction(m2) * 2), _tw(j), int(Fraction(m) * 2))


def wigner3j(j1, j2, j3, m1, m2, m3) -> float:
    t1, t2, t3 = _tw(j1), _tw(j2), _tw(j3)
    u1, u2, u3 = (int(Fraction(x) * 2) for x in (m1, m2, m3))
    if u1 + u2 + u3 != 0:
        return 0.0
    phase = -1 if ((t1 - t2 - u3) // 2) % 2 else 1
    return phase * _cg_tw(t1, u1, t2, u2, t3, -u3) / sqrt(t3 + 1)


# ---- 6j and 9j -------------------------------------------------------------------

@lru_cache(maxsize=None)
def _6j_tw(a: int, b: int, c: int, d: int, e: int, f: int) -> float:
    triads = ((a, b, c), (a, e, f), (d, b, f), (d, e, c))
    if not all(triangle(*t) for t in triads):
        return 0.0
    pre = Fraction(1)
    for t in triads:
        pre *= _delta_sq(*t)
    sums = [sum(t) for t in triads]
    quads = (a + b + d + e, a + c + d + f, b + c + e + f)
    total = Fraction(0)
    for t in range(max(sums), min(quads) + 1, 2):
        den = 1
        for s in sums:
            den *= _f(t - s)
        for q in quads:
            den *= _f(q - t)
        total += Fraction((-1) ** (t // 2) * _f(t + 2), den)
    if total == 0:
        return 0.0
    return _signed_sqrt(pre * total * total, 1 if total > 0 else -1)


def wigner6j(a, b, c, d, e, f) -> float:
    """``{a b c; d e f}`` by the Racah single sum; zero when a triad fails."""
    return _6j_tw(*(_tw(x) for x in (a, b, c, d, e, f)))


@lru_cache(maxsize=None)
def _9j_tw(a, b, c, d, e, f, g, h, i) -> float:
    rows = ((a, b, c), (d, e, f), (g, h, i))
    cols = ((a, d, g), (b, e, h), (c, f, i))
    if not all(triangle(*t) for t in rows + cols):
        return 0.0
    lo = max(abs(a - i), abs(d - h), abs(b - f))
    hi = min(a + i, d + h, b + f)
    total = 0.0
    for x in range(lo, hi + 1, 2):
        total += (x + 1) * (-1 if x % 2 else 1) * _6j_tw(a, d, g, h, i, x) * _6j_tw(b, e, h, d, x, f) \
            * _6j_tw(c, f, i, x, a, b)
    return total


def wigner9j(a, b, c, d, e, f, g, h, i) -> float:
    """``{a b c; d e f; g h i}`` as a sum over products of three 6j symbols."""
    return _9j_tw(*(_tw(x) for x in (a, b, c, d, e, f, g, h, i)))


# ---- reduced tensors -------------------------------------------------------------

def _label(x) -> int:
    """Twice-value of a HalfInt, or an int taken as a twice-value already."""
    if isinstance(x, HalfInt):
        return x.twice_value
    if isinstance(x, (int, np.integer)) and x >= 0:
        return int(x)
    raise InconsistentSpinLabels(f"spin label {x!r} is not a HalfInt or twice-value")


def _labels(spins) -> tuple:
    return tuple(_label(s) for s in spins)


@dataclass
class ReducedSite:
    """Reduced MPS tensor ``U[a, s, a']``; labels are twice-values, one per position."""

    data: np.ndarray
    left: tuple
    phys: tuple
    right: tuple

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        self.left, self.phys, self.right = _labels(self.left), _labels(self.phys), _labels(self.right)
        if self.data.shape != (len(self.left), len(self.phys), len(self.right)):
            raise InconsistentSpinLabels(f"site data shape {self.data.shape} does not match its labels")


@dataclass
class ReducedOperator:
    """Reduced operator tensor ``W[b_l, b_r, bra, ket]`` of a single rank ``k``."""

    data: np.ndarray
    bond_left: tuple
    bond_right: tuple
    states: tuple                 # labels shared by the bra and ket legs
    rank: int                     # twice-value of k
    ket_states: tuple | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        self.bond_left, self.bond_right = _labels(self.bond_left), _labels(self.bond_right)
        self.states = _labels(self.states)
        self.ket_states = self.states if self.ket_states is None else _labels(self.ket_states)
        self.rank = _label(self.rank)
        shape = (len(self.bond_left), len(self.bond_right), len(self.states), len(self.ket_states))
        if self.data.shape != shape:
            raise InconsistentSpinLabels(f"operator data shape {self.data.shape} does not match labels {shape}")


def su2_cmpo_propagation_step(w_prev: ReducedOperator, u_site: ReducedSite, w_site: ReducedOperator,
                              k) -> ReducedOperator:
    """Absorb one site into a propagated fragment operator, reduced form.

    ``w_prev`` (rank k1) acts on the states to the left of the site,
    ``w_site`` (rank k2) on the site itself; the result is the rank-``k``
    component acting on the states after the site.
    """
    tk = _label(k)
    k1, k2 = w_prev.rank, w_site.rank
    if w_prev.bond_right != w_site.bond_left:
        raise InconsistentSpinLabels("bond labels of the two operators do not match")
    if w_prev.states != u_site.left or w_prev.ket_states != u_site.left:
        raise InconsistentSpinLabels("operator state labels differ from the site's left labels")
    if w_site.states != u_site.phys or w_site.ket_states != u_site.phys:
        raise InconsistentSpinLabels("site operator labels differ from the physical labels")
    if not triangle(k1, k2, tk):
        raise InconsistentSpinLabels(f"rank {tk}/2 is not in {k1}/2 x {k2}/2")
    bl, bm, br = w_prev.bond_left, w_prev.bond_right, w_site.bond_right
    a, s, ar = u_site.left, u_site.phys, u_site.right
    bond = np.zeros((len(bl), len(bm), len(br)))
    for i, tbi in enumerate(bl):
        for j, tb in enumerate(bm):
            for l, tbr in enumerate(br):
                six = _6j_tw(tbi, k1, tb, k2, tbr, tk)
                if six:       # nonzero 6j implies an even exponent
                    e = (tbi + tbr + k1 + k2) // 2
                    bond[i, j, l] = (-1) ** e * sqrt((tb + 1) * (tk + 1)) * six
    # state recoupling: [a s a'; k1 k2 k; a* s* a*'] times its normalization
    state = np.zeros((len(a), len(s), len(ar), len(a), len(s), len(ar)))
    for y, ty in enumerate(a):
        for p, tp in enumerate(s):
            for yr, tyr in enumerate(ar):
                for x, tx in enumerate(a):
                    for q, tq in enumerate(s):
                        for xr, txr in enumerate(ar):
                            nine = _9j_tw(ty, tp, tyr, k1, k2, tk, tx, tq, txr)
                            if nine:
                                state[y, p, yr, x, q, xr] = nine * sqrt((tyr + 1) * (tk + 1) * (tx + 1) * (tq + 1))
    u = u_site.data
    out = np.einsum("iJl,ysYxtX,iJxy,xtX,Jlts,ysY->ilXY", bond, state, w_prev.data, u, w_site.data, u,
                    optimize=True)
    return ReducedOperator(out, bl, br, ar, tk)


def allowed_ranks(k1, k2) -> list:
    """Twice-values of the ranks in ``k1 x k2`` (twice-value inputs)."""
    t1, t2 = _label(k1), _label(k2)
    return list(range(abs(t1 - t2), t1 + t2 + 1, 2))


# ---- m-resolved oracle -----------------------------------------------------------

def multiplets(labels) -> list:
    """``[(label position, twice m)]`` for each dense position, m ascending."""
    return [(i, m) for i, t in enumerate(labels) for m in range(-t, t + 1, 2)]


def expand_site(u: ReducedSite) -> np.ndarray:
    la, ls, lr = multiplets(u.left), multiplets(u.phys), multiplets(u.right)
    out = np.zeros((len(la), len(ls), len(lr)))
    for x, (i, mi) in enumerate(la):
        for y, (j, mj) in enumerate(ls):
            for z, (l, ml) in enumerate(lr):
                c = _cg_tw(u.left[i], mi, u.phys[j], mj, u.right[l], ml)
                if c:
                    out[x, y, z] = c * u.data[i, j, l]
    return out


def _operator_pattern(tbl, ml, tbr, mr, tbra, mbra, tket, mket, tk) -> float:
    q = mr - ml
    if q != mbra - mket or abs(q) > tk:
        return 0.0
    return _cg_tw(tbl, ml, tk, q, tbr, mr) * _cg_tw(tket, mket, tk, q, tbra, mbra)


def expand_operator(w: ReducedOperator) -> np.ndarray:
    """m-resolved ``W[(b_l m), (b_r m), (bra m), (ket m)]``."""
    dims = [multiplets(x) for x in (w.bond_left, w.bond_right, w.states, w.ket_states)]
    out = np.zeros(tuple(len(d) for d in dims))
    for i0, (a, ma) in enumerate(dims[0]):
        for i1, (b, mb) in enumerate(dims[1]):
            for i2, (c, mc) in enumerate(dims[2]):
                for i3, (d, md) in enumerate(dims[3]):
                    val = w.data[a, b, c, d]
                    if val:
                        out[i0, i1, i2, i3] = val * _operator_pattern(
                            w.bond_left[a], ma, w.bond_right[b], mb, w.states[c], mc, w.ket_states[d], md, w.rank)
    return out


def mresolved_propagation(w_prev: ReducedOperator, u_site: ReducedSite, w_site: ReducedOperator) -> np.ndarray:
    """Plain (Abelian) contraction of the expanded tensors."""
    wp, ws, u = expand_operator(w_prev), expand_operator(w_site), expand_site(u_site)
    return np.einsum("iJxy,xtX,Jlts,ysY->ilXY", wp, u, ws, u, optimize=True)


def project_operator(dense: np.ndarray, bond_left, bond_right, states, k) -> ReducedOperator:
    """Rank-``k`` reduced elements of an m-resolved operator tensor (orthogonal projection)."""
    bl, br, st, tk = _labels(bond_left), _labels(bond_right), _labels(states), _label(k)
    pattern = expand_operator(ReducedOperator(np.ones((len(bl), len(br), len(st), len(st))), bl, br, st, tk))
    ml, mr, ms = multiplets(bl), multiplets(br), multiplets(st)
    out = np.zeros((len(bl), len(br), len(st), len(st)))
    num = np.zeros_like(out)
    den = np.zeros_like(out)
    for i0, (a, _) in enumerate(ml):
        for i1, (b, _) in enumerate(mr):
            for i2, (c, _) in enumerate(ms):
                for i3, (d, _) in enumerate(ms):
                    p = pattern[i0, i1, i2, i3]
                    num[a, b, c, d] += p * dense[i0, i1, i2, i3]
                    den[a, b, c, d] += p * p
    np.divide(num, den, out=out, where=den > 0)
    return ReducedOperator(out, bl, br, st, tk)


def reconstruct(parts) -> np.ndarray:
    """Sum of the expansions of several rank components."""
    return sum(expand_operator(p) for p in parts)


def random_propagation_case(rng, max_twice: int = 3, max_labels: int = 3):
    """Random ``(w_prev, u_site, w_site)`` with small twice-value labels and ranks."""
    rng = np.random.default_rng(rng)

    def pick():
        n = int(rng.integers(2, max_labels + 1))
        return tuple(sorted(int(t) for t in rng.choice(max_twice + 1, size=min(n, max_twice + 1), replace=False)))

    k1, k2 = (int(rng.integers(0, 3)) for _ in range(2))
    bl, bm, br, a, s, ar = (pick() for _ in range(6))
    wp = ReducedOperator(rng.standard_normal((len(bl), len(bm), len(a), len(a))), bl, bm, a, k1)
    us = ReducedSite(rng.standard_normal((len(a), len(s), len(ar))), a, s, ar)
    ws = ReducedOperator(rng.standard_normal((len(bm), len(br), len(s), len(s))), bm, br, s, k2)
    return wp, us, ws
