import itertools
from math import sqrt

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bipsdmrg.errors import InconsistentSpinLabels
from bipsdmrg.spin import (HalfInt, ReducedOperator, ReducedSite, allowed_ranks, clebsch_gordan, expand_operator,
                           mresolved_propagation, project_operator, random_propagation_case, reconstruct,
                           su2_cmpo_propagation_step, triangle, wigner3j, wigner6j, wigner9j)

TW = range(0, 6)          # twice-values up to 5/2


def h(tw):
    return tw / 2


def six(*tws):
    return wigner6j(*(h(t) for t in tws))


def nine(*tws):
    return wigner9j(*(h(t) for t in tws))


def _sign(tw_sum):
    assert tw_sum % 2 == 0
    return -1.0 if (tw_sum // 2) % 2 else 1.0


def test_halfint():
    assert HalfInt.of(1.5).twice_value == 3
    assert HalfInt.of(HalfInt(2)).value == 1.0
    assert HalfInt(3).multiplicity == 4 and str(HalfInt(3)) == "3/2" and str(HalfInt(4)) == "2"
    with pytest.raises(ValueError):
        HalfInt.of(0.25)
    with pytest.raises(ValueError):
        HalfInt(-1)


def test_clebsch_gordan_orthonormality():
    for j1, j2 in [(1, 1), (1, 2), (3, 2), (2, 4)]:
        for tj in range(abs(j1 - j2), j1 + j2 + 1, 2):
            for tjp in range(abs(j1 - j2), j1 + j2 + 1, 2):
                for m in range(-min(tj, tjp), min(tj, tjp) + 1, 2):
                    s = sum(clebsch_gordan(h(j1), h(m1), h(j2), h(m - m1), h(tj), h(m))
                            * clebsch_gordan(h(j1), h(m1), h(j2), h(m - m1), h(tjp), h(m))
                            for m1 in range(-j1, j1 + 1, 2) if abs(m - m1) <= j2)
                    assert s == pytest.approx(float(tj == tjp), abs=1e-13)


def test_known_values():
    assert clebsch_gordan(0.5, 0.5, 0.5, -0.5, 0, 0) == pytest.approx(1 / sqrt(2))
    assert clebsch_gordan(0.5, -0.5, 0.5, 0.5, 0, 0) == pytest.approx(-1 / sqrt(2))
    assert wigner3j(1, 1, 0, 0, 0, 0) == pytest.approx(-1 / sqrt(3))
    assert wigner6j(0.5, 0.5, 1, 0.5, 0.5, 0) == pytest.approx(1 / 2)


def test_6j_vanishes_off_triangle():
    for a, b, c, d, e, f in itertools.product(range(4), repeat=6):
        if not (triangle(a, b, c) and triangle(a, e, f) and triangle(d, b, f) and triangle(d, e, c)):
            assert six(a, b, c, d, e, f) == 0.0


def test_6j_with_zero_argument():
    for a, b, c in itertools.product(range(7), repeat=3):
        if triangle(a, b, c):
            expected = _sign(a + b + c) / sqrt((b + 1) * (c + 1))
            assert six(a, b, c, 0, c, b) == pytest.approx(expected, abs=1e-14)


def _admissible_6j(a, b, c, d):
    xs = [x for x in range(0, 12) if triangle(a, b, x) and triangle(c, d, x)]
    ps = [p for p in range(0, 12) if triangle(c, b, p) and triangle(a, d, p)]
    return xs, ps


def test_6j_orthogonality():
    for a, b, c, d in itertools.product(TW, repeat=4):
        xs, ps = _admissible_6j(a, b, c, d)
        for p in ps:
            for q in ps:
                s = sum((x + 1) * six(a, b, x, c, d, p) * six(a, b, x, c, d, q) for x in xs)
                assert s == pytest.approx((p == q) / (p + 1), abs=1e-12)


def _pentagon_cases(rng, count):
    """Random arguments <= 5/2 for which every 6j on the right-hand side can be nonzero."""
    out = []
    while len(out) < count:
        a, b, c, d, e, f = (int(x) for x in rng.integers(0, 6, size=6))
        ps = [p for p in TW if triangle(a, d, p) and triangle(c, b, p)]
        qs = [q for q in TW if triangle(c, f, q) and triangle(e, d, q)]
        rs = [r for r in TW if triangle(e, a, r) and triangle(b, f, r)]
        pqr = [(p, q, r) for p in ps for q in qs for r in rs if triangle(p, q, r)]
        if pqr:
            out.append((a, b, c, d, e, f) + pqr[int(rng.integers(len(pqr)))])
    return out


def test_6j_pentagon_identity():
    nonzero = 0
    for a, b, c, d, e, f, p, q, r in _pentagon_cases(np.random.default_rng(1), 60):
        rhs = six(p, q, r, e, a, d) * six(p, q, r, f, b, c)
        lhs = 0.0
        for x in range(0, 12):
            term = six(a, b, x, c, d, p) * six(c, d, x, e, f, q) * six(e, f, x, b, a, r)
            if term:
                lhs += _sign(a + b + c + d + e + f + p + q + r + x) * (x + 1) * term
        assert lhs == pytest.approx(rhs, abs=1e-12)
        nonzero += rhs != 0.0
    assert nonzero >= 30


def test_9j_all_zero_and_zero_argument():
    assert nine(0, 0, 0, 0, 0, 0, 0, 0, 0) == pytest.approx(1.0)
    for a, b, c, d in itertools.product(range(5), repeat=4):
        for e in [x for x in range(9) if triangle(a, b, x)]:
            for f in [x for x in range(9) if triangle(a, c, x)]:
                val = nine(a, b, e, c, d, e, f, f, 0)
                sym = six(a, b, e, d, c, f)
                ref = _sign(b + c + e + f) / sqrt((e + 1) * (f + 1)) * sym if sym else 0.0
                assert val == pytest.approx(ref, abs=1e-13)


@given(st.lists(st.integers(0, 4), min_size=9, max_size=9))
def test_9j_symmetries(args):
    a, b, c, d, e, f, g, hh, i = args
    val = nine(a, b, c, d, e, f, g, hh, i)
    odd = val * _sign(sum(args)) if val else 0.0
    assert nine(a, d, g, b, e, hh, c, f, i) == pytest.approx(val, abs=1e-12)
    assert nine(d, e, f, a, b, c, g, hh, i) == pytest.approx(odd, abs=1e-12)
    assert nine(b, a, c, e, d, f, hh, g, i) == pytest.approx(odd, abs=1e-12)


def _recoupling_overlap(j1, j2, j12, j3, j4, j34, j13, j24, j):
    """<(j1 j2)j12, (j3 j4)j34; j | (j1 j3)j13, (j2 j4)j24; j> by explicit CG sums."""
    m = j
    total = 0.0
    for m1, m2, m3 in itertools.product(range(-j1, j1 + 1, 2), range(-j2, j2 + 1, 2), range(-j3, j3 + 1, 2)):
        m4 = m - m1 - m2 - m3
        if abs(m4) > j4:
            continue
        left = (clebsch_gordan(h(j1), h(m1), h(j2), h(m2), h(j12), h(m1 + m2))
                * clebsch_gordan(h(j3), h(m3), h(j4), h(m4), h(j34), h(m3 + m4))
                * clebsch_gordan(h(j12), h(m1 + m2), h(j34), h(m3 + m4), h(j), h(m)))
        if not left:
            continue
        right = (clebsch_gordan(h(j1), h(m1), h(j3), h(m3), h(j13), h(m1 + m3))
                 * clebsch_gordan(h(j2), h(m2), h(j4), h(m4), h(j24), h(m2 + m4))
                 * clebsch_gordan(h(j13), h(m1 + m3), h(j24), h(m2 + m4), h(j), h(m)))
        total += left * right
    return total


def test_9j_matches_clebsch_gordan_recoupling():
    rng = np.random.default_rng(3)
    checked = 0
    for _ in range(2000):
        j1, j2, j3, j4 = (int(x) for x in rng.integers(0, 5, size=4))
        j12s = [x for x in range(9) if triangle(j1, j2, x)]
        j34s = [x for x in range(9) if triangle(j3, j4, x)]
        j13s = [x for x in range(9) if triangle(j1, j3, x)]
        j24s = [x for x in range(9) if triangle(j2, j4, x)]
        if not (j12s and j34s and j13s and j24s):
            continue
        j12, j34, j13, j24 = (int(rng.choice(v)) for v in (j12s, j34s, j13s, j24s))
        js = [x for x in range(17) if triangle(j12, j34, x) and triangle(j13, j24, x)]
        if not js:
            continue
        j = int(rng.choice(js))
        ref = _recoupling_overlap(j1, j2, j12, j3, j4, j34, j13, j24, j)
        norm = sqrt((j12 + 1) * (j34 + 1) * (j13 + 1) * (j24 + 1))
        assert norm * nine(j1, j2, j12, j3, j4, j34, j13, j24, j) == pytest.approx(ref, abs=1e-12)
        checked += 1
        if checked >= 40:
            break
    assert checked >= 40


def _all_ranks(wp, us, ws):
    return [su2_cmpo_propagation_step(wp, us, ws, k) for k in allowed_ranks(wp.rank, ws.rank)]


def test_kernel_with_all_labels_zero_is_plain_sandwich():
    rng = np.random.default_rng(0)
    wp = ReducedOperator(rng.standard_normal((2, 3, 2, 2)), (0, 0), (0, 0, 0), (0, 0), 0)
    us = ReducedSite(rng.standard_normal((2, 2, 3)), (0, 0), (0, 0), (0, 0, 0))
    ws = ReducedOperator(rng.standard_normal((3, 1, 2, 2)), (0, 0, 0), (0,), (0, 0), 0)
    out = su2_cmpo_propagation_step(wp, us, ws, 0)
    ref = np.einsum("iJxy,xtX,Jlts,ysY->ilXY", wp.data, us.data, ws.data, us.data)
    assert np.allclose(out.data, ref, atol=1e-13)


def test_kernel_spin_half_creation_on_one_orbital():
    # orbital multiplets: empty (0), single (1/2), double (0); the fragment starts from the vacuum
    phys = (0, 1, 0)
    us = ReducedSite(np.eye(3).reshape(1, 3, 3), (0,), phys, phys)
    wp = ReducedOperator(np.ones((1, 1, 1, 1)), (0,), (0,), (0,), 0)
    cre = np.zeros((1, 1, 3, 3))
    cre[0, 0, 1, 0] = 1.0
    cre[0, 0, 2, 1] = -sqrt(2.0)
    ws = ReducedOperator(cre, (0,), (1,), phys, 1)
    out = su2_cmpo_propagation_step(wp, us, ws, 1)
    dense = mresolved_propagation(wp, us, ws)
    assert np.allclose(expand_operator(out), dense, atol=1e-12)
    assert np.allclose(project_operator(dense, (0,), (1,), phys, 1).data, out.data, atol=1e-12)


@pytest.mark.parametrize("seed", range(24))
def test_kernel_matches_mresolved_oracle(seed):
    wp, us, ws = random_propagation_case(seed)
    parts = _all_ranks(wp, us, ws)
    dense = mresolved_propagation(wp, us, ws)
    assert np.max(np.abs(reconstruct(parts) - dense)) <= 1e-11
    for part in parts:
        proj = project_operator(dense, part.bond_left, part.bond_right, part.states, part.rank)
        assert np.allclose(proj.data, part.data, atol=1e-11)


@pytest.mark.parametrize("seed", range(6))
def test_two_step_propagation_is_associative(seed):
    rng = np.random.default_rng(100 + seed)
    wp, us1, ws1 = random_propagation_case(rng)
    site2 = random_propagation_case(rng)
    s2 = site2[1].phys
    ar2 = site2[1].right
    us2 = ReducedSite(rng.standard_normal((len(us1.right), len(s2), len(ar2))), us1.right, s2, ar2)
    br2 = site2[2].bond_right
    ws2 = ReducedOperator(rng.standard_normal((len(ws1.bond_right), len(br2), len(s2), len(s2))),
                          ws1.bond_right, br2, s2, site2[2].rank)
    # reduced route: every intermediate rank, then every final rank
    reduced = sum(expand_operator(p2) for p1 in _all_ranks(wp, us1, ws1) for p2 in _all_ranks(p1, us2, ws2))
    # m-resolved route: plain contraction through both sites
    from bipsdmrg.spin import expand_site
    d1 = mresolved_propagation(wp, us1, ws1)
    u2, w2 = expand_site(us2), expand_operator(ws2)
    d2 = np.einsum("iJxy,xtX,Jlts,ysY->ilXY", d1, u2, w2, u2)
    assert np.max(np.abs(reduced - d2)) <= 1e-11


def test_kernel_label_errors():
    wp, us, ws = random_propagation_case(0)
    with pytest.raises(InconsistentSpinLabels):
        su2_cmpo_propagation_step(wp, us, ws, wp.rank + ws.rank + 2)
    bad = ReducedSite(us.data, us.left, us.phys, us.right)
    bad.left = tuple(t + 2 for t in us.left)
    with pytest.raises(InconsistentSpinLabels):
        su2_cmpo_propagation_step(wp, bad, ws, abs(wp.rank - ws.rank))
    with pytest.raises(InconsistentSpinLabels):
        ReducedSite(np.zeros((1, 1, 2)), (0,), (1,), (1,))
    with pytest.raises(InconsistentSpinLabels):
        ReducedSite(np.zeros((1, 1, 1)), (0.5,), (1,), (1,))
