import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bipsdmrg.errors import DuplicateConflict, IndexOutOfRange, MalformedHeader, ScfNoConvergence
from bipsdmrg.fci import fci_solve
from bipsdmrg.hamio import (Integrals, build_hubbard, dimerized_hubbard, parse_fcidump, read_fcidump,
                            restricted_hartree_fock, write_fcidump)

from conftest import random_integrals

HUBBARD2 = """&FCI NORB=2,NELEC=2,MS2=0,
  ORBSYM=1,1,
  ISYM=1,
&END
  4.0  1 1 1 1
  4.0  2 2 2 2
 -1.0  2 1 0 0
  0.0  0 0 0 0
"""


def _same(a, b):
    return (np.array_equal(a.h, b.h) and np.array_equal(a.v, b.v) and a.e_core == b.e_core
            and a.n_elec == b.n_elec and a.two_sz_target == b.two_sz_target)


def test_parse_hubbard_dimer():
    ints = parse_fcidump(io.StringIO(HUBBARD2))
    assert ints.n_orb == 2 and ints.n_elec == 2 and ints.two_sz_target == 0
    assert np.array_equal(ints.h, [[0.0, -1.0], [-1.0, 0.0]])
    assert ints.v[0, 0, 0, 0] == 4.0 and ints.v[1, 1, 1, 1] == 4.0
    assert np.count_nonzero(ints.v) == 2
    assert _same(parse_fcidump(write_fcidump(ints)), ints)


def test_header_without_two_electron_lines_gives_zero_v():
    text = "&FCI NORB=2,NELEC=2,MS2=0 /\n -1.0 1 1 0 0\n 1.0 2 2 0 0\n"
    ints = parse_fcidump(text)
    assert not ints.v.any()
    assert np.array_equal(ints.h, np.diag([-1.0, 1.0]))


def test_symmetry_expansion_from_unique_entries():
    text = """&FCI NORB=2,NELEC=2,MS2=0 &END
 0.67 1 1 1 1
 0.18 2 1 2 1
 0.70 2 2 2 2
 0.66 2 2 1 1
"""
    ints = parse_fcidump(text)
    assert ints.check_symmetry(tol=0.0)
    assert ints.v[0, 1, 0, 1] == ints.v[1, 0, 1, 0] == ints.v[0, 1, 1, 0] == 0.18
    assert ints.v[0, 0, 1, 1] == ints.v[1, 1, 0, 0] == 0.66


@given(st.integers(1, 4), st.integers(0, 10 ** 6))
def test_write_then_parse_is_identity(k, seed):
    ints = random_integrals(k, np.random.default_rng(seed))
    ints.e_core = 0.125 * seed
    back = parse_fcidump(write_fcidump(ints))
    assert np.max(np.abs(back.h - ints.h)) <= 1e-15
    assert np.max(np.abs(back.v - ints.v)) <= 1e-15
    assert back.e_core == ints.e_core


def test_read_from_path(tmp_path):
    path = tmp_path / "FCIDUMP"
    path.write_text(HUBBARD2)
    assert _same(read_fcidump(path), parse_fcidump(HUBBARD2))


@pytest.mark.parametrize("text", [
    "NORB=2,NELEC=2\n 1.0 1 1 0 0\n",
    "&FCI NORB=2,NELEC=2,MS2=0\n 1.0 1 1 0 0\n",
    "&FCI NELEC=2,MS2=0 /\n 1.0 1 1 0 0\n",
    "&FCI NORB=2,NELEC=2,MS2=0 /\n 1.0 1 1 0\n",
])
def test_malformed_header(text):
    with pytest.raises(MalformedHeader):
        parse_fcidump(text)


@pytest.mark.parametrize("line", [" 1.0 3 1 0 0", " 1.0 1 1 1 -1", " 1.0 1 0 1 1"])
def test_index_out_of_range(line):
    with pytest.raises(IndexOutOfRange):
        parse_fcidump("&FCI NORB=2,NELEC=2,MS2=0 /\n" + line + "\n")


def test_conflicting_duplicates():
    with pytest.raises(DuplicateConflict):
        parse_fcidump("&FCI NORB=2,NELEC=2,MS2=0 /\n 0.5 2 1 1 1\n 0.6 1 2 1 1\n")
    with pytest.raises(DuplicateConflict):
        parse_fcidump("&FCI NORB=2,NELEC=2,MS2=0 /\n -1.0 1 2 0 0\n -1.1 2 1 0 0\n")
    # equal duplicates are accepted
    parse_fcidump("&FCI NORB=2,NELEC=2,MS2=0 /\n 0.5 2 1 1 1\n 0.5 1 1 1 2\n")


def test_integrals_validation():
    with pytest.raises(ValueError):
        Integrals(np.zeros((2, 2)), np.zeros((2, 2, 2, 2)), n_elec=5)
    with pytest.raises(ValueError):
        Integrals(np.zeros((2, 2)), np.zeros((2, 2, 2, 2)), n_elec=2, two_sz_target=1)


def test_hubbard_builder():
    ints = build_hubbard(2, [1.0], 0.0)
    assert np.allclose(np.linalg.eigvalsh(ints.h), [-1.0, 1.0])
    d = dimerized_hubbard(6, 1.0, 0.1, 4.0)
    assert np.allclose(np.diag(d.h, 1), [-1.0, -0.1, -1.0, -0.1, -1.0])
    assert d.n_elec == 6 and d.e_core == 0.0
    assert np.count_nonzero(d.v) == 6
    with pytest.raises(ValueError):
        build_hubbard(3, [1.0], 4.0)


@pytest.mark.parametrize("n,n_elec", [(4, 4), (5, 3), (6, 6)])
def test_noninteracting_fci_fills_lowest_orbitals(n, n_elec):
    ints = build_hubbard(n, [1.0] * (n - 1), 0.0, n_elec=n_elec, two_sz=n_elec % 2)
    eps = np.linalg.eigvalsh(ints.h)
    expected = sum(eps[:ints.n_up]) + sum(eps[:ints.n_dn])
    assert fci_solve(ints)[0][0] == pytest.approx(expected, abs=1e-10)


def test_rhf_trivial_cases():
    ints = Integrals(np.diag([-1.0, 1.0]), np.zeros((2, 2, 2, 2)), n_elec=2)
    mf = restricted_hartree_fock(ints)
    assert mf.energy == pytest.approx(-2.0, abs=1e-12)
    assert np.allclose(mf.rdm1, np.diag([2.0, 0.0]))
    dimer = restricted_hartree_fock(build_hubbard(2, [1.0], 4.0))
    assert dimer.energy == pytest.approx(0.0, abs=1e-10)


def test_rhf_invariants_and_variational_gap(hubbard6):
    mf = restricted_hartree_fock(hubbard6)
    c, p = mf.orbital_coeffs, mf.rdm1
    assert np.allclose(c.T @ c, np.eye(6), atol=1e-10)
    assert np.trace(p) == pytest.approx(6.0, abs=1e-10)
    assert np.allclose(p @ p, 2 * p, atol=1e-8)
    assert mf.energy > fci_solve(hubbard6)[0][0] + 1e-6


@pytest.mark.parametrize("seed", range(3))
def test_rhf_is_upper_bound_on_random_integrals(seed):
    ints = random_integrals(4, np.random.default_rng(seed))
    mf = restricted_hartree_fock(ints)
    assert mf.energy >= fci_solve(ints)[0][0] - 1e-10


def test_rhf_reports_nonconvergence():
    with pytest.raises(ScfNoConvergence):
        restricted_hartree_fock(random_integrals(4, np.random.default_rng(1), scale=1.0), max_cycles=1)
    with pytest.raises(ValueError):
        restricted_hartree_fock(build_hubbard(3, [1.0] * 2, 4.0))
