import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bipsdmrg.fermion import (LOCAL_OCC, PARITY, canonical_string, dense_string_operator,
                              determinant_local_states, local_op, op_qnum, orbital_index, string_qnum)
from bipsdmrg.symtensor import QNum

N_SITES = 3


def _mode_op(mode, dagger):
    return dense_string_operator(((mode, dagger),), N_SITES)


def test_local_operators_follow_basis_order():
    assert LOCAL_OCC == ((0, 0), (0, 1), (1, 0), (1, 1))
    assert orbital_index().qnums == (QNum(0, 0), QNum(1, -1), QNum(1, 1), QNum(2, 0))
    assert local_op(0, True)[2, 0] == 1.0
    assert local_op(1, True)[1, 0] == 1.0
    # down creation passes the up electron on the same orbital
    assert local_op(1, True)[3, 2] == -1.0
    assert np.allclose(PARITY, np.diag([1, -1, -1, 1]))


@pytest.mark.parametrize("m1,m2", list(itertools.product(range(2 * N_SITES), repeat=2)))
def test_canonical_anticommutation(m1, m2):
    a1, a2 = _mode_op(m1, False), _mode_op(m2, False)
    c2 = _mode_op(m2, True)
    assert np.allclose(a1 @ c2 + c2 @ a1, np.eye(4 ** N_SITES) * (m1 == m2))
    assert np.allclose(a1 @ a2 + a2 @ a1, 0.0)


def test_number_operator_counts_electrons():
    total = sum(_mode_op(m, True) @ _mode_op(m, False) for m in range(2 * N_SITES))
    counts = [sum(sum(LOCAL_OCC[d]) for d in digits)
              for digits in itertools.product(range(4), repeat=N_SITES)]
    assert np.allclose(np.diag(total), counts)
    assert np.allclose(total, np.diag(np.diag(total)))


ops = st.lists(st.tuples(st.integers(0, 2 * N_SITES - 1), st.booleans()), min_size=1, max_size=4)


@given(ops)
def test_canonical_string_matches_product(ops_list):
    product = np.eye(4 ** N_SITES)
    for op in ops_list:
        product = product @ _mode_op(*op)
    sign, ordered = canonical_string(ops_list)
    if sign == 0:
        assert np.allclose(product, 0.0)
    else:
        assert np.allclose(product, sign * dense_string_operator(ordered, N_SITES))


@given(ops)
def test_string_qnum_is_sum_of_operator_charges(ops_list):
    q = string_qnum(ops_list)
    assert q.n_particles == sum(1 if d else -1 for _, d in ops_list)
    assert q == sum((op_qnum(o) for o in ops_list), QNum(0, 0))


def test_determinant_local_states():
    # up on orbital 0, up and down on orbital 2
    bits = 0b110001
    assert determinant_local_states(bits, 3) == [2, 0, 3]
