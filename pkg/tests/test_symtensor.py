import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bipsdmrg.errors import EmptySpectrum, IncompatibleIndex, NoConvergence, RankError
from bipsdmrg.symtensor import (IN, OUT, ZERO, BlockTensor, Index, QNum, contract, davidson,
                                density_truncate, lq, qr, select_states, svd_truncate)

qnums = st.builds(QNum, st.integers(-4, 4), st.integers(-4, 4))


@st.composite
def indices(draw, direction=None):
    secs = draw(st.lists(st.tuples(st.integers(0, 3), st.sampled_from([-1, 1])), min_size=1, max_size=3,
                         unique=True))
    dims = draw(st.lists(st.integers(1, 3), min_size=len(secs), max_size=len(secs)))
    d = direction if direction is not None else draw(st.sampled_from([IN, OUT]))
    return Index(tuple(sorted((QNum(n, s), m) for (n, s), m in zip(secs, dims))), d)


@given(qnums, qnums, qnums)
def test_qnum_group_laws(a, b, c):
    assert (a + b) + c == a + (b + c)
    assert a + b == b + a
    assert a - a == ZERO
    assert -(-a) == a
    assert 3 * a == a + a + a


def test_index_rejects_unsorted_and_empty_sectors():
    with pytest.raises(ValueError):
        Index(((QNum(1, 1), 1), (QNum(0, 0), 1)))
    with pytest.raises(ValueError):
        Index(((QNum(0, 0), 0),))
    with pytest.raises(ValueError):
        Index(((QNum(0, 0), 1),), direction=0)


def test_index_layout():
    ix = Index(((QNum(0, 0), 2), (QNum(1, 1), 3)))
    assert ix.dim == 5
    assert ix.offsets == (0, 2)
    assert ix.dense_qnums() == [QNum(0, 0)] * 2 + [QNum(1, 1)] * 3
    assert ix.dual().direction == IN


@given(st.lists(indices(), min_size=1, max_size=3), qnums, st.integers(0, 10 ** 6))
def test_random_tensor_respects_flux(idx, flux, seed):
    t = BlockTensor.random(idx, flux, rng=seed)
    for key in t.blocks:
        total = ZERO
        for ix, i in zip(idx, key):
            total = total + ix.qnums[i] * ix.direction
        assert total == flux
    back = BlockTensor.from_dense(t.to_dense(), idx, flux, atol=1e-12)
    assert np.array_equal(back.to_dense(), t.to_dense())


def test_from_dense_rejects_weight_outside_flux():
    ix = Index(((QNum(0, 0), 1), (QNum(1, 1), 1)), OUT)
    arr = np.ones((2, 2))
    with pytest.raises(IncompatibleIndex):
        BlockTensor.from_dense(arr, [ix, ix.dual()], ZERO, atol=1e-12)


@given(indices(OUT), indices(), indices(), st.integers(0, 10 ** 6))
def test_contract_matches_dense_tensordot(shared, a2, b2, seed):
    rng = np.random.default_rng(seed)
    a = BlockTensor.random([a2, shared], ZERO, rng)
    b = BlockTensor.random([shared.dual(), b2], ZERO, rng)
    c = contract(a, b, [(1, 0)])
    assert np.allclose(c.to_dense(), np.tensordot(a.to_dense(), b.to_dense(), axes=(1, 0)), atol=1e-12)


def test_contract_checks_directions_and_axes():
    ix = Index(((QNum(0, 0), 2),), OUT)
    a = BlockTensor.random([ix, ix.dual()], rng=0)
    with pytest.raises(IncompatibleIndex):
        contract(a, a, [(0, 0)])
    with pytest.raises(RankError):
        contract(a, a, [(0, 5)])


@given(st.lists(indices(), min_size=2, max_size=4), st.integers(0, 10 ** 6), st.data())
def test_transpose_matches_dense(idx, seed, data):
    t = BlockTensor.random(idx, ZERO, rng=seed)
    perm = data.draw(st.permutations(range(len(idx))))
    assert np.array_equal(t.transpose(perm).to_dense(), np.transpose(t.to_dense(), perm))


def _three_leg(seed, flux=ZERO):
    a = Index(((QNum(0, 0), 2), (QNum(1, -1), 1), (QNum(1, 1), 2)), IN)
    p = Index(((QNum(0, 0), 1), (QNum(1, -1), 1), (QNum(1, 1), 1), (QNum(2, 0), 1)), IN)
    b = Index(((QNum(0, 0), 1), (QNum(1, -1), 2), (QNum(1, 1), 2), (QNum(2, 0), 3)), OUT)
    return BlockTensor.random([a, p, b], flux, rng=seed)


@pytest.mark.parametrize("seed", range(4))
def test_svd_without_truncation_is_exact_and_isometric(seed):
    t = _three_leg(seed)
    res = svd_truncate(t, [0, 1])
    assert np.allclose(res.reconstruct().to_dense(), t.to_dense(), atol=1e-12)
    u = res.u.to_dense().reshape(-1, res.bond.dim)
    assert np.allclose(u.T @ u, np.eye(res.bond.dim), atol=1e-12)
    assert res.discarded_weight < 1e-20


@pytest.mark.parametrize("m", [1, 2, 3, 5])
def test_svd_truncation_error_equals_discarded_weight(m):
    t = _three_leg(11)
    res = svd_truncate(t, [0, 1], max_states=m)
    assert res.bond.dim <= m
    err = np.linalg.norm(res.reconstruct().to_dense() - t.to_dense()) ** 2
    assert err == pytest.approx(res.discarded_weight, abs=1e-12)
    # the kept values are the globally largest ones
    full = svd_truncate(t, [0, 1]).all_values()
    assert np.allclose(res.all_values(), full[:res.bond.dim])


def test_select_states_threshold_and_caps():
    spectra = {"a": np.array([0.5, 0.1]), "b": np.array([0.3, 0.05, 0.05])}
    assert select_states(spectra, None, 0.0) == {"a": 2, "b": 3}
    assert select_states(spectra, None, 0.1) == {"a": 2, "b": 1}
    assert select_states(spectra, None, 0.2) == {"a": 1, "b": 1}
    assert select_states(spectra, 1, 0.0) == {"a": 1}
    assert select_states({"a": np.array([1.0, 0.0])}, None, -1.0) == {"a": 2}


def test_select_states_ties_go_to_lower_key():
    spectra = {"x": np.array([0.25]), "w": np.array([0.25 * (1 + 1e-12)]), "v": np.array([0.25 * (1 - 1e-12)])}
    assert select_states(spectra, 2, 0.0) == {"v": 1, "w": 1}


def test_qr_and_lq_reconstruct():
    t = _three_leg(5, flux=QNum(1, 1))
    q, r = qr(t, [0, 1])
    assert np.allclose(contract(q, r, [(2, 0)]).to_dense(), t.to_dense(), atol=1e-12)
    qm = q.to_dense().reshape(-1, q.indices[-1].dim)
    assert np.allclose(qm.T @ qm, np.eye(qm.shape[1]), atol=1e-12)
    l, qq = lq(t, [0])
    assert np.allclose(contract(l, qq, [(1, 0)]).to_dense(), t.to_dense(), atol=1e-12)
    qd = qq.to_dense().reshape(qq.indices[0].dim, -1)
    assert np.allclose(qd @ qd.T, np.eye(qd.shape[0]), atol=1e-12)


def test_density_truncate_matches_svd_for_one_part():
    t = _three_leg(3)
    iso, spec, disc = density_truncate([(t, 1.0)], [0, 1], max_states=4)
    res = svd_truncate(t, [0, 1], max_states=4)
    ev = np.sort(np.concatenate([e for _, e in spec]))[::-1]
    assert np.allclose(ev, res.all_values() ** 2, atol=1e-12)
    assert disc == pytest.approx(res.discarded_weight, abs=1e-12)
    u = iso.to_dense().reshape(-1, iso.indices[-1].dim)
    assert np.allclose(u.T @ u, np.eye(u.shape[1]), atol=1e-12)


def test_density_truncate_right_side_is_row_isometry():
    t = _three_leg(4, flux=QNum(1, -1))
    iso, _, _ = density_truncate([(t, 1.0)], [1, 2], side="right")
    assert iso.flux == t.flux
    v = iso.to_dense().reshape(iso.indices[0].dim, -1)
    assert np.allclose(v @ v.T, np.eye(v.shape[0]), atol=1e-12)


def test_density_truncate_drops_numerical_zeros():
    ix = Index(((QNum(0, 0), 3),), OUT)
    t = BlockTensor.from_dense(np.outer([1.0, 2.0, 3.0], [1.0, -1.0, 0.5]), [ix, ix.dual()])
    iso, spec, _ = density_truncate([(t, 1.0)], [0])
    assert iso.indices[-1].dim == 1


def test_empty_spectrum_raises():
    ix = Index(((QNum(0, 0), 2),), OUT)
    with pytest.raises(EmptySpectrum):
        svd_truncate(BlockTensor([ix, ix.dual()], {}, ZERO), [0])


def test_davidson_matches_eigh(rng):
    n = 120
    a = rng.standard_normal((n, n))
    h = 0.5 * (a + a.T) + np.diag(np.arange(n, dtype=float))
    w, v = davidson(lambda x: h @ x, n, n_roots=3, diag=np.diag(h), tol=1e-10)
    ref = np.linalg.eigvalsh(h)[:3]
    assert np.allclose(w, ref, atol=1e-9)
    for j in range(3):
        assert np.linalg.norm(h @ v[:, j] - w[j] * v[:, j]) < 1e-8


def test_davidson_reports_nonconvergence(rng):
    n = 200
    h = np.diag(rng.standard_normal(n)) + 0.1 * rng.standard_normal((n, n))
    h = 0.5 * (h + h.T)
    with pytest.raises(NoConvergence):
        davidson(lambda x: h @ x, n, tol=1e-14, max_iterations=2)


def test_serialization_round_trip():
    t = _three_leg(9, flux=QNum(1, 1))
    back, _ = BlockTensor.from_bytes(t.to_bytes())
    assert back.flux == t.flux
    assert [ix.sectors for ix in back.indices] == [ix.sectors for ix in t.indices]
    assert np.array_equal(back.to_dense(), t.to_dense())
