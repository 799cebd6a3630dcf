import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tma_sim import datapath as dp
from tma_sim.psiquant import PrecisionMode, PsiTerm, decompose_tensor, decompose_weight

INT5, INT8 = PrecisionMode.INT5, PrecisionMode.INT8


def ne_from(weights, mode):
    return dp.NeState.from_weights([[decompose_weight(int(w), mode) for w in row] for row in weights])


def load_patch(ne, patch):
    """Shift a 3x3 patch in column by column so chain position j holds patch[:, j]."""
    for j in (2, 1, 0):
        ne, _ = dp.ne_shift_in(ne, [int(v) for v in patch[:, j]])
    return ne


# -- GEN_NEG / SAM ---------------------------------------------------------------

def test_gen_neg():
    assert dp.gen_neg(0) == 0
    assert dp.gen_neg(1) == -1
    assert dp.gen_neg(255) == -255
    assert all(dp.gen_neg(x) == -x for x in range(256))
    with pytest.raises(ValueError):
        dp.gen_neg(256)


def test_twos_complement_round_trip():
    for v in range(-256, 256):
        assert dp.from_twos_complement(dp.twos_complement(v, 9), 9) == v
    with pytest.raises(ValueError):
        dp.twos_complement(256, 9)


def test_sam_select():
    assert dp.sam_select(1, 100, -100) == 100
    assert dp.sam_select(-1, 100, -100) == -100
    assert dp.sam_select(0, 100, -100) == 0
    with pytest.raises(ValueError):
        dp.sam_select(2, 1, -1)


def test_sam_eval_examples():
    state = dp.SamState(((PsiTerm(1, 2), PsiTerm(-1, 0)),), 3, dp.gen_neg(3))
    assert dp.sam_eval(state, 1) == (12, -3)
    zero = dp.SamState(((PsiTerm(1, 4), PsiTerm(-1, 2)),), 0, 0)
    assert dp.sam_eval(zero, 1) == (0, 0)
    big = dp.SamState(((PsiTerm(1, 7), PsiTerm(0, 0)), (PsiTerm(0, 0), PsiTerm(0, 0))), 255, -255)
    assert dp.sam_eval(big, 1) == (32640, 0)
    with pytest.raises(ValueError):
        dp.sam_eval(big, 3)


def test_sam_passes_sum_to_product():
    for w in range(-128, 128):
        pw = decompose_weight(w, INT8)
        for x in (0, 1, 77, 255):
            st_ = dp.SamState.from_weight(pw, x)
            assert sum(sum(dp.sam_eval(st_, k)) for k in (1, 2)) == w * x


# -- MOA -------------------------------------------------------------------------

def test_moa_fig_example():
    ops = [-3, -5, 7, 2, -1, 4]
    r = dp.moa_reduce(ops, 5)
    low = sum(v & 31 for v in ops)
    assert (low, r.num_p, r.sum) == (100, 3, 4)
    assert r.sum == sum(ops)


def test_moa_uniform_cases():
    r = dp.moa_reduce([0] * 18, 15)
    assert (r.sum, r.num_p) == (0, 0)
    r = dp.moa_reduce([-1] * 18, 15)
    assert (r.sum, r.num_p) == (-18, 18)


def test_moa_rejects_wide_operand():
    with pytest.raises(ValueError):
        dp.moa_reduce([16], 5)
    with pytest.raises(ValueError):
        dp.moa_reduce_array(np.array([[16]]), 5, axis=1)


def test_moa_exhaustive_six_operands():
    for width in (2, 3):
        lo, hi = -(1 << (width - 1)), 1 << (width - 1)
        grid = np.array(list(itertools.product(range(lo, hi), repeat=6)), np.int64)
        sums, num_p = dp.moa_reduce_array(grid, width, axis=1)
        assert np.array_equal(sums, grid.sum(axis=1))
        assert np.array_equal(num_p, (grid < 0).sum(axis=1))
    for row in itertools.product(range(-2, 2), repeat=6):
        assert dp.moa_reduce(row, 2).sum == sum(row)


def test_moa_random_scalar_vs_array():
    rng = np.random.default_rng(11)
    ops = rng.integers(-(1 << 14), 1 << 14, (2000, 18))
    sums, _ = dp.moa_reduce_array(ops, 15, axis=1)
    for row, s in zip(ops, sums):
        r = dp.moa18(row.tolist())
        assert r.sum == int(s) == int(row.sum())


@settings(max_examples=300)
@given(st.lists(st.integers(-(1 << 14), (1 << 14) - 1), min_size=1, max_size=40))
def test_moa_identity_property(ops):
    r = dp.moa_reduce(ops, 15)
    assert r.sum == sum(ops)
    assert r.num_p == sum(v < 0 for v in ops)


def test_csa_reduces_to_two():
    vecs, stages = dp.csa_reduce(list(range(1, 19)))
    assert len(vecs) == 2 and sum(vecs) == sum(range(1, 19))
    assert stages == 6  # 18 -> 12 -> 8 -> 6 -> 4 -> 3 -> 2


def test_moa18_examples():
    assert dp.moa18([0] * 18).sum == 0
    r = dp.moa18([4080] * 18)
    assert r.sum == 73440 and not r.overflow18
    r = dp.moa18([32640] * 18, width=16)
    assert r.sum == 18 * 32640 and r.overflow18
    with pytest.raises(ValueError):
        dp.moa18([1] * 17)


def test_int5_never_overflows18():
    # worst INT5 PSI magnitude is 255 << 4
    assert dp.moa18([-4080] * 18).overflow18 is False
    assert dp.moa18([4080] * 18).overflow18 is False


def test_moa66():
    assert dp.moa66([0] * 64, 0, 5) == 5
    assert dp.moa66([1] * 64, 2, 0) == 66
    rng = np.random.default_rng(5)
    for _ in range(50):
        ops = rng.integers(-(1 << 20), 1 << 20, 66).tolist()
        assert dp.moa66(ops[:64], ops[64], ops[65]) == sum(ops)
    with pytest.raises(ValueError):
        dp.moa66([0] * 63, 0, 0)


def test_psi_width():
    assert dp.psi_width(INT5) == 15
    assert dp.psi_width(INT8) == 16
    assert dp.fits(255 << 7, dp.psi_width(INT8)) and dp.fits(-(255 << 7), dp.psi_width(INT8))


# -- NE ----------------------------------------------------------------------------

def test_shift_in_examples():
    ne = ne_from(np.zeros((3, 3), int), INT5)
    ne, ev = dp.ne_shift_in(ne, (1, 2, 3))
    assert [row[0] for row in ne.inputs()] == [1, 2, 3] and ev == (0, 0, 0)
    cols = [(10, 11, 12), (20, 21, 22), (30, 31, 32)]
    ne = ne_from(np.zeros((3, 3), int), INT5)
    for c in cols:
        ne, _ = dp.ne_shift_in(ne, c)
    assert ne.inputs() == [[30, 20, 10], [31, 21, 11], [32, 22, 12]]
    ne, ev = dp.ne_shift_in(ne, (0, 0, 0))
    assert ev == cols[0]
    with pytest.raises(ValueError):
        dp.ne_shift_in(ne, (1, 2))


@given(st.lists(st.tuples(*[st.integers(0, 255)] * 3), max_size=12))
def test_shift_chain_conservation(columns):
    ne = ne_from(np.zeros((3, 3), int), INT5)
    evicted = []
    for c in columns:
        ne, ev = dp.ne_shift_in(ne, c)
        evicted.append(ev)
    inserted = sorted(v for c in columns for v in c)
    held = [v for row in ne.inputs() for v in row]
    out = [v for e in evicted for v in e]
    # initial zeros pad the held + evicted multiset
    pool = sorted(held + out)
    for v in inserted:
        pool.remove(v)
    assert all(v == 0 for v in pool)


def test_ne_compute_zero_and_identity():
    rng = np.random.default_rng(2)
    patch = rng.integers(0, 256, (3, 3))
    ne = load_patch(ne_from(np.zeros((3, 3), int), INT5), patch)
    assert dp.ne_compute(ne, 1) == 0
    ident = np.zeros((3, 3), int)
    ident[1, 1] = 1
    ne = load_patch(ne_from(ident, INT5), patch)
    assert dp.ne_compute(ne, 1) == patch[1, 1]


@pytest.mark.parametrize("mode", [INT5, INT8])
def test_ne_full_product_random(mode):
    rng = np.random.default_rng(9)
    lo, hi = mode.weight_range
    for _ in range(200):
        w = rng.integers(lo, hi + 1, (3, 3))
        patch = rng.integers(0, 256, (3, 3))
        eff = decompose_tensor(w, mode)[0].effective()
        ne = load_patch(ne_from(w, mode), patch)
        assert dp.ne_full_product(ne) == int((eff * patch).sum())


@pytest.mark.parametrize("mode", [INT5, INT8])
def test_ne_vectorised_100k(mode):
    """Array PSI path over 10^5 random NE patches per mode."""
    rng = np.random.default_rng(17)
    lo, hi = mode.weight_range
    n = 100_000
    w = rng.integers(lo, hi + 1, (n, 9))
    x = rng.integers(0, 256, (n, 9))
    psi, _ = decompose_tensor(w, mode)
    acc = np.zeros(n, np.int64)
    for k in range(1, mode.n_pairs + 1):
        sl = slice(2 * k - 2, 2 * k)
        psis = dp.sam_psis_array(x[:, :, None], -x[:, :, None], psi.signs[..., sl], psi.shifts[..., sl])
        acc += dp.moa_reduce_array(psis.reshape(n, 18), dp.psi_width(mode), axis=1)[0]
    assert np.array_equal(acc, (psi.effective() * x).sum(axis=1))


def test_psi_accumulate():
    assert dp.psi_accumulate(0, 17, 1, n_pairs=1) == 17
    pw = decompose_weight(85, INT8)
    state = dp.SamState.from_weight(pw, 3)
    acc = 0
    for k in (1, 2):
        acc = dp.psi_accumulate(acc, sum(dp.sam_eval(state, k)), k)
    assert acc == 255
    ne = load_patch(ne_from(np.zeros((3, 3), int), INT8), np.full((3, 3), 200))
    assert dp.ne_full_product(ne) == 0
    with pytest.raises(ValueError):
        dp.psi_accumulate(0, 1, 2, n_pairs=1)


def test_bit_budget():
    b = dp.BitBudget(8)
    b.check([127, -128])
    assert b.ok
    b.check(np.array([128, -129, 5]))
    assert b.violations == [128, -129] and not b.ok
