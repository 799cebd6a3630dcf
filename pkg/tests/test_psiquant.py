import functools
import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tma_sim.psiquant import (PrecisionMode, PsiTerm, PsiWeight, WeightRangeError, decompose_tensor,
                              decompose_weight, error_report, psi_multiply, reconstruct, worst_case_relative_error)

INT5, INT8 = PrecisionMode.INT5, PrecisionMode.INT8


@functools.lru_cache(maxsize=None)
def reachable(mode):
    """Every value of an ordered term assignment (independent of the library's search)."""
    options = [(0, 0)] + [(s, n) for n in range(mode.max_shift + 1) for s in (1, -1)]
    return frozenset(sum(s << n for s, n in combo) for combo in itertools.product(options, repeat=mode.n_terms))


def brute_force_best(w, mode):
    """Nearest reachable value, toward zero on ties."""
    return min(reachable(mode), key=lambda v: (abs(w - v), abs(v)))


def test_mode_properties():
    assert (INT5.n_terms, INT5.n_pairs, INT5.weight_range, INT5.max_shift) == (2, 1, (-16, 15), 4)
    assert (INT8.n_terms, INT8.n_pairs, INT8.weight_range, INT8.max_shift) == (4, 2, (-128, 127), 7)
    assert PrecisionMode.parse("INT5") is INT5
    with pytest.raises(ValueError):
        PrecisionMode.parse("int4")


def test_term_invariants():
    with pytest.raises(ValueError):
        PsiTerm(0, 3)
    with pytest.raises(ValueError):
        PsiTerm(2, 0)
    assert PsiTerm(-1, 3).value == -8


def test_zero_weight():
    pw = decompose_weight(0, INT5)
    assert all(t.s == 0 and t.n == 0 for t in pw.terms)
    assert pw.effective == 0


def test_seven_int5():
    pw = decompose_weight(7, INT5)
    assert set(pw.terms) == {PsiTerm(1, 3), PsiTerm(-1, 0)}
    assert reconstruct(pw) == 7


def test_eleven_rounds_toward_zero():
    pw = decompose_weight(11, INT5)
    assert set(pw.terms) == {PsiTerm(1, 3), PsiTerm(1, 1)}
    rep = error_report(pw)
    assert (rep.effective, rep.abs_error, rep.rel_error) == (10, 1, Fraction(1, 11))


def test_thirteen_int5():
    assert decompose_weight(13, INT5).effective == 12
    assert decompose_weight(-13, INT5).effective == -12


def test_85_int8_exact():
    pw = decompose_weight(85, INT8)
    assert len(pw.terms) == 4 and pw.effective == 85
    assert error_report(pw).abs_error == 0


def test_range_errors():
    with pytest.raises(WeightRangeError, match=r"\[-16, 15\]"):
        decompose_weight(16, INT5)
    with pytest.raises(WeightRangeError):
        decompose_weight(-129, INT8)
    with pytest.raises(WeightRangeError, match=r"index \(1, 0\)"):
        decompose_tensor(np.array([[1, 2], [40, 3]]), INT5)


@pytest.mark.parametrize("mode", [INT5, INT8])
def test_decomposition_matches_brute_force(mode):
    lo, hi = mode.weight_range
    for w in range(lo, hi + 1):
        pw = decompose_weight(w, mode)
        assert pw.effective == brute_force_best(w, mode), w
        assert len(pw.terms) == mode.n_terms
        assert all(t.n <= mode.max_shift for t in pw.terms)


def test_int5_structure_exhaustive():
    inexact = {w for w in range(-16, 16) if decompose_weight(w, INT5).effective != w}
    assert inexact == {-13, -11, 11, 13}
    assert all(abs(decompose_weight(w, INT5).effective - w) == 1 for w in inexact)


def test_int8_exact_exhaustive():
    assert all(decompose_weight(w, INT8).effective == w for w in range(-128, 128))


def test_worst_case():
    assert worst_case_relative_error(INT5) == Fraction(1, 11)
    assert worst_case_relative_error(INT8) == 0
    assert worst_case_relative_error(INT5, max_abs=10) == 0


def test_sign_symmetry():
    for mode in (INT5, INT8):
        lo, hi = mode.weight_range
        for w in range(-hi, hi + 1):
            assert decompose_weight(-w, mode).effective == -decompose_weight(w, mode).effective


def test_pairs_and_canonical_order():
    pw = decompose_weight(85, INT8)
    p1, p2 = pw.pair(1), pw.pair(2)
    assert p1 + p2 == pw.terms
    shifts = [t.n for t in pw.terms if t.s]
    assert shifts == sorted(shifts, reverse=True)
    with pytest.raises(ValueError):
        pw.pair(3)


def test_psi_multiply_examples():
    assert psi_multiply(decompose_weight(5, INT5), 10) == 50
    assert psi_multiply(decompose_weight(11, INT5), 100) == 1000
    assert all(psi_multiply(decompose_weight(w, INT8), 0) == 0 for w in range(-128, 128))
    with pytest.raises(ValueError):
        psi_multiply(decompose_weight(1, INT5), 256)


def test_psi_multiply_exhaustive_int5():
    for w in range(-16, 16):
        pw = decompose_weight(w, INT5)
        for x in range(256):
            assert psi_multiply(pw, x) == pw.effective * x


def test_psi_multiply_sampled_int8():
    rng = np.random.default_rng(7)
    ws = rng.integers(-128, 128, 100_000)
    xs = rng.integers(0, 256, 100_000)
    psi, _ = decompose_tensor(ws, INT8)
    # vectorised sum of s * (x << n) over the four terms
    prod = (psi.signs.astype(np.int64) * (xs[:, None] << psi.shifts.astype(np.int64))).sum(axis=1)
    assert np.array_equal(prod, ws * xs)
    for i in range(0, 100_000, 997):
        assert psi_multiply(psi[i], int(xs[i])) == int(ws[i] * xs[i])


def test_decompose_tensor_reports():
    psi, rep = decompose_tensor(np.zeros((2, 3), int), INT5)
    assert rep == [] and not psi.effective().any()
    psi, rep = decompose_tensor(np.arange(-16, 16), INT5)
    assert sorted(r.weight for r in rep) == [-13, -11, 11, 13]
    assert all(r.index == (r.weight + 16,) for r in rep)
    _, rep = decompose_tensor(np.arange(-128, 128), INT8)
    assert rep == []


def test_tensor_matches_scalar():
    rng = np.random.default_rng(3)
    w = rng.integers(-16, 16, (3, 4, 5))
    psi, _ = decompose_tensor(w, INT5)
    for idx in np.ndindex(w.shape):
        assert psi[idx] == decompose_weight(int(w[idx]), INT5)
    assert psi.shape == w.shape
    assert np.array_equal(psi.pass_weights(1), psi.effective())


def test_decompose_tensor_rejects_floats():
    with pytest.raises(TypeError):
        decompose_tensor(np.array([1.5]), INT5)


def test_psiweight_validation():
    with pytest.raises(ValueError):
        PsiWeight(INT5, (PsiTerm(1, 0),), 1)


@given(st.integers(-128, 127))
def test_determinism(w):
    assert decompose_weight(w, INT8) == decompose_weight(w, INT8)
    assert repr(decompose_weight(w, INT8)) == repr(decompose_weight(w, INT8))
