"""Partial sub-integer (PSI) weight decomposition.

A weight ``w`` is rewritten as ``2N`` signed power-of-two terms so that the
product ``w * x`` becomes a sum of shifted copies of ``x``::

    w * x = sum_k (s1k * (x << n1k) + s2k * (x << n2k)),  s in {-1, 0, +1}

INT5 weights use one pair of terms (N=1), INT8 weights use two (N=2).
The decomposition is found by exhaustive search over every legal term
assignment, so it doubles as its own oracle.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np


class PrecisionMode(enum.Enum):
    INT5 = "int5"
    INT8 = "int8"

    @property
    def n_pairs(self) -> int:
        return 1 if self is PrecisionMode.INT5 else 2

    @property
    def n_terms(self) -> int:
        return 2 * self.n_pairs

    @property
    def bits(self) -> int:
        return 5 if self is PrecisionMode.INT5 else 8

    @property
    def weight_range(self) -> tuple[int, int]:
        return -(1 << (self.bits - 1)), (1 << (self.bits - 1)) - 1

    @property
    def max_shift(self) -> int:
        return self.bits - 1

    @classmethod
    def parse(cls, value: "str | PrecisionMode") -> "PrecisionMode":
        if isinstance(value, PrecisionMode):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown precision {value!r}; expected int5 or int8") from None


class WeightRangeError(ValueError):
    pass


@dataclass(frozen=True)
class PsiTerm:
    s: int
    n: int

    def __post_init__(self):
        if self.s not in (-1, 0, 1):
            raise ValueError(f"sign must be -1, 0 or +1, got {self.s}")
        if self.n < 0:
            raise ValueError(f"shift must be non-negative, got {self.n}")
        if self.s == 0 and self.n != 0:
            raise ValueError("zero term must carry shift 0")

    @property
    def value(self) -> int:
        return self.s << self.n


ZERO_TERM = PsiTerm(0, 0)


@dataclass(frozen=True)
class PsiWeight:
    mode: PrecisionMode
    terms: tuple[PsiTerm, ...]
    original: int

    def __post_init__(self):
        if len(self.terms) != self.mode.n_terms:
            raise ValueError(f"{self.mode.name} needs {self.mode.n_terms} terms, got {len(self.terms)}")
        for t in self.terms:
            if t.n > self.mode.max_shift:
                raise ValueError(f"shift {t.n} exceeds {self.mode.max_shift} for {self.mode.name}")

    def pair(self, k: int) -> tuple[PsiTerm, PsiTerm]:
        """Terms used on pass ``k`` (1-based)."""
        if not 1 <= k <= self.mode.n_pairs:
            raise ValueError(f"pass {k} outside [1, {self.mode.n_pairs}]")
        return self.terms[2 * k - 2], self.terms[2 * k - 1]

    @property
    def effective(self) -> int:
        return reconstruct(self)


@dataclass(frozen=True)
class ErrorReport:
    weight: int
    effective: int
    abs_error: int
    rel_error: Fraction
    index: tuple[int, ...] = ()


def _candidate_key(terms: tuple[PsiTerm, ...]) -> tuple:
    nonzero = [t for t in terms if t.s != 0]
    return (len(nonzero), tuple(sorted(t.n for t in nonzero)), tuple(t.s for t in _canonical_order(terms)))


def _canonical_order(terms) -> tuple[PsiTerm, ...]:
    # Largest shifts first so pass 1 carries the most significant pair; zeros trail.
    nonzero = sorted((t for t in terms if t.s != 0), key=lambda t: (-t.n, -t.s))
    return tuple(nonzero) + (ZERO_TERM,) * (len(terms) - len(nonzero))


@lru_cache(maxsize=None)
def _value_table(mode: PrecisionMode) -> dict[int, tuple[PsiTerm, ...]]:
    """Best term assignment for every representable value."""
    options = [ZERO_TERM] + [PsiTerm(s, n) for n in range(mode.max_shift + 1) for s in (1, -1)]
    best: dict[int, tuple[tuple, tuple[PsiTerm, ...]]] = {}
    # Term order does not change the sum, so multisets cover the whole space.
    for combo in itertools.combinations_with_replacement(options, mode.n_terms):
        v = sum(t.value for t in combo)
        key = _candidate_key(combo)
        if v not in best or key < best[v][0]:
            best[v] = (key, _canonical_order(combo))
    return {v: terms for v, (_, terms) in best.items()}


@lru_cache(maxsize=None)
def _decomposition_table(mode: PrecisionMode) -> dict[int, tuple[PsiTerm, ...]]:
    values = _value_table(mode)
    lo, hi = mode.weight_range
    table = {}
    for w in range(lo, hi + 1):
        v = min(values, key=lambda v: (abs(w - v), abs(v)))
        table[w] = values[v]
    return table


def _check_range(w: int, mode: PrecisionMode) -> None:
    lo, hi = mode.weight_range
    if not lo <= w <= hi:
        raise WeightRangeError(f"weight {w} outside {mode.name} range [{lo}, {hi}]")


def decompose_weight(w: int, mode: PrecisionMode) -> PsiWeight:
    """Nearest representable PSI form of ``w``; ties round toward zero."""
    w = int(w)
    _check_range(w, mode)
    return PsiWeight(mode, _decomposition_table(mode)[w], w)


def reconstruct(pw: PsiWeight) -> int:
    return sum(t.value for t in pw.terms)


def psi_multiply(pw: PsiWeight, x: int) -> int:
    if not 0 <= x <= 255:
        raise ValueError(f"activation {x} outside [0, 255]")
    return sum(t.s * (x << t.n) for t in pw.terms)


def error_report(pw: PsiWeight, index: tuple[int, ...] = ()) -> ErrorReport:
    eff = reconstruct(pw)
    err = abs(eff - pw.original)
    rel = Fraction(err, abs(pw.original)) if pw.original else Fraction(0)
    return ErrorReport(pw.original, eff, err, rel, index)


@dataclass(frozen=True)
class PsiTensor:
    """Elementwise PSI decomposition of an integer tensor.

    ``signs`` and ``shifts`` have shape ``weights.shape + (n_terms,)``; term
    ``2k-2`` and ``2k-1`` along the last axis form pass ``k``.
    """

    mode: PrecisionMode
    signs: np.ndarray
    shifts: np.ndarray
    original: np.ndarray

    @property
    def shape(self) -> tuple[int, ...]:
        return self.original.shape

    def __getitem__(self, index) -> PsiWeight:
        index = index if isinstance(index, tuple) else (index,)
        terms = tuple(PsiTerm(int(s), int(n)) for s, n in zip(self.signs[index], self.shifts[index]))
        return PsiWeight(self.mode, terms, int(self.original[index]))

    def effective(self) -> np.ndarray:
        """Reconstructed weights as an int64 array."""
        return (self.signs.astype(np.int64) << self.shifts.astype(np.int64)).sum(axis=-1)

    def pass_weights(self, k: int) -> np.ndarray:
        """Partial weight realised on pass ``k`` (sum of that pair's terms)."""
        sl = slice(2 * k - 2, 2 * k)
        return (self.signs[..., sl].astype(np.int64) << self.shifts[..., sl].astype(np.int64)).sum(axis=-1)


@lru_cache(maxsize=None)
def _lookup_arrays(mode: PrecisionMode) -> tuple[np.ndarray, np.ndarray]:
    table = _decomposition_table(mode)
    lo, _ = mode.weight_range
    signs = np.array([[t.s for t in table[w]] for w in sorted(table)], dtype=np.int8)
    shifts = np.array([[t.n for t in table[w]] for w in sorted(table)], dtype=np.int8)
    signs.setflags(write=False)
    shifts.setflags(write=False)
    return signs, shifts


def decompose_tensor(weights, mode: PrecisionMode) -> tuple[PsiTensor, list[ErrorReport]]:
    """Decompose every entry; also list the entries that cannot be represented exactly."""
    w = np.asarray(weights)
    if w.size and not np.issubdtype(w.dtype, np.integer):
        raise TypeError(f"weights must be integers, got {w.dtype}")
    w = w.astype(np.int64)
    lo, hi = mode.weight_range
    bad = np.argwhere((w < lo) | (w > hi))
    if len(bad):
        idx = tuple(int(i) for i in bad[0])
        raise WeightRangeError(f"weight {int(w[idx])} at index {idx} outside {mode.name} range [{lo}, {hi}]")
    sign_lut, shift_lut = _lookup_arrays(mode)
    signs = sign_lut[w - lo]
    shifts = shift_lut[w - lo]
    pt = PsiTensor(mode, signs, shifts, w)
    eff = pt.effective()
    reports = [error_report(pt[tuple(int(i) for i in idx)], tuple(int(i) for i in idx))
               for idx in np.argwhere(eff != w)]
    return pt, reports


def worst_case_relative_error(mode: PrecisionMode, max_abs: int | None = None) -> Fraction:
    """Exhaustive worst relative error over the mode's range (optionally ``|w| <= max_abs``)."""
    lo, hi = mode.weight_range
    worst = Fraction(0)
    for w in range(lo, hi + 1):
        if max_abs is not None and abs(w) > max_abs:
            continue
        worst = max(worst, error_report(decompose_weight(w, mode)).rel_error)
    return worst
