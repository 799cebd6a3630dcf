"""Bit-level models of the NE datapath.

GEN_NEG negates activations once at the array edge; each SAM picks x, -x or
0 with a 3-1 mux and shifts the pick into two PSIs; the multi-operand adders
(MOA18 inside an NE, MOA66 per array column) reduce signed operands with a
carry-save tree over their unsigned low bits and then subtract
``NUM_P * 2**w`` instead of sign-extending every operand.

Sums are exact Python/NumPy integers. The 18-bit MOA18 output width is only
reported (``overflow18``), never applied.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .psiquant import PrecisionMode, PsiTerm, PsiWeight, ZERO_TERM

ACT_MAX = 255
NEG_WIDTH = 9
MOA18_WIDTH = 15
MOA18_OUT_BITS = 18
MOA66_WIDTH = 32


def psi_width(mode: PrecisionMode) -> int:
    """Low width for MOA18 operands: 15 bits, widened to hold 255 << 7 in INT8."""
    need = (ACT_MAX << mode.max_shift).bit_length() + 1
    return max(MOA18_WIDTH, need)


def fits(value: int, width: int) -> bool:
    return -(1 << (width - 1)) <= value < (1 << (width - 1))


def twos_complement(value: int, width: int) -> int:
    """Unsigned bit pattern of ``value`` at ``width`` bits."""
    if not fits(value, width):
        raise ValueError(f"{value} not representable in {width}-bit two's complement")
    return value & ((1 << width) - 1)


def from_twos_complement(bits: int, width: int) -> int:
    bits &= (1 << width) - 1
    return bits - (1 << width) if bits >> (width - 1) else bits


def _check_act(x: int) -> None:
    if not 0 <= x <= ACT_MAX:
        raise ValueError(f"activation {x} outside [0, {ACT_MAX}]")


def gen_neg(x: int) -> int:
    """Two's-complement negation at NEG_WIDTH bits (invert and add one)."""
    _check_act(x)
    bits = (~x + 1) & ((1 << NEG_WIDTH) - 1)
    return from_twos_complement(bits, NEG_WIDTH)


def sam_select(s: int, x: int, neg_x: int) -> int:
    if s == 1:
        return x
    if s == -1:
        return neg_x
    if s == 0:
        return 0
    raise ValueError(f"sign must be -1, 0 or +1, got {s}")


@dataclass(frozen=True)
class SamState:
    """One SAM: stationary weight pairs plus the activation held in its register."""

    weight_terms: tuple[tuple[PsiTerm, PsiTerm], ...]
    x: int = 0
    neg_x: int = 0

    @classmethod
    def from_weight(cls, pw: PsiWeight, x: int = 0) -> "SamState":
        pairs = tuple(pw.pair(k) for k in range(1, pw.mode.n_pairs + 1))
        return cls(pairs, x, gen_neg(x))

    def with_input(self, x: int, neg_x: int) -> "SamState":
        return replace(self, x=x, neg_x=neg_x)


def sam_eval(state: SamState, k: int) -> tuple[int, int]:
    """The two PSIs produced on pass ``k``."""
    if not 1 <= k <= len(state.weight_terms):
        raise ValueError(f"pass {k} outside [1, {len(state.weight_terms)}]")
    t1, t2 = state.weight_terms[k - 1]
    return (sam_select(t1.s, state.x, state.neg_x) << t1.n,
            sam_select(t2.s, state.x, state.neg_x) << t2.n)


@dataclass(frozen=True)
class MoaResult:
    sum: int
    num_p: int
    overflow18: bool
    stages: int = 0


def csa_reduce(vectors: Sequence[int]) -> tuple[list[int], int]:
    """Wallace-style 3:2 reduction of unsigned vectors down to two.

    Returns the remaining vectors and the number of full-adder stages used.
    """
    vecs = list(vectors)
    stages = 0
    while len(vecs) > 2:
        nxt = []
        full, rest = divmod(len(vecs), 3)
        for i in range(full):
            a, b, c = vecs[3 * i:3 * i + 3]
            nxt.append(a ^ b ^ c)
            nxt.append(((a & b) | (a & c) | (b & c)) << 1)
        nxt.extend(vecs[3 * full:])
        vecs = nxt
        stages += 1
    while len(vecs) < 2:
        vecs.append(0)
    return vecs, stages


def moa_reduce(operands: Sequence[int], width: int) -> MoaResult:
    """Sum signed operands using the simplified sign-extension identity.

    Each operand contributes only its ``width`` low bits; the sign extensions
    are replaced by a single ``-NUM_P << width`` correction term.
    """
    mask = (1 << width) - 1
    lows = []
    num_p = 0
    for op in operands:
        op = int(op)
        if not fits(op, width):
            raise ValueError(f"operand {op} not representable in {width}-bit two's complement")
        lows.append(op & mask)
        num_p += op < 0
    (a, b), stages = csa_reduce(lows)
    total = a + b - (num_p << width)
    return MoaResult(total, num_p, not fits(total, MOA18_OUT_BITS), stages)


def moa18(psis: Sequence[int], width: int = MOA18_WIDTH) -> MoaResult:
    if len(psis) != 18:
        raise ValueError(f"MOA18 takes 18 operands, got {len(psis)}")
    return moa_reduce(psis, width)


def moa66(ne_outputs: Sequence[int], psum: int, bias: int, width: int = MOA66_WIDTH) -> int:
    if len(ne_outputs) != 64:
        raise ValueError(f"MOA66 takes 64 NE outputs, got {len(ne_outputs)}")
    return moa_reduce([*ne_outputs, psum, bias], width).sum


@dataclass(frozen=True)
class NeState:
    """Nine SAMs as three horizontal shift chains; column 0 is the input side."""

    sams: tuple[tuple[SamState, ...], ...]
    psum_acc: int = 0

    @classmethod
    def from_weights(cls, weights: Sequence[Sequence[PsiWeight]]) -> "NeState":
        grid = tuple(tuple(SamState.from_weight(pw) for pw in row) for row in weights)
        if len(grid) != 3 or any(len(r) != 3 for r in grid):
            raise ValueError("an NE holds a 3x3 grid of weights")
        return cls(grid)

    @property
    def n_pairs(self) -> int:
        return len(self.sams[0][0].weight_terms)

    @property
    def mode(self) -> PrecisionMode:
        return PrecisionMode.INT8 if self.n_pairs == 2 else PrecisionMode.INT5

    def inputs(self) -> list[list[int]]:
        return [[sam.x for sam in row] for row in self.sams]


def ne_shift_in(ne: NeState, column: Sequence[int]) -> tuple[NeState, tuple[int, ...]]:
    """Shift every row chain by one; returns the new state and the evicted column."""
    if len(column) != 3:
        raise ValueError("an NE column holds 3 activations")
    rows = []
    evicted = []
    for row, x in zip(ne.sams, column):
        evicted.append(row[-1].x)
        xs = [x] + [sam.x for sam in row[:-1]]
        negs = [gen_neg(x)] + [sam.neg_x for sam in row[:-1]]
        rows.append(tuple(sam.with_input(v, n) for sam, v, n in zip(row, xs, negs)))
    return replace(ne, sams=tuple(rows)), tuple(evicted)


def ne_psis(ne: NeState, k: int) -> list[int]:
    out = []
    for row in ne.sams:
        for sam in row:
            out.extend(sam_eval(sam, k))
    return out


def ne_compute(ne: NeState, k: int, width: int | None = None) -> int:
    """MOA18 sum of the NE's 18 PSIs on pass ``k`` (width defaults to the mode's)."""
    return moa18(ne_psis(ne, k), width or psi_width(ne.mode)).sum


def psi_accumulate(acc: int, moa_out: int, k: int, n_pairs: int = 2) -> int:
    if not 1 <= k <= n_pairs:
        raise ValueError(f"pass {k} outside [1, {n_pairs}]")
    return acc + moa_out


def ne_full_product(ne: NeState, width: int | None = None) -> int:
    """Run every PSI pass through MOA18 and accumulate."""
    acc = 0
    for k in range(1, ne.n_pairs + 1):
        acc = psi_accumulate(acc, ne_compute(ne, k, width), k, ne.n_pairs)
    return acc


@dataclass
class BitBudget:
    """Optional width check: records every value that falls outside ``bits``."""

    bits: int
    violations: list[int] = field(default_factory=list)

    def check(self, values) -> None:
        arr = np.asarray(values)
        lo, hi = -(1 << (self.bits - 1)), (1 << (self.bits - 1)) - 1
        bad = arr[(arr < lo) | (arr > hi)]
        self.violations.extend(int(v) for v in np.ravel(bad))

    @property
    def ok(self) -> bool:
        return not self.violations


# Vectorised forms used by the array simulator. They implement the same
# identities as the scalar functions above and are cross-checked against them.

def sam_psis_array(x: np.ndarray, neg_x: np.ndarray, signs: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    """PSIs for broadcastable activation/sign/shift arrays."""
    mo_x = np.where(signs > 0, x, np.where(signs < 0, neg_x, 0)).astype(np.int64)
    return mo_x << shifts.astype(np.int64)


def csa_reduce_array(vectors: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """3:2 carry-save reduction of unsigned int64 arrays down to (sum, carry)."""
    vecs = list(vectors)
    while len(vecs) > 2:
        nxt = []
        full = len(vecs) // 3
        for i in range(full):
            a, b, c = vecs[3 * i:3 * i + 3]
            nxt.append(a ^ b ^ c)
            nxt.append(((a & b) | (a & c) | (b & c)) << 1)
        nxt.extend(vecs[3 * full:])
        vecs = nxt
    while len(vecs) < 2:
        vecs.append(np.zeros_like(vecs[0]) if vecs else np.zeros((), np.int64))
    return vecs[0], vecs[1]


def moa_reduce_array(operands: np.ndarray, width: int, axis) -> tuple[np.ndarray, np.ndarray]:
    """Array form of :func:`moa_reduce`: returns (sums, num_p) reduced over ``axis``.

    The low ``width`` bits of every operand go through the same carry-save
    tree as the scalar version; only the final add and NUM_P correction differ
    in that they run elementwise.
    """
    ops = np.asarray(operands, dtype=np.int64)
    lo, hi = -(1 << (width - 1)), (1 << (width - 1)) - 1
    if ops.size and (ops.min() < lo or ops.max() > hi):
        raise ValueError(f"operand outside {width}-bit two's complement")
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % ops.ndim for a in axes)
    keep = [d for d in range(ops.ndim) if d not in axes]
    flat = ops.transpose(*keep, *axes).reshape(*[ops.shape[d] for d in keep], -1)
    low = flat & ((1 << width) - 1)
    num_p = (flat < 0).sum(axis=-1)
    a, b = csa_reduce_array([low[..., i] for i in range(low.shape[-1])])
    return a + b - (num_p.astype(np.int64) << width), num_p


__all__ = [
    "BitBudget", "MoaResult", "NeState", "SamState", "ZERO_TERM", "csa_reduce", "csa_reduce_array", "gen_neg",
    "moa18", "moa66", "moa_reduce", "moa_reduce_array", "ne_compute", "ne_full_product",
    "ne_psis", "ne_shift_in", "psi_accumulate", "psi_width", "sam_eval", "sam_psis_array",
    "sam_select", "twos_complement",
]
