"""Self-check property suites behind ``tma-sim verify``.

Each check returns a :class:`CheckResult`; the CLI prints one line per check
and exits non-zero if any fails.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import datapath as dp
from .golden import conv2d_naive, conv2d_ref, quantized_fc_ref, quantized_ref
from .layers import LayerSpec
from .mapper import cycle_model, plan_layer, psum_traffic_model
from .memsys import SramModel
from .ne_array import configure, run_fc, run_layer
from .psiquant import PrecisionMode, decompose_tensor, psi_multiply, decompose_weight, worst_case_relative_error

SUITES = ("psi", "moa", "golden", "array")


@dataclass(frozen=True)
class CheckResult:
    suite: str
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.suite}/{self.name}: {self.detail} ({self.seconds:.2f}s)"


def _timed(suite, name, fn) -> CheckResult:
    t0 = time.perf_counter()
    try:
        passed, detail = fn()
    except Exception as e:  # a crash is a failed check, not a CLI crash
        passed, detail = False, f"{type(e).__name__}: {e}"
    return CheckResult(suite, name, passed, detail, time.perf_counter() - t0)


# -- psi -----------------------------------------------------------------------

def _int5_structure():
    mode = PrecisionMode.INT5
    lo, hi = mode.weight_range
    inexact = {w: decompose_weight(w, mode).effective for w in range(lo, hi + 1)
               if decompose_weight(w, mode).effective != w}
    worst = worst_case_relative_error(mode)
    ok = set(inexact) == {-13, -11, 11, 13} and all(abs(v - w) == 1 for w, v in inexact.items()) \
        and worst == Fraction(1, 11)
    return ok, f"inexact={sorted(inexact)} worst={worst}"


def _int8_exact():
    worst = worst_case_relative_error(PrecisionMode.INT8)
    return worst == 0, f"worst={worst}"


def _psi_multiply(rng):
    bad = 0
    for mode in PrecisionMode:
        lo, hi = mode.weight_range
        for w in range(lo, hi + 1):
            pw = decompose_weight(w, mode)
            for x in rng.integers(0, 256, 16):
                bad += psi_multiply(pw, int(x)) != pw.effective * int(x)
    return bad == 0, f"{bad} mismatches"


# -- moa -----------------------------------------------------------------------

def _moa_exhaustive(width: int = 3, n: int = 6):
    lo, hi = -(1 << (width - 1)), (1 << (width - 1))
    grid = np.array(list(itertools.product(range(lo, hi), repeat=n)), np.int64)
    sums, _ = dp.moa_reduce_array(grid, width, axis=1)
    ok = np.array_equal(sums, grid.sum(axis=1))
    # scalar tree on a stride through the same grid
    sample = grid[::97]
    ok &= all(dp.moa_reduce(row, width).sum == int(row.sum()) for row in sample)
    return bool(ok), f"{len(grid)} cases of {n} operands at width {width}"


def _moa_random(rng, samples: int, width: int = dp.MOA18_WIDTH):
    ops = rng.integers(-(1 << (width - 1)), 1 << (width - 1), (samples, 18))
    sums, num_p = dp.moa_reduce_array(ops, width, axis=1)
    ok = np.array_equal(sums, ops.sum(axis=1)) and np.array_equal(num_p, (ops < 0).sum(axis=1))
    return bool(ok), f"{samples} random 18-operand cases at width {width}"


# -- golden --------------------------------------------------------------------

def _golden_double(rng):
    for _ in range(5):
        c, h, w = (int(v) for v in rng.integers(1, 5, 3) + (0, 4, 4))
        k = int(rng.integers(1, 4))
        kh = int(rng.integers(1, 4))
        sh, sv, pad = (int(v) for v in rng.integers(1, 3, 3))
        x = rng.integers(0, 256, (c, h, w))
        wt = rng.integers(-128, 128, (k, c, kh, kh))
        b = rng.integers(-100, 100, k)
        if not np.array_equal(conv2d_ref(x, wt, b, sh, sv, pad), conv2d_naive(x, wt, b, sh, sv, pad)):
            return False, f"mismatch on shape {x.shape} kernel {kh}"
    return True, "5 random layers agree"


def _golden_int8(rng):
    x = rng.integers(0, 256, (4, 9, 9))
    wt = rng.integers(-128, 128, (3, 4, 3, 3))
    psi, _ = decompose_tensor(wt, PrecisionMode.INT8)
    return bool(np.array_equal(quantized_ref(x, psi), conv2d_ref(x, wt))), "INT8 PSI weights reproduce the original"


# -- array ---------------------------------------------------------------------

ARRAY_CASES = {
    "conv3": dict(kernel=(3, 3), stride=(1, 1), pad=1, size=(8, 14, 20), filters=5),
    "conv3_sv2": dict(kernel=(3, 3), stride=(1, 2), pad=1, size=(9, 13, 70), filters=4),
    "conv5": dict(kernel=(5, 5), stride=(1, 1), pad=2, size=(10, 12, 40), filters=3),
    "conv11": dict(kernel=(11, 11), stride=(4, 4), pad=0, size=(27, 27, 5), filters=2),
    "fc": dict(kernel=(1, 1), stride=(1, 1), pad=0, size=(1, 1, 2500), filters=3),
}


def random_layer(case: str, mode: PrecisionMode, rng, size=None, filters=None) -> LayerSpec:
    spec = ARRAY_CASES[case]
    h, w, c = size or spec["size"]
    sh, sv = spec["stride"]
    return LayerSpec(case, "fc" if case == "fc" else "conv", h, w, c, filters or spec["filters"],
                     kernel=spec["kernel"], h_stride=sh, v_stride=sv, pad=spec["pad"], precision=mode)


def simulate(layer: LayerSpec, rng):
    """Run ``layer`` on random data; returns (sim sums, golden sums, stats, sram)."""
    mode = layer.precision
    lo, hi = mode.weight_range
    wt = rng.integers(lo, hi + 1, layer.weight_shape)
    bias = rng.integers(-4096, 4096, layer.filters)
    x = rng.integers(0, 256, (layer.in_c, layer.in_h, layer.in_w))
    psi, _ = decompose_tensor(wt, mode)
    sram = SramModel()
    cfg = configure(layer)
    if layer.kind == "fc":
        out, stats = run_fc(cfg, x.ravel(), psi, bias, sram)
        ref = quantized_fc_ref(x, psi, bias)
    else:
        out, stats = run_layer(cfg, x, psi, bias, sram, pad=layer.pad)
        ref = quantized_ref(x, psi, bias, layer.h_stride, layer.v_stride, layer.pad)
    return out.reshape(ref.shape), ref, stats, sram


def _array_case(case, mode, rng):
    layer = random_layer(case, mode, rng)
    out, ref, stats, sram = simulate(layer, rng)
    plan = plan_layer(layer)
    model = cycle_model(plan)
    model.overflow18_events = stats.overflow18_events
    exact = np.array_equal(out, ref)
    agree = model == stats and psum_traffic_model(plan) == (sram.counters.psum_stores, sram.counters.psum_loads)
    return exact and agree, f"bit_exact={exact} model_agrees={agree} cycles={stats.total_cycles}"


def run_suites(suites=SUITES, seed: int = 0, samples: int = 100_000) -> list[CheckResult]:
    unknown = set(suites) - set(SUITES)
    if unknown:
        raise ValueError(f"unknown suite(s): {', '.join(sorted(unknown))}")
    rng = np.random.default_rng(seed)
    results = []
    if "psi" in suites:
        results += [_timed("psi", "int5_structure", _int5_structure),
                    _timed("psi", "int8_exact", _int8_exact),
                    _timed("psi", "multiply", lambda: _psi_multiply(rng))]
    if "moa" in suites:
        results += [_timed("moa", "exhaustive", _moa_exhaustive),
                    _timed("moa", "random18", lambda: _moa_random(rng, samples))]
    if "golden" in suites:
        results += [_timed("golden", "double_implementation", lambda: _golden_double(rng)),
                    _timed("golden", "int8_exactness", lambda: _golden_int8(rng))]
    if "array" in suites:
        for case in ARRAY_CASES:
            for mode in PrecisionMode:
                results.append(_timed("array", f"{case}_{mode.value}", lambda c=case, m=mode: _array_case(c, m, rng)))
    return results


__all__ = ["ARRAY_CASES", "CheckResult", "SUITES", "random_layer", "run_suites", "simulate"]
