"""The 4x4x16 NE array: configuration cases, weight placement and the
shift-by-shift dataflow.

Geometry used throughout: the array exposes 12 FIFO rows x 16 depth lanes,
each feeding a horizontal shift chain of 12 SAM positions (4 NE columns of 3
SAMs). Position 0 is the input side; position 11 evicts into the feedback
path. A configuration case groups the 12 rows into blocks of ``window``
spatial rows (one block per 16-channel slice) and the 12 positions into
``window``-wide slots, one filter per slot:

    CONV3   window 3   4 slots (one NE column each)    depth tile 64
    CONV5   window 6   2 slots (two NE columns each)   depth tile 32
    CONV11  window 12  1 slot  (whole array)           depth tile 16
    FC      2304 inputs held in the full array, one dot product per 12 shifts

Within a slot, kernel column ``j`` sits at offset ``kw - 1 - j`` (older
pixels travel further), so unused kernel rows/columns fall at the bottom and
oldest edge of each window and hold zero weights.
"""
from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import datapath as dp
from .layers import LayerSpec
from .memsys import SramModel
from .psiquant import PrecisionMode, PsiTensor

NE_ROWS = 4
NE_COLS = 4
NE_DEPTH = 16
SAM_SIDE = 3
FIFO_ROWS = NE_ROWS * SAM_SIDE
CHAIN_LEN = NE_COLS * SAM_SIDE
FIFO_CAPACITY = 224
PEAK_MACS = FIFO_ROWS * NE_DEPTH * CHAIN_LEN
FC_TILE = PEAK_MACS
FC_SHIFTS = CHAIN_LEN


class ArrayCase(enum.Enum):
    CONV3 = "conv3"
    CONV5 = "conv5"
    CONV11 = "conv11"
    FC = "fc"


# window, filters_per_pass, depth_tile, psums_per_step, NE block per filter
_CASES = {
    ArrayCase.CONV3: (3, 4, 64, 4, (1, 1)),
    ArrayCase.CONV5: (6, 2, 32, 2, (2, 2)),
    ArrayCase.CONV11: (12, 1, 16, 1, (4, 4)),
    ArrayCase.FC: (12, 1, None, 1, (4, 4)),
}


class ConfigError(ValueError):
    pass


class FifoError(RuntimeError):
    pass


@dataclass(frozen=True)
class ArrayConfig:
    case: ArrayCase
    window: int
    filters_per_pass: int
    depth_tile: int | None
    psums_per_step: int
    ne_block: tuple[int, int]
    v_stride: int
    h_stride: int
    mode: PrecisionMode
    kernel: tuple[int, int]

    @property
    def slots(self) -> int:
        return self.filters_per_pass

    @property
    def cols_per_slot(self) -> int:
        return NE_COLS // self.filters_per_pass

    @property
    def channel_blocks(self) -> int:
        return FIFO_ROWS // self.window

    def row_period(self, w_pad: int) -> int:
        """Shifts per output row: the padded row, at least a full chain, aligned to ``h_stride``."""
        return -(-max(w_pad, CHAIN_LEN) // self.h_stride) * self.h_stride

    def drain(self, w_pad: int, w_out: int, active_slots: int) -> int:
        """Extra shifts after the last row so the trailing active slot finishes."""
        last_emit = (w_out - 1) * self.h_stride + self.kernel[1] + (active_slots - 1) * self.window
        return max(0, last_emit - self.row_period(w_pad))

    def row_sources(self, y: int) -> list[str]:
        """Source of each FIFO row while streaming output row ``y``: SRAM or FEEDBACK.

        On row advances the first ``window - v_stride`` rows of every block
        reuse pixels fed back from the rows ``v_stride`` below them.
        """
        w, sv = self.window, self.v_stride
        return ["FEEDBACK" if y > 0 and rho % w < w - sv else "SRAM" for rho in range(FIFO_ROWS)]

    def is_eval_shift(self, t: int) -> bool:
        """Whether shift ``t`` (1-based within a pass) evaluates and accumulates PSIs.

        Horizontal stride is not configurable in the array: every shift computes,
        but the PSI accumulation (and any output) only happens every ``h_stride``
        shifts in each slot's phase.
        """
        kw = self.kernel[1]
        return any((t - kw - g * self.window) % self.h_stride == 0 for g in range(self.slots))


def configure(layer: LayerSpec) -> ArrayConfig:
    if layer.kind == "fc":
        case = ArrayCase.FC
        if layer.h_stride != 1 or layer.v_stride != 1:
            raise ConfigError(f"{layer.name}: FC layers take no stride")
    else:
        k = max(layer.kernel)
        if k <= 3:
            case = ArrayCase.CONV3
        elif k <= 5:
            case = ArrayCase.CONV5
        elif k <= 11:
            case = ArrayCase.CONV11
        else:
            raise ConfigError(f"{layer.name}: kernel {layer.kernel} exceeds 11x11")
    window, fpp, depth, psums, block = _CASES[case]
    if case is not ArrayCase.FC:
        if layer.v_stride > window:
            raise ConfigError(f"{layer.name}: vertical stride {layer.v_stride} exceeds {case.name} window {window}")
        if layer.h_stride > FIFO_CAPACITY:
            raise ConfigError(f"{layer.name}: horizontal stride {layer.h_stride} unsupported")
    return ArrayConfig(case, window, fpp, depth, psums, block, layer.v_stride, layer.h_stride,
                       layer.precision, layer.kernel)


@dataclass
class WeightPlan:
    """Register contents of every SAM, laid out as (term, fifo_row, lane, position)."""

    signs: np.ndarray
    shifts: np.ndarray
    zero_padded: np.ndarray
    filters: int
    channels: int

    @property
    def zero_padded_cells(self) -> set[tuple[int, int]]:
        """(fifo_row, position) pairs forced to zero by kernel padding."""
        return {(int(r), int(q)) for r, q in np.argwhere(self.zero_padded)}

    def pass_weights(self, k: int) -> np.ndarray:
        sl = slice(2 * k - 2, 2 * k)
        return (self.signs[sl].astype(np.int64) << self.shifts[sl].astype(np.int64)).sum(axis=0)

    def effective(self) -> np.ndarray:
        return (self.signs.astype(np.int64) << self.shifts.astype(np.int64)).sum(axis=0)


def _empty_plan(mode: PrecisionMode) -> tuple[np.ndarray, np.ndarray]:
    shape = (mode.n_terms, FIFO_ROWS, NE_DEPTH, CHAIN_LEN)
    return np.zeros(shape, np.int8), np.zeros(shape, np.int8)


def load_weights(config: ArrayConfig, psi: PsiTensor) -> WeightPlan:
    """Place one filter tile into the SAM weight registers.

    Conv tiles are (filters, channels, kh, kw) with at most ``filters_per_pass``
    filters and ``depth_tile`` channels; FC tiles are a flat vector of at most
    2304 weights.
    """
    if psi.mode is not config.mode:
        raise ConfigError(f"weights are {psi.mode.name}, array configured for {config.mode.name}")
    signs, shifts = _empty_plan(config.mode)
    if config.case is ArrayCase.FC:
        if psi.signs.ndim != 2 or psi.shape[0] > FC_TILE:
            raise ConfigError(f"FC tile must be a vector of at most {FC_TILE} weights, got {psi.shape}")
        n = psi.shape[0]
        flat_s = signs.transpose(1, 2, 3, 0).reshape(FC_TILE, -1)
        flat_n = shifts.transpose(1, 2, 3, 0).reshape(FC_TILE, -1)
        flat_s[:n] = psi.signs
        flat_n[:n] = psi.shifts
        signs = flat_s.reshape(FIFO_ROWS, NE_DEPTH, CHAIN_LEN, -1).transpose(3, 0, 1, 2).copy()
        shifts = flat_n.reshape(FIFO_ROWS, NE_DEPTH, CHAIN_LEN, -1).transpose(3, 0, 1, 2).copy()
        return WeightPlan(signs, shifts, np.zeros((FIFO_ROWS, CHAIN_LEN), bool), 1, n)

    if psi.signs.ndim != 5:
        raise ConfigError(f"conv tile must be (filters, channels, kh, kw), got {psi.shape}")
    f, c, kh, kw = psi.shape
    w = config.window
    if f > config.filters_per_pass or c > config.depth_tile or kh > w or kw > w:
        raise ConfigError(
            f"tile {psi.shape} exceeds {config.case.name} capacity "
            f"({config.filters_per_pass} x {config.depth_tile} x {w} x {w})")
    rho, lane, pos = np.meshgrid(np.arange(FIFO_ROWS), np.arange(NE_DEPTH), np.arange(CHAIN_LEN), indexing="ij")
    row_i = rho % w
    chan = NE_DEPTH * (rho // w) + lane
    slot = pos // w
    col_j = kw - 1 - pos % w
    kernel_cell = (row_i < kh) & (col_j >= 0)
    valid = kernel_cell & (chan < c) & (slot < f)
    sel = (slot[valid], chan[valid], row_i[valid], col_j[valid])
    signs[:, valid] = psi.signs[sel].T
    shifts[:, valid] = psi.shifts[sel].T
    zero_padded = ~kernel_cell[:, 0, :]
    return WeightPlan(signs, shifts, zero_padded, f, c)


class FifoBank:
    """12 row queues; each entry carries the 16 depth lanes of one pixel."""

    SRAM = "SRAM"
    FEEDBACK = "FEEDBACK"

    def __init__(self, rows: int = FIFO_ROWS, capacity: int = FIFO_CAPACITY):
        self.capacity = capacity
        self.queues = [deque() for _ in range(rows)]
        self.tags = [self.SRAM] * rows
        self.max_depth = 0

    def reset(self) -> None:
        for q in self.queues:
            q.clear()

    def push(self, row: int, lanes: np.ndarray) -> None:
        q = self.queues[row]
        if len(q) >= self.capacity:
            raise FifoError(f"FIFO row {row} overflow (capacity {self.capacity})")
        q.append(lanes)
        self.max_depth = max(self.max_depth, len(q))

    def pop(self, row: int) -> np.ndarray:
        q = self.queues[row]
        if not q:
            raise FifoError(f"FIFO row {row} underflow")
        return q.popleft()


@dataclass
class CycleStats:
    shift_cycles: int = 0
    fill_cycles: int = 0
    psi_extra_cycles: int = 0
    weight_load_events: int = 0
    weight_load_cycles: int = 0
    fifo_feedback: int = 0
    row_advances: int = 0
    fresh_rows_on_advance: int = 0
    overflow18_events: int = 0

    @property
    def total_cycles(self) -> int:
        return self.shift_cycles + self.fill_cycles + self.psi_extra_cycles + self.weight_load_cycles

    def __add__(self, other: "CycleStats") -> "CycleStats":
        return CycleStats(**{k: getattr(self, k) + getattr(other, k) for k in self.__dataclass_fields__})

    def cycle_fields(self) -> dict:
        return {
            "shift_cycles": self.shift_cycles,
            "fill_cycles": self.fill_cycles,
            "psi_extra_cycles": self.psi_extra_cycles,
            "weight_load_events": self.weight_load_events,
            "weight_load_cycles": self.weight_load_cycles,
            "total_cycles": self.total_cycles,
        }


class NeArray:
    """Register state of the whole array plus its FIFO bank."""

    def __init__(self, config: ArrayConfig, width_budget: dp.BitBudget | None = None):
        self.config = config
        self.chain = np.zeros((FIFO_ROWS, NE_DEPTH, CHAIN_LEN), np.int64)
        self.neg_chain = np.zeros_like(self.chain)
        self.fifo = FifoBank()
        self.plan: WeightPlan | None = None
        self.width_budget = width_budget
        self.moa18_width = dp.psi_width(config.mode)
        self.overflow18 = 0

    def load_weights(self, plan: WeightPlan) -> None:
        self.plan = plan

    def input_shift(self, incoming: np.ndarray) -> np.ndarray:
        """One SH_EN cycle: every chain moves one position; returns the evicted column."""
        evicted = self.chain[:, :, -1].copy()
        self.chain[:, :, 1:] = self.chain[:, :, :-1]
        self.neg_chain[:, :, 1:] = self.neg_chain[:, :, :-1]
        self.chain[:, :, 0] = incoming
        self.neg_chain[:, :, 0] = -incoming  # GEN_NEG at the array edge
        return evicted

    def ne_outputs(self) -> np.ndarray:
        """PSI-accumulated output of every NE, shape (ne_row, lane, ne_col)."""
        if self.plan is None:
            raise RuntimeError("weights not loaded")
        acc = np.zeros((NE_ROWS, NE_DEPTH, NE_COLS), np.int64)
        for k in range(1, self.config.mode.n_pairs + 1):
            sl = slice(2 * k - 2, 2 * k)
            psis = dp.sam_psis_array(self.chain[None], self.neg_chain[None], self.plan.signs[sl], self.plan.shifts[sl])
            grouped = psis.reshape(2, NE_ROWS, SAM_SIDE, NE_DEPTH, NE_COLS, SAM_SIDE)
            moa, _ = dp.moa_reduce_array(grouped, self.moa18_width, axis=(0, 2, 5))
            self.overflow18 += int(((moa < -(1 << 17)) | (moa >= (1 << 17))).sum())
            acc = acc + moa  # PSI accumulation across passes
        if self.width_budget is not None:
            self.width_budget.check(acc)
        return acc

    def column_sums(self, ne_out: np.ndarray, psum: np.ndarray, bias: np.ndarray) -> np.ndarray:
        """MOA66 per NE column: 64 NE outputs + Psum + bias."""
        ops = np.concatenate([ne_out.transpose(2, 0, 1).reshape(NE_COLS, -1), psum[:, None], bias[:, None]], axis=1)
        sums, _ = dp.moa_reduce_array(ops, dp.MOA66_WIDTH, axis=1)
        if self.width_budget is not None:
            self.width_budget.check(sums)
        return sums

    def top_adders(self, col_sums: np.ndarray) -> np.ndarray:
        """Binary adders above the array: combine the columns of each slot."""
        c = [int(v) for v in col_sums]
        if self.config.cols_per_slot == 1:
            return np.array(c, np.int64)
        if self.config.cols_per_slot == 2:
            return np.array([c[0] + c[1], c[2] + c[3]], np.int64)
        return np.array([(c[0] + c[1]) + (c[2] + c[3])], np.int64)


def _setup_memory(sram: SramModel | None, layer_index: int, x, weights, bias, input_region: str | None):
    sram = sram if sram is not None else SramModel()
    if input_region is None:
        input_region = "Inputs"
        sram.load_from_dram(input_region, x, 1)
    sram.load_from_dram("Weights", weights, 1)
    sram.load_from_dram("Bias", bias, 4)
    return sram, input_region


def run_layer(config: ArrayConfig, x, psi: PsiTensor, bias=None, sram: SramModel | None = None,
              layer_index: int = 1, input_region: str | None = None, pad: int = 0,
              weight_load_cycles: int = 0, width_budget: dp.BitBudget | None = None):
    """Simulate one conv layer shift by shift.

    ``x`` is the (C, H, W) uint8 input (already resident in ``input_region`` if
    that is given). Final sums are staged in ``PsumOfLayer{n}``; returns them as
    a (K, H_out, W_out) int64 array together with the measured CycleStats.
    """
    if config.case is ArrayCase.FC:
        raise ConfigError("use run_fc for FC layers")
    x = np.asarray(x)
    C, H, W = x.shape
    K, Cw, kh, kw = psi.shape
    if Cw != C or (kh, kw) != config.kernel:
        raise ConfigError(f"weights {psi.shape} do not match input {x.shape} / kernel {config.kernel}")
    bias = np.zeros(K, np.int64) if bias is None else np.asarray(bias, np.int64)
    sram, input_region = _setup_memory(sram, layer_index, x, psi.original, bias, input_region)

    hp, wp = H + 2 * pad, W + 2 * pad
    h_out = (hp - kh) // config.v_stride + 1
    w_out = (wp - kw) // config.h_stride + 1
    sram.register_layer(layer_index, K * h_out * w_out)

    arr = NeArray(config, width_budget)
    stats = CycleStats()
    depth_tiles = math.ceil(C / config.depth_tile)
    groups = math.ceil(K / config.filters_per_pass)
    for g in range(groups):
        for tile in range(depth_tiles):
            stats += _conv_pass(arr, sram, input_region, layer_index, psi, bias, (C, H, W), pad,
                                (h_out, w_out), g, tile, depth_tiles, weight_load_cycles)
    stats.overflow18_events = arr.overflow18
    out = sram.final_sums(layer_index).reshape(K, h_out, w_out)
    return out, stats


def _conv_pass(arr: NeArray, sram: SramModel, input_region: str, layer_index: int, psi: PsiTensor,
               bias: np.ndarray, in_shape, pad: int, out_hw, group: int, tile: int, depth_tiles: int,
               weight_load_cycles: int) -> CycleStats:
    cfg = arr.config
    C, H, W = in_shape
    h_out, w_out = out_hw
    K = psi.shape[0]
    kh, kw = cfg.kernel
    w, sv, sh = cfg.window, cfg.v_stride, cfg.h_stride
    f0 = group * cfg.filters_per_pass
    c0 = tile * cfg.depth_tile
    n_f = min(cfg.filters_per_pass, K - f0)
    n_c = min(cfg.depth_tile, C - c0)
    final = tile == depth_tiles - 1
    stats = CycleStats(weight_load_events=1, weight_load_cycles=weight_load_cycles)

    # Weight decomposition reads the raw tile once per load.
    for f in range(f0, f0 + n_f):
        sram.read("Weights", ((f * C) + c0) * kh * kw, n_c * kh * kw)
    arr.load_weights(load_weights(cfg, _slice_psi(psi, (slice(f0, f0 + n_f), slice(c0, c0 + n_c)))))

    wp = W + 2 * pad
    period = cfg.row_period(wp)
    n_shifts = h_out * period + cfg.drain(wp, w_out, n_f)
    x0_max = (w_out - 1) * sh
    fifo = arr.fifo
    fifo.reset()
    fresh: dict[int, np.ndarray] = {}
    pending: dict[tuple[int, int], list[tuple[int, int]]] = {}
    zero_lanes = np.zeros(NE_DEPTH, np.int64)

    for t in range(1, n_shifts + 1):
        y_in, px = divmod(t - 1, period)

        # Route the column leaving position 11 back into the FIFOs, but only
        # while a later output row still needs it.
        evicted_t = t - CHAIN_LEN
        if evicted_t >= 1 and (evicted_t - 1) // period < h_out - 1:
            ev = arr.chain[:, :, -1]
            for rho in range(FIFO_ROWS):
                if rho % w >= sv:
                    fifo.push(rho - sv, ev[rho].copy())
                    stats.fifo_feedback += NE_DEPTH

        if y_in < h_out:
            if px == 0:
                fresh = _start_row(fifo, sram, input_region, cfg, y_in, c0, n_c, (C, H, W), pad, period)
                if y_in > 0:
                    stats.row_advances += 1
                    stats.fresh_rows_on_advance += len(fresh)
            incoming = np.empty((FIFO_ROWS, NE_DEPTH), np.int64)
            for rho in range(FIFO_ROWS):
                # The row mux takes SRAM data directly; the queue only buffers feedback.
                incoming[rho] = fresh[rho][px] if rho in fresh else fifo.pop(rho)
            if px < wp:
                stats.shift_cycles += 1
            else:
                stats.fill_cycles += 1
        else:
            incoming = np.broadcast_to(zero_lanes, (FIFO_ROWS, NE_DEPTH))
            stats.fill_cycles += 1
        arr.input_shift(incoming)

        if cfg.is_eval_shift(t):
            stats.psi_extra_cycles += cfg.mode.n_pairs - 1

        emits = []
        for g in range(n_f):
            v = t - kw - g * w
            if v < 0:
                continue
            y, x0 = divmod(v, period)
            if y < h_out and x0 <= x0_max and x0 % sh == 0:
                emits.append((g, y, x0 // sh))
        if not emits:
            continue

        ne_out = arr.ne_outputs()
        psum_in = np.zeros(NE_COLS, np.int64)
        bias_in = np.zeros(NE_COLS, np.int64)
        for g, y, xo in emits:
            f = f0 + g
            col = g * cfg.cols_per_slot
            idx = (f * h_out + y) * w_out + xo
            if tile > 0:
                psum_in[col] = sram.load_psums(layer_index, idx)[0]
            else:
                bias_in[col] = sram.read("Bias", f, 1)[0]
        slot_sums = arr.top_adders(arr.column_sums(ne_out, psum_in, bias_in))
        for g, y, xo in emits:
            idx = ((f0 + g) * h_out + y) * w_out + xo
            step = pending.setdefault((y, xo), [])
            step.append((idx, int(slot_sums[g])))
            if len(step) == n_f:
                sram.store_psums(layer_index, step)
                del pending[(y, xo)]
    if pending:
        raise RuntimeError(f"{len(pending)} incomplete output steps after pass")
    return stats


def _slice_psi(psi: PsiTensor, index) -> PsiTensor:
    return PsiTensor(psi.mode, psi.signs[index], psi.shifts[index], psi.original[index])


def _start_row(fifo: FifoBank, sram: SramModel, region: str, cfg: ArrayConfig, y: int, c0: int, n_c: int,
               in_shape, pad: int, period: int) -> dict[int, np.ndarray]:
    """Fetch the SRAM-sourced rows for output row ``y``; tag every FIFO row."""
    C, H, W = in_shape
    w, sv = cfg.window, cfg.v_stride
    fresh = {}
    fifo.tags = cfg.row_sources(y)
    for rho in range(FIFO_ROWS):
        i = rho % w
        if fifo.tags[rho] == FifoBank.FEEDBACK:
            continue
        data = np.zeros((period, NE_DEPTH), np.int64)
        yy = y * sv + i - pad
        block = rho // w
        lanes = np.arange(NE_DEPTH)
        chans = NE_DEPTH * block + lanes
        real = chans < n_c
        if 0 <= yy < H and real.any():
            cc = c0 + chans[real]
            idx = ((cc[:, None] * H + yy) * W + np.arange(W)[None, :]).ravel()
            vals = sram.gather(region, idx).reshape(real.sum(), W)
            data[pad:pad + W, lanes[real]] = vals.T
        fresh[rho] = data
    return fresh


def run_fc(config: ArrayConfig, x, psi: PsiTensor, bias=None, sram: SramModel | None = None,
           layer_index: int = 1, input_region: str | None = None, weight_load_cycles: int = 0,
           width_budget: dp.BitBudget | None = None):
    """Simulate an FC layer: 2304-input dot-product tiles, 12 shifts each."""
    if config.case is not ArrayCase.FC:
        raise ConfigError("run_fc needs an FC configuration")
    x = np.asarray(x).ravel()
    M, N = psi.shape
    if N != x.size:
        raise ConfigError(f"weights {psi.shape} do not match input length {x.size}")
    bias = np.zeros(M, np.int64) if bias is None else np.asarray(bias, np.int64)
    sram, input_region = _setup_memory(sram, layer_index, x, psi.original, bias, input_region)
    sram.register_layer(layer_index, M)

    arr = NeArray(config, width_budget)
    stats = CycleStats()
    tiles = math.ceil(N / FC_TILE)
    # Entry order per FIFO row: position 11 enters first, position 0 last.
    layout = np.arange(FC_TILE).reshape(FIFO_ROWS, NE_DEPTH, CHAIN_LEN)[:, :, ::-1]
    for tile in range(tiles):
        e0 = tile * FC_TILE
        n = min(FC_TILE, N - e0)
        for m in range(M):
            sram.read("Weights", m * N + e0, n)
            arr.load_weights(load_weights(config, _slice_psi(psi, (m, slice(e0, e0 + n)))))
            stats.weight_load_events += 1
            stats.weight_load_cycles += weight_load_cycles
            arr.fifo.reset()
            data = np.zeros(FC_TILE, np.int64)
            data[:n] = sram.read(input_region, e0, n)
            seq = data[layout]
            for s in range(FC_SHIFTS):
                for rho in range(FIFO_ROWS):
                    arr.fifo.push(rho, seq[rho, :, s])
                arr.input_shift(np.stack([arr.fifo.pop(rho) for rho in range(FIFO_ROWS)]))
                stats.shift_cycles += 1
            stats.psi_extra_cycles += config.mode.n_pairs - 1
            ne_out = arr.ne_outputs()
            psum_in = np.zeros(NE_COLS, np.int64)
            bias_in = np.zeros(NE_COLS, np.int64)
            if tile > 0:
                psum_in[0] = sram.load_psums(layer_index, m)[0]
            else:
                bias_in[0] = sram.read("Bias", m, 1)[0]
            total = arr.top_adders(arr.column_sums(ne_out, psum_in, bias_in))[0]
            sram.store_psums(layer_index, [(m, int(total))])
    stats.overflow18_events = arr.overflow18
    return sram.final_sums(layer_index), stats
