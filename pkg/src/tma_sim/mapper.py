"""Layer-to-array planning and closed-form cycle / memory-traffic models.

Every count here is derived arithmetically from the plan, without stepping
the array. The array simulator measures the same quantities; tests require
the two to agree exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .layers import LayerSpec, NetworkSpec
from .ne_array import (CHAIN_LEN, FC_SHIFTS, FC_TILE, FIFO_ROWS, NE_DEPTH, PEAK_MACS, ArrayCase, ArrayConfig,
                       CycleStats, configure)
from .psiquant import PrecisionMode

DEFAULT_FREQ_MHZ = 250.0


@dataclass(frozen=True)
class ExecutionPlan:
    layer: LayerSpec
    config: ArrayConfig
    depth_tiles: int
    filter_groups: int
    sweeps: int
    out_w: int
    padded_w: int
    row_period: int
    fc_tiles: int = 0

    @property
    def is_fc(self) -> bool:
        return self.config.case is ArrayCase.FC

    @property
    def outputs(self) -> int:
        return self.layer.filters if self.is_fc else self.layer.filters * self.sweeps * self.out_w

    @property
    def passes(self) -> int:
        return self.fc_tiles * self.layer.filters if self.is_fc else self.depth_tiles * self.filter_groups


def plan_layer(layer: LayerSpec) -> ExecutionPlan:
    cfg = configure(layer)
    if cfg.case is ArrayCase.FC:
        return ExecutionPlan(layer, cfg, 0, layer.filters, 1, 1, 0, FC_SHIFTS,
                             fc_tiles=math.ceil(layer.in_features / FC_TILE))
    h_out, w_out = layer.conv_out_hw
    wp = layer.padded_hw[1]
    return ExecutionPlan(layer, cfg,
                         depth_tiles=math.ceil(layer.in_c / cfg.depth_tile),
                         filter_groups=math.ceil(layer.filters / cfg.filters_per_pass),
                         sweeps=h_out, out_w=w_out, padded_w=wp, row_period=cfg.row_period(wp))


def plan_network(net: NetworkSpec) -> list[ExecutionPlan]:
    return [plan_layer(layer) for layer in net.layers]


def _count_residues(n: int, residues: set[int], modulus: int) -> int:
    """Number of t in [1, n] with t % modulus in ``residues``."""
    total = 0
    for r in residues:
        first = r if r > 0 else modulus
        if n >= first:
            total += (n - first) // modulus + 1
    return total


def _active_slots(plan: ExecutionPlan) -> list[tuple[int, int]]:
    """(active filters, number of groups) buckets."""
    fpp = plan.config.filters_per_pass
    k = plan.layer.filters
    full, rem = divmod(k, fpp)
    return [(fpp, full)] + ([(rem, 1)] if rem else [])


def cycle_model(plan: ExecutionPlan, weight_load_cycles: int = 0) -> CycleStats:
    cfg = plan.config
    extra_per_eval = cfg.mode.n_pairs - 1
    if plan.is_fc:
        passes = plan.passes
        return CycleStats(shift_cycles=FC_SHIFTS * passes, psi_extra_cycles=extra_per_eval * passes,
                          weight_load_events=passes, weight_load_cycles=weight_load_cycles * passes)

    h_out, wp, period = plan.sweeps, plan.padded_w, plan.row_period
    kw = cfg.kernel[1]
    residues = {(kw + g * cfg.window) % cfg.h_stride for g in range(cfg.slots)}
    feedback_rows = cfg.channel_blocks * max(0, cfg.window - cfg.v_stride)
    stats = CycleStats()
    for active, n_groups in _active_slots(plan):
        n_shifts = h_out * period + cfg.drain(wp, plan.out_w, active)
        passes = n_groups * plan.depth_tiles
        stats += CycleStats(
            shift_cycles=passes * h_out * wp,
            fill_cycles=passes * (n_shifts - h_out * wp),
            psi_extra_cycles=passes * extra_per_eval * _count_residues(n_shifts, residues, cfg.h_stride),
            weight_load_events=passes,
            weight_load_cycles=passes * weight_load_cycles,
            fifo_feedback=passes * (h_out - 1) * period * NE_DEPTH * feedback_rows,
            row_advances=passes * (h_out - 1),
            fresh_rows_on_advance=passes * (h_out - 1) * cfg.channel_blocks * min(cfg.v_stride, cfg.window),
        )
    return stats


def psum_traffic_model(plan: ExecutionPlan) -> tuple[int, int]:
    """(psum_stores, psum_loads) over the whole layer."""
    tiles = plan.fc_tiles if plan.is_fc else plan.depth_tiles
    return tiles * plan.outputs, (tiles - 1) * plan.outputs


def sram_traffic_model(plan: ExecutionPlan) -> dict[str, int]:
    """Element counts of SRAM reads/writes issued while running the layer."""
    layer = plan.layer
    stores, loads = psum_traffic_model(plan)
    if plan.is_fc:
        n = layer.in_features
        input_reads = layer.filters * n
    else:
        cfg = plan.config
        w, sv = cfg.window, cfg.v_stride
        fresh_in_image = 0
        for y in range(plan.sweeps):
            rows = range(w) if y == 0 else range(w - sv, w)
            fresh_in_image += sum(1 for i in rows if 0 <= y * sv + i - layer.pad < layer.in_h)
        # every filter group re-streams every channel of the input
        input_reads = plan.filter_groups * layer.in_c * layer.in_w * fresh_in_image
    return {
        "input_reads": input_reads,
        "weight_reads": math.prod(layer.weight_shape),
        "bias_reads": plan.outputs,
        "psum_writes": stores,
        "psum_reads": loads,
    }


def macs(plan: ExecutionPlan) -> int:
    return plan.layer.macs


def peak_gmacs(mode: PrecisionMode, freq_mhz: float) -> float:
    """2304 MACs per cycle, halved when every product needs a second PSI pass."""
    return PEAK_MACS * freq_mhz / 1000.0 / mode.n_pairs


def peak_macs_per_cycle(mode: PrecisionMode) -> float:
    return PEAK_MACS / mode.n_pairs


MODEL_ASSUMPTIONS = (
    "conv rows stream back to back; each pass ends with a drain so the last slot finishes (charged as fill)",
    "rows narrower than the 12-position chain are padded with bubble shifts (charged as fill)",
    "INT8 adds one PSI-accumulation cycle on every evaluated shift (every h_stride-th shift per slot phase)",
    "FC: 12 shifts per 2304-input tile per output, plus one accumulation cycle in INT8",
    "weight loads overlap computation unless weight_load_cycles > 0",
    "Psum loads/stores and FIFO refills never stall the array",
)


def throughput_report(plans: list[ExecutionPlan], freq_mhz: float = DEFAULT_FREQ_MHZ,
                      weight_load_cycles: int = 0) -> dict:
    """Per-layer cycles/MACs plus network totals at ``freq_mhz``."""
    if freq_mhz <= 0:
        raise ValueError("frequency must be positive")
    rows = []
    total_cycles = 0
    total_macs = 0
    for plan in plans:
        stats = cycle_model(plan, weight_load_cycles)
        cyc = stats.total_cycles
        m = macs(plan)
        total_cycles += cyc
        total_macs += m
        rows.append({"layer": plan.layer.name, "cycles": cyc, "macs": m,
                     "effective_gmacs": m / cyc * freq_mhz / 1000.0})
    slowest = max((p.layer.precision for p in plans), key=lambda m: m.n_pairs)
    return {
        "layers": rows,
        "total_cycles": total_cycles,
        "total_macs": total_macs,
        "frames_per_s": freq_mhz * 1e6 / total_cycles,
        "effective_gmacs": total_macs / total_cycles * freq_mhz / 1000.0,
        "peak_gmacs": peak_gmacs(slowest, freq_mhz),
        "peak_macs_per_cycle": peak_macs_per_cycle(slowest),
        "assumptions": list(MODEL_ASSUMPTIONS),
    }


__all__ = ["ExecutionPlan", "MODEL_ASSUMPTIONS", "cycle_model", "peak_gmacs", "plan_layer", "plan_network",
           "psum_traffic_model", "sram_traffic_model", "throughput_report", "CHAIN_LEN", "FIFO_ROWS"]
