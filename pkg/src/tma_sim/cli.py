"""Command-line front end: ``tma-sim run|decompose|verify``.

Exit codes: 0 success, 1 verification failure, 2 bad input or usage.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass

import numpy as np

from .golden import post_ops_ref, quantized_fc_ref, quantized_ref
from .layers import LayerSpec, NetworkSpec
from .mapper import (DEFAULT_FREQ_MHZ, MODEL_ASSUMPTIONS, cycle_model, peak_gmacs, peak_macs_per_cycle, plan_network,
                     psum_traffic_model, sram_traffic_model)
from .memsys import PSUM_BYTES, SramError, SramModel
from .ne_array import ConfigError, CycleStats, run_fc, run_layer
from .netfile import NetworkParseError, load_network
from .psiquant import PrecisionMode, WeightRangeError, decompose_tensor, error_report
from .report import FORMATS, RunReport, emit_report, make_row
from .tensorio import TensorFormatError, read_tmat
from . import verify as verify_mod

MODES = ("stats", "functional", "both")
EXIT_OK, EXIT_VERIFY, EXIT_INPUT = 0, 1, 2


class VerificationError(RuntimeError):
    """Simulator disagreed with the golden reference or the analytic model."""


@dataclass
class RunOptions:
    mode: str = "stats"
    precision: PrecisionMode | None = None
    freq_mhz: float = DEFAULT_FREQ_MHZ
    seed: int = 0
    input_path: str | None = None
    weight_load_cycles: int = 0
    reference_fps: float | None = None
    fps_tolerance: float = 0.25

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {', '.join(MODES)}, got {self.mode!r}")
        if self.freq_mhz <= 0:
            raise ValueError("frequency must be positive")
        if self.weight_load_cycles < 0:
            raise ValueError("weight_load_cycles must be non-negative")


# -- functional execution ------------------------------------------------------

def _layer_params(net: NetworkSpec, layer: LayerSpec, rng):
    """Weights and bias from the network's TMAT files, else seeded random values."""
    files = net.weight_files.get(layer.name, {})
    lo, hi = layer.precision.weight_range
    if "weights" in files:
        w = read_tmat(files["weights"]).astype(np.int64)
        if w.shape != layer.weight_shape:
            raise ValueError(f"{layer.name}: weight file shape {w.shape}, expected {layer.weight_shape}")
    else:
        w = rng.integers(lo, hi + 1, layer.weight_shape)
    if "bias" in files:
        b = read_tmat(files["bias"]).astype(np.int64)
        if b.shape != (layer.filters,):
            raise ValueError(f"{layer.name}: bias file shape {b.shape}, expected ({layer.filters},)")
    else:
        b = rng.integers(-(1 << 12), 1 << 12, layer.filters)
    return w, b


def _input_tensor(net: NetworkSpec, opts: RunOptions, rng) -> np.ndarray:
    first = net.layers[0]
    shape = (first.in_features,) if first.kind == "fc" and first.in_h == first.in_w == 1 else \
        (first.in_c, first.in_h, first.in_w)
    if opts.input_path is None:
        return rng.integers(0, 256, shape)
    x = read_tmat(opts.input_path)
    if x.dtype != np.uint8:
        raise ValueError(f"input tensor must be uint8, got {x.dtype}")
    if x.size != int(np.prod(shape)):
        raise ValueError(f"input tensor shape {x.shape} does not match {first.name} input {shape}")
    return x.astype(np.int64).reshape(shape)


def _region_delta(before: dict, after: dict, name: str, key: str) -> int:
    return after["regions"].get(name, {}).get(key, 0) - before["regions"].get(name, {}).get(key, 0)


def _run_functional(net: NetworkSpec, plans, opts: RunOptions, rng):
    """Simulate every layer on one shared SRAM; yields per-layer measurements."""
    net.check_chain()
    sram = SramModel()
    x = _input_tensor(net, opts, rng)
    input_region = None
    for n, plan in enumerate(plans, 1):
        layer, cfg = plan.layer, plan.config
        w, b = _layer_params(net, layer, rng)
        psi, _ = decompose_tensor(w, layer.precision)
        before = sram.counters.snapshot()
        try:
            if layer.kind == "fc":
                sums, stats = run_fc(cfg, x.ravel(), psi, b, sram, n, input_region, opts.weight_load_cycles)
                ref = quantized_fc_ref(x, psi, b)
            else:
                sums, stats = run_layer(cfg, x, psi, b, sram, n, input_region, layer.pad, opts.weight_load_cycles)
                sums = sums.reshape(layer.filters, *layer.conv_out_hw)
                ref = quantized_ref(x, psi, b, layer.h_stride, layer.v_stride, layer.pad)
        except (SramError, OverflowError) as e:
            raise VerificationError(f"{layer.name}: {e}") from e
        sums = sums.reshape(ref.shape)
        if not np.array_equal(sums, ref):
            bad = np.argwhere(sums != ref)[0]
            raise VerificationError(f"{layer.name}: simulator output differs from golden reference at index "
                                    f"{tuple(int(i) for i in bad)}")
        out = sram.apply_post_ops(n, sums.shape, layer.relu, layer.requant_shift, layer.pool)
        if not np.array_equal(out, post_ops_ref(ref, layer.relu, layer.requant_shift, layer.pool)):
            raise VerificationError(f"{layer.name}: post-op output differs from golden reference")
        after = sram.counters.snapshot()
        in_name = input_region or "Inputs"
        psum_name = sram.psum_region(n)
        measured = {
            "stats": stats,
            "psum_stores": after["psum_stores"] - before["psum_stores"],
            "psum_loads": after["psum_loads"] - before["psum_loads"],
            "sram_input_bytes": _region_delta(before, after, in_name, "read_bytes"),
            "sram_weight_bytes": _region_delta(before, after, "Weights", "read_bytes"),
            "sram_bias_bytes": _region_delta(before, after, "Bias", "read_bytes"),
            "sram_psum_write_bytes": _region_delta(before, after, psum_name, "write_bytes"),
            "sram_psum_read_bytes": _region_delta(before, after, psum_name, "read_bytes"),
            "sram_output_bytes": _region_delta(before, after, sram.layer_region(n), "write_bytes"),
        }
        # free what later layers no longer need
        if input_region is not None:
            sram.free_region(input_region)
        sram.free_region(psum_name)
        input_region = sram.layer_region(n)
        x = out.astype(np.int64)
        yield measured


# -- report assembly -----------------------------------------------------------

def _model_measurements(plan, weight_load_cycles: int) -> dict:
    layer = plan.layer
    stats = cycle_model(plan, weight_load_cycles)
    stores, loads = psum_traffic_model(plan)
    traffic = sram_traffic_model(plan)
    out_elems = int(np.prod(layer.out_shape))
    return {
        "stats": stats,
        "psum_stores": stores,
        "psum_loads": loads,
        "sram_input_bytes": traffic["input_reads"],
        "sram_weight_bytes": traffic["weight_reads"],
        "sram_bias_bytes": traffic["bias_reads"] * PSUM_BYTES,
        "sram_psum_write_bytes": traffic["psum_writes"] * PSUM_BYTES,
        # Psum reloads plus the final read by the post-op unit
        "sram_psum_read_bytes": (traffic["psum_reads"] + plan.outputs) * PSUM_BYTES,
        "sram_output_bytes": out_elems * (1 if layer.relu else PSUM_BYTES),
    }


def _compare(layer: str, model: dict, measured: dict) -> None:
    m_stats, s_stats = model["stats"], measured["stats"]
    keys = [f for f in CycleStats.__dataclass_fields__ if f != "overflow18_events"]
    diffs = [k for k in keys if getattr(m_stats, k) != getattr(s_stats, k)]
    diffs += [k for k in model if k != "stats" and model[k] != measured[k]]
    if diffs:
        detail = ", ".join(f"{k}: model {getattr(m_stats, k, model.get(k))} != measured "
                           f"{getattr(s_stats, k, measured.get(k))}" for k in diffs)
        raise VerificationError(f"{layer}: analytic model disagrees with simulation ({detail})")


def run(net: NetworkSpec, options: RunOptions | None = None) -> RunReport:
    """Plan (and optionally simulate) ``net``; returns the run report."""
    opts = options or RunOptions()
    if opts.precision is not None:
        net = net.with_precision(opts.precision)
    plans = plan_network(net)
    rng = np.random.default_rng(opts.seed)
    functional = opts.mode in ("functional", "both")
    sim = _run_functional(net, plans, opts, rng) if functional else None

    report = RunReport(network=net.name, mode=opts.mode, freq_mhz=float(opts.freq_mhz), seed=opts.seed,
                       assumptions=list(MODEL_ASSUMPTIONS))
    for plan in plans:
        model = _model_measurements(plan, opts.weight_load_cycles)
        values = model
        if sim is not None:
            values = next(sim)
            if opts.mode == "both":
                _compare(plan.layer.name, model, values)
        stats = values["stats"]
        cycles = stats.total_cycles
        report.rows.append(make_row(
            layer=plan.layer.name, kind=plan.layer.kind, case=plan.config.case.name,
            precision=plan.layer.precision.value,
            **stats.cycle_fields(),
            macs=plan.layer.macs,
            effective_gmacs=plan.layer.macs / cycles * opts.freq_mhz / 1000.0 if cycles else 0.0,
            psum_stores=values["psum_stores"], psum_loads=values["psum_loads"],
            **{k: values[k] for k in values if k.startswith("sram_")},
            fifo_feedback=stats.fifo_feedback,
            bit_exact=True if functional else None,
        ))

    total = report.total_row()
    slowest = max((p.layer.precision for p in plans), key=lambda m: m.n_pairs)
    report.totals = {
        "total_cycles": total["total_cycles"],
        "total_macs": total["macs"],
        "frames_per_s": opts.freq_mhz * 1e6 / total["total_cycles"],
        "effective_gmacs": total["effective_gmacs"],
        "peak_gmacs": peak_gmacs(slowest, opts.freq_mhz),
        "peak_macs_per_cycle": peak_macs_per_cycle(slowest),
        "freq_mhz": float(opts.freq_mhz),
    }
    if opts.reference_fps is not None:
        ratio = report.totals["frames_per_s"] / opts.reference_fps
        report.totals.update(reference_frames_per_s=float(opts.reference_fps), fps_ratio=ratio,
                             fps_tolerance=opts.fps_tolerance,
                             fps_within_tolerance=abs(ratio - 1.0) <= opts.fps_tolerance)
    return report


# -- decompose -----------------------------------------------------------------

DECOMPOSE_FIELDS = ("index", "weight", "terms", "effective", "abs_error", "rel_error")


def _terms_str(pw) -> str:
    parts = [f"{'+' if t.s > 0 else '-'}2^{t.n}" for t in pw.terms if t.s]
    return "".join(parts) or "0"


def decompose_rows(weights, mode: PrecisionMode) -> list[dict]:
    w = np.asarray(weights)
    psi, _ = decompose_tensor(w, mode)
    rows = []
    for idx in np.ndindex(w.shape):
        pw = psi[idx]
        rep = error_report(pw, idx)
        rows.append({"index": "x".join(map(str, idx)), "weight": rep.weight, "terms": _terms_str(pw),
                     "effective": rep.effective, "abs_error": rep.abs_error,
                     "rel_error": float(rep.rel_error)})
    return rows


def _render_decompose(rows: list[dict], mode: PrecisionMode, fmt: str) -> str:
    worst = max((r["rel_error"] for r in rows), default=0.0)
    inexact = sum(r["abs_error"] != 0 for r in rows)
    if fmt == "json":
        return json.dumps({"precision": mode.value, "count": len(rows), "inexact": inexact,
                           "worst_rel_error": worst, "weights": rows}, indent=2) + "\n"
    buf = io.StringIO()
    writer = csv.DictWriter(buf, DECOMPOSE_FIELDS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


# -- argument parsing ----------------------------------------------------------

def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tma-sim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=FORMATS, default="json", help="report format (default: json)")
    common.add_argument("--out", help="write the report here instead of stdout")
    common.add_argument("--seed", type=int, default=0, help="RNG seed for synthetic data (default: 0)")

    r = sub.add_parser("run", parents=[common], help="plan/simulate a network and emit a report")
    r.add_argument("network", help="network description file, or 'alexnet' for the bundled one")
    r.add_argument("--mode", choices=MODES, default="stats")
    r.add_argument("--precision", choices=[m.value for m in PrecisionMode], help="override every layer's precision")
    r.add_argument("--freq-mhz", type=_positive_float, default=DEFAULT_FREQ_MHZ)
    r.add_argument("--input", help="uint8 TMAT input tensor (C,H,W) for functional runs")
    r.add_argument("--weight-load-cycles", type=int, default=0, help="cycles charged per weight load")
    r.add_argument("--reference-fps", type=_positive_float, help="frame rate to compare against")

    d = sub.add_parser("decompose", parents=[common], help="PSI decomposition and error report for weights")
    d.add_argument("--precision", choices=[m.value for m in PrecisionMode], default="int5")
    d.add_argument("--weights", help="int32 TMAT weight tensor (default: every weight of the range)")

    v = sub.add_parser("verify", help="run the built-in property suites")
    v.add_argument("--suite", action="append", choices=verify_mod.SUITES, help="repeatable; default: all")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--samples", type=int, default=100_000, help="random MOA cases")
    return p


def _write(text: str, out) -> None:
    if out:
        with open(out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def _cmd_run(args) -> int:
    net = load_network(args.network)
    opts = RunOptions(mode=args.mode, precision=PrecisionMode.parse(args.precision) if args.precision else None,
                      freq_mhz=args.freq_mhz, seed=args.seed, input_path=args.input,
                      weight_load_cycles=args.weight_load_cycles, reference_fps=args.reference_fps)
    report = run(net, opts)
    text = emit_report(report, args.format, args.out)
    if not args.out:
        sys.stdout.write(text)
    t = report.totals
    print(f"{net.name}: {t['total_cycles']} cycles, {t['frames_per_s']:.2f} frames/s at {t['freq_mhz']:g} MHz, "
          f"peak {t['peak_gmacs']:g} GMACS", file=sys.stderr)
    if "fps_ratio" in t:
        state = "within" if t["fps_within_tolerance"] else "OUTSIDE"
        print(f"reference {t['reference_frames_per_s']:g} frames/s: ratio {t['fps_ratio']:.3f} "
              f"({state} ±{t['fps_tolerance']:.0%}; model-dependent)", file=sys.stderr)
    print("model assumptions:", file=sys.stderr)
    for a in report.assumptions:
        print(f"  - {a}", file=sys.stderr)
    return EXIT_OK


def _cmd_decompose(args) -> int:
    mode = PrecisionMode.parse(args.precision)
    if args.weights:
        w = read_tmat(args.weights)
        if w.dtype != np.int32:
            raise ValueError(f"weight tensor must be int32, got {w.dtype}")
    else:
        lo, hi = mode.weight_range
        w = np.arange(lo, hi + 1)
    rows = decompose_rows(w, mode)
    _write(_render_decompose(rows, mode, args.format), args.out)
    return EXIT_OK


def _cmd_verify(args) -> int:
    results = verify_mod.run_suites(args.suite or verify_mod.SUITES, args.seed, args.samples)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_VERIFY if failed else EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # usage errors exit with status 2
    handlers = {"run": _cmd_run, "decompose": _cmd_decompose, "verify": _cmd_verify}
    try:
        return handlers[args.command](args)
    except VerificationError as e:
        print(f"verification failed: {e}", file=sys.stderr)
        return EXIT_VERIFY
    except (NetworkParseError, TensorFormatError, WeightRangeError, ConfigError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


__all__ = ["RunOptions", "VerificationError", "build_parser", "decompose_rows", "main", "run"]

if __name__ == "__main__":
    sys.exit(main())
