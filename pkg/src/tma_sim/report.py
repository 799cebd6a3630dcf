"""Run reports: per-layer rows plus network totals, emitted as JSON or CSV.

Column order is fixed by ``ROW_FIELDS`` so that identical runs produce
byte-identical files.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

FORMATS = ("json", "csv")

ROW_FIELDS = (
    "layer", "kind", "case", "precision",
    "shift_cycles", "fill_cycles", "psi_extra_cycles", "weight_load_events", "weight_load_cycles", "total_cycles",
    "macs", "effective_gmacs",
    "psum_stores", "psum_loads",
    "sram_input_bytes", "sram_weight_bytes", "sram_bias_bytes",
    "sram_psum_write_bytes", "sram_psum_read_bytes", "sram_output_bytes",
    "fifo_feedback", "bit_exact",
)

# Columns summed into the TOTAL row.
SUMMED_FIELDS = tuple(f for f in ROW_FIELDS if f not in ("layer", "kind", "case", "precision", "effective_gmacs",
                                                           "bit_exact"))


@dataclass
class RunReport:
    network: str
    mode: str
    freq_mhz: float
    seed: int
    rows: list[dict] = field(default_factory=list)
    totals: dict = field(default_factory=dict)
    assumptions: list[str] = field(default_factory=list)

    def total_row(self) -> dict:
        row = {f: sum(r[f] for r in self.rows) for f in SUMMED_FIELDS}
        cycles = row["total_cycles"]
        row.update(layer="TOTAL", kind="", case="", precision="",
                   effective_gmacs=row["macs"] / cycles * self.freq_mhz / 1000.0 if cycles else 0.0)
        flags = [r["bit_exact"] for r in self.rows]
        row["bit_exact"] = None if any(f is None for f in flags) else all(flags)
        return {f: row[f] for f in ROW_FIELDS}

    def to_dict(self) -> dict:
        return asdict(self)


def make_row(**values) -> dict:
    missing = set(ROW_FIELDS) - set(values)
    extra = set(values) - set(ROW_FIELDS)
    if missing or extra:
        raise ValueError(f"report row mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
    return {f: values[f] for f in ROW_FIELDS}


def _csv_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render(report: RunReport, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(ROW_FIELDS)
        for row in [*report.rows, report.total_row()]:
            writer.writerow([_csv_value(row[f]) for f in ROW_FIELDS])
        return buf.getvalue()
    raise ValueError(f"unknown report format {fmt!r}; choose from {', '.join(FORMATS)}")


def emit_report(report: RunReport, fmt: str, path=None) -> str:
    """Render ``report`` and write it to ``path`` (if given); returns the text."""
    text = render(report, fmt)
    if path is not None:
        Path(path).write_text(text)
    return text


def load_report(path) -> RunReport:
    """Read back a JSON report written by :func:`emit_report`."""
    data = json.loads(Path(path).read_text())
    try:
        return RunReport(**data)
    except TypeError as e:
        raise ValueError(f"{path}: not a run report ({e})") from None


__all__ = ["FORMATS", "ROW_FIELDS", "RunReport", "emit_report", "load_report", "make_row", "render"]
