"""On-chip SRAM model with named regions and exact access counters.

Regions follow the system memory map: ``Inputs``, ``Weights``, ``Bias``,
``PsumOfLayer{n}`` and ``Layer{n}``. DRAM only appears as ingress/egress
byte counters.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SRAM_CAPACITY = 4 * 1024 * 1024
PSUM_BYTES = 4
_I32 = (-(1 << 31), (1 << 31) - 1)


class SramError(RuntimeError):
    pass


class CapacityError(SramError):
    pass


class PsumMissingError(SramError):
    pass


@dataclass
class RegionCounter:
    reads: int = 0
    writes: int = 0
    read_bytes: int = 0
    write_bytes: int = 0


@dataclass
class AccessCounters:
    regions: dict[str, RegionCounter] = field(default_factory=dict)
    psum_loads: int = 0
    psum_stores: int = 0
    dram_in: int = 0
    dram_out: int = 0
    psum_steps: Counter = field(default_factory=Counter)

    def region(self, name: str) -> RegionCounter:
        return self.regions.setdefault(name, RegionCounter())

    def snapshot(self) -> dict:
        return {
            "regions": {k: vars(v).copy() for k, v in sorted(self.regions.items())},
            "psum_loads": self.psum_loads,
            "psum_stores": self.psum_stores,
            "dram_in": self.dram_in,
            "dram_out": self.dram_out,
            "psum_steps": dict(sorted(self.psum_steps.items())),
        }


@dataclass
class Region:
    name: str
    offset: int
    elems: int
    elem_bytes: int
    data: np.ndarray

    @property
    def nbytes(self) -> int:
        return self.elems * self.elem_bytes


_DTYPES = {1: np.int16, 4: np.int64}  # storage only; element width is elem_bytes


class SramModel:
    def __init__(self, capacity: int = SRAM_CAPACITY):
        self.capacity = capacity
        self.regions: dict[str, Region] = {}
        self.counters = AccessCounters()
        self._psum_valid: dict[int, np.ndarray] = {}

    # -- region management -------------------------------------------------
    @property
    def used(self) -> int:
        return sum(r.nbytes for r in self.regions.values())

    def add_region(self, name: str, elems: int, elem_bytes: int = 1) -> Region:
        if name in self.regions:
            self.free_region(name)
        nbytes = elems * elem_bytes
        if self.used + nbytes > self.capacity:
            raise CapacityError(
                f"region {name} ({nbytes} B) does not fit: {self.used} of {self.capacity} B already allocated")
        offset = max((r.offset + r.nbytes for r in self.regions.values()), default=0)
        region = Region(name, offset, elems, elem_bytes, np.zeros(elems, _DTYPES.get(elem_bytes, np.int64)))
        self.regions[name] = region
        self.counters.region(name)  # list the region in snapshots even before any access
        return region

    def free_region(self, name: str) -> None:
        self.regions.pop(name, None)

    def _region(self, name: str) -> Region:
        try:
            return self.regions[name]
        except KeyError:
            raise SramError(f"no SRAM region named {name}") from None

    def _bounds(self, region: Region, lo: int, hi: int) -> None:
        if lo < 0 or hi > region.elems:
            raise SramError(f"access [{lo}, {hi}) outside region {region.name} of {region.elems} elements")

    # -- counted accesses --------------------------------------------------
    def read(self, name: str, offset: int, count: int) -> np.ndarray:
        region = self._region(name)
        self._bounds(region, offset, offset + count)
        c = self.counters.region(name)
        c.reads += count
        c.read_bytes += count * region.elem_bytes
        return region.data[offset:offset + count].astype(np.int64)

    def gather(self, name: str, indices: np.ndarray) -> np.ndarray:
        """Read scattered elements; counts one access per index."""
        region = self._region(name)
        idx = np.asarray(indices, np.int64)
        if idx.size:
            self._bounds(region, int(idx.min()), int(idx.max()) + 1)
        c = self.counters.region(name)
        c.reads += idx.size
        c.read_bytes += idx.size * region.elem_bytes
        return region.data[idx].astype(np.int64)

    def write(self, name: str, offset: int, values) -> None:
        region = self._region(name)
        vals = np.asarray(values, np.int64).ravel()
        self._bounds(region, offset, offset + vals.size)
        region.data[offset:offset + vals.size] = vals
        c = self.counters.region(name)
        c.writes += vals.size
        c.write_bytes += vals.size * region.elem_bytes

    def scatter(self, name: str, indices, values) -> None:
        region = self._region(name)
        idx = np.asarray(indices, np.int64)
        vals = np.asarray(values, np.int64)
        if idx.size:
            self._bounds(region, int(idx.min()), int(idx.max()) + 1)
        region.data[idx] = vals
        c = self.counters.region(name)
        c.writes += idx.size
        c.write_bytes += idx.size * region.elem_bytes

    def load_from_dram(self, name: str, values, elem_bytes: int = 1) -> Region:
        vals = np.asarray(values, np.int64).ravel()
        region = self.add_region(name, vals.size, elem_bytes)
        self.write(name, 0, vals)
        self.counters.dram_in += vals.size * elem_bytes
        return region

    def deliver_to_dram(self, name: str) -> np.ndarray:
        region = self._region(name)
        out = self.read(name, 0, region.elems)
        self.counters.dram_out += region.nbytes
        return out

    # -- Psum traffic ------------------------------------------------------
    @staticmethod
    def psum_region(layer: int) -> str:
        return f"PsumOfLayer{layer}"

    @staticmethod
    def layer_region(layer: int) -> str:
        return f"Layer{layer}"

    def register_layer(self, layer: int, out_elems: int) -> None:
        self.add_region(self.psum_region(layer), out_elems, PSUM_BYTES)
        self._psum_valid[layer] = np.zeros(out_elems, bool)

    def store_psums(self, layer: int, step: list[tuple[int, int]]) -> None:
        """Store one array step worth of Psums as ``(index, value)`` pairs."""
        if layer not in self._psum_valid:
            raise SramError(f"layer {layer} not registered")
        idx = np.array([i for i, _ in step], np.int64)
        vals = np.array([v for _, v in step], np.int64)
        if vals.size and (vals.min() < _I32[0] or vals.max() > _I32[1]):
            raise OverflowError(f"Psum exceeds 32-bit storage in layer {layer}")
        self.scatter(self.psum_region(layer), idx, vals)
        self._psum_valid[layer][idx] = True
        self.counters.psum_stores += idx.size
        self.counters.psum_steps[idx.size] += 1

    def load_psums(self, layer: int, indices) -> np.ndarray:
        idx = np.atleast_1d(np.asarray(indices, np.int64))
        valid = self._psum_valid.get(layer)
        if valid is None or not valid[idx].all():
            missing = idx if valid is None else idx[~valid[idx]]
            raise PsumMissingError(f"Psum {int(missing[0])} of layer {layer} was never stored")
        self.counters.psum_loads += idx.size
        return self.gather(self.psum_region(layer), idx)

    def final_sums(self, layer: int) -> np.ndarray:
        """Uncounted view of a layer's staged sums (for reporting only)."""
        return self._region(self.psum_region(layer)).data.astype(np.int64).copy()

    def apply_post_ops(self, layer: int, shape: tuple[int, ...], relu: bool = True,
                       requant_shift: int = 0, pool: tuple[int, int] | None = None) -> np.ndarray:
        """Read the staged final sums, apply activation/pooling, write ``Layer{n}``."""
        region = self._region(self.psum_region(layer))
        if not self._psum_valid[layer].all():
            raise PsumMissingError(f"layer {layer} has unfinished outputs")
        sums = self.read(region.name, 0, region.elems).reshape(shape)
        out = post_ops(sums, relu, requant_shift, pool)
        name = self.layer_region(layer)
        self.add_region(name, out.size, 1 if relu else PSUM_BYTES)
        self.write(name, 0, out)
        return out


def post_ops(sums, relu: bool = True, requant_shift: int = 0, pool: tuple[int, int] | None = None) -> np.ndarray:
    """ReLU + arithmetic right shift + clamp to [0, 255], then optional max pooling.

    Without ReLU the sums pass through unchanged as int32 (network logits).
    """
    s = np.asarray(sums, np.int64)
    if not relu:
        return s.astype(np.int32)
    act = np.minimum(np.where(s > 0, s, 0) >> requant_shift, 255)
    if pool:
        pk, ps = pool
        act = sliding_window_view(act, (pk, pk), axis=(-2, -1))[..., ::ps, ::ps, :, :].max(axis=(-2, -1))
    return act.astype(np.uint8)
