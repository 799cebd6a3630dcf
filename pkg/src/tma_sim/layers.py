"""Layer and network descriptions shared by the array, mapper and CLI."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

from .psiquant import PrecisionMode


@dataclass(frozen=True)
class LayerSpec:
    """One conv or FC layer.

    ``h_stride`` steps along the width (horizontal sweep direction) and
    ``v_stride`` along the height. FC layers flatten ``(in_c, in_h, in_w)``.
    """

    name: str
    kind: str
    in_h: int
    in_w: int
    in_c: int
    filters: int
    kernel: tuple[int, int] = (1, 1)
    h_stride: int = 1
    v_stride: int = 1
    pad: int = 0
    precision: PrecisionMode = PrecisionMode.INT8
    relu: bool = True
    requant_shift: int = 0
    pool: tuple[int, int] | None = None

    def __post_init__(self):
        if self.kind not in ("conv", "fc"):
            raise ValueError(f"{self.name}: kind must be conv or fc, got {self.kind!r}")
        for attr in ("in_h", "in_w", "in_c", "filters", "h_stride", "v_stride"):
            if getattr(self, attr) < 1:
                raise ValueError(f"{self.name}: {attr} must be positive, got {getattr(self, attr)}")
        if self.pad < 0 or self.requant_shift < 0:
            raise ValueError(f"{self.name}: pad and requant_shift must be non-negative")
        kh, kw = self.kernel
        if kh < 1 or kw < 1:
            raise ValueError(f"{self.name}: kernel must be positive, got {self.kernel}")
        if self.kind == "conv":
            if kh > self.in_h + 2 * self.pad or kw > self.in_w + 2 * self.pad:
                raise ValueError(f"{self.name}: kernel {self.kernel} larger than padded input")
        if self.pool is not None:
            pk, ps = self.pool
            if pk < 1 or ps < 1:
                raise ValueError(f"{self.name}: pool must be positive, got {self.pool}")
            if self.kind == "fc":
                raise ValueError(f"{self.name}: pooling is only defined for conv layers")
            oh, ow = self.conv_out_hw
            if pk > oh or pk > ow:
                raise ValueError(f"{self.name}: pool window {pk} larger than output {oh}x{ow}")

    @property
    def in_features(self) -> int:
        return self.in_h * self.in_w * self.in_c

    @property
    def padded_hw(self) -> tuple[int, int]:
        return self.in_h + 2 * self.pad, self.in_w + 2 * self.pad

    @property
    def conv_out_hw(self) -> tuple[int, int]:
        if self.kind == "fc":
            return 1, 1
        hp, wp = self.padded_hw
        kh, kw = self.kernel
        return (hp - kh) // self.v_stride + 1, (wp - kw) // self.h_stride + 1

    @property
    def out_shape(self) -> tuple[int, ...]:
        """Shape of the post-op activation tensor."""
        if self.kind == "fc":
            return (self.filters,)
        oh, ow = self.conv_out_hw
        if self.pool:
            pk, ps = self.pool
            oh, ow = (oh - pk) // ps + 1, (ow - pk) // ps + 1
        return self.filters, oh, ow

    @property
    def weight_shape(self) -> tuple[int, ...]:
        if self.kind == "fc":
            return self.filters, self.in_features
        return (self.filters, self.in_c, *self.kernel)

    @property
    def macs(self) -> int:
        if self.kind == "fc":
            return self.filters * self.in_features
        oh, ow = self.conv_out_hw
        kh, kw = self.kernel
        return oh * ow * self.filters * self.in_c * kh * kw

    def with_precision(self, precision: PrecisionMode) -> "LayerSpec":
        return replace(self, precision=precision)


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    layers: tuple[LayerSpec, ...]
    weight_files: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.layers:
            raise ValueError(f"network {self.name!r} has no layers")
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise ValueError(f"network {self.name!r} has duplicate layer names")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.kind == "conv" and prev.kind == "fc":
                raise ValueError(f"{nxt.name}: conv layer cannot follow fc layer {prev.name}")

    def with_precision(self, precision: PrecisionMode) -> "NetworkSpec":
        return replace(self, layers=tuple(l.with_precision(precision) for l in self.layers))

    def check_chain(self) -> None:
        """Require every layer's input to match the previous layer's output (functional runs)."""
        for prev, nxt in zip(self.layers, self.layers[1:]):
            out = prev.out_shape
            features = 1
            for d in out:
                features *= d
            if nxt.kind == "fc":
                if features != nxt.in_features:
                    raise ValueError(f"{nxt.name}: expects {nxt.in_features} inputs, {prev.name} produces {features}")
            elif out != (nxt.in_c, nxt.in_h, nxt.in_w):
                raise ValueError(f"{nxt.name}: expects input {(nxt.in_c, nxt.in_h, nxt.in_w)}, {prev.name} produces {out}")
