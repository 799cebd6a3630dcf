"""Line-oriented network description files (``*.net``).

    # comment
    network <name>
    <layer-name> kind=conv in=HxWxC filters=K kernel=3 stride=1 pad=1 pool=3/2 shift=8

Relative ``weights=``/``bias=`` paths (TMAT files) resolve against the
network file's directory.
"""
from __future__ import annotations

from importlib import resources
from pathlib import Path

from .layers import LayerSpec, NetworkSpec
from .psiquant import PrecisionMode

BUNDLED = ("alexnet",)
_KEYS = {"kind", "in", "filters", "kernel", "stride", "hstride", "vstride", "pad", "pool", "shift",
         "relu", "precision", "weights", "bias"}


class NetworkParseError(ValueError):
    def __init__(self, source: str, line: int, msg: str):
        super().__init__(f"{source}:{line}: {msg}")
        self.line = line


def _int(v: str, key: str) -> int:
    try:
        return int(v)
    except ValueError:
        raise ValueError(f"{key}: expected integer, got {v!r}") from None


def _dims(v: str, key: str, n: int) -> tuple[int, ...]:
    parts = v.lower().split("x")
    if len(parts) == 1 and n > 1:
        parts = parts * n if key == "kernel" else parts
    vals = tuple(_int(p, key) for p in parts)
    return vals


def _bool(v: str, key: str) -> bool:
    if v.lower() in ("1", "true", "yes", "on"):
        return True
    if v.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{key}: expected true/false, got {v!r}")


def _layer(name: str, fields: dict[str, str]) -> LayerSpec:
    unknown = set(fields) - _KEYS
    if unknown:
        raise ValueError(f"unknown key(s) {', '.join(sorted(unknown))}")
    for required in ("kind", "in", "filters"):
        if required not in fields:
            raise ValueError(f"missing {required}=")
    dims = _dims(fields["in"], "in", 3)
    if len(dims) == 1:
        h, w, c = 1, 1, dims[0]
    elif len(dims) == 3:
        h, w, c = dims
    else:
        raise ValueError(f"in: expected HxWxC or N, got {fields['in']!r}")
    kind = fields["kind"]
    kernel = _dims(fields.get("kernel", "1"), "kernel", 2)
    if len(kernel) != 2:
        raise ValueError(f"kernel: expected k or khxkw, got {fields['kernel']!r}")
    stride = _int(fields.get("stride", "1"), "stride")
    pool = None
    if "pool" in fields:
        pk, _, ps = fields["pool"].partition("/")
        pool = (_int(pk, "pool"), _int(ps or pk, "pool"))
    return LayerSpec(
        name=name, kind=kind, in_h=h, in_w=w, in_c=c,
        filters=_int(fields["filters"], "filters"),
        kernel=kernel,
        h_stride=_int(fields.get("hstride", str(stride)), "hstride"),
        v_stride=_int(fields.get("vstride", str(stride)), "vstride"),
        pad=_int(fields.get("pad", "0"), "pad"),
        precision=PrecisionMode.parse(fields.get("precision", "int8")),
        relu=_bool(fields.get("relu", "true"), "relu"),
        requant_shift=_int(fields.get("shift", "0"), "shift"),
        pool=pool,
    )


def parse_network(text: str, source: str = "<string>", base_dir: Path | None = None) -> NetworkSpec:
    name = None
    layers = []
    files: dict[str, dict[str, Path]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if tokens[0] == "network":
            if len(tokens) != 2:
                raise NetworkParseError(source, lineno, "expected 'network <name>'")
            name = tokens[1]
            continue
        fields = {}
        for tok in tokens[1:]:
            key, eq, val = tok.partition("=")
            if not eq or not val:
                raise NetworkParseError(source, lineno, f"expected key=value, got {tok!r}")
            if key in fields:
                raise NetworkParseError(source, lineno, f"duplicate key {key}")
            fields[key] = val
        try:
            layers.append(_layer(tokens[0], fields))
        except ValueError as e:
            raise NetworkParseError(source, lineno, f"layer {tokens[0]}: {e}") from None
        for key in ("weights", "bias"):
            if key in fields:
                p = Path(fields[key])
                files.setdefault(tokens[0], {})[key] = p if p.is_absolute() or base_dir is None else base_dir / p
    if not layers:
        raise NetworkParseError(source, 0, "no layers defined")
    try:
        return NetworkSpec(name or Path(source).stem, tuple(layers), files)
    except ValueError as e:
        raise NetworkParseError(source, 0, str(e)) from None


def load_network(path) -> NetworkSpec:
    """Parse a network file; ``alexnet`` selects the bundled description."""
    if str(path) in BUNDLED:
        text = resources.files("tma_sim").joinpath("data", f"{path}.net").read_text()
        return parse_network(text, f"{path}.net")
    p = Path(path)
    return parse_network(p.read_text(), str(p), p.parent)
