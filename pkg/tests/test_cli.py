import csv
import json

import numpy as np
import pytest

from tma_sim.cli import RunOptions, VerificationError, main, run
from tma_sim.netfile import NetworkParseError, load_network, parse_network
from tma_sim.psiquant import PrecisionMode
from tma_sim.report import ROW_FIELDS, emit_report, load_report
from tma_sim.tensorio import TensorFormatError, decode, encode, read_tmat, write_tmat

TOY = """\
# three-layer toy network
network toy
c1 kind=conv in=10x12x3 filters=6 kernel=3 pad=1 shift=9 pool=2/2
c2 kind=conv in=5x6x6 filters=4 kernel=3 pad=1 shift=9
f1 kind=fc in=5x6x4 filters=7 relu=false
"""


@pytest.fixture
def toy_path(tmp_path):
    p = tmp_path / "toy.net"
    p.write_text(TOY)
    return p


# -- network files ----------------------------------------------------------------

def test_bundled_alexnet():
    net = load_network("alexnet")
    kinds = [l.kind for l in net.layers]
    assert kinds == ["conv"] * 5 + ["fc"] * 3
    c1 = net.layers[0]
    assert (c1.kernel, c1.filters, c1.h_stride, c1.v_stride) == ((11, 11), 96, 4, 4)
    assert net.layers[1].kernel == (5, 5) and net.layers[1].filters == 256
    assert all(l.kernel == (3, 3) for l in net.layers[2:5])
    assert net.layers[5].in_features == 9216
    net.check_chain()


def test_empty_file_is_error(tmp_path):
    p = tmp_path / "empty.net"
    p.write_text("# nothing\n")
    with pytest.raises(NetworkParseError):
        load_network(p)


def test_negative_stride_reports_line():
    with pytest.raises(NetworkParseError, match=r"<string>:3: layer b: .*h_stride"):
        parse_network("network n\na kind=conv in=8x8x1 filters=1 kernel=3\nb kind=conv in=6x6x1 filters=1 stride=-1\n")


@pytest.mark.parametrize("line,msg", [
    ("a kind=conv in=8x8 filters=1", "in:"),
    ("a kind=conv in=8x8x1", "missing filters"),
    ("a kind=conv in=8x8x1 filters=two", "filters: expected integer"),
    ("a kind=conv in=8x8x1 filters=1 colour=red", "unknown key"),
    ("a kind=conv in=8x8x1 filters=1 relu=maybe", "relu"),
    ("a kind=conv in=8x8x1 filters=1 precision=int4", "int4"),
    ("a kind=pool in=8x8x1 filters=1", "kind"),
    ("a kind=conv in=8x8x1 filters=1 kernel", "key=value"),
])
def test_parse_errors(line, msg):
    with pytest.raises(NetworkParseError, match=msg):
        parse_network(line)


def test_parse_options():
    net = parse_network("x kind=conv in=9x9x2 filters=3 kernel=2x3 hstride=2 vstride=1 precision=int5 pool=2\n",
                        "n.net")
    l = net.layers[0]
    assert net.name == "n"
    assert (l.kernel, l.h_stride, l.v_stride, l.precision, l.pool) == ((2, 3), 2, 1, PrecisionMode.INT5, (2, 2))


# -- TMAT ----------------------------------------------------------------------------

def test_tmat_round_trip(tmp_path):
    a = np.arange(24, dtype=np.int32).reshape(2, 3, 4) - 7
    b = np.arange(10, dtype=np.uint8)
    for arr in (a, b):
        p = tmp_path / "t.tmat"
        write_tmat(p, arr)
        back = read_tmat(p)
        assert back.dtype == arr.dtype and np.array_equal(back, arr)


def test_tmat_layout():
    buf = encode(np.array([[1, 2]], np.uint8))
    assert buf == b"TMAT" + bytes([0, 2]) + (1).to_bytes(4, "little") + (2).to_bytes(4, "little") + b"\x01\x02"
    assert encode(np.array([-1], np.int32))[-4:] == b"\xff\xff\xff\xff"


def test_tmat_errors():
    with pytest.raises(TensorFormatError):
        decode(b"NOPE\x00\x00")
    with pytest.raises(TensorFormatError):
        decode(b"TMAT\x07\x00")
    with pytest.raises(TensorFormatError):
        decode(encode(np.zeros(3, np.uint8))[:-1])
    with pytest.raises(TensorFormatError):
        encode(np.zeros(3, np.float32))


# -- run / report ------------------------------------------------------------------

def test_stats_report_totals(toy_path):
    rep = run(load_network(toy_path), RunOptions(mode="stats"))
    total = rep.total_row()
    for f in ("total_cycles", "macs", "psum_stores", "sram_input_bytes"):
        assert total[f] == sum(r[f] for r in rep.rows)
    assert rep.totals["total_cycles"] == total["total_cycles"]
    assert all(r["bit_exact"] is None for r in rep.rows)


def test_functional_and_both_agree_with_stats(toy_path):
    net = load_network(toy_path)
    stats = run(net, RunOptions(mode="stats"))
    both = run(net, RunOptions(mode="both", seed=3))
    strip = lambda rows: [{k: v for k, v in r.items() if k != "bit_exact"} for r in rows]
    assert strip(stats.rows) == strip(both.rows)
    assert all(r["bit_exact"] is True for r in both.rows)


def test_functional_determinism(toy_path, tmp_path):
    outs = []
    for i in range(2):
        path = tmp_path / f"r{i}.json"
        assert main(["run", str(toy_path), "--mode", "functional", "--seed", "5", "--out", str(path)]) == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]


def test_json_round_trip(toy_path, tmp_path):
    rep = run(load_network(toy_path), RunOptions(precision=PrecisionMode.INT5))
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    emit_report(rep, "json", p1)
    back = load_report(p1)
    assert back == rep
    emit_report(back, "json", p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_csv_rows(toy_path, tmp_path):
    rep = run(load_network(toy_path))
    p = tmp_path / "r.csv"
    emit_report(rep, "csv", p)
    rows = list(csv.reader(p.open()))
    assert tuple(rows[0]) == ROW_FIELDS
    assert len(rows) - 1 == len(rep.rows) + 1
    assert rows[-1][0] == "TOTAL"


def test_unknown_format_is_usage_error(toy_path):
    with pytest.raises(SystemExit) as e:
        main(["run", str(toy_path), "--format", "xml"])
    assert e.value.code == 2
    with pytest.raises(ValueError):
        emit_report(run(load_network(toy_path)), "xml")


def test_peak_in_report(capsys):
    assert main(["run", "alexnet", "--precision", "int5", "--freq-mhz", "250"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["totals"]["peak_gmacs"] == 576
    assert main(["run", "alexnet", "--precision", "int8"]) == 0
    assert json.loads(capsys.readouterr().out)["totals"]["peak_gmacs"] == 288


def test_alexnet_ratio_columns():
    net = load_network("alexnet")
    r5 = run(net, RunOptions(precision=PrecisionMode.INT5)).rows
    r8 = run(net, RunOptions(precision=PrecisionMode.INT8)).rows
    ratios = {a["layer"]: b["total_cycles"] / a["total_cycles"] for a, b in zip(r5, r8)}
    assert ratios["conv1"] == pytest.approx(1.25, rel=0.05)
    assert all(ratios[f"conv{i}"] == pytest.approx(2.0, rel=0.05) for i in range(2, 6))
    assert all(ratios[f"fc{i}"] < 1.10 for i in range(1, 4))


def test_reference_fps_and_assumptions(capsys):
    assert main(["run", "alexnet", "--freq-mhz", "200", "--reference-fps", "62"]) == 0
    captured = capsys.readouterr()
    totals = json.loads(captured.out)["totals"]
    assert totals["fps_within_tolerance"] is True
    assert "model assumptions" in captured.err and "weight loads overlap" in captured.err


def test_input_errors_exit_2(tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.net")]) == 2
    bad = tmp_path / "bad.net"
    bad.write_text("a kind=conv in=4x4x1 filters=1 stride=-1\n")
    assert main(["run", str(bad)]) == 2
    assert "bad.net:1" in capsys.readouterr().err


def test_input_tensor(toy_path, tmp_path):
    x = np.random.default_rng(0).integers(0, 256, (3, 10, 12)).astype(np.uint8)
    write_tmat(tmp_path / "x.tmat", x)
    out = tmp_path / "r.json"
    assert main(["run", str(toy_path), "--mode", "functional", "--input", str(tmp_path / "x.tmat"),
                 "--out", str(out)]) == 0
    write_tmat(tmp_path / "bad.tmat", x[:2])
    assert main(["run", str(toy_path), "--mode", "functional", "--input", str(tmp_path / "bad.tmat")]) == 2


def test_weight_files(tmp_path):
    w = np.zeros((2, 1, 3, 3), np.int32)
    w[:, 0, 1, 1] = [1, 2]
    write_tmat(tmp_path / "w.tmat", w)
    write_tmat(tmp_path / "b.tmat", np.array([0, 1], np.int32))
    (tmp_path / "n.net").write_text("n kind=conv in=4x5x1 filters=2 kernel=3 pad=1 weights=w.tmat bias=b.tmat\n")
    x = np.arange(20, dtype=np.uint8).reshape(1, 4, 5)
    write_tmat(tmp_path / "x.tmat", x)
    rep = run(load_network(tmp_path / "n.net"), RunOptions(mode="functional", input_path=str(tmp_path / "x.tmat")))
    assert rep.rows[0]["bit_exact"] is True
    # out-of-range weights are an input error
    write_tmat(tmp_path / "w.tmat", w * 100)
    assert main(["run", str(tmp_path / "n.net"), "--mode", "functional", "--precision", "int5"]) == 2


def test_verification_failure_exit_1(toy_path, monkeypatch, capsys):
    import tma_sim.cli as cli

    real = cli.quantized_ref
    monkeypatch.setattr(cli, "quantized_ref", lambda *a, **k: real(*a, **k) + 1)
    assert main(["run", str(toy_path), "--mode", "functional"]) == 1
    assert "differs from golden" in capsys.readouterr().err
    with pytest.raises(VerificationError):
        run(load_network(toy_path), RunOptions(mode="functional"))


def test_decompose_command(tmp_path, capsys):
    assert main(["decompose", "--precision", "int5", "--format", "json"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["count"] == 32 and data["inexact"] == 4
    assert data["worst_rel_error"] == pytest.approx(1 / 11)
    write_tmat(tmp_path / "w.tmat", np.array([[85, -3]], np.int32))
    assert main(["decompose", "--precision", "int8", "--weights", str(tmp_path / "w.tmat"), "--format", "csv"]) == 0
    rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
    assert rows[0]["weight"] == "85" and rows[0]["effective"] == "85" and rows[0]["index"] == "0x0"


def test_verify_command(capsys):
    assert main(["verify", "--suite", "psi", "--suite", "moa", "--samples", "1000"]) == 0
    out = capsys.readouterr().out
    assert "[PASS] psi/int5_structure" in out and "checks passed" in out
