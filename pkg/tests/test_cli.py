import json

import numpy as np
import pytest

from sterf import cli
from sterf.arch import build_network
from sterf.config import parse_arch_config
from sterf.erf import DEFAULT_SAMPLES, DEFAULT_SEED
from sterf.export import read_grid_csv

IDENTITY = """
input = [{c}, {hw}, {hw}]
timesteps = {T}

[[stages]]
name = "only"

[[stages.blocks]]
kind = "identity"
"""

MEMBRANE = """
input = [1, 4, 4]
timesteps = 5

[neuron]
beta = 0.5
theta = 1e6

[[stages]]
name = "sn"

[[stages.blocks]]
kind = "lif_membrane"
"""

CONV = """
input = [1, 6, 6]
timesteps = 2

[[stages]]
name = "s"
downsample = { kernel = 3, stride = 1, dim = 2 }

[[stages.blocks]]
kind = "bn"
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_identity_spatial_csv_is_centre_delta(tmp_path):
    arch = write(tmp_path, "id.toml", IDENTITY.format(c=2, hw=5, T=3))
    assert cli.main(["spatial", "--arch", arch, "--out", str(tmp_path / "o"), "--samples", "2"]) == 0
    grid = read_grid_csv(tmp_path / "o" / "grid.csv")
    expect = np.zeros((5, 5))
    expect[2, 2] = 1
    assert np.array_equal(grid, expect)
    m = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert m["stimulus"] == "spatial" and m["weights"] == "random-init"
    assert set(m["outputs"]) == {"grid.csv", "heatmap.pgm", "spread.json"}


def test_spatial_twice_is_byte_identical(tmp_path):
    arch = write(tmp_path, "c.toml", CONV)
    for d in ("a", "b"):
        assert cli.main(["spatial", "--arch", arch, "--out", str(tmp_path / d), "--samples", "3"]) == 0
    for name in ("grid.csv", "heatmap.pgm", "spread.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_parser_defaults():
    args = cli.build_parser().parse_args(["spatial", "--arch", "x", "--out", "o"])
    assert args.samples == DEFAULT_SAMPLES == 60 and args.seed == DEFAULT_SEED == 42
    assert args.bn_stats == "on" and args.gamma == 0.5


def test_temporal_identity_single_step(tmp_path):
    arch = write(tmp_path, "id.toml", IDENTITY.format(c=2, hw=3, T=1))
    assert cli.main(["temporal", "--arch", arch, "--out", str(tmp_path), "--samples", "1"]) == 0
    assert (tmp_path / "temporal.csv").read_bytes() == b"0,18\r\n"


def test_temporal_subthreshold_ratios(tmp_path):
    m = cli.cmd_temporal(parse_arch_config(MEMBRANE), samples=2, out_dir=tmp_path)
    assert m["stimulus"] == "temporal"
    rows = [line.split(",") for line in (tmp_path / "temporal.csv").read_text().splitlines()]
    v = np.array([float(r[1]) for r in rows])
    assert [int(r[0]) for r in rows] == list(range(5))
    np.testing.assert_allclose(v[1:] / v[:-1], 0.5, rtol=0, atol=1e-12)


def test_compare_needs_two(tmp_path):
    assert cli.main(["compare", "--arch", "meta-sdt-tiny-desk", "--out", str(tmp_path)]) == 1


def test_compare_identical_configs_identical_rows(tmp_path):
    arch = write(tmp_path, "c.toml", CONV)
    m = cli.cmd_compare([parse_arch_config(CONV)] * 2, samples=2, out_dir=tmp_path / "o",
                        labels=["a", "b"])
    a, b = m["rows"]
    assert {k: v for k, v in a.items() if k not in ("index", "config")} == \
           {k: v for k, v in b.items() if k not in ("index", "config")}
    assert (tmp_path / "o" / "compare.csv").read_text().startswith(
        "index,config,probe,r95,mass_entropy,centroid_y,centroid_x")
    assert cli.main(["compare", "--arch", arch, "--arch", arch, "--samples", "1",
                     "--out", str(tmp_path / "p")]) == 0


def test_compare_rejects_shape_mismatch(tmp_path):
    a = write(tmp_path, "a.toml", IDENTITY.format(c=1, hw=5, T=2))
    b = write(tmp_path, "b.toml", IDENTITY.format(c=1, hw=6, T=2))
    assert cli.main(["compare", "--arch", a, "--arch", b, "--out", str(tmp_path / "o")]) == 1


@pytest.mark.parametrize("argv", [
    ["spatial", "--arch", "no-such-preset", "--out", "{o}"],
    ["spatial", "--arch", "meta-sdt-tiny-desk", "--probe", "stage9", "--out", "{o}"],
    ["spatial", "--arch", "{bad}", "--out", "{o}"],
    ["spatial", "--arch", "meta-sdt-tiny-desk", "--samples", "0", "--out", "{o}"],
    ["spatial", "--out", "{o}"],
    ["frobnicate"],
])
def test_usage_errors_exit_one(tmp_path, argv, capsys):
    bad = write(tmp_path, "bad.toml", "timesteps = [\n")
    argv = [a.format(o=tmp_path / "o", bad=bad) for a in argv]
    assert cli.main(argv) == 1
    assert capsys.readouterr().err


def test_unwritable_output_exits_one(tmp_path):
    blocker = tmp_path / "f"
    blocker.write_text("")
    arch = write(tmp_path, "id.toml", IDENTITY.format(c=1, hw=3, T=1))
    assert cli.main(["spatial", "--arch", arch, "--samples", "1", "--out", str(blocker / "x")]) == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_weights_exit_two(tmp_path):
    arch = write(tmp_path, "c.toml", CONV)
    net = build_network(parse_arch_config(CONV))
    net.params = {k: np.full_like(v, np.inf) if k.endswith("weight") else v
                  for k, v in net.params.items()}
    wpath = tmp_path / "w.bin"
    net.save_weights(wpath)
    assert cli.main(["spatial", "--arch", arch, "--weights", str(wpath), "--samples", "1",
                     "--out", str(tmp_path / "o")]) == 2


def test_loaded_weights_recorded_in_manifest(tmp_path):
    spec = parse_arch_config(CONV)
    wpath = tmp_path / "w.bin"
    digest = build_network(spec).save_weights(wpath)
    m = cli.cmd_spatial(spec, samples=1, out_dir=tmp_path / "o", weights=str(wpath))
    assert m["weights"] == {"path": str(wpath), "sha256": digest}


def test_rerun_reproduces_hashes(tmp_path, capsys):
    arch = write(tmp_path, "c.toml", CONV)
    assert cli.main(["spatial", "--arch", arch, "--samples", "2", "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["rerun", str(tmp_path / "a" / "manifest.json"), "--out", str(tmp_path / "b")]) == 0
    assert "all output hashes match" in capsys.readouterr().out


def test_rerun_detects_tampering(tmp_path):
    cli.cmd_spatial(parse_arch_config(CONV), samples=1, out_dir=tmp_path / "a")
    mpath = tmp_path / "a" / "manifest.json"
    m = json.loads(mpath.read_text())
    m["outputs"]["grid.csv"]["sha256"] = "0" * 64
    mpath.write_text(json.dumps(m))
    ok, diffs = cli.cmd_rerun(mpath, tmp_path / "b")
    assert not ok and set(diffs) == {"grid.csv"}


def test_verify_passes(capsys):
    assert cli.main(["verify", "--networks", "3"]) == 0
    out = capsys.readouterr().out
    assert "ALL PASS" in out and "FAIL " not in out
