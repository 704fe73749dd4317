import json

import numpy as np
import pytest

from _helpers import MICRO_CONFIG
from hemoreduce import cli
from hemoreduce.errors import ConfigError
from hemoreduce.fom import stable_dt
from hemoreduce.io_formats import read_basis, read_snapshots


def write_config(tmp_path, payload):
    path = tmp_path / "config.json"
    path.write_text(payload if isinstance(payload, str) else json.dumps(payload))
    return path


def test_load_config_defaults_and_overlay(tmp_path):
    path = write_config(tmp_path, {"pod": {"n_modes_velocity": 5}})
    cfg = cli.load_config(path)
    assert cfg["pod"]["n_modes_velocity"] == 5
    assert cfg["pod"]["n_modes_pressure"] == 3  # untouched default
    assert cfg["geometry"]["resolution"] == 32


def test_load_config_rejects_unknown(tmp_path):
    with pytest.raises(ConfigError):
        cli.load_config(write_config(tmp_path, {"nope": {}}))
    with pytest.raises(ConfigError):
        cli.load_config(write_config(tmp_path, {"pod": {"nope": 1}}))
    with pytest.raises(ConfigError):
        cli.load_config(write_config(tmp_path, {"pod": 3}))
    with pytest.raises(ConfigError):
        cli.load_config(write_config(tmp_path, "not json {"))
    with pytest.raises(ConfigError):
        cli.load_config(write_config(tmp_path, "[1, 2]"))


def test_config_hash_canonical():
    a = cli.config_hash({"x": {"b": 1, "a": 2}})
    b = cli.config_hash({"x": {"a": 2, "b": 1}})
    assert a == b and len(a) == 64
    assert a != cli.config_hash({"x": {"a": 2, "b": 2}})


def test_fom_dt_divides_sampling():
    from hemoreduce.fom import FluidProps, InletSignal
    from hemoreduce.geometry import build_channel

    dom = build_channel(0.5, 0.25, 16)
    props = FluidProps()
    sig = InletSignal(u_bar=0.2, harmonics=((0.04, 0.3, 0.0),))
    dt, every = cli._fom_dt(dom, props, sig, 0.05)
    assert dt * every == pytest.approx(0.05, rel=1e-12)
    assert dt <= 0.7 * stable_dt(dom, props, 2.0 * 0.24) * (1 + 1e-12)


def test_missing_config_file_exits_2(tmp_path, capsys):
    rc = cli.main(["generate", "--config", str(tmp_path / "nope.json")])
    assert rc == 2
    assert "not found" in capsys.readouterr().err


def test_bad_config_exits_2(tmp_path, capsys):
    path = write_config(tmp_path, {"bogus_section": {}})
    rc = cli.main(["generate", "--config", str(path)])
    assert rc == 2


def test_missing_artifact_exits_3(tmp_path, capsys):
    path = write_config(tmp_path, MICRO_CONFIG)
    rc = cli.main(["pod", "--config", str(path), "--out", str(tmp_path / "o")])
    assert rc == 3
    assert "run `hemoreduce generate` first" in capsys.readouterr().err


def test_pipeline_artifacts(micro_pipeline):
    out = micro_pipeline["out"]
    for name in ("train_velocity.hrs", "train_pressure.hrs",
                 "test_velocity.hrs", "test_pressure.hrs",
                 "velocity_basis.hrb", "pressure_basis.hrb", "lifting.hrl",
                 "operators.hro", "esn_model.hre",
                 "rom_galerkin.csv", "rom_esn.csv",
                 "errors_galerkin.csv", "errors_esn.csv",
                 "velocity_eigenvalues.csv", "pressure_coeffs.csv",
                 "timing.txt", "timing.csv", "timings.json", "manifest.json"):
        assert (out / name).exists(), name


def test_pipeline_manifest_and_timings(micro_pipeline):
    out = micro_pipeline["out"]
    manifest = json.loads((out / "manifest.json").read_text())
    for stage in ("generate", "pod", "rom:galerkin", "rom:esn", "evaluate"):
        assert stage in manifest["stages"]
    assert "train" in manifest["seeds"] and "esn" in manifest["seeds"]
    assert len(manifest["config_sha256"]) == 64
    timings = json.loads((out / "timings.json").read_text())
    assert timings["fom"] > 0.0
    for method in ("galerkin", "esn"):
        assert timings[method]["online"] > 0.0
        assert timings[method]["offline"] > 0.0


def test_pipeline_snapshot_shapes(micro_pipeline):
    out = micro_pipeline["out"]
    cfg = micro_pipeline["config"]
    snaps, dom = read_snapshots(out / "test_velocity.hrs")
    horizon = cfg["signals"]["horizon"]
    sample_dt = cfg["signals"]["sample_dt"]
    assert snaps.n_snapshots == round(horizon / sample_dt) + 1
    assert snaps.n_dof == 2 * dom.n_fluid
    basis = read_basis(out / "velocity_basis.hrb")
    assert basis.n_modes == cfg["pod"]["n_modes_velocity"]
    # POD training window drops the spin-up second
    assert basis.coeff_train.shape[1] == snaps.n_snapshots - round(1.0 / sample_dt)


def test_rom_trajectories_aligned(micro_pipeline):
    out = micro_pipeline["out"]
    for method in ("galerkin", "esn"):
        data = np.genfromtxt(out / f"rom_{method}.csv", delimiter=",",
                             names=True)
        assert data["t"][0] == 0.0
        assert data["t"][-1] == pytest.approx(
            micro_pipeline["config"]["signals"]["horizon"])
        assert np.all(np.isfinite(data["a1"]))
    esn = np.genfromtxt(out / "rom_esn.csv", delimiter=",", names=True)
    assert "washout" in esn.dtype.names
    washed = esn["washout"] == 1
    assert washed.sum() > 0 and not washed[-1]


def test_error_csvs_parse(micro_pipeline):
    out = micro_pipeline["out"]
    for method in ("galerkin", "esn"):
        data = np.genfromtxt(out / f"errors_{method}.csv", delimiter=",",
                             names=True)
        assert list(data.dtype.names) == ["t", "e_p", "e_U", "e_wss"]
        finite = np.isfinite(data["e_U"])
        assert finite.sum() >= data["t"].size - 1  # only t=0 rest state is NaN
