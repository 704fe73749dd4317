"""Pipeline driver: generate -> pod -> rom (galerkin|esn) -> evaluate.

One JSON configuration file drives every stage; artifacts land in the output
directory and each stage records what it needs for the next.  Exit codes:
0 success, 2 configuration problems, 3 missing upstream artifact.
"""

import argparse
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, HemoreduceError, MissingArtifact
from .esn import EsnConfig, predict, train_esn
from .fom import (
    FluidProps,
    InletSignal,
    inlet_velocity,
    run_fom,
    sample_training_signal,
    stable_dt,
)
from .galerkin import assemble_operators, integrate_rom
from .geometry import BifurcationParams, build_bifurcation
from .io_formats import (
    FLOAT_FMT,
    export_vtk,
    read_basis,
    read_lifting,
    read_snapshots,
    write_basis,
    write_basis_tables,
    write_error_series_csv,
    write_esn,
    write_lifting,
    write_operators,
    write_snapshots,
    write_timing_csv,
)
from .pod import pod_from_snapshots, project
from .postproc import build_timing_report, error_series, reconstruct_full, velocity_magnitude
from .snapshots import compute_lifting, homogenize

VTK_INSTANTS = (4.0, 9.0, 14.0, 23.0)

DEFAULT_CONFIG = {
    "geometry": {
        "parent_length": 2.0,
        "parent_width": 0.5,
        "branch_length": 1.0,
        "branch_width": 0.5,
        "resolution": 32,
    },
    "fluid": {"rho": 1000.0, "mu": 1.0},
    "signals": {
        "u_bar": 0.2,
        "train_seed": 0,
        "train_harmonics": 3,
        "test_amplitude": 0.04,
        "test_frequency": 0.3,
        "test_phase": 0.0,
        "horizon": 24.0,
        "sample_dt": 0.05,
    },
    "pod": {"n_modes_velocity": 3, "n_modes_pressure": 3},
    "galerkin": {"dt": 1e-3},
    "esn": {
        "n_reservoir": 800,
        "density": 0.02,
        "spectral_radius_target": 0.95,
        "input_scaling": 0.5,
        "bias_scaling": 1.0,
        "pre_activation_gain": 1.0,
        "leak_rate": 0.2,
        "ridge_lambda": 3e-5,
        "seed": 0,
        "washout_duration": 3.0,
    },
    "output": {"directory": "artifacts"},
}

# the first second of every from-rest run is start-up transient; the POD
# bases are trained on the remainder only
SPIN_UP_SECONDS = 1.0


def load_config(path):
    """Defaults overlaid with the user file; unknown sections/keys fail fast."""
    try:
        with open(path) as fh:
            user = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(user, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    config = {sec: dict(vals) for sec, vals in DEFAULT_CONFIG.items()}
    for sec, vals in user.items():
        if sec not in config:
            raise ConfigError(f"unknown config section '{sec}'")
        if not isinstance(vals, dict):
            raise ConfigError(f"config section '{sec}' must be an object")
        for key, val in vals.items():
            if key not in config[sec]:
                raise ConfigError(f"unknown key '{sec}.{key}'")
            config[sec][key] = val
    return config


def config_hash(config):
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _geometry(config):
    return build_bifurcation(BifurcationParams(**config["geometry"]))


def _props(config):
    return FluidProps(rho=float(config["fluid"]["rho"]), mu=float(config["fluid"]["mu"]))


def _test_signal(config):
    s = config["signals"]
    return InletSignal(u_bar=float(s["u_bar"]), harmonics=(
        (float(s["test_amplitude"]), float(s["test_frequency"]), float(s["test_phase"])),))


def _out_dir(config, args):
    out = Path(args.out) if args.out else Path(config["output"]["directory"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(path: Path, needed_command: str):
    if not path.exists():
        raise MissingArtifact(str(path), needed_command)
    return path


def _write_manifest(out: Path, config, stage, seeds):
    path = out / "manifest.json"
    manifest = {}
    if path.exists():
        manifest = json.loads(path.read_text())
    manifest["config_sha256"] = config_hash(config)
    manifest.setdefault("seeds", {}).update(seeds)
    manifest["versions"] = {
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "hemoreduce": __version__,
    }
    stages = manifest.setdefault("stages", [])
    if stage not in stages:
        stages.append(stage)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _update_timings(out: Path, updates):
    path = out / "timings.json"
    records = json.loads(path.read_text()) if path.exists() else {}
    records.update(updates)
    path.write_text(json.dumps(records, indent=2, sort_keys=True) + "\n")


def _fom_dt(domain, props, signal, sample_dt):
    """Largest stable dt that divides the sampling interval."""
    umax = 2.0 * (signal.u_bar + sum(abs(a) for a, _, _ in signal.harmonics))
    dt_max = 0.7 * stable_dt(domain, props, umax)
    n = max(1, math.ceil(sample_dt / dt_max))
    return sample_dt / n, n


def cmd_generate(config, args):
    out = _out_dir(config, args)
    domain = _geometry(config)
    props = _props(config)
    sig = config["signals"]
    seed = args.seed if args.seed is not None else int(sig["train_seed"])
    train_signal = sample_training_signal(seed, int(sig["train_harmonics"]))
    test_signal = _test_signal(config)
    T = float(sig["horizon"])
    sample_dt = float(sig["sample_dt"])
    dt, every = _fom_dt(domain, props, train_signal, sample_dt)

    print(f"generate: grid {domain.nx}x{domain.ny} ({domain.n_fluid} fluid cells), "
          f"dt={dt:.5g} s, horizon={T:g} s")
    train = run_fom(domain, props, train_signal, T, dt, every)
    write_snapshots(out / "train_velocity.hrs", train.velocity, domain)
    write_snapshots(out / "train_pressure.hrs", train.pressure, domain)
    test = run_fom(domain, props, test_signal, T, dt, every)
    write_snapshots(out / "test_velocity.hrs", test.velocity, domain)
    write_snapshots(out / "test_pressure.hrs", test.pressure, domain)

    _update_timings(out, {"fom": test.wall_seconds})
    _write_manifest(out, config, "generate", {"train": seed})
    print(f"generate: train {train.wall_seconds:.1f} s, test {test.wall_seconds:.1f} s wall")
    return 0


def cmd_pod(config, args):
    out = _out_dir(config, args)
    snaps_v, domain = read_snapshots(_require(out / "train_velocity.hrs", "generate"))
    snaps_p, _ = read_snapshots(_require(out / "train_pressure.hrs", "generate"))
    props = _props(config)
    u_bar = float(config["signals"]["u_bar"])

    lifting = compute_lifting(domain, props, u_ref=u_bar)
    hom = homogenize(snaps_v, lifting)
    n_u = int(config["pod"]["n_modes_velocity"])
    n_p = int(config["pod"]["n_modes_pressure"])
    vel_basis = pod_from_snapshots(hom.window(SPIN_UP_SECONDS), n_u)
    p_basis = pod_from_snapshots(snaps_p.window(SPIN_UP_SECONDS), n_p)

    write_lifting(out / "lifting.hrl", lifting)
    write_basis(out / "velocity_basis.hrb", vel_basis)
    write_basis(out / "pressure_basis.hrb", p_basis)
    write_basis_tables(vel_basis, out / "velocity_eigenvalues.csv",
                       out / "velocity_coeffs.csv")
    write_basis_tables(p_basis, out / "pressure_eigenvalues.csv",
                       out / "pressure_coeffs.csv")

    print("mode  lambda_u      energy_u   lambda_p      energy_p")
    for k in range(max(n_u, n_p)):
        lu = vel_basis.eigenvalues[k] if k < n_u else float("nan")
        eu = vel_basis.energy_fraction[k] if k < n_u else float("nan")
        lp = p_basis.eigenvalues[k] if k < n_p else float("nan")
        ep = p_basis.energy_fraction[k] if k < n_p else float("nan")
        print(f"{k + 1:>4}  {lu:<12.5g}  {eu:<9.6f}  {lp:<12.5g}  {ep:<9.6f}")
    _write_manifest(out, config, "pod", {})
    return 0


def _load_bases(out):
    vel_basis = read_basis(_require(out / "velocity_basis.hrb", "pod"))
    p_basis = read_basis(_require(out / "pressure_basis.hrb", "pod"))
    lifting = read_lifting(_require(out / "lifting.hrl", "pod"))
    return vel_basis, p_basis, lifting


def _write_trajectory_csv(path, times, u_in, a, b, washout=None):
    n_u, n_p = a.shape[1], b.shape[1]
    cols = ["t", "u_in"] + [f"a{k + 1}" for k in range(n_u)] + \
        [f"b{k + 1}" for k in range(n_p)]
    if washout is not None:
        cols.append("washout")
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for k in range(times.size):
            row = [FLOAT_FMT % times[k], FLOAT_FMT % u_in[k]]
            row += [FLOAT_FMT % v for v in a[k]]
            row += [FLOAT_FMT % v for v in b[k]]
            if washout is not None:
                row.append(str(int(washout[k])))
            fh.write(",".join(row) + "\n")


def _read_trajectory_csv(path, n_u, n_p):
    data = np.genfromtxt(path, delimiter=",", names=True)
    times = np.atleast_1d(data["t"])
    u_in = np.atleast_1d(data["u_in"])
    a = np.stack([np.atleast_1d(data[f"a{k + 1}"]) for k in range(n_u)], axis=1)
    b = np.stack([np.atleast_1d(data[f"b{k + 1}"]) for k in range(n_p)], axis=1)
    return times, u_in, a, b


def cmd_rom(config, args):
    out = _out_dir(config, args)
    vel_basis, p_basis, lifting = _load_bases(out)
    test_signal = _test_signal(config)
    T = float(config["signals"]["horizon"])
    sample_dt = float(config["signals"]["sample_dt"])

    if args.method == "galerkin":
        _, domain = read_snapshots(_require(out / "train_velocity.hrs", "generate"))
        props = _props(config)
        wall0 = time.perf_counter()
        ops = assemble_operators(vel_basis, p_basis, lifting, domain, props)
        offline = time.perf_counter() - wall0
        u0 = float(inlet_velocity(test_signal, 0.0))
        a0 = -u0 * project(lifting.zeta, vel_basis)
        traj = integrate_rom(ops, a0, test_signal, T,
                             dt=float(config["galerkin"]["dt"]), sample_dt=sample_dt)
        write_operators(out / "operators.hro", ops)
        u_in = inlet_velocity(test_signal, traj.times)
        _write_trajectory_csv(out / "rom_galerkin.csv", traj.times, u_in, traj.a, traj.b)
        _update_timings(out, {"galerkin": {"offline": offline,
                                           "online": traj.wall_seconds}})
        _write_manifest(out, config, "rom:galerkin", {})
        print(f"galerkin: offline {offline:.3f} s, online {traj.wall_seconds:.4f} s")
        return 0

    # esn
    train_v, _ = read_snapshots(_require(out / "train_velocity.hrs", "generate"))
    train_p, _ = read_snapshots(_require(out / "train_pressure.hrs", "generate"))
    esn_cfg = dict(config["esn"])
    if args.seed is not None:
        esn_cfg["seed"] = args.seed
    esn_config = EsnConfig(**esn_cfg)
    # target coefficients over the full horizon (the POD window drops the
    # spin-up, but the reservoir clock must stay aligned with t = 0)
    hom = homogenize(train_v, lifting)
    a_tr = vel_basis.modes.T @ (vel_basis.dof_weights[:, None] * hom.columns)
    b_tr = p_basis.modes.T @ (p_basis.dof_weights[:, None] * train_p.columns)
    targets = np.vstack([a_tr, b_tr]).T
    reservoir, readout, offline = train_esn(
        esn_config, train_v.inlet_values, targets, train_v.times)
    times = np.round(np.arange(round(T / sample_dt) + 1) * sample_dt, 12)
    test_inputs = inlet_velocity(test_signal, times)
    outputs, washout, online = predict(reservoir, readout, test_inputs,
                                       esn_config, times=times)
    n_u = vel_basis.n_modes
    write_esn(out / "esn_model.hre", esn_config, reservoir, readout)
    _write_trajectory_csv(out / "rom_esn.csv", times, test_inputs,
                          outputs[:, :n_u], outputs[:, n_u:], washout=washout)
    _update_timings(out, {"esn": {"offline": offline, "online": online}})
    _write_manifest(out, config, "rom:esn", {"esn": esn_config.seed})
    print(f"esn: offline {offline:.3f} s, online {online:.4f} s "
          f"(training error {readout.training_error:.3e})")
    return 0


def cmd_evaluate(config, args):
    out = _out_dir(config, args)
    test_v, domain = read_snapshots(_require(out / "test_velocity.hrs", "generate"))
    test_p, _ = read_snapshots(_require(out / "test_pressure.hrs", "generate"))
    vel_basis, p_basis, lifting = _load_bases(out)
    props = _props(config)
    n_u, n_p = vel_basis.n_modes, p_basis.n_modes
    sample_dt = float(config["signals"]["sample_dt"])
    washout = float(config["esn"]["washout_duration"])

    for method in ("galerkin", "esn"):
        path = _require(out / f"rom_{method}.csv", "rom")
        times, u_in, a, b = _read_trajectory_csv(path, n_u, n_p)
        if times.size != test_v.n_snapshots:
            raise MissingArtifact(str(path), "rom")
        vel, pres = reconstruct_full(vel_basis, p_basis, lifting, a, b, u_in)
        series = error_series(times, test_v.columns, test_p.columns,
                              vel, pres, domain, props)
        write_error_series_csv(out / f"errors_{method}.csv", series)
        t_min = washout if method == "esn" else None
        print(f"{method}: mean E_U={series.mean('e_U', t_min=t_min):.2f}% "
              f"E_p={series.mean('e_p', t_min=t_min):.2f}% "
              f"E_wss={series.mean('e_wss', t_min=t_min):.2f}%")

        n = domain.n_fluid
        for t_snap in VTK_INSTANTS:
            k = int(round(t_snap / sample_dt))
            if k >= times.size:
                continue  # horizon shorter than this export instant
            tag = f"{method}_t{t_snap:g}".replace(".", "p")
            export_vtk(out / f"velocity_{tag}.vtk", domain,
                       vectors={"velocity": vel[:, k]})
            export_vtk(out / f"pressure_{tag}.vtk", domain,
                       scalars={"pressure": pres[:, k]})
            export_vtk(out / f"speed_{tag}.vtk", domain,
                       scalars={"speed": velocity_magnitude(vel[:, k], n)[:, 0]})

    timings_path = _require(out / "timings.json", "generate")
    records = json.loads(timings_path.read_text())
    report = build_timing_report(records)
    (out / "timing.txt").write_text(report.as_table() + "\n")
    write_timing_csv(out / "timing.csv", report)
    print(report.as_table())
    _write_manifest(out, config, "evaluate", {})
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "pod": cmd_pod,
    "rom": cmd_rom,
    "evaluate": cmd_evaluate,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hemoreduce",
        description="Reduced-order modeling pipeline for pulsatile flow in a "
                    "2D bifurcation: snapshot generation, POD compression, "
                    "Galerkin and echo-state surrogates, evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("generate", "run the full-order solver for train/test signals"),
            ("pod", "compute lifting field and POD bases"),
            ("rom", "run a reduced-order model on the test signal"),
            ("evaluate", "error metrics, timing report, VTK exports")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--out", default=None, help="artifact directory override")
        if name == "rom":
            p.add_argument("--method", choices=("galerkin", "esn"), required=True)
    return parser


def _apply_thread_cap():
    cap = os.environ.get("HEMOREDUCE_THREADS")
    if not cap:
        return
    try:
        n = max(1, int(cap))
    except ValueError:
        raise ConfigError(f"HEMOREDUCE_THREADS must be an integer, got {cap!r}")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))
    try:
        import numba
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    except ImportError:
        pass


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        _apply_thread_cap()
        if not os.path.exists(args.config):
            print(f"error: config file not found: {args.config}", file=sys.stderr)
            return 2
        config = load_config(args.config)
        return COMMANDS[args.command](config, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MissingArtifact as exc:
        print(f"error: missing artifact {exc.path}; "
              f"run `hemoreduce {exc.needed_command}` first", file=sys.stderr)
        return 3
    except HemoreduceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
