import json
import sys
import time

import numpy as np
import pytest

from _helpers import MICRO_CONFIG
from hemoreduce import cli
from hemoreduce.fom import FluidProps, InletSignal, run_fom, run_to_steady
from hemoreduce.galerkin import assemble_operators
from hemoreduce.geometry import build_channel
from hemoreduce.pod import pod_from_snapshots
from hemoreduce.snapshots import compute_lifting, homogenize


@pytest.fixture(scope="session")
def poiseuille():
    """Steady developed channel flow at the reference resolution.

    Viscosity is raised to Re = 10 so the parabolic profile develops well
    within the channel length (the entrance length scales with Re)."""
    domain = build_channel(2.0, 0.5, 32)
    props = FluidProps(mu=10.0)
    u_bar = 0.2
    wall0 = time.perf_counter()
    state = run_to_steady(domain, props, u_bar)
    wall = time.perf_counter() - wall0
    return {"domain": domain, "props": props, "u_bar": u_bar,
            "width": 0.5, "length": 2.0, "state": state, "wall": wall}


@pytest.fixture(scope="session")
def chan16():
    """Small unsteady channel run with lifting field and 3+3 POD bases; the
    workhorse dataset for operator and format tests."""
    domain = build_channel(0.25, 0.25, 16)
    props = FluidProps()
    signal = InletSignal(u_bar=0.2, harmonics=((0.05, 0.4, 0.0),))
    run = run_fom(domain, props, signal, 2.0, 0.02, 5, log=False)
    lifting = compute_lifting(domain, props, u_ref=0.2)
    hom = homogenize(run.velocity, lifting)
    vel_basis = pod_from_snapshots(hom.window(0.5), 3)
    p_basis = pod_from_snapshots(run.pressure.window(0.5), 3)
    ops = assemble_operators(vel_basis, p_basis, lifting, domain, props)
    return {"domain": domain, "props": props, "signal": signal, "run": run,
            "lifting": lifting, "vel_basis": vel_basis, "p_basis": p_basis,
            "ops": ops}


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "CRITERION_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.line(line)


def run_pipeline(out, config=None, seed=None):
    """Drive every CLI stage into ``out``; returns per-stage wall seconds."""
    cfg_path = out / "config.json"
    cfg_path.write_text(json.dumps(config if config is not None else {}) + "\n")
    walls = {}
    stages = (("generate", ["generate"]),
              ("pod", ["pod"]),
              ("rom_galerkin", ["rom", "--method", "galerkin"]),
              ("rom_esn", ["rom", "--method", "esn"]),
              ("evaluate", ["evaluate"]))
    for name, argv in stages:
        extra = ["--seed", str(seed)] if seed is not None and name == "generate" else []
        wall0 = time.perf_counter()
        rc = cli.main(argv + ["--config", str(cfg_path), "--out", str(out)] + extra)
        walls[name] = time.perf_counter() - wall0
        assert rc == 0, f"stage {name} exited with {rc}"
    return walls


@pytest.fixture(scope="session")
def micro_pipeline(tmp_path_factory):
    """One complete CLI run of the fast coarse configuration."""
    out = tmp_path_factory.mktemp("micro")
    walls = run_pipeline(out, MICRO_CONFIG)
    return {"out": out, "walls": walls, "config": MICRO_CONFIG}


@pytest.fixture(scope="session")
def ref(tmp_path_factory):
    """Full default-configuration pipeline (the reference bifurcation)."""
    out = tmp_path_factory.mktemp("reference")
    walls = run_pipeline(out)
    errors = {m: np.genfromtxt(out / f"errors_{m}.csv", delimiter=",", names=True)
              for m in ("galerkin", "esn")}
    timings = json.loads((out / "timings.json").read_text())
    return {"out": out, "walls": walls, "errors": errors, "timings": timings}
