import numpy as np
import pytest

from _helpers import oracle_operators, oracle_reduced_rhs
from hemoreduce.errors import BasisMismatch, BlowUp, SingularPressureSystem
from hemoreduce.fom import InletSignal, inlet_velocity, inlet_velocity_rate
from hemoreduce.galerkin import (
    ReducedOperators,
    ReducedState,
    _invert_pressure_matrix,
    assemble_classical_operators,
    assemble_operators,
    boundary_vorticity_matrix,
    integrate_rom,
    reduced_rhs,
    solve_reduced_pressure,
)
from hemoreduce.pod import project


def _compare(ops, oracle, names, rtol=1e-9):
    for name in names:
        got = getattr(ops, name)
        ref = oracle[name]
        scale = max(np.abs(ref).max(), 1e-30)
        np.testing.assert_allclose(got, ref, rtol=rtol, atol=rtol * scale,
                                   err_msg=f"operator {name}")


def test_operators_match_quadrature_oracle(chan16):
    ops = chan16["ops"]
    oracle = oracle_operators(chan16["domain"], chan16["props"],
                              chan16["lifting"], chan16["vel_basis"],
                              chan16["p_basis"])
    _compare(ops, oracle, ("Mr", "Ar", "Cr", "Br", "Dr", "Gr", "Nr",
                           "Fr_unit", "zeta_proj"))


def test_reduced_rhs_matches_full_field_residual(chan16):
    ops = chan16["ops"]
    oracle = oracle_operators(chan16["domain"], chan16["props"],
                              chan16["lifting"], chan16["vel_basis"],
                              chan16["p_basis"])
    rng = np.random.default_rng(17)
    for _ in range(3):
        a = rng.standard_normal(ops.n_u) * 0.05
        u_in, du = rng.uniform(0.15, 0.25), rng.uniform(-0.1, 0.1)
        b = solve_reduced_pressure(ops, a, u_in, du)
        rhs = reduced_rhs(ops, ReducedState(a=a, b=b, t=0.0), u_in, du)
        rhs_ref, b_ref = oracle_reduced_rhs(
            chan16["domain"], chan16["props"], chan16["lifting"],
            chan16["vel_basis"], chan16["p_basis"], oracle, a, u_in, du)
        np.testing.assert_allclose(b, b_ref, rtol=1e-9,
                                   atol=1e-9 * np.abs(b_ref).max())
        np.testing.assert_allclose(rhs, rhs_ref, rtol=1e-9,
                                   atol=1e-9 * np.abs(rhs_ref).max())


def test_mass_matrix_is_identity(chan16):
    ops = chan16["ops"]
    assert np.abs(ops.Mr - np.eye(ops.n_u)).max() <= 1e-10


def test_pressure_matrix_spd(chan16):
    dr = chan16["ops"].Dr
    np.testing.assert_allclose(dr, dr.T, atol=1e-12 * np.abs(dr).max())
    assert np.all(np.linalg.eigvalsh(dr) > 0.0)


def test_reduced_pressure_solves_system(chan16):
    ops = chan16["ops"]
    a = np.array([0.01, -0.02, 0.005])
    b = solve_reduced_pressure(ops, a, 0.2, 0.05)
    abar = np.concatenate([[0.2], a])
    rhs = ops.rho * (-np.einsum("mjk,j,k->m", ops.Gr, abar, abar)
                     + ops.Fr_unit * 0.05) + ops.rho * ops.nu * (ops.Nr @ abar)
    assert np.linalg.norm(ops.Dr @ b - rhs) <= 1e-10 * max(np.linalg.norm(rhs), 1.0)


def test_classical_blocks_consistent(chan16):
    """The cross-check assembly agrees with the production operators where
    they overlap (mass matrix, pure-mode convection)."""
    blocks = assemble_classical_operators(chan16["vel_basis"], chan16["p_basis"],
                                          chan16["domain"], chan16["props"])
    ops = chan16["ops"]
    np.testing.assert_allclose(blocks["M"], ops.Mr, atol=1e-12)
    n_u = ops.n_u
    # Q_ijk = <div(phi_i ⊗ phi_j), phi_k>; Cr uses <phi_i, div(phi_j ⊗ phi_k)>
    for i in range(n_u):
        for j in range(n_u):
            for k in range(n_u):
                assert blocks["Q"][j, k, i] == pytest.approx(
                    ops.Cr[i, j + 1, k + 1], rel=1e-10, abs=1e-12)
    np.testing.assert_allclose(blocks["P"].T, ops.Br, atol=1e-12)


def test_boundary_vorticity_same_scale(chan16):
    """The line-integral cross-check has the right shape and the same order
    of magnitude as the volume-form Nr; the two forms only coincide in the
    continuum, so no entrywise agreement is expected on a coarse grid."""
    alt = boundary_vorticity_matrix(chan16["vel_basis"], chan16["p_basis"],
                                    chan16["lifting"], chan16["domain"])
    nr = chan16["ops"].Nr
    assert alt.shape == nr.shape
    assert np.all(np.isfinite(alt))
    ratio = np.linalg.norm(alt) / np.linalg.norm(nr)
    assert 0.1 < ratio < 10.0


def test_assemble_rejects_mismatched_shapes(chan16):
    import dataclasses
    bad_basis = dataclasses.replace(chan16["vel_basis"],
                                    modes=chan16["vel_basis"].modes[:-2])
    with pytest.raises(BasisMismatch):
        assemble_operators(bad_basis, chan16["p_basis"], chan16["lifting"],
                           chan16["domain"], chan16["props"])
    bad_w = dataclasses.replace(
        chan16["vel_basis"], weights=2.0 * chan16["vel_basis"].weights)
    with pytest.raises(BasisMismatch):
        assemble_operators(bad_w, chan16["p_basis"], chan16["lifting"],
                           chan16["domain"], chan16["props"])


def test_invert_pressure_matrix_paths():
    well = np.diag([4.0, 2.0, 1.0])
    np.testing.assert_allclose(_invert_pressure_matrix(well) @ well, np.eye(3),
                               atol=1e-12)
    # one lost constant mode: pseudo-inverse
    q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((3, 3)))
    singular = q @ np.diag([3.0, 1.0, 0.0]) @ q.T
    pinv = _invert_pressure_matrix(singular)
    np.testing.assert_allclose(pinv, np.linalg.pinv(singular), atol=1e-10)
    with pytest.raises(SingularPressureSystem):
        _invert_pressure_matrix(q @ np.diag([3.0, 0.0, 0.0]) @ q.T)


def test_integrate_rom_tracks_training_window(chan16):
    """Integrating the reduced system over the training signal keeps the
    coefficients bounded near the projected training trajectory."""
    ops = chan16["ops"]
    basis = chan16["vel_basis"]
    sig = chan16["signal"]
    u0 = float(inlet_velocity(sig, 0.0))
    a0 = -u0 * project(chan16["lifting"].zeta, basis)
    traj = integrate_rom(ops, a0, sig, 2.0, dt=1e-3, sample_dt=0.1)
    assert traj.times.size == 21
    assert traj.times[-1] == pytest.approx(2.0)
    assert traj.a.shape == (21, ops.n_u)
    assert traj.b.shape == (21, ops.n_p)
    a_proj_max = np.abs(basis.coeff_train).max()
    assert np.abs(traj.a).max() <= 10.0 * max(a_proj_max, 1e-6)
    assert traj.wall_seconds > 0.0


def test_integrate_rom_deterministic(chan16):
    ops = chan16["ops"]
    sig = chan16["signal"]
    a0 = np.zeros(ops.n_u)
    t1 = integrate_rom(ops, a0, sig, 1.0, dt=2e-3, sample_dt=0.1)
    t2 = integrate_rom(ops, a0, sig, 1.0, dt=2e-3, sample_dt=0.1)
    assert np.array_equal(t1.a, t2.a)
    assert np.array_equal(t1.b, t2.b)


def test_integrate_rom_blowup():
    n_u, n_p = 1, 1
    ops = ReducedOperators(
        Mr=np.eye(n_u), Ar=np.array([[0.0, 50.0]]),
        Cr=np.zeros((n_u, 2, 2)), Br=np.zeros((n_u, n_p)),
        Dr=np.eye(n_p), Gr=np.zeros((n_p, 2, 2)), Nr=np.zeros((n_p, 2)),
        Fr_unit=np.zeros(n_p), zeta_proj=np.zeros(n_u),
        rho=1000.0, nu=1e-3)
    # da/dt = nu * 50 * a: benign; make it violent through the mass inverse
    ops.Mr_inv = np.array([[1e6]])
    with pytest.raises(BlowUp):
        integrate_rom(ops, np.array([1.0]), InletSignal(u_bar=0.2), 50.0,
                      dt=1e-2, sample_dt=0.1)


def test_pressure_rhs_uses_inlet_rate(chan16):
    """b responds linearly to du_in/dt through the Fr term."""
    ops = chan16["ops"]
    a = np.zeros(ops.n_u)
    b0 = solve_reduced_pressure(ops, a, 0.2, 0.0)
    b1 = solve_reduced_pressure(ops, a, 0.2, 1.0)
    b2 = solve_reduced_pressure(ops, a, 0.2, 2.0)
    np.testing.assert_allclose(b2 - b1, b1 - b0, rtol=1e-9,
                               atol=1e-12 * max(np.abs(b1).max(), 1.0))
