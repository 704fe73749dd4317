"""Intrusive reduced model: Galerkin operators plus the reduced
pressure-Poisson closure, integrated in time with classical RK4.

The lifting field is carried as augmented mode 0 with prescribed coefficient
u_in(t): every operator that contracts against a velocity field has one extra
leading column/slice for it.  Working equations (p in Pa, coefficients a for
homogenized velocity, b for pressure, abar = [u_in, a]):

    da/dt = Mr^-1 [ nu Ar abar - abar' Cr abar - (1/rho) Br b - zp du_in/dt ]
    Dr b  = rho ( -abar' Gr abar + Fr du_in/dt ) + mu Nr abar
"""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from numba import njit

from .discrete import cell_ops
from .errors import BasisMismatch, BlowUp, SingularPressureSystem
from .fom import FluidProps, InletSignal, inlet_velocity, inlet_velocity_rate
from .geometry import DomainMask
from .pod import PodBasis
from .snapshots import LiftingField, component_weights, inner_product

DEFAULT_ROM_DT = 1e-3


@dataclass
class ReducedOperators:
    """Precomputed Galerkin tensors; augmented index 0 is the lifting field."""

    Mr: np.ndarray        # (n_u, n_u)
    Ar: np.ndarray        # (n_u, n_u+1)
    Cr: np.ndarray        # (n_u, n_u+1, n_u+1)
    Br: np.ndarray        # (n_u, n_p)
    Dr: np.ndarray        # (n_p, n_p)
    Gr: np.ndarray        # (n_p, n_u+1, n_u+1)
    Nr: np.ndarray        # (n_p, n_u+1) viscous PPE matrix <grad chi, lap u>

    Fr_unit: np.ndarray   # (n_p,)
    zeta_proj: np.ndarray  # (n_u,)  <phi_i, zeta>
    rho: float
    nu: float
    Mr_inv: np.ndarray = field(repr=False, default=None)
    Dr_inv: np.ndarray = field(repr=False, default=None)

    @property
    def n_u(self):
        return self.Mr.shape[0]

    @property
    def n_p(self):
        return self.Dr.shape[0]

    def __post_init__(self):
        if self.Mr_inv is None:
            self.Mr_inv = np.linalg.inv(self.Mr)
        if self.Dr_inv is None:
            self.Dr_inv = _invert_pressure_matrix(self.Dr)


def _invert_pressure_matrix(dr):
    """Inverse of Dr, or the zero-mean pseudo-inverse when Dr is singular up
    to the known constant pressure mode."""
    n = dr.shape[0]
    cond = np.linalg.cond(dr)
    if cond < 1e12:
        return np.linalg.inv(dr)
    u, s, vt = np.linalg.svd(dr)
    rank = int(np.sum(s > 1e-12 * s[0]))
    if rank < n - 1:
        raise SingularPressureSystem(
            f"pressure system rank {rank} of {n}: more than the constant mode is lost")
    return (vt[:rank].T / s[:rank]) @ u[:, :rank].T


@dataclass
class ReducedState:
    a: np.ndarray
    b: np.ndarray
    t: float


def assemble_operators(vel_basis: PodBasis, p_basis: PodBasis,
                       lifting: LiftingField, domain: DomainMask,
                       props: FluidProps) -> ReducedOperators:
    """Weighted-quadrature assembly of all reduced operators (offline)."""
    n = domain.n_fluid
    if vel_basis.n_dof != 2 * n or p_basis.n_dof != n:
        raise BasisMismatch("basis dimensions do not match the domain")
    if lifting.zeta.shape[0] != 2 * n:
        raise BasisMismatch("lifting field does not match the domain")
    if not np.allclose(vel_basis.weights, domain.weights):
        raise BasisMismatch("velocity basis was built with different weights")

    ops = cell_ops(domain)
    w_cell = domain.weights
    w_vec = component_weights(w_cell, 2 * n)
    n_u = vel_basis.n_modes
    n_p = p_basis.n_modes

    # augmented velocity family: lifting first, then the POD modes
    fields = [lifting.zeta] + [vel_basis.modes[:, i] for i in range(n_u)]
    traces = [lifting.inlet_trace] + [0.0] * n_u
    n_aug = n_u + 1

    Mr = vel_basis.gram()
    lap = [ops.vector_laplacian(f, inlet_trace=tr) for f, tr in zip(fields, traces)]
    Ar = np.array([[inner_product(fields[i + 1], lap[j], w_cell)
                    for j in range(n_aug)] for i in range(n_u)])

    conv = [[ops.div_tensor(fields[j], fields[k]) for k in range(n_aug)]
            for j in range(n_aug)]
    Cr = np.array([[[inner_product(fields[i + 1], conv[j][k], w_cell)
                     for k in range(n_aug)] for j in range(n_aug)]
                   for i in range(n_u)])

    gchi = [np.concatenate(ops.grad(p_basis.modes[:, m])) for m in range(n_p)]
    Br = np.array([[inner_product(fields[i + 1], gchi[m], w_cell)
                    for m in range(n_p)] for i in range(n_u)])
    Dr = np.array([[inner_product(gchi[i], gchi[j], w_cell)
                    for j in range(n_p)] for i in range(n_p)])
    Gr = np.array([[[inner_product(gchi[m], conv[j][k], w_cell)
                     for k in range(n_aug)] for j in range(n_aug)]
                   for m in range(n_p)])

    # viscous PPE matrix, volume form <grad chi_m, lap u_j>; equals the
    # boundary-vorticity line integral in the continuum for solenoidal
    # fields but is markedly more accurate on the collocated stencils
    Nr = np.array([[inner_product(gchi[m], lap[j], w_cell)
                    for j in range(n_aug)] for m in range(n_p)])

    in_cells, _ = ops.boundary_cells(domain.inlet_faces)
    h = domain.h
    Fr_unit = np.array([h * float(np.sum(p_basis.modes[in_cells, m]))
                        for m in range(n_p)])

    zeta_proj = np.array([inner_product(fields[i + 1], lifting.zeta, w_cell)
                          for i in range(n_u)])

    return ReducedOperators(Mr=Mr, Ar=Ar, Cr=Cr, Br=Br, Dr=Dr, Gr=Gr, Nr=Nr,
                            Fr_unit=Fr_unit, zeta_proj=zeta_proj,
                            rho=props.rho, nu=props.nu)


def assemble_classical_operators(vel_basis: PodBasis, p_basis: PodBasis,
                                 domain: DomainMask, props: FluidProps):
    """Classical mass/convection/diffusion/pressure/divergence blocks, kept
    as a cross-check assembly only (the PPE path is the production route)."""
    ops = cell_ops(domain)
    w_cell = domain.weights
    n = domain.n_fluid
    n_u, n_p = vel_basis.n_modes, p_basis.n_modes
    phi = [vel_basis.modes[:, i] for i in range(n_u)]
    chi = [p_basis.modes[:, m] for m in range(n_p)]
    M = vel_basis.gram()
    Q = np.array([[[inner_product(ops.div_tensor(phi[i], phi[j]), phi[k], w_cell)
                    for k in range(n_u)] for j in range(n_u)] for i in range(n_u)])
    L = np.array([[inner_product(props.nu * ops.vector_laplacian(phi[i]), phi[j], w_cell)
                   for j in range(n_u)] for i in range(n_u)])
    P = np.array([[inner_product(np.concatenate(ops.grad(chi[i])), phi[j], w_cell)
                   for j in range(n_u)] for i in range(n_p)])
    div_phi = [ops._grad_1d(phi[i][:n], "e", "w") + ops._grad_1d(phi[i][n:], "n", "s")
               for i in range(n_u)]
    R = np.array([[inner_product(div_phi[i], chi[j], w_cell)
                   for j in range(n_p)] for i in range(n_u)])
    return {"M": M, "Q": Q, "L": L, "P": P, "R": R}


def boundary_vorticity_matrix(vel_basis: PodBasis, p_basis: PodBasis,
                              lifting: LiftingField, domain: DomainMask):
    """Line-integral form sum_faces h (n x grad chi)_z omega of the viscous
    PPE coupling over wall + inlet faces.  Continuum-equivalent to the volume
    form stored in ReducedOperators.Nr; kept as a cross-check assembly."""
    ops = cell_ops(domain)
    n = domain.n_fluid
    n_u, n_p = vel_basis.n_modes, p_basis.n_modes
    fields = [lifting.zeta] + [vel_basis.modes[:, i] for i in range(n_u)]
    gchi = [np.concatenate(ops.grad(p_basis.modes[:, m])) for m in range(n_p)]
    bnd_faces = np.vstack([domain.wall_faces, domain.inlet_faces])
    cells, normals = ops.boundary_cells(bnd_faces)
    vort = [ops.curl(f) for f in fields]
    h = domain.h
    out = np.zeros((n_p, n_u + 1))
    for m in range(n_p):
        gx, gy = gchi[m][:n], gchi[m][n:]
        # (n x grad chi)_z = n_x d(chi)/dy - n_y d(chi)/dx at the face cell
        ncross = normals[:, 0] * gy[cells] - normals[:, 1] * gx[cells]
        for j in range(n_u + 1):
            out[m, j] = h * float(np.sum(ncross * vort[j][cells]))
    return out


def solve_reduced_pressure(ops: ReducedOperators, a, u_in, du_in_dt):
    """Pressure coefficients from the reduced Poisson system."""
    abar = np.concatenate([[u_in], np.asarray(a, dtype=float)])
    quad = np.einsum("mjk,j,k->m", ops.Gr, abar, abar)
    rhs = ops.rho * (-quad + ops.Fr_unit * du_in_dt) \
        + ops.rho * ops.nu * (ops.Nr @ abar)
    return ops.Dr_inv @ rhs


def reduced_rhs(ops: ReducedOperators, state: ReducedState, u_in, du_in_dt):
    """da/dt with the pressure already consistent (state.b)."""
    abar = np.concatenate([[u_in], state.a])
    conv = np.einsum("ijk,j,k->i", ops.Cr, abar, abar)
    rhs = ops.nu * (ops.Ar @ abar) - conv - (ops.Br @ state.b) / ops.rho \
        - ops.zeta_proj * du_in_dt
    return ops.Mr_inv @ rhs


@njit(cache=True)
def _rhs_nb(Mi, Ar, Cr, Br, Di, Gr, Nr, Fr, zp, rho, nu, a, uin, du):
    n_u = a.size
    n_p = Fr.size
    n_aug = n_u + 1
    abar = np.empty(n_aug)
    abar[0] = uin
    abar[1:] = a
    rhsb = np.zeros(n_p)
    for m in range(n_p):
        q = 0.0
        for j in range(n_aug):
            for k in range(n_aug):
                q += Gr[m, j, k] * abar[j] * abar[k]
        nr = 0.0
        for j in range(n_aug):
            nr += Nr[m, j] * abar[j]
        rhsb[m] = rho * (-q + Fr[m] * du) + rho * nu * nr
    b = Di @ rhsb
    da = np.zeros(n_u)
    for i in range(n_u):
        acc = -zp[i] * du
        for j in range(n_aug):
            acc += nu * Ar[i, j] * abar[j]
            for k in range(n_aug):
                acc -= Cr[i, j, k] * abar[j] * abar[k]
        for m in range(n_p):
            acc -= Br[i, m] * b[m] / rho
        da[i] = acc
    return Mi @ da, b


@njit(cache=True)
def _rk4_loop(Mi, Ar, Cr, Br, Di, Gr, Nr, Fr, zp, rho, nu, a0, dt,
              uin_half, du_half, n_steps, sample_stride, blowup_limit):
    n_u = a0.size
    n_p = Fr.size
    n_samples = n_steps // sample_stride + 1
    traj_a = np.zeros((n_samples, n_u))
    traj_b = np.zeros((n_samples, n_p))
    a = a0.copy()
    _, b = _rhs_nb(Mi, Ar, Cr, Br, Di, Gr, Nr, Fr, zp, rho, nu,
                   a, uin_half[0], du_half[0])
    traj_a[0] = a
    traj_b[0] = b
    k = 1
    for s in range(n_steps):
        i0 = 2 * s
        k1, _ = _rhs_nb(Mi, Ar, Cr, Br, Di, Gr, Nr, Fr, zp, rho, nu,
                        a, uin_half[i0], du_half[i0])
        k2, _ = _rhs_nb(Mi, Ar, Cr, Br, Di, Gr, Nr, Fr, zp, rho, nu,
                        a + 0.5 * dt * k1, uin_half[i0 + 1], du_half[i0 + 1])
        k3, _ = _rhs_nb(Mi, Ar, Cr, Br, Di, Gr, Nr, Fr, zp, rho, nu,
                        a + 0.5 * dt * k2, uin_half[i0 + 1], du_half[i0 + 1])
        k4, _ = _rhs_nb(Mi, Ar, Cr, Br, Di, Gr, Nr, Fr, zp, rho, nu,
                        a + dt * k3, uin_half[i0 + 2], du_half[i0 + 2])
        a = a + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        nrm = 0.0
        for i in range(n_u):
            nrm += a[i] * a[i]
        if nrm > blowup_limit * blowup_limit:
            return traj_a[:1], traj_b[:1], False
        if (s + 1) % sample_stride == 0:
            _, b = _rhs_nb(Mi, Ar, Cr, Br, Di, Gr, Nr, Fr, zp, rho, nu,
                           a, uin_half[i0 + 2], du_half[i0 + 2])
            traj_a[k] = a
            traj_b[k] = b
            k += 1
    return traj_a, traj_b, True


@dataclass
class RomTrajectory:
    """Sampled reduced-coefficient trajectory with online wall-clock time."""

    times: np.ndarray
    a: np.ndarray  # (n_samples, n_u)
    b: np.ndarray  # (n_samples, n_p)
    wall_seconds: float
    method: str = "galerkin"


def integrate_rom(ops: ReducedOperators, a0, signal: InletSignal, T,
                  dt=DEFAULT_ROM_DT, sample_dt=0.05) -> RomTrajectory:
    """RK4 time integration of the reduced system; pressure re-solved at every
    stage.  Cost is independent of the grid size (offline/online split)."""
    a0 = np.asarray(a0, dtype=float)
    sample_stride = max(1, int(round(sample_dt / dt)))
    dt = sample_dt / sample_stride
    n_steps = int(round(T / sample_dt)) * sample_stride
    t_half = np.arange(2 * n_steps + 1) * (dt / 2.0)
    uin_half = np.asarray(inlet_velocity(signal, t_half), dtype=float)
    du_half = np.asarray(inlet_velocity_rate(signal, t_half), dtype=float)
    if uin_half.ndim == 0:
        uin_half = np.full(t_half.size, float(uin_half))
    if du_half.ndim == 0:
        du_half = np.full(t_half.size, float(du_half))
    blowup = 1e6 * max(float(np.linalg.norm(a0)), 1.0)

    # warm the JIT outside the timed window
    _rk4_loop(ops.Mr_inv, ops.Ar, ops.Cr, ops.Br, ops.Dr_inv, ops.Gr, ops.Nr,
              ops.Fr_unit, ops.zeta_proj, ops.rho, ops.nu, a0, dt,
              uin_half[:3], du_half[:3], 1, 1, blowup)

    wall0 = time.perf_counter()
    traj_a, traj_b, ok = _rk4_loop(
        ops.Mr_inv, ops.Ar, ops.Cr, ops.Br, ops.Dr_inv, ops.Gr, ops.Nr,
        ops.Fr_unit, ops.zeta_proj, ops.rho, ops.nu, a0, dt,
        uin_half, du_half, n_steps, sample_stride, blowup)
    wall = time.perf_counter() - wall0
    if not ok:
        raise BlowUp(f"reduced state norm exceeded {blowup:.3e} during integration")
    times = np.arange(traj_a.shape[0]) * (dt * sample_stride)
    return RomTrajectory(times=times, a=traj_a, b=traj_b, wall_seconds=wall)
