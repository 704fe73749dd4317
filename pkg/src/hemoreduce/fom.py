"""Full-order solver: unsteady incompressible flow on the masked MAC grid.

One time step is a classical Chorin fractional step: explicit advection
(second-order central blended with donor-cell upwinding) plus explicit
diffusion give an intermediate velocity; a pressure Poisson solve (Neumann on
walls/inlet, Dirichlet p=0 on outlets) followed by a corrector makes the face
field discretely divergence-free.
"""

import sys
import time
import weakref
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import (
    HOutOfRange,
    NoSteadyState,
    NonPositiveDimension,
    PoissonNoConvergence,
    UnstableDt,
)
from .geometry import FLUID, INLET_GHOST, OUTLET_GHOST, DomainMask
from .snapshots import SnapshotMatrix

POISSON_TOL = 1e-10
POISSON_MAXITER = 10_000
UPWIND_BLEND_SAFETY = 1.2


@dataclass(frozen=True)
class FluidProps:
    rho: float = 1000.0  # kg/m^3
    mu: float = 1.0      # Pa s

    def __post_init__(self):
        if self.rho <= 0.0 or self.mu <= 0.0:
            raise NonPositiveDimension("rho and mu must be > 0")

    @property
    def nu(self):
        return self.mu / self.rho


@dataclass(frozen=True)
class InletSignal:
    """Mean speed plus a sum of sinusoidal harmonics (A_k, f_k, phi_k)."""

    u_bar: float
    harmonics: tuple = ()

    def __post_init__(self):
        amp = sum(abs(a) for a, _, _ in self.harmonics)
        if self.u_bar - amp <= 0.0:
            raise NonPositiveDimension(
                f"inflow may reverse: u_bar={self.u_bar} but sum|A_k|={amp}")

    @property
    def H(self):
        return len(self.harmonics)


def inlet_velocity(signal: InletSignal, t):
    """Inlet speed u_bar + sum_k A_k sin(2 pi f_k t + phi_k); vectorized in t."""
    val = signal.u_bar + np.zeros_like(np.asarray(t, dtype=float))
    for a, f, phi in signal.harmonics:
        val = val + a * np.sin(2.0 * np.pi * f * t + phi)
    return val if val.ndim else float(val)


def inlet_velocity_rate(signal: InletSignal, t):
    """Analytic time derivative of inlet_velocity."""
    val = np.zeros_like(np.asarray(t, dtype=float))
    for a, f, phi in signal.harmonics:
        w = 2.0 * np.pi * f
        val = val + w * a * np.cos(w * t + phi)
    return val if val.ndim else float(val)


def sample_training_signal(seed, H) -> InletSignal:
    """Draw the multi-harmonic training waveform from its sampling ranges.

    If the drawn amplitudes admit flow reversal (sum A_k >= u_bar) they are
    rescaled uniformly so that sum A_k = 0.18, keeping the inflow positive.
    """
    if H not in (2, 3, 4, 5):
        raise HOutOfRange(f"H must be in {{2,3,4,5}}, got {H}")
    rng = np.random.default_rng(seed)
    u_bar = 0.2
    amps = rng.uniform(0.02, 0.05, size=H)
    freqs = rng.uniform(0.20, 0.50, size=H)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=H)
    if amps.sum() >= u_bar:
        amps *= 0.18 / amps.sum()
    return InletSignal(u_bar=u_bar, harmonics=tuple(zip(amps, freqs, phases)))


@dataclass
class FlowState:
    """Staggered face velocities and cell-centered pressure at time t."""

    u: np.ndarray  # shape (nx+1, ny+2)
    v: np.ndarray  # shape (nx+2, ny+1)
    p: np.ndarray  # shape (nx+2, ny+2)
    t: float = 0.0

    def copy(self):
        return FlowState(self.u.copy(), self.v.copy(), self.p.copy(), self.t)


def initial_state(domain: DomainMask) -> FlowState:
    NX, NY = domain.shape
    return FlowState(
        u=np.zeros((NX - 1, NY)), v=np.zeros((NX, NY - 1)), p=np.zeros((NX, NY)))


def stable_dt(domain: DomainMask, props: FluidProps, umax: float) -> float:
    """Largest dt allowed by the diffusive and CFL stability bounds."""
    h = domain.h
    dt_diff = h * h / (4.0 * props.nu)
    dt_adv = h / umax if umax > 0.0 else np.inf
    return min(dt_diff, dt_adv)


# ---------------------------------------------------------------------------
# precomputed stencil/index machinery, one instance per DomainMask


class _Stencil:
    def __init__(self, domain: DomainMask):
        kind = domain.cell_kind
        fluid = domain.fluid
        NX, NY = kind.shape
        self.h = domain.h

        # face category masks
        u_int = fluid[:-1, :] & fluid[1:, :]
        v_int = fluid[:, :-1] & fluid[:, 1:]
        self.u_int = np.nonzero(u_int)
        self.v_int = np.nonzero(v_int)

        def split(faces, axis):
            rows = faces[faces[:, 0] == axis]
            return rows[:, 1], rows[:, 2], rows[:, 3]

        self.u_wall = split(domain.wall_faces, 0)[:2]
        self.v_wall = split(domain.wall_faces, 1)[:2]
        self.u_inlet = split(domain.inlet_faces, 0)[:2]
        self.v_inlet = split(domain.inlet_faces, 1)[:2]
        iu, ju, su = split(domain.outlet_faces, 0)
        iv, jv, sv = split(domain.outlet_faces, 1)
        self.u_outlet = (iu, ju, su)
        self.v_outlet = (iv, jv, sv)
        # zero-gradient source faces, one face inward along the outlet normal
        self.u_outlet_src = (iu - su, ju)
        self.v_outlet_src = (iv, jv - sv)

        # tangential ghost faces: mirror the nearest interior face across the
        # boundary (sign -1 for no-slip walls/inlet, +1 across outlets)
        self.u_ghost = self._tangential_ghosts(u_int, self._u_active(domain, u_int),
                                               kind[:-1, :], kind[1:, :], axis=1)
        self.v_ghost = self._tangential_ghosts(v_int, self._v_active(domain, v_int),
                                               kind[:, :-1], kind[:, 1:], axis=0)

        # per-fluid-cell flattened face indices for divergence/correction
        ci, cj = np.nonzero(fluid)
        self.cell_ij = (ci, cj)
        ushape = (NX - 1, NY)
        vshape = (NX, NY - 1)
        self.uw = np.ravel_multi_index((ci - 1, cj), ushape)
        self.ue = np.ravel_multi_index((ci, cj), ushape)
        self.vs = np.ravel_multi_index((ci, cj - 1), vshape)
        self.vn = np.ravel_multi_index((ci, cj), vshape)

        # fluid-cell numbering for the Poisson system
        cell_id = -np.ones(kind.shape, dtype=np.int64)
        cell_id[ci, cj] = np.arange(ci.size)
        self.cell_id = cell_id
        self.A = self._poisson_matrix(domain, cell_id)
        self.jacobi = 1.0 / self.A.diagonal()
        self.p_warm = np.zeros(ci.size)
        self.p_warm2 = np.zeros(ci.size)

        # interior-face correction indices: left/right (resp. south/north)
        # fluid-cell numbers for each interior face
        ui, uj = self.u_int
        self.u_int_flat = np.ravel_multi_index((ui, uj), ushape)
        self.u_int_left = cell_id[ui, uj]
        self.u_int_right = cell_id[ui + 1, uj]
        vi, vj = self.v_int
        self.v_int_flat = np.ravel_multi_index((vi, vj), vshape)
        self.v_int_south = cell_id[vi, vj]
        self.v_int_north = cell_id[vi, vj + 1]
        # outlet-face correction: adjacent fluid cell number per outlet face
        self.u_out_flat = np.ravel_multi_index((iu, ju), ushape)
        self.u_out_cell = np.where(su > 0, cell_id[iu, ju], cell_id[iu + 1, ju])
        self.u_out_sign = su
        self.v_out_flat = np.ravel_multi_index((iv, jv), vshape)
        self.v_out_cell = np.where(sv > 0, cell_id[iv, jv], cell_id[iv, jv + 1])
        self.v_out_sign = sv

    @staticmethod
    def _u_active(domain, u_int):
        act = u_int.copy()
        for faces in (domain.wall_faces, domain.inlet_faces, domain.outlet_faces):
            rows = faces[faces[:, 0] == 0]
            act[rows[:, 1], rows[:, 2]] = True
        return act

    @staticmethod
    def _v_active(domain, v_int):
        act = v_int.copy()
        for faces in (domain.wall_faces, domain.inlet_faces, domain.outlet_faces):
            rows = faces[faces[:, 0] == 1]
            act[rows[:, 1], rows[:, 2]] = True
        return act

    @staticmethod
    def _tangential_ghosts(interior, active, ka, kb, axis):
        """Ghost faces one row/column off an interior face, with mirror sign."""
        gi, gj, si, sj, sg = [], [], [], [], []
        idx = np.argwhere(interior)
        for i, j in idx:
            for d in (-1, 1):
                ni, nj = (i, j + d) if axis == 1 else (i + d, j)
                if ni < 0 or nj < 0 or ni >= interior.shape[0] or nj >= interior.shape[1]:
                    continue
                if active[ni, nj]:
                    continue
                outlet = ka[ni, nj] == OUTLET_GHOST or kb[ni, nj] == OUTLET_GHOST
                gi.append(ni)
                gj.append(nj)
                si.append(i)
                sj.append(j)
                sg.append(1.0 if outlet else -1.0)
        return (np.array(gi, dtype=np.int64), np.array(gj, dtype=np.int64),
                np.array(si, dtype=np.int64), np.array(sj, dtype=np.int64),
                np.array(sg))

    def _poisson_matrix(self, domain, cell_id):
        """SPD (negated) pressure Laplacian over fluid cells."""
        h2 = domain.h * domain.h
        kind = domain.cell_kind
        n = int(domain.n_fluid)
        rows, cols, vals = [], [], []
        diag = np.zeros(n)
        ci, cj = np.nonzero(domain.fluid)
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            ni, nj = ci + di, cj + dj
            nk = kind[ni, nj]
            fl = nk == FLUID
            rows.extend(cell_id[ci[fl], cj[fl]])
            cols.extend(cell_id[ni[fl], nj[fl]])
            vals.extend(np.full(fl.sum(), -1.0 / h2))
            np.add.at(diag, cell_id[ci[fl], cj[fl]], 1.0 / h2)
            out = nk == OUTLET_GHOST
            np.add.at(diag, cell_id[ci[out], cj[out]], 2.0 / h2)
        rows.extend(range(n))
        cols.extend(range(n))
        vals.extend(diag)
        A = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
        A.sum_duplicates()
        return A


_stencil_cache = weakref.WeakKeyDictionary()


def _stencil(domain) -> _Stencil:
    st = _stencil_cache.get(domain)
    if st is None:
        st = _Stencil(domain)
        _stencil_cache[domain] = st
    return st


# ---------------------------------------------------------------------------
# boundary conditions, divergence, Poisson solve


def _apply_bc(u, v, st: _Stencil, u_in):
    u[st.u_wall] = 0.0
    v[st.v_wall] = 0.0
    # inlet velocity is aligned with the inward normal (+x for our domains)
    u[st.u_inlet] = u_in
    v[st.v_inlet] = 0.0
    u[st.u_outlet[0], st.u_outlet[1]] = u[st.u_outlet_src]
    v[st.v_outlet[0], st.v_outlet[1]] = v[st.v_outlet_src]
    gu = st.u_ghost
    u[gu[0], gu[1]] = gu[4] * u[gu[2], gu[3]]
    gv = st.v_ghost
    v[gv[0], gv[1]] = gv[4] * v[gv[2], gv[3]]


def _divergence(u, v, st: _Stencil):
    uf, vf = u.ravel(), v.ravel()
    return (uf[st.ue] - uf[st.uw] + vf[st.vn] - vf[st.vs]) / st.h


def max_divergence(state: FlowState, domain: DomainMask) -> float:
    """Max |discrete divergence| over fluid cells (1/s)."""
    st = _stencil(domain)
    return float(np.abs(_divergence(state.u, state.v, st)).max())


def _pcg(A, b, x0, inv_diag, tol, maxiter):
    """Jacobi-preconditioned conjugate gradient with fixed reduction order."""
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b)
    x = x0.copy()
    r = b - A @ x
    z = inv_diag * r
    d = z.copy()
    rz = float(r @ z)
    target = tol * bnorm
    for _ in range(maxiter):
        if float(np.linalg.norm(r)) <= target:
            return x
        Ad = A @ d
        alpha = rz / float(d @ Ad)
        x += alpha * d
        r -= alpha * Ad
        z = inv_diag * r
        rz_new = float(r @ z)
        d = z + (rz_new / rz) * d
        rz = rz_new
    res = float(np.linalg.norm(r)) / bnorm
    if res <= tol:
        return x
    raise PoissonNoConvergence(maxiter, res)


# ---------------------------------------------------------------------------
# the fractional step


def _advect_diffuse(u, v, st: _Stencil, nu, gamma):
    """Explicit d/dt contribution (-advection + diffusion) on interior faces."""
    h = st.h
    du = np.zeros_like(u)
    dv = np.zeros_like(v)

    # u faces, valid block i in [1, nxu-2], j in [1, ny-2]
    uc = u[1:-1, 1:-1]
    ue = u[2:, 1:-1]
    uw = u[:-2, 1:-1]
    un = u[1:-1, 2:]
    us = u[1:-1, :-2]
    vnw = v[1:-2, 1:]
    vne = v[2:-1, 1:]
    vsw = v[1:-2, :-1]
    vse = v[2:-1, :-1]

    ur = 0.5 * (uc + ue)
    ul = 0.5 * (uw + uc)
    du2dx = (ur * ur - ul * ul) / h \
        + gamma * (np.abs(ur) * 0.5 * (uc - ue) - np.abs(ul) * 0.5 * (uw - uc)) / h
    vn_ = 0.5 * (vnw + vne)
    vs_ = 0.5 * (vsw + vse)
    duvdy = (vn_ * 0.5 * (uc + un) - vs_ * 0.5 * (us + uc)) / h \
        + gamma * (np.abs(vn_) * 0.5 * (uc - un) - np.abs(vs_) * 0.5 * (us - uc)) / h
    lap_u = (ue + uw + un + us - 4.0 * uc) / (h * h)
    du[1:-1, 1:-1] = -(du2dx + duvdy) + nu * lap_u

    # v faces, valid block i in [1, nx-2], j in [1, nyv-2]
    vc = v[1:-1, 1:-1]
    vn2 = v[1:-1, 2:]
    vs2 = v[1:-1, :-2]
    ve = v[2:, 1:-1]
    vw = v[:-2, 1:-1]
    # adjacent u faces: right pair (u[i,j], u[i,j+1]), left pair shifted by -1
    ue_pair = 0.5 * (u[1:, 1:-2] + u[1:, 2:-1])
    uw_pair = 0.5 * (u[:-1, 1:-2] + u[:-1, 2:-1])
    duvdx = (ue_pair * 0.5 * (vc + ve) - uw_pair * 0.5 * (vw + vc)) / h \
        + gamma * (np.abs(ue_pair) * 0.5 * (vc - ve) - np.abs(uw_pair) * 0.5 * (vw - vc)) / h
    vt = 0.5 * (vc + vn2)
    vb = 0.5 * (vs2 + vc)
    dv2dy = (vt * vt - vb * vb) / h \
        + gamma * (np.abs(vt) * 0.5 * (vc - vn2) - np.abs(vb) * 0.5 * (vs2 - vc)) / h
    lap_v = (ve + vw + vn2 + vs2 - 4.0 * vc) / (h * h)
    dv[1:-1, 1:-1] = -(duvdx + dv2dy) + nu * lap_v
    return du, dv


def step(state: FlowState, dt, signal: InletSignal, props: FluidProps,
         domain: DomainMask, poisson_tol=POISSON_TOL) -> FlowState:
    """Advance one Chorin fractional step from state.t to state.t + dt."""
    st = _stencil(domain)
    h = domain.h
    umax = max(float(np.abs(state.u).max()), float(np.abs(state.v).max()))
    if dt > stable_dt(domain, props, umax):
        raise UnstableDt(
            f"dt={dt} exceeds the stability bound "
            f"{stable_dt(domain, props, umax):.3e} at umax={umax:.3f}")

    u = state.u.copy()
    v = state.v.copy()
    t_new = state.t + dt
    _apply_bc(u, v, st, inlet_velocity(signal, state.t))
    gamma = min(1.0, UPWIND_BLEND_SAFETY * dt * umax / h)
    du, dv = _advect_diffuse(u, v, st, props.nu, gamma)
    u[st.u_int] += dt * du[st.u_int]
    v[st.v_int] += dt * dv[st.v_int]
    # boundary values at the new time level, outlets zero-gradient
    _apply_bc(u, v, st, inlet_velocity(signal, t_new))

    rhs = -props.rho / dt * _divergence(u, v, st)
    # warm start: linear extrapolation from the two previous solves
    x0 = 2.0 * st.p_warm - st.p_warm2
    p = _pcg(st.A, rhs, x0, st.jacobi, poisson_tol, POISSON_MAXITER)
    st.p_warm2 = st.p_warm
    st.p_warm = p.copy()

    scale = dt / (props.rho * h)
    uf, vf = u.ravel(), v.ravel()
    uf[st.u_int_flat] -= scale * (p[st.u_int_right] - p[st.u_int_left])
    vf[st.v_int_flat] -= scale * (p[st.v_int_north] - p[st.v_int_south])
    # outlet faces: Dirichlet p=0 at the face, ghost value -p_inside
    uf[st.u_out_flat] -= scale * st.u_out_sign * (-2.0 * p[st.u_out_cell])
    vf[st.v_out_flat] -= scale * st.v_out_sign * (-2.0 * p[st.v_out_cell])

    p_grid = np.zeros_like(state.p)
    p_grid[st.cell_ij] = p
    return FlowState(u=u, v=v, p=p_grid, t=t_new)


def cell_center_velocity(state: FlowState, domain: DomainMask):
    """Interpolate face velocities to fluid cell centers; returns (ux, uy)
    vectors in fluid_index order."""
    st = _stencil(domain)
    uf, vf = state.u.ravel(), state.v.ravel()
    ux = 0.5 * (uf[st.uw] + uf[st.ue])
    uy = 0.5 * (vf[st.vs] + vf[st.vn])
    return ux, uy


def outlet_flux(state: FlowState, domain: DomainMask):
    """Signed outward volume flux through each outlet branch (m^2/s in 2D),
    keyed by the branch normal (axis, sign)."""
    fluxes = {}
    for axis, i, j, s in domain.outlet_faces:
        val = state.u[i, j] if axis == 0 else state.v[i, j]
        key = (int(axis), int(s))
        fluxes[key] = fluxes.get(key, 0.0) + s * val * domain.h
    return fluxes


def inlet_flux(state: FlowState, domain: DomainMask):
    """Volume flux entering through the inlet (positive for inflow)."""
    total = 0.0
    for axis, i, j, s in domain.inlet_faces:
        val = state.u[i, j] if axis == 0 else state.v[i, j]
        total += -s * val * domain.h
    return total


@dataclass
class FomRun:
    """Sampled output of one full-order run plus its wall-clock cost."""

    velocity: SnapshotMatrix
    pressure: SnapshotMatrix
    wall_seconds: float
    dt: float
    final_state: FlowState = field(repr=False, default=None)


def run_fom(domain: DomainMask, props: FluidProps, signal: InletSignal,
            T, dt, sample_every, log=True) -> FomRun:
    """Advance from rest and record cell-centered velocity and pressure every
    ``sample_every`` steps."""
    if T < 0.0:
        raise NonPositiveDimension("horizon T must be >= 0")
    if sample_every < 1:
        raise NonPositiveDimension("sample_every must be >= 1")
    st = _stencil(domain)
    st.p_warm = np.zeros(domain.n_fluid)
    st.p_warm2 = np.zeros(domain.n_fluid)
    state = initial_state(domain)
    n_steps = int(round(T / dt))
    n_samples = n_steps // sample_every + 1
    n = domain.n_fluid
    vel = np.empty((2 * n, n_samples))
    pres = np.empty((n, n_samples))
    times = np.empty(n_samples)
    inlet_vals = np.empty(n_samples)

    def record(k, s):
        ux, uy = cell_center_velocity(s, domain)
        vel[:n, k] = ux
        vel[n:, k] = uy
        pres[:, k] = domain.gather(s.p)
        times[k] = s.t
        inlet_vals[k] = inlet_velocity(signal, s.t)

    wall0 = time.perf_counter()
    record(0, state)
    k = 1
    for n_step in range(1, n_steps + 1):
        state = step(state, dt, signal, props, domain)
        if n_step % sample_every == 0:
            record(k, state)
            if log:
                umax = max(float(np.abs(state.u).max()), float(np.abs(state.v).max()))
                div = max_divergence(state, domain)
                print(f"t={state.t:.4f} div={div:.3e} cfl={umax * dt / domain.h:.3f}",
                      file=sys.stderr)
            k += 1
    wall = time.perf_counter() - wall0

    dt_sample = dt * sample_every
    mk = lambda cols, kind_: SnapshotMatrix(
        field_kind=kind_, columns=cols, times=times.copy(),
        inlet_values=inlet_vals.copy(), weights=domain.weights.copy(),
        homogenized=False)
    return FomRun(velocity=mk(vel, "velocity"), pressure=mk(pres, "pressure"),
                  wall_seconds=wall, dt=dt, final_state=state)


def run_to_steady(domain: DomainMask, props: FluidProps, u_in, dt=None,
                  tol=1e-10, max_time=4000.0, accel_every=200,
                  poisson_tol=POISSON_TOL) -> FlowState:
    """Pseudo-timestep a constant-inflow run to steady state.

    Convergence: max |u change| per step below ``tol``.  Every ``accel_every``
    steps an Aitken extrapolation jumps along the slowest decaying transient;
    the subsequent projection step restores the divergence constraint.
    """
    signal = InletSignal(u_bar=u_in)
    if dt is None:
        dt = 0.7 * stable_dt(domain, props, 2.5 * u_in)
    st = _stencil(domain)
    st.p_warm = np.zeros(domain.n_fluid)
    st.p_warm2 = np.zeros(domain.n_fluid)
    state = initial_state(domain)
    prev_block_u = prev_block_v = None
    prev_delta = None
    stall = 0
    best = np.inf
    change = np.inf
    n_steps = int(max_time / dt)
    for n_step in range(1, n_steps + 1):
        new = step(state, dt, signal, props, domain, poisson_tol=poisson_tol)
        change = max(float(np.abs(new.u - state.u).max()),
                     float(np.abs(new.v - state.v).max()))
        state = new
        if change < tol:
            return state
        if change < best * 0.999999:
            best = change
            stall = 0
        else:
            stall += 1
            if stall > 20000:
                raise NoSteadyState(
                    f"residual stalled at {change:.3e} (tol {tol:.1e})")
        if n_step % accel_every == 0:
            du_b = state.u.copy() if prev_block_u is None else state.u - prev_block_u
            dv_b = state.v.copy() if prev_block_v is None else state.v - prev_block_v
            delta = float(np.sqrt(np.sum(du_b ** 2) + np.sum(dv_b ** 2)))
            if prev_delta is not None and 0.0 < delta < prev_delta:
                r = delta / prev_delta
                if r < 0.999:
                    # geometric-series extrapolation of the dominant mode
                    factor = r / (1.0 - r)
                    state.u += factor * du_b
                    state.v += factor * dv_b
                    # one clean step re-projects the extrapolated field
                    state = step(state, dt, signal, props, domain,
                                 poisson_tol=poisson_tol)
                    prev_block_u = prev_block_v = None
                    prev_delta = None
                    continue
            prev_block_u = state.u.copy()
            prev_block_v = state.v.copy()
            prev_delta = delta
    raise NoSteadyState(f"no steady state within {max_time} s of pseudo-time "
                        f"(last change {change:.3e})")
