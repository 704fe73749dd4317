"""Shared test utilities: naive reference implementations of the discrete
operators (independent scalar loops used as quadrature oracles) and a small
pipeline configuration for fast CLI runs."""

import math

import numpy as np

from hemoreduce.geometry import FLUID, INLET_GHOST, OUTLET_GHOST

# fast bifurcation setup: coarse grid, short horizon, tiny reservoir
MICRO_CONFIG = {
    "geometry": {
        "parent_length": 1.0,
        "parent_width": 0.5,
        "branch_length": 0.5,
        "branch_width": 0.5,
        "resolution": 8,
    },
    "signals": {"horizon": 4.0, "sample_dt": 0.05},
    "pod": {"n_modes_velocity": 2, "n_modes_pressure": 2},
    "galerkin": {"dt": 2e-3},
    "esn": {"n_reservoir": 100, "washout_duration": 1.0},
}


def cell_table(domain):
    """(i, j) -> flat fluid index, -1 elsewhere."""
    lut = np.full(domain.cell_kind.shape, -1, dtype=np.int64)
    ci, cj = np.nonzero(domain.fluid)
    lut[ci, cj] = np.arange(domain.n_fluid)
    return lut


def naive_grad_axis(domain, f, axis):
    """Cell-by-cell derivative with the same centered/one-sided fallbacks as
    the production stencils, written as plain loops."""
    lut = cell_table(domain)
    h = domain.h
    NX, NY = domain.cell_kind.shape
    di, dj = (1, 0) if axis == 0 else (0, 1)
    ci, cj = np.nonzero(domain.fluid)
    out = np.zeros(domain.n_fluid)
    for c, (i, j) in enumerate(zip(ci, cj)):
        e = lut[i + di, j + dj]
        w = lut[i - di, j - dj]
        i2e = min(max(i + 2 * di, 0), NX - 1)
        j2e = min(max(j + 2 * dj, 0), NY - 1)
        i2w = min(max(i - 2 * di, 0), NX - 1)
        j2w = min(max(j - 2 * dj, 0), NY - 1)
        e2 = lut[i2e, j2e]
        w2 = lut[i2w, j2w]
        if e >= 0 and w >= 0:
            out[c] = (f[e] - f[w]) / (2.0 * h)
        elif e >= 0:
            if e2 >= 0:
                out[c] = (-3.0 * f[c] + 4.0 * f[e] - f[e2]) / (2.0 * h)
            else:
                out[c] = (f[e] - f[c]) / h
        elif w >= 0:
            if w2 >= 0:
                out[c] = (3.0 * f[c] - 4.0 * f[w] + f[w2]) / (2.0 * h)
            else:
                out[c] = (f[c] - f[w]) / h
    return out


def naive_lap_component(domain, f, inlet_value=0.0):
    lut = cell_table(domain)
    kind = domain.cell_kind
    h2 = domain.h * domain.h
    ci, cj = np.nonzero(domain.fluid)
    out = np.zeros(domain.n_fluid)
    for c, (i, j) in enumerate(zip(ci, cj)):
        acc = -4.0 * f[c]
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nb = lut[i + di, j + dj]
            if nb >= 0:
                acc += f[nb]
            elif kind[i + di, j + dj] == OUTLET_GHOST:
                acc += f[c]
            elif kind[i + di, j + dj] == INLET_GHOST:
                acc += 2.0 * inlet_value - f[c]
            else:
                acc += -f[c]
        out[c] = acc / h2
    return out


def naive_vector_laplacian(domain, vel, inlet_trace=0.0):
    n = domain.n_fluid
    return np.concatenate([
        naive_lap_component(domain, vel[:n], inlet_value=inlet_trace),
        naive_lap_component(domain, vel[n:], inlet_value=0.0),
    ])


def naive_div_tensor(domain, adv, carried):
    n = domain.n_fluid
    ax, ay = adv[:n], adv[n:]
    parts = []
    for cm in (carried[:n], carried[n:]):
        parts.append(naive_grad_axis(domain, ax * cm, 0)
                     + naive_grad_axis(domain, ay * cm, 1))
    return np.concatenate(parts)


def naive_grad(domain, f):
    return np.concatenate([naive_grad_axis(domain, f, 0),
                           naive_grad_axis(domain, f, 1)])


def quad(f, g, weights):
    """Compensated-summation weighted quadrature."""
    f = np.asarray(f, dtype=float)
    w = np.tile(weights, f.shape[0] // weights.size)
    return math.fsum(w * f * g)


def oracle_operators(domain, props, lifting, vel_basis, p_basis):
    """Every reduced operator recomputed by brute-force quadrature."""
    n_u = vel_basis.n_modes
    n_p = p_basis.n_modes
    w = domain.weights
    fields = [lifting.zeta] + [vel_basis.modes[:, i] for i in range(n_u)]
    traces = [lifting.inlet_trace] + [0.0] * n_u
    n_aug = n_u + 1
    phi = fields[1:]

    lap = [naive_vector_laplacian(domain, f, tr) for f, tr in zip(fields, traces)]
    conv = [[naive_div_tensor(domain, fields[j], fields[k])
             for k in range(n_aug)] for j in range(n_aug)]
    gchi = [naive_grad(domain, p_basis.modes[:, m]) for m in range(n_p)]

    Mr = np.array([[quad(phi[i], phi[j], w) for j in range(n_u)]
                   for i in range(n_u)])
    Ar = np.array([[quad(phi[i], lap[j], w) for j in range(n_aug)]
                   for i in range(n_u)])
    Cr = np.array([[[quad(phi[i], conv[j][k], w) for k in range(n_aug)]
                    for j in range(n_aug)] for i in range(n_u)])
    Br = np.array([[quad(phi[i], gchi[m], w) for m in range(n_p)]
                   for i in range(n_u)])
    Dr = np.array([[quad(gchi[i], gchi[j], w) for j in range(n_p)]
                   for i in range(n_p)])
    Gr = np.array([[[quad(gchi[m], conv[j][k], w) for k in range(n_aug)]
                    for j in range(n_aug)] for m in range(n_p)])
    Nr = np.array([[quad(gchi[m], lap[j], w) for j in range(n_aug)]
                   for m in range(n_p)])

    lut = cell_table(domain)
    inlet_cells = []
    for axis, i, j, s in domain.inlet_faces:
        ci, cj = (i + (s < 0), j) if axis == 0 else (i, j + (s < 0))
        inlet_cells.append(lut[ci, cj])
    Fr_unit = np.array([domain.h * math.fsum(p_basis.modes[c, m]
                                             for c in inlet_cells)
                        for m in range(n_p)])
    zeta_proj = np.array([quad(phi[i], lifting.zeta, w) for i in range(n_u)])
    return {"Mr": Mr, "Ar": Ar, "Cr": Cr, "Br": Br, "Dr": Dr, "Gr": Gr,
            "Nr": Nr, "Fr_unit": Fr_unit, "zeta_proj": zeta_proj}


def oracle_reduced_rhs(domain, props, lifting, vel_basis, p_basis, oracle,
                       a, u_in, du_in_dt):
    """Brute-force da/dt: compose the full velocity/pressure fields, evaluate
    the residual with the naive operators, project, invert the oracle mass
    and pressure matrices."""
    n_u = vel_basis.n_modes
    n_p = p_basis.n_modes
    w = domain.weights
    abar = np.concatenate([[u_in], a])
    fields = [lifting.zeta] + [vel_basis.modes[:, i] for i in range(n_u)]
    U = sum(c * f for c, f in zip(abar, fields))
    phi = fields[1:]

    conv_full = naive_div_tensor(domain, U, U)
    lap_full = naive_vector_laplacian(domain, U,
                                      inlet_trace=u_in * lifting.inlet_trace)
    gchi = [naive_grad(domain, p_basis.modes[:, m]) for m in range(n_p)]

    # pressure from the reduced Poisson system, all-oracle assembly
    rhs_b = np.array([
        props.rho * (-quad(gchi[m], conv_full, w)
                     + oracle["Fr_unit"][m] * du_in_dt)
        + props.rho * props.nu * quad(gchi[m], lap_full, w)
        for m in range(n_p)])
    b = np.linalg.solve(oracle["Dr"], rhs_b)

    grad_p = sum(bm * g for bm, g in zip(b, gchi))
    resid = (props.nu * lap_full - conv_full - grad_p / props.rho
             - lifting.zeta * du_in_dt)
    proj = np.array([quad(phi[i], resid, w) for i in range(n_u)])
    return np.linalg.solve(oracle["Mr"], proj), b
