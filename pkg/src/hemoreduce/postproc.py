"""Field reconstruction, wall shear stress, error metrics, timing tables."""

from dataclasses import dataclass

import numpy as np

from .discrete import cell_ops
from .errors import LengthMismatch, MissingPhase
from .geometry import DomainMask
from .pod import PodBasis
from .snapshots import LiftingField, component_weights, weighted_norm


@dataclass
class ErrorSeries:
    """Relative L2 error percentages per sample time; NaN marks samples with
    an undefined (zero-norm) reference, excluded from aggregates."""

    times: np.ndarray
    e_p: np.ndarray
    e_U: np.ndarray
    e_wss: np.ndarray

    def mean(self, name, t_min=None, t_max=None):
        vals = getattr(self, name)
        keep = np.isfinite(vals)
        if t_min is not None:
            keep &= self.times >= t_min - 1e-12
        if t_max is not None:
            keep &= self.times <= t_max + 1e-12
        return float(np.mean(vals[keep])) if keep.any() else np.nan


@dataclass
class TimingReport:
    fom_seconds: float
    offline_seconds: dict   # method -> seconds
    online_seconds: dict    # method -> seconds
    speedup: dict           # method -> fom/online

    def rows(self):
        out = [("fom", "", self.fom_seconds, 1.0)]
        for m in sorted(self.online_seconds):
            out.append((m, self.offline_seconds.get(m, float("nan")),
                        self.online_seconds[m], self.speedup[m]))
        return out

    def as_table(self):
        lines = [f"{'method':<12} {'offline_s':>12} {'online_s':>12} {'speedup':>10}"]
        for method, off, on, sp in self.rows():
            off_s = f"{off:12.3f}" if isinstance(off, float) else f"{'-':>12}"
            lines.append(f"{method:<12} {off_s} {on:12.3f} {sp:10.1f}")
        return "\n".join(lines)


def reconstruct_full(vel_basis: PodBasis, p_basis: PodBasis,
                     lifting: LiftingField, a, b, u_in_series):
    """Full-field time series from coefficient trajectories.

    u(t) = sum_i a_i phi_i + zeta u_in(t), p(t) = sum_i b_i chi_i.
    Returns (velocity_columns, pressure_columns).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    u_in_series = np.asarray(u_in_series, dtype=float)
    if a.shape[0] != u_in_series.shape[0] or b.shape[0] != u_in_series.shape[0]:
        raise LengthMismatch("coefficient trajectory and inlet series misaligned")
    vel = vel_basis.modes @ a.T + np.outer(lifting.zeta, u_in_series)
    pres = p_basis.modes @ b.T
    return vel, pres


def wall_shear_stress(velocity, props, domain: DomainMask):
    """WSS magnitude per wall face (Pa), one-sided second-order wall-normal
    derivative of the tangential velocity (wall value zero by no-slip)."""
    ops = cell_ops(domain)
    n = domain.n_fluid
    ux, uy = velocity[:n], velocity[n:]
    taus = np.empty(domain.wall_faces.shape[0])
    for k, (axis, i, j, s) in enumerate(domain.wall_faces):
        # adjacent fluid cell and the inward direction toward the interior
        if axis == 0:
            comp = uy
            ci, cj = (i, j) if s > 0 else (i + 1, j)
            inward = "w" if s > 0 else "e"
        else:
            comp = ux
            ci, cj = (i, j) if s > 0 else (i, j + 1)
            inward = "s" if s > 0 else "n"
        c1 = _cell_index(domain, ci, cj)
        c2 = ops.nbr[inward][c1]
        u1 = comp[c1]
        if c2 >= 0:
            dudn = (9.0 * u1 - comp[c2]) / (3.0 * domain.h)
        else:
            dudn = 2.0 * u1 / domain.h
        taus[k] = props.mu * abs(dudn)
    return taus


_cell_lut_cache = {}


def _cell_index(domain, i, j):
    key = id(domain)
    lut = _cell_lut_cache.get(key)
    if lut is None or lut[1] is not domain:
        table = np.full(domain.cell_kind.shape, -1, dtype=np.int64)
        ci, cj = np.nonzero(domain.fluid)
        table[ci, cj] = np.arange(domain.n_fluid)
        _cell_lut_cache[key] = (table, domain)
        lut = (table, domain)
    return lut[0][i, j]


def relative_l2_error(theta_fom, theta_rom, weights, demean=False):
    """100 * ||fom - rom|| / ||fom|| per column under the weighted L2 norm.

    With demean=True both fields are shifted to zero weighted mean first
    (pressure gauge freedom).  Zero-reference samples come back as NaN.
    """
    theta_fom = np.atleast_2d(np.asarray(theta_fom, dtype=float).T).T
    theta_rom = np.atleast_2d(np.asarray(theta_rom, dtype=float).T).T
    if theta_fom.shape != theta_rom.shape:
        raise LengthMismatch("field series shapes differ")
    w = weights
    if w.size != theta_fom.shape[0]:
        w = component_weights(weights, theta_fom.shape[0])
    out = np.empty(theta_fom.shape[1])
    for k in range(theta_fom.shape[1]):
        f = theta_fom[:, k]
        r = theta_rom[:, k]
        if demean:
            f = f - np.sum(w * f) / np.sum(w)
            r = r - np.sum(w * r) / np.sum(w)
        ref = weighted_norm(f, w)
        if ref == 0.0:
            out[k] = np.nan
        else:
            out[k] = 100.0 * weighted_norm(f - r, w) / ref
    return out


def velocity_magnitude(vel_columns, n_cells):
    """Per-cell speed from stacked-component velocity columns."""
    vel_columns = np.atleast_2d(np.asarray(vel_columns, dtype=float).T).T
    return np.sqrt(vel_columns[:n_cells] ** 2 + vel_columns[n_cells:] ** 2)


def error_series(times, fom_vel, fom_pres, rom_vel, rom_pres, domain, props) -> ErrorSeries:
    """Assemble E_p, E_U, E_WSS time series from aligned field columns."""
    n = domain.n_fluid
    e_p = relative_l2_error(fom_pres, rom_pres, domain.weights, demean=True)
    e_U = relative_l2_error(velocity_magnitude(fom_vel, n),
                            velocity_magnitude(rom_vel, n), domain.weights)
    n_t = fom_vel.shape[1]
    wss_w = np.full(domain.wall_faces.shape[0], domain.h)
    e_wss = np.empty(n_t)
    for k in range(n_t):
        tf = wall_shear_stress(fom_vel[:, k], props, domain)
        tr = wall_shear_stress(rom_vel[:, k], props, domain)
        e_wss[k] = relative_l2_error(tf, tr, wss_w)[0]
    return ErrorSeries(times=np.asarray(times, dtype=float),
                       e_p=e_p, e_U=e_U, e_wss=e_wss)


def build_timing_report(records: dict) -> TimingReport:
    """records: {"fom": s, "<method>": {"offline": s, "online": s}, ...}"""
    if "fom" not in records:
        raise MissingPhase("missing FOM timing record")
    fom = float(records["fom"])
    offline, online, speedup = {}, {}, {}
    for method, rec in records.items():
        if method == "fom":
            continue
        if "online" not in rec or "offline" not in rec:
            raise MissingPhase(f"method {method} lacks an offline/online record")
        offline[method] = float(rec["offline"])
        online[method] = float(rec["online"])
        if online[method] <= 0.0:
            raise MissingPhase(f"method {method} online time must be > 0")
        speedup[method] = fom / online[method]
    if not online:
        raise MissingPhase("no ROM timing records present")
    return TimingReport(fom_seconds=fom, offline_seconds=offline,
                        online_seconds=online, speedup=speedup)
