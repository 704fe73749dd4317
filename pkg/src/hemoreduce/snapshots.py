"""Snapshot containers, weighted inner products, lifting and homogenization.

Velocity snapshots stack both cell-centered components into one column
(x-component block first), so a single quadrature weight vector serves both
velocity and pressure fields.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    AlreadyHomogenized,
    LengthMismatch,
    MissingInletValues,
    NonPositiveDimension,
)

VELOCITY = "velocity"
PRESSURE = "pressure"


@dataclass
class SnapshotMatrix:
    """Time-ordered field samples over fluid cells.

    ``columns`` has shape (n_dof, N_s); velocity stores 2*n_cells dofs.
    """

    field_kind: str
    columns: np.ndarray
    times: np.ndarray
    inlet_values: np.ndarray
    weights: np.ndarray
    homogenized: bool = False

    def __post_init__(self):
        if self.columns.ndim != 2:
            raise LengthMismatch("columns must be 2-D (n_dof, N_s)")
        n_s = self.columns.shape[1]
        if self.times.shape != (n_s,) or self.inlet_values.shape != (n_s,):
            raise LengthMismatch("times/inlet_values must have one entry per column")
        if n_s > 1 and not np.all(np.diff(self.times) > 0.0):
            raise NonPositiveDimension("times must be strictly increasing")
        if np.any(self.weights <= 0.0):
            raise NonPositiveDimension("quadrature weights must be strictly positive")

    @property
    def n_snapshots(self):
        return self.columns.shape[1]

    @property
    def n_dof(self):
        return self.columns.shape[0]

    @property
    def components(self):
        return 2 if self.field_kind == VELOCITY else 1

    def window(self, t_min):
        """Sub-matrix restricted to samples with t >= t_min."""
        keep = self.times >= t_min - 1e-12
        return replace(self, columns=self.columns[:, keep].copy(),
                       times=self.times[keep].copy(),
                       inlet_values=self.inlet_values[keep].copy())


def component_weights(weights, n_dof):
    """Repeat the per-cell weights across stacked vector components."""
    n_cells = weights.size
    if n_dof % n_cells:
        raise LengthMismatch(
            f"dof count {n_dof} is not a multiple of cell count {n_cells}")
    reps = n_dof // n_cells
    return np.tile(weights, reps)


def inner_product(f, g, weights):
    """Weighted L2 inner product; vector fields pass stacked components with
    the weights tiled to match."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != g.shape:
        raise LengthMismatch(f"field shapes differ: {f.shape} vs {g.shape}")
    w = weights
    if w.size != f.shape[0]:
        w = component_weights(weights, f.shape[0])
    return float(np.sum(w * f * g))


def weighted_norm(f, weights):
    return np.sqrt(max(inner_product(f, f, weights), 0.0))


@dataclass
class LiftingField:
    """Divergence-free velocity field with unit mean inlet-normal trace."""

    zeta: np.ndarray          # stacked (ux, uy) over fluid cells
    inlet_trace: float        # = 1 after normalization
    face_state: object = None  # FlowState of the normalized steady solve


def compute_lifting(domain, props, u_ref=1.0, tol=1e-10, max_time=4000.0) -> LiftingField:
    """Steady constant-inflow solve, normalized to unit mean inlet trace.

    The steady run uses inflow speed ``u_ref`` (keep it in the laminar range
    of the target configuration); normalization by the mean inlet-normal trace
    makes the result independent of that choice up to Reynolds effects.
    """
    from .fom import FlowState, cell_center_velocity, run_to_steady

    state = run_to_steady(domain, props, u_ref, tol=tol, max_time=max_time)
    trace = mean_inlet_trace_faces(state, domain)
    ux, uy = cell_center_velocity(state, domain)
    zeta = np.concatenate([ux, uy]) / trace
    norm_state = FlowState(u=state.u / trace, v=state.v / trace,
                           p=state.p / trace, t=0.0)
    return LiftingField(zeta=zeta, inlet_trace=1.0, face_state=norm_state)


def mean_inlet_trace_faces(state, domain):
    """Mean inlet-normal velocity over the inlet faces of a FlowState."""
    vals = []
    for axis, i, j, s in domain.inlet_faces:
        v = state.u[i, j] if axis == 0 else state.v[i, j]
        vals.append(-s * v)  # inward normal component
    return float(np.mean(vals))


def mean_inlet_trace(field, domain):
    """Mean inlet-normal component of a cell-centered stacked velocity vector,
    sampled at the fluid cells adjacent to the inlet."""
    n = domain.n_fluid
    lut = np.full(domain.cell_kind.shape, -1, dtype=np.int64)
    lut.ravel()[domain.fluid_index] = np.arange(n)
    vals = []
    for axis, i, j, s in domain.inlet_faces:
        ci, cj = (i + (s < 0), j) if axis == 0 else (i, j + (s < 0))
        c = lut[ci, cj]
        comp = field[c] if axis == 0 else field[n + c]
        vals.append(-s * comp)
    return float(np.mean(vals))


def homogenize(snaps: SnapshotMatrix, lifting: LiftingField) -> SnapshotMatrix:
    """Subtract the inlet-carrying component: u'(t_n) = u(t_n) - zeta u_in(t_n)."""
    if snaps.field_kind != VELOCITY:
        raise AlreadyHomogenized("only velocity snapshots are homogenized")
    if snaps.homogenized:
        raise AlreadyHomogenized("snapshot matrix is already homogenized")
    if snaps.inlet_values is None or snaps.inlet_values.size != snaps.n_snapshots:
        raise MissingInletValues("per-column inlet values are required")
    if lifting.zeta.shape[0] != snaps.n_dof:
        raise LengthMismatch("lifting field length does not match snapshots")
    cols = snaps.columns - np.outer(lifting.zeta, snaps.inlet_values)
    return replace(snaps, columns=cols, homogenized=True)


def dehomogenize(snaps: SnapshotMatrix, lifting: LiftingField) -> SnapshotMatrix:
    """Inverse of homogenize."""
    if not snaps.homogenized:
        raise AlreadyHomogenized("snapshot matrix is not homogenized")
    cols = snaps.columns + np.outer(lifting.zeta, snaps.inlet_values)
    return replace(snaps, columns=cols, homogenized=False)
