"""Bit-exact binary artifact formats plus legacy ASCII VTK export.

All binary files share the same framing: an 8-byte magic ("HR" + four-letter
kind + two-digit version), then little-endian 64-bit integers/floats.  Arrays
are stored as shape followed by raw '<f8' (or '<i8') payload; strings are
length-prefixed UTF-8.  read(write(x)) is bitwise identity for every format.

CSV output uses '.' as the decimal separator and %.17g floats so that a
round-trip through text reproduces the double exactly.
"""

import io
import struct

import numpy as np
import scipy.sparse as sp

from .errors import BadMagic, IoFailure, TruncatedPayload, VersionMismatch
from .esn import EsnConfig, Readout, Reservoir
from .galerkin import ReducedOperators
from .geometry import FLUID, DomainMask, domain_from_cell_kind
from .pod import PodBasis
from .snapshots import LiftingField, SnapshotMatrix

SNAP_MAGIC = b"HRSNAP01"
BASIS_MAGIC = b"HRBASE01"
OPER_MAGIC = b"HROPER01"
ESN_MAGIC = b"HRESNM01"
LIFT_MAGIC = b"HRLIFT01"

FLOAT_FMT = "%.17g"


class _Writer:
    def __init__(self, fh, magic):
        self.fh = fh
        fh.write(magic)

    def i64(self, *vals):
        self.fh.write(struct.pack("<%dq" % len(vals), *(int(v) for v in vals)))

    def f64(self, *vals):
        self.fh.write(struct.pack("<%dd" % len(vals), *(float(v) for v in vals)))

    def text(self, s):
        raw = s.encode("utf-8")
        self.i64(len(raw))
        self.fh.write(raw)

    def array(self, a, dtype="<f8"):
        a = np.asarray(a)
        self.i64(a.ndim, *a.shape)
        self.fh.write(np.ascontiguousarray(a, dtype=dtype).tobytes())


class _Reader:
    def __init__(self, fh, magic):
        self.fh = fh
        got = fh.read(len(magic))
        if len(got) < len(magic):
            raise TruncatedPayload(offset=len(got))
        if got != magic:
            if got[:6] == magic[:6]:
                raise VersionMismatch(
                    f"format version {got[6:].decode('ascii', 'replace')} "
                    f"!= {magic[6:].decode('ascii')}")
            raise BadMagic(f"expected magic {magic!r}, found {got!r}")

    def _read(self, n):
        buf = self.fh.read(n)
        if len(buf) < n:
            raise TruncatedPayload(offset=self.fh.tell() - len(buf))
        return buf

    def i64(self, count=1):
        vals = struct.unpack("<%dq" % count, self._read(8 * count))
        return vals[0] if count == 1 else vals

    def f64(self, count=1):
        vals = struct.unpack("<%dd" % count, self._read(8 * count))
        return vals[0] if count == 1 else vals

    def text(self):
        return self._read(self.i64()).decode("utf-8")

    def array(self, dtype="<f8"):
        ndim = self.i64()
        shape = tuple(self.i64(ndim)) if ndim > 1 else ((self.i64(),) if ndim else ())
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        itemsize = np.dtype(dtype).itemsize
        a = np.frombuffer(self._read(n * itemsize), dtype=dtype)
        return a.reshape(shape).copy()


def _rle_encode(flat):
    edges = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate([[0], edges])
    ends = np.concatenate([edges, [flat.size]])
    return np.stack([flat[starts], ends - starts], axis=1).astype(np.int64)


def _rle_decode(runs, size):
    out = np.repeat(runs[:, 0], runs[:, 1])
    if out.size != size:
        raise TruncatedPayload(offset=0)
    return out


def _write_geometry(w, domain):
    w.i64(domain.nx, domain.ny)
    w.f64(domain.h)
    w.array(_rle_encode(domain.cell_kind.ravel()), dtype="<i8")


def _read_geometry(r):
    nx, ny = r.i64(2)
    h = r.f64()
    runs = r.array(dtype="<i8")
    kind = _rle_decode(runs, (nx + 2) * (ny + 2)).reshape(nx + 2, ny + 2)
    return domain_from_cell_kind(kind, h)


def write_snapshots(path, snaps: SnapshotMatrix, domain: DomainMask):
    with open(path, "wb") as fh:
        w = _Writer(fh, SNAP_MAGIC)
        _write_geometry(w, domain)
        w.text(snaps.field_kind)
        w.i64(snaps.n_snapshots, snaps.n_dof, int(snaps.homogenized), 1)
        dt = snaps.times[1] - snaps.times[0] if snaps.n_snapshots > 1 else 0.0
        w.f64(dt)
        w.array(snaps.times)
        w.array(snaps.inlet_values)
        w.array(snaps.weights)
        w.array(snaps.columns)


def read_snapshots(path):
    """Returns (SnapshotMatrix, DomainMask)."""
    with open(path, "rb") as fh:
        r = _Reader(fh, SNAP_MAGIC)
        domain = _read_geometry(r)
        field_kind = r.text()
        n_s, n_dof, homog, _has_inlet = r.i64(4)
        r.f64()  # dt_sample, derivable from times
        times = r.array()
        inlet = r.array()
        weights = r.array()
        columns = r.array()
        if columns.shape != (n_dof, n_s):
            raise TruncatedPayload(offset=fh.tell())
    snaps = SnapshotMatrix(field_kind=field_kind, columns=columns, times=times,
                           inlet_values=inlet, weights=weights,
                           homogenized=bool(homog))
    return snaps, domain


def write_basis(path, basis: PodBasis):
    with open(path, "wb") as fh:
        w = _Writer(fh, BASIS_MAGIC)
        w.text(basis.field_kind)
        w.array(basis.modes)
        w.array(basis.eigenvalues)
        w.array(basis.coeff_train)
        w.array(basis.energy_fraction)
        w.array(basis.weights)


def read_basis(path) -> PodBasis:
    with open(path, "rb") as fh:
        r = _Reader(fh, BASIS_MAGIC)
        return PodBasis(field_kind=r.text(), modes=r.array(),
                        eigenvalues=r.array(), coeff_train=r.array(),
                        energy_fraction=r.array(), weights=r.array())


def write_basis_tables(basis: PodBasis, eig_path, coeff_path):
    """CSV companions: eigenvalue/energy spectrum and training coefficients."""
    with open(eig_path, "w", newline="\n") as fh:
        fh.write("index,eigenvalue,energy_fraction\n")
        for k, (lam, en) in enumerate(zip(basis.eigenvalues, basis.energy_fraction)):
            fh.write(f"{k + 1},{FLOAT_FMT % lam},{FLOAT_FMT % en}\n")
    with open(coeff_path, "w", newline="\n") as fh:
        fh.write(",".join(f"a{k + 1}" for k in range(basis.n_modes)) + "\n")
        for col in basis.coeff_train.T:
            fh.write(",".join(FLOAT_FMT % v for v in col) + "\n")


def write_lifting(path, lifting: LiftingField):
    with open(path, "wb") as fh:
        w = _Writer(fh, LIFT_MAGIC)
        w.array(lifting.zeta)
        w.f64(lifting.inlet_trace)
        st = lifting.face_state
        w.array(st.u)
        w.array(st.v)
        w.array(st.p)
        w.f64(st.t)


def read_lifting(path) -> LiftingField:
    from .fom import FlowState

    with open(path, "rb") as fh:
        r = _Reader(fh, LIFT_MAGIC)
        zeta = r.array()
        trace = r.f64()
        state = FlowState(u=r.array(), v=r.array(), p=r.array(), t=r.f64())
    return LiftingField(zeta=zeta, inlet_trace=trace, face_state=state)


def write_operators(path, ops: ReducedOperators):
    with open(path, "wb") as fh:
        w = _Writer(fh, OPER_MAGIC)
        w.f64(ops.rho, ops.nu, 0.0)  # third slot reserved
        for name in ("Mr", "Ar", "Cr", "Br", "Dr", "Gr", "Nr", "Fr_unit", "zeta_proj"):
            w.array(getattr(ops, name))


def read_operators(path) -> ReducedOperators:
    with open(path, "rb") as fh:
        r = _Reader(fh, OPER_MAGIC)
        rho, nu, _ = r.f64(3)
        arrays = {name: r.array() for name in
                  ("Mr", "Ar", "Cr", "Br", "Dr", "Gr", "Nr", "Fr_unit", "zeta_proj")}
    return ReducedOperators(rho=rho, nu=nu, **arrays)


def write_esn(path, config: EsnConfig, reservoir: Reservoir, readout: Readout):
    W = reservoir.W.tocsr()
    with open(path, "wb") as fh:
        w = _Writer(fh, ESN_MAGIC)
        w.i64(config.n_reservoir, config.seed)
        w.f64(config.density, config.spectral_radius_target, config.input_scaling,
              config.bias_scaling, config.pre_activation_gain, config.leak_rate,
              config.ridge_lambda, config.washout_duration)
        w.array(reservoir.W_in)
        w.i64(W.shape[0], W.shape[1])
        w.array(W.data)
        w.array(W.indices.astype(np.int64), dtype="<i8")
        w.array(W.indptr.astype(np.int64), dtype="<i8")
        w.array(reservoir.bias)
        w.f64(reservoir.spectral_radius)
        w.i64(int(reservoir.zero_recurrent))
        w.array(readout.W_out)
        w.array(readout.b_out)
        w.f64(readout.training_error)


def read_esn(path):
    """Returns (EsnConfig, Reservoir, Readout)."""
    with open(path, "rb") as fh:
        r = _Reader(fh, ESN_MAGIC)
        n_res, seed = r.i64(2)
        (density, rho_t, eps, eta, beta, gamma, lam, washout) = r.f64(8)
        config = EsnConfig(n_reservoir=n_res, density=density,
                           spectral_radius_target=rho_t, input_scaling=eps,
                           bias_scaling=eta, pre_activation_gain=beta,
                           leak_rate=gamma, ridge_lambda=lam, seed=seed,
                           washout_duration=washout)
        W_in = r.array()
        shape = r.i64(2)
        data = r.array()
        indices = r.array(dtype="<i8")
        indptr = r.array(dtype="<i8")
        W = sp.csr_matrix((data, indices.astype(np.int32),
                           indptr.astype(np.int32)), shape=shape)
        bias = r.array()
        spectral_radius = r.f64()
        zero = bool(r.i64())
        readout = Readout(W_out=r.array(), b_out=r.array(), training_error=r.f64())
    reservoir = Reservoir(W_in=W_in, W=W, bias=bias, r=np.zeros(n_res),
                          spectral_radius=spectral_radius, zero_recurrent=zero)
    return config, reservoir, readout


def export_vtk(path, domain: DomainMask, scalars=None, vectors=None, title="hemoreduce fields"):
    """Legacy ASCII VTK structured-points file with cell data.

    scalars: {name: per-fluid-cell vector}; vectors: {name: stacked (2n,)
    velocity vector}.  Solid cells carry the blanked sentinel -1e30.
    """
    scalars = scalars or {}
    vectors = vectors or {}
    nx, ny = domain.nx, domain.ny
    n = domain.n_fluid
    sentinel = -1e30
    interior_fluid = domain.fluid[1:-1, 1:-1]

    def cell_rows(grid):
        # VTK orders cells x-fastest; our grids are indexed [i (x), j (y)]
        return grid[1:-1, 1:-1].T

    buf = io.StringIO()
    buf.write("# vtk DataFile Version 3.0\n")
    buf.write(title + "\n")
    buf.write("ASCII\n")
    buf.write("DATASET STRUCTURED_POINTS\n")
    buf.write(f"DIMENSIONS {nx + 1} {ny + 1} 1\n")
    buf.write("ORIGIN 0 0 0\n")
    buf.write(f"SPACING {FLOAT_FMT % domain.h} {FLOAT_FMT % domain.h} {FLOAT_FMT % domain.h}\n")
    buf.write(f"CELL_DATA {nx * ny}\n")
    for name, values in scalars.items():
        grid = domain.scatter(values, fill=sentinel)
        buf.write(f"SCALARS {name} double 1\n")
        buf.write("LOOKUP_TABLE default\n")
        for row, keep in zip(cell_rows(grid), interior_fluid.T):
            vals = np.where(keep, row, sentinel)
            buf.write(" ".join(FLOAT_FMT % v for v in vals) + "\n")
    for name, values in vectors.items():
        gx = domain.scatter(values[:n], fill=sentinel)
        gy = domain.scatter(values[n:], fill=sentinel)
        buf.write(f"VECTORS {name} double\n")
        for rx, ry, keep in zip(cell_rows(gx), cell_rows(gy), interior_fluid.T):
            parts = []
            for vx, vy, k in zip(rx, ry, keep):
                if k:
                    parts.append(f"{FLOAT_FMT % vx} {FLOAT_FMT % vy} 0")
                else:
                    parts.append(f"{FLOAT_FMT % sentinel} {FLOAT_FMT % sentinel} 0")
            buf.write(" ".join(parts) + "\n")
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write(buf.getvalue())
    except OSError as exc:
        raise IoFailure(f"cannot write VTK file {path}: {exc}") from exc


def parse_vtk_cell_data(path):
    """Re-parse an exported file: {name: flat array over interior cells}.

    Vectors come back as (n_cells, 3) arrays; used by the round-trip checks.
    """
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "# vtk DataFile Version 3.0":
        raise BadMagic("not a legacy VTK version 3.0 file")
    n_cells = None
    out = {}
    k = 0
    while k < len(lines):
        tok = lines[k].split()
        if tok and tok[0] == "CELL_DATA":
            n_cells = int(tok[1])
        elif tok and tok[0] == "SCALARS":
            name = tok[1]
            k += 1  # LOOKUP_TABLE line
            vals = []
            while len(vals) < n_cells:
                k += 1
                vals.extend(float(v) for v in lines[k].split())
            out[name] = np.array(vals)
        elif tok and tok[0] == "VECTORS":
            name = tok[1]
            vals = []
            while len(vals) < 3 * n_cells:
                k += 1
                vals.extend(float(v) for v in lines[k].split())
            out[name] = np.array(vals).reshape(-1, 3)
        k += 1
    return out


def write_error_series_csv(path, series):
    with open(path, "w", newline="\n") as fh:
        fh.write("t,e_p,e_U,e_wss\n")
        for t, ep, eu, ew in zip(series.times, series.e_p, series.e_U, series.e_wss):
            fh.write(",".join(FLOAT_FMT % v for v in (t, ep, eu, ew)) + "\n")


def write_timing_csv(path, report):
    with open(path, "w", newline="\n") as fh:
        fh.write("method,offline_s,online_s,speedup\n")
        for method, off, on, sp_ in report.rows():
            off_s = FLOAT_FMT % off if isinstance(off, float) else ""
            fh.write(f"{method},{off_s},{FLOAT_FMT % on},{FLOAT_FMT % sp_}\n")
