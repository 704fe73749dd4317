"""Cell-centered discrete differential operators on the masked grid.

Fields are flat vectors in fluid-cell order (see DomainMask.fluid_index);
velocity fields stack the x block before the y block.  Gradients are centered
where both neighbors are fluid and fall back to one-sided second-order (or
first-order next to a lone neighbor) stencils at boundaries.  The velocity
Laplacian uses ghost values consistent with the solver boundary conditions:
reflection (Dirichlet 0) across walls, prescribed trace at the inlet,
zero-gradient across outlets.
"""

import weakref

import numpy as np

from .geometry import FLUID, INLET_GHOST, OUTLET_GHOST, SOLID, DomainMask


class CellOps:
    """Precomputed neighbor tables for stencil evaluation over fluid cells."""

    def __init__(self, domain: DomainMask):
        self.domain = domain
        self.h = domain.h
        kind = domain.cell_kind
        n = domain.n_fluid
        lut = np.full(kind.shape, -1, dtype=np.int64)
        ci, cj = np.nonzero(domain.fluid)
        lut[ci, cj] = np.arange(n)
        self.n = n

        self.nbr = {}
        self.nbr2 = {}
        self.kind = {}
        for name, (di, dj) in (("e", (1, 0)), ("w", (-1, 0)),
                               ("n", (0, 1)), ("s", (0, -1))):
            ni, nj = ci + di, cj + dj
            self.nbr[name] = lut[ni, nj]
            self.kind[name] = kind[ni, nj].astype(np.int64)
            n2i = np.clip(ci + 2 * di, 0, kind.shape[0] - 1)
            n2j = np.clip(cj + 2 * dj, 0, kind.shape[1] - 1)
            self.nbr2[name] = lut[n2i, n2j]

    def _grad_1d(self, f, pos, neg):
        """Derivative along one axis; pos/neg name the +/- neighbor tables."""
        h = self.h
        e, w = self.nbr[pos], self.nbr[neg]
        e2, w2 = self.nbr2[pos], self.nbr2[neg]
        fe = np.where(e >= 0, f[e], 0.0)
        fw = np.where(w >= 0, f[w], 0.0)
        fe2 = np.where(e2 >= 0, f[e2], 0.0)
        fw2 = np.where(w2 >= 0, f[w2], 0.0)

        g = (fe - fw) / (2.0 * h)  # centered, both neighbors present
        # one-sided into the fluid where a neighbor is missing
        fwd2 = (-3.0 * f + 4.0 * fe - fe2) / (2.0 * h)
        fwd1 = (fe - f) / h
        bwd2 = (3.0 * f - 4.0 * fw + fw2) / (2.0 * h)
        bwd1 = (f - fw) / h
        g = np.where((w < 0) & (e >= 0), np.where(e2 >= 0, fwd2, fwd1), g)
        g = np.where((e < 0) & (w >= 0), np.where(w2 >= 0, bwd2, bwd1), g)
        g = np.where((e < 0) & (w < 0), 0.0, g)
        return g

    def grad(self, f):
        """(d/dx, d/dy) of a cell-centered scalar."""
        return self._grad_1d(f, "e", "w"), self._grad_1d(f, "n", "s")

    def laplacian_component(self, f, inlet_value=0.0):
        """5-point Laplacian of one velocity component with BC-aware ghosts.

        inlet_value is the prescribed face trace at the inlet (1 for the
        normal component of the normalized lifting field, else 0).
        """
        h2 = self.h * self.h
        acc = -4.0 * f.copy()
        for name in ("e", "w", "n", "s"):
            nb, kd = self.nbr[name], self.kind[name]
            ghost = np.where(kd == OUTLET_GHOST, f,
                             np.where(kd == INLET_GHOST, 2.0 * inlet_value - f, -f))
            acc += np.where(nb >= 0, f[nb], ghost)
        return acc / h2

    def div_tensor(self, adv, carried):
        """Divergence of (adv ⊗ carried): component m is
        d/dx (adv_x carried_m) + d/dy (adv_y carried_m)."""
        n = self.n
        ax, ay = adv[:n], adv[n:]
        out = np.empty(2 * n)
        for m, cm in enumerate((carried[:n], carried[n:])):
            out[m * n:(m + 1) * n] = (
                self._grad_1d(ax * cm, "e", "w") + self._grad_1d(ay * cm, "n", "s"))
        return out

    def curl(self, vel):
        """Scalar vorticity d(uy)/dx - d(ux)/dy of a stacked velocity field."""
        n = self.n
        return self._grad_1d(vel[n:], "e", "w") - self._grad_1d(vel[:n], "n", "s")

    def vector_laplacian(self, vel, inlet_trace=0.0):
        """Stacked Laplacian; the inlet trace applies to the x component only
        (the inlet normal is +x in all generated domains)."""
        n = self.n
        return np.concatenate([
            self.laplacian_component(vel[:n], inlet_value=inlet_trace),
            self.laplacian_component(vel[n:], inlet_value=0.0),
        ])

    def boundary_cells(self, faces):
        """Fluid cell index and outward normal (nx, ny) per boundary face."""
        domain = self.domain
        lut = np.full(domain.cell_kind.shape, -1, dtype=np.int64)
        ci, cj = np.nonzero(domain.fluid)
        lut[ci, cj] = np.arange(domain.n_fluid)
        cells, normals = [], []
        for axis, i, j, s in faces:
            if axis == 0:
                cell = lut[i, j] if s > 0 else lut[i + 1, j]
                normals.append((float(s), 0.0))
            else:
                cell = lut[i, j] if s > 0 else lut[i, j + 1]
                normals.append((0.0, float(s)))
            cells.append(cell)
        return np.array(cells, dtype=np.int64), np.array(normals)


_ops_cache = weakref.WeakKeyDictionary()


def cell_ops(domain: DomainMask) -> CellOps:
    ops = _ops_cache.get(domain)
    if ops is None:
        ops = CellOps(domain)
        _ops_cache[domain] = ops
    return ops
