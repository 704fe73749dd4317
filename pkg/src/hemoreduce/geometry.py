"""Rasterized 2D flow domains: T-junction bifurcation and straight channel.

Cells live on a uniform Cartesian grid of spacing ``h`` with a one-cell ghost
rim around the fluid region.  Ghost cells adjacent to the inlet/outlet carry
dedicated labels so the solver can tell boundary types apart; everything else
outside the fluid is solid wall.

Face index convention (MAC staggering):
  * axis 0 ("u") face ``(i, j)`` separates cells ``(i, j)`` and ``(i+1, j)``;
    the u array has shape ``(nx+1, ny+2)`` for a ``(nx+2, ny+2)`` cell grid.
  * axis 1 ("v") face ``(i, j)`` separates cells ``(i, j)`` and ``(i, j+1)``;
    the v array has shape ``(nx+2, ny+1)``.

Boundary faces are stored as integer rows ``[axis, i, j, sign]`` where sign is
the outward normal direction (from fluid) along the face axis.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NonPositiveDimension, ResolutionTooCoarse

SOLID = 0
FLUID = 1
INLET_GHOST = 2
OUTLET_GHOST = 3


@dataclass(frozen=True)
class BifurcationParams:
    """Dimensions of the idealized T-junction, all lengths in meters."""

    parent_length: float = 2.0
    parent_width: float = 0.5
    branch_length: float = 1.0
    branch_width: float = 0.5
    resolution: int = 32  # cells across the parent width

    def __post_init__(self):
        for name in ("parent_length", "parent_width", "branch_length", "branch_width"):
            if getattr(self, name) <= 0.0:
                raise NonPositiveDimension(f"{name} must be > 0, got {getattr(self, name)}")
        if self.resolution < 8:
            raise ResolutionTooCoarse(f"resolution must be >= 8, got {self.resolution}")
        if self.branch_width > self.parent_length:
            raise NonPositiveDimension("branch_width exceeds parent_length; branches do not fit")


@dataclass(frozen=True, eq=False)
class DomainMask:
    """Immutable rasterized domain with cell/face classification.

    ``nx``/``ny`` count fluid-region cells (without the ghost rim); the
    ``cell_kind`` array includes the rim and has shape ``(nx+2, ny+2)``.
    ``weights`` holds one quadrature weight (h^2) per fluid cell, ordered by
    ``fluid_index`` (C-order flattening of the cell grid).
    """

    nx: int
    ny: int
    h: float
    cell_kind: np.ndarray
    inlet_faces: np.ndarray
    outlet_faces: np.ndarray
    wall_faces: np.ndarray
    weights: np.ndarray
    fluid: np.ndarray = field(repr=False)
    fluid_index: np.ndarray = field(repr=False)

    @property
    def n_fluid(self):
        return self.fluid_index.size

    @property
    def shape(self):
        return self.cell_kind.shape

    def scatter(self, values, fill=0.0):
        """Expand a per-fluid-cell vector to the full cell grid."""
        out = np.full(self.cell_kind.shape, fill, dtype=float)
        out.ravel()[self.fluid_index] = values
        return out

    def gather(self, grid):
        """Extract fluid-cell values from a full cell grid."""
        return grid.ravel()[self.fluid_index].copy()

    def cell_centers(self):
        """Physical (x, y) coordinates of every cell center on the full grid."""
        NX, NY = self.cell_kind.shape
        x = (np.arange(NX) - 0.5) * self.h
        y = (np.arange(NY) - 0.5) * self.h
        return np.meshgrid(x, y, indexing="ij")


def _freeze(mask):
    for arr in (mask.cell_kind, mask.inlet_faces, mask.outlet_faces,
                mask.wall_faces, mask.weights, mask.fluid, mask.fluid_index):
        arr.setflags(write=False)
    return mask


def _classify_faces(kind):
    """Classify every boundary face of a fluid cell exactly once."""
    inlet, outlet, wall = [], [], []
    pairs = (
        # axis, kinds of cell A, kinds of cell B (A at lower index)
        (0, kind[:-1, :], kind[1:, :]),
        (1, kind[:, :-1], kind[:, 1:]),
    )
    for axis, ka, kb in pairs:
        for other, bucket in ((SOLID, wall), (INLET_GHOST, inlet), (OUTLET_GHOST, outlet)):
            for i, j in np.argwhere((ka == FLUID) & (kb == other)):
                bucket.append((axis, i, j, +1))
            for i, j in np.argwhere((kb == FLUID) & (ka == other)):
                bucket.append((axis, i, j, -1))
    to_arr = lambda rows: np.array(sorted(rows), dtype=np.int64).reshape(-1, 4)
    return to_arr(inlet), to_arr(outlet), to_arr(wall)


def _finish(kind, h):
    fluid = kind == FLUID
    if not fluid.any():
        raise NonPositiveDimension("domain rasterized to zero fluid cells")
    _check_connected(fluid, kind)
    inlet, outlet, wall = _classify_faces(kind)
    fluid_index = np.flatnonzero(fluid.ravel())
    weights = np.full(fluid_index.size, h * h)
    nx, ny = kind.shape[0] - 2, kind.shape[1] - 2
    return _freeze(DomainMask(
        nx=nx, ny=ny, h=h, cell_kind=kind,
        inlet_faces=inlet, outlet_faces=outlet, wall_faces=wall,
        weights=weights, fluid=fluid, fluid_index=fluid_index,
    ))


def _check_connected(fluid, kind):
    """Flood fill from the inlet-adjacent cells; every fluid cell must be hit."""
    seeds = np.argwhere(fluid & (np.roll(kind, 1, axis=0) == INLET_GHOST))
    if seeds.size == 0:
        raise NonPositiveDimension("no fluid cell adjacent to the inlet")
    seen = np.zeros_like(fluid)
    stack = [tuple(s) for s in seeds]
    for s in stack:
        seen[s] = True
    while stack:
        i, j = stack.pop()
        for ni, nj in ((i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)):
            if fluid[ni, nj] and not seen[ni, nj]:
                seen[ni, nj] = True
                stack.append((ni, nj))
    if not np.array_equal(seen, fluid):
        raise NonPositiveDimension("fluid region is not a single inlet-connected component")


def build_bifurcation(params: BifurcationParams) -> DomainMask:
    """Rasterize the T-junction: horizontal parent channel entering from the
    left, splitting into an up and a down branch at the right end."""
    h = params.parent_width / params.resolution
    npx = int(round(params.parent_length / h))
    w = params.resolution
    wb = int(round(params.branch_width / h))
    jbl = int(round(params.branch_length / h))
    if wb < 8:
        raise ResolutionTooCoarse(
            f"branch width rasterizes to {wb} cells (< 8); refine the resolution")
    if npx < 1 or jbl < 1:
        raise ResolutionTooCoarse("parent or branch length rasterizes to zero cells")

    ny = w + 2 * jbl
    kind = np.full((npx + 2, ny + 2), SOLID, dtype=np.int8)
    jb = 1 + jbl  # first parent-band row (ghost rim offset included)
    # parent channel
    kind[1:npx + 1, jb:jb + w] = FLUID
    # branch column, flush with the right end
    i0 = npx + 1 - wb
    kind[i0:npx + 1, jb + w:jb + w + jbl] = FLUID   # up branch
    kind[i0:npx + 1, 1:jb] = FLUID                  # down branch
    # ghost labels
    kind[0, jb:jb + w] = INLET_GHOST
    kind[i0:npx + 1, ny + 1] = OUTLET_GHOST
    kind[i0:npx + 1, 0] = OUTLET_GHOST
    return _finish(kind, h)


def domain_from_cell_kind(kind, h: float) -> DomainMask:
    """Rebuild a DomainMask from a stored cell-kind grid (deserialization)."""
    return _finish(np.array(kind, dtype=np.int8), float(h))


def build_channel(length: float, width: float, resolution: int) -> DomainMask:
    """Straight horizontal channel: inlet at the left, outlet at the right.

    Used for solver validation against the analytic Poiseuille profile and for
    lifting-field sanity checks; shares all conventions with the T-junction.
    """
    if length <= 0.0 or width <= 0.0:
        raise NonPositiveDimension("channel length and width must be > 0")
    if resolution < 8:
        raise ResolutionTooCoarse(f"resolution must be >= 8, got {resolution}")
    h = width / resolution
    npx = int(round(length / h))
    if npx < 1:
        raise ResolutionTooCoarse("channel length rasterizes to zero cells")
    kind = np.full((npx + 2, resolution + 2), SOLID, dtype=np.int8)
    kind[1:npx + 1, 1:resolution + 1] = FLUID
    kind[0, 1:resolution + 1] = INLET_GHOST
    kind[npx + 1, 1:resolution + 1] = OUTLET_GHOST
    return _finish(kind, h)
