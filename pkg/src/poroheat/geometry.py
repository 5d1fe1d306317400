"""Voxelized periodic unit cells and layered macro grids.

The unit cell is [0,1]^d split into a fluid and a solid phase by a union of
geometric primitives.  Phase labels live on a regular voxel grid (midpoint
membership test); surface and volume measures are carried twice, once
analytically from the primitives and once counted from the voxelization.
The macro domain is a structured rectangle split by a horizontal interface
into a porous layer below and a free-fluid layer above.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

VERTICAL_AXIS = 1  # y2 is the wall-normal direction, both in the cell and on the macro grid

_TOUCH_TOL = 1e-12


class GeometryError(ValueError):
    pass


# ---------------------------------------------------------------------------
# solid primitives


@dataclass(frozen=True)
class Cube:
    """Axis-aligned cube of given side, centered at `center` (cell center by default)."""

    side: float
    center: Optional[tuple] = None

    def centre(self, dim):
        return np.full(dim, 0.5) if self.center is None else np.asarray(self.center, float)

    def contains(self, pts):
        c = self.centre(pts.shape[1])
        return np.max(np.abs(pts - c), axis=1) <= self.side / 2.0

    def bounds(self, dim):
        c = self.centre(dim)
        return c - self.side / 2.0, c + self.side / 2.0

    def volume(self, dim):
        return self.side**dim

    def surface_area(self, dim):
        return 2 * dim * self.side ** (dim - 1)

    def bottom_trace(self, dim):
        lo, _ = self.bounds(dim)
        return self.side ** (dim - 1) if abs(lo[VERTICAL_AXIS]) <= _TOUCH_TOL else 0.0


@dataclass(frozen=True)
class Sphere:
    radius: float
    center: Optional[tuple] = None

    def centre(self, dim):
        return np.full(dim, 0.5) if self.center is None else np.asarray(self.center, float)

    def contains(self, pts):
        c = self.centre(pts.shape[1])
        return np.sum((pts - c) ** 2, axis=1) <= self.radius**2

    def bounds(self, dim):
        c = self.centre(dim)
        return c - self.radius, c + self.radius

    def volume(self, dim):
        return (4.0 / 3.0) * np.pi * self.radius**3 if dim == 3 else np.pi * self.radius**2

    def surface_area(self, dim):
        return 4.0 * np.pi * self.radius**2 if dim == 3 else 2.0 * np.pi * self.radius

    def bottom_trace(self, dim):
        # tangency has measure zero
        return 0.0


@dataclass(frozen=True)
class AxisBar:
    """Bar spanning the full cell along `axis` with a rectangular cross-section.

    `half_widths` holds one value per remaining coordinate (in increasing axis
    order); `center` positions the cross-section (defaults to the cell center).
    Periodic continuation makes the end faces solid-solid, so only the lateral
    surface contributes to the fluid-solid interface.
    """

    axis: int
    half_widths: tuple
    center: Optional[tuple] = None

    def cross_axes(self, dim):
        return [k for k in range(dim) if k != self.axis]

    def centre(self, dim):
        cross = self.cross_axes(dim)
        if self.center is None:
            return {k: 0.5 for k in cross}
        return dict(zip(cross, np.asarray(self.center, float)))

    def widths(self, dim):
        hw = np.atleast_1d(np.asarray(self.half_widths, float))
        cross = self.cross_axes(dim)
        if hw.size != len(cross):
            raise GeometryError(f"axis bar needs {len(cross)} half-widths, got {hw.size}")
        return dict(zip(cross, hw))

    def contains(self, pts):
        dim = pts.shape[1]
        c, w = self.centre(dim), self.widths(dim)
        ok = np.ones(len(pts), dtype=bool)
        for k in self.cross_axes(dim):
            ok &= np.abs(pts[:, k] - c[k]) <= w[k]
        return ok

    def bounds(self, dim):
        c, w = self.centre(dim), self.widths(dim)
        lo, hi = np.zeros(dim), np.ones(dim)
        for k in self.cross_axes(dim):
            lo[k], hi[k] = c[k] - w[k], c[k] + w[k]
        return lo, hi

    def volume(self, dim):
        return float(np.prod([2 * w for w in self.widths(dim).values()]))

    def surface_area(self, dim):
        w = self.widths(dim)
        if dim == 2:
            return 2.0
        wa, wb = [w[k] for k in self.cross_axes(dim)]
        return 4.0 * (wa + wb)

    def bottom_trace(self, dim):
        c, w = self.centre(dim), self.widths(dim)
        if self.axis == VERTICAL_AXIS:
            return float(np.prod([2 * w[k] for k in self.cross_axes(dim)]))
        if VERTICAL_AXIS in w and abs(c[VERTICAL_AXIS] - w[VERTICAL_AXIS]) <= _TOUCH_TOL:
            others = [k for k in self.cross_axes(dim) if k != VERTICAL_AXIS]
            return float(np.prod([2 * w[k] for k in others])) if others else 1.0
        return 0.0


def _boxes_separated(lo1, hi1, lo2, hi2):
    return bool(np.any(hi1 < lo2 - _TOUCH_TOL) or np.any(hi2 < lo1 - _TOUCH_TOL))


def _primitives_disjoint(p1, p2, dim):
    """Conservative pairwise separation test (touching counts as overlap)."""
    if isinstance(p1, Sphere) and isinstance(p2, Sphere):
        d = np.linalg.norm(p1.centre(dim) - p2.centre(dim))
        return d > p1.radius + p2.radius + _TOUCH_TOL
    if isinstance(p1, Sphere) or isinstance(p2, Sphere):
        sph, box = (p1, p2) if isinstance(p1, Sphere) else (p2, p1)
        lo, hi = box.bounds(dim)
        nearest = np.clip(sph.centre(dim), lo, hi)
        return np.linalg.norm(nearest - sph.centre(dim)) > sph.radius + _TOUCH_TOL
    return _boxes_separated(*p1.bounds(dim), *p2.bounds(dim))


# ---------------------------------------------------------------------------
# cell spec and voxelization


@dataclass(frozen=True)
class CellMeasures:
    fluid_fraction: float
    solid_fraction: float
    interface_area: float
    exterior_trace: float

    def __post_init__(self):
        if min(self.fluid_fraction, self.solid_fraction, self.interface_area, self.exterior_trace) < -1e-12:
            raise GeometryError("cell measures must be nonnegative")
        if abs(self.fluid_fraction + self.solid_fraction - 1.0) > 1e-9:
            raise GeometryError("fluid and solid fractions must sum to 1")


@dataclass(frozen=True)
class CellSpec:
    dimension: int
    solid_primitives: tuple = ()
    label: str = ""
    measures: Optional[CellMeasures] = None  # explicit override for unions without closed form

    def __post_init__(self):
        if self.dimension not in (2, 3):
            raise GeometryError("cell dimension must be 2 or 3")
        object.__setattr__(self, "solid_primitives", tuple(self.solid_primitives))

    def analytic_measures(self):
        """Closed-form measures; requires pairwise disjoint primitives unless overridden."""
        if self.measures is not None:
            return self.measures
        d = self.dimension
        prims = self.solid_primitives
        for p in prims:
            lo, hi = p.bounds(d)
            if np.any(lo < -_TOUCH_TOL) or np.any(hi > 1 + _TOUCH_TOL):
                raise GeometryError(f"primitive {p} exceeds the unit cell")
        for i in range(len(prims)):
            for j in range(i + 1, len(prims)):
                if not _primitives_disjoint(prims[i], prims[j], d):
                    raise GeometryError(
                        "analytic measures unavailable for overlapping primitives; "
                        "supply measures explicitly"
                    )
        vol = sum(p.volume(d) for p in prims)
        if vol >= 1.0:
            raise GeometryError("solid primitives fill the whole cell")
        return CellMeasures(
            fluid_fraction=1.0 - vol,
            solid_fraction=vol,
            interface_area=sum(p.surface_area(d) for p in prims),
            exterior_trace=sum(p.bottom_trace(d) for p in prims),
        )


@dataclass
class CellGeometry:
    """Voxelized periodic unit cell with analytic and counted measures."""

    spec: CellSpec
    resolution: int
    solid: np.ndarray  # boolean, shape (n,)*d
    measures: CellMeasures  # analytic (or explicitly supplied)
    measures_voxel: CellMeasures
    disconnected: bool
    gamma_weight: float  # per-face weight so counted interface area matches the analytic one

    @property
    def dimension(self):
        return self.solid.ndim

    @property
    def h(self):
        return 1.0 / self.resolution

    @property
    def fluid(self):
        return ~self.solid

    def phase_mask(self, phase):
        if phase not in ("fluid", "solid"):
            raise GeometryError(f"unknown phase {phase!r}")
        return self.fluid if phase == "fluid" else self.solid

    def phase_volume(self, phase, analytic=True):
        m = self.measures if analytic else self.measures_voxel
        return m.fluid_fraction if phase == "fluid" else m.solid_fraction

    def voxel_centers(self):
        n, d = self.resolution, self.dimension
        c = (np.arange(n) + 0.5) / n
        grids = np.meshgrid(*([c] * d), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def interface_face_count(self):
        count = 0
        for ax in range(self.dimension):
            count += int(np.count_nonzero(self.solid & np.roll(self.fluid, -1, axis=ax)))
            count += int(np.count_nonzero(self.solid & np.roll(self.fluid, 1, axis=ax)))
        return count


def build_unit_cell(spec: CellSpec, resolution: int) -> CellGeometry:
    """Voxelize a cell spec; midpoint membership decides the phase of each voxel."""
    if resolution < 8:
        raise GeometryError("resolution must be at least 8")
    n, d = resolution, spec.dimension
    analytic = spec.analytic_measures()

    geom_tmp = np.zeros((n,) * d, dtype=bool)
    c = (np.arange(n) + 0.5) / n
    grids = np.meshgrid(*([c] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    solid_flat = np.zeros(len(pts), dtype=bool)
    for p in spec.solid_primitives:
        solid_flat |= p.contains(pts)
    solid = solid_flat.reshape((n,) * d)
    del geom_tmp

    h = 1.0 / n
    n_solid = int(solid.sum())
    faces = 0
    for ax in range(d):
        faces += int(np.count_nonzero(solid & np.roll(~solid, -1, axis=ax)))
        faces += int(np.count_nonzero(solid & np.roll(~solid, 1, axis=ax)))
    gamma_vox = faces * h ** (d - 1)
    bottom = solid[(slice(None),) * VERTICAL_AXIS + (0,)]
    trace_vox = int(np.count_nonzero(bottom)) * h ** (d - 1)
    measures_voxel = CellMeasures(
        fluid_fraction=1.0 - n_solid * h**d,
        solid_fraction=n_solid * h**d,
        interface_area=gamma_vox,
        exterior_trace=trace_vox,
    )

    on_face = False
    for ax in range(d):
        sl_lo = (slice(None),) * ax + (0,)
        sl_hi = (slice(None),) * ax + (n - 1,)
        on_face = on_face or bool(solid[sl_lo].any()) or bool(solid[sl_hi].any())

    return CellGeometry(
        spec=spec,
        resolution=n,
        solid=solid,
        measures=analytic,
        measures_voxel=measures_voxel,
        disconnected=not on_face,
        gamma_weight=(analytic.interface_area / gamma_vox) if gamma_vox > 0 else 1.0,
    )


# ---------------------------------------------------------------------------
# macro grid


@dataclass
class MacroGrid:
    """Structured rectangle [0,L1]x[0,H]; the interface sits on the face row at height h.

    Cells are indexed row-major, id = j*nx + i, with j counting rows upward.
    All rows below the interface are porous, all rows above are free fluid.
    """

    length: float
    height: float
    interface_height: float
    nx: int
    ny: int

    def __post_init__(self):
        if not (0 < self.interface_height < self.height):
            raise GeometryError("interface height must satisfy 0 < h < H")
        if self.nx < 1 or self.ny < 2:
            raise GeometryError("grid needs nx >= 1 and ny >= 2")
        ratio = self.interface_height / self.dy
        if abs(ratio - round(ratio)) > 1e-9:
            raise GeometryError(
                f"interface misaligned: h={self.interface_height} does not lie on a "
                f"face row for ny={self.ny}"
            )
        self.j_sigma = int(round(ratio))
        if not (0 < self.j_sigma < self.ny):
            raise GeometryError("interface must leave at least one cell row on each side")

    @property
    def dx(self):
        return self.length / self.nx

    @property
    def dy(self):
        return self.height / self.ny

    @property
    def n_cells(self):
        return self.nx * self.ny

    @property
    def cell_volume(self):
        return self.dx * self.dy

    @property
    def sigma_length(self):
        return self.length

    def cell_id(self, i, j):
        return j * self.nx + i

    def cell_centers(self):
        x = (np.arange(self.nx) + 0.5) * self.dx
        y = (np.arange(self.ny) + 0.5) * self.dy
        X, Y = np.meshgrid(x, y)  # shape (ny, nx)
        return X.ravel(), Y.ravel()

    def porous_mask(self):
        _, y = self.cell_centers()
        return y < self.interface_height

    def porous_ids(self):
        return np.flatnonzero(self.porous_mask())

    def freefluid_ids(self):
        return np.flatnonzero(~self.porous_mask())

    def sigma_pairs(self):
        """(cell below, cell above) for every interface face."""
        jb, ja = self.j_sigma - 1, self.j_sigma
        return [(self.cell_id(i, jb), self.cell_id(i, ja)) for i in range(self.nx)]


def build_macro_grid(length, height, interface_height, nx, ny) -> MacroGrid:
    return MacroGrid(float(length), float(height), float(interface_height), int(nx), int(ny))
