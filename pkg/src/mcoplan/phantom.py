"""Synthetic 2D planning cases: voxel grid, structures, and beam layout.

A phantom spec declares the grid, a set of shapes (circles/rectangles in
grid coordinates) tagged as target / organ-at-risk / unclassified tissue,
and the beam arrangement. Rasterization resolves overlaps by priority
(target > OAR > tissue, declaration order within a class) so that every
voxel belongs to exactly one structure.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import PhantomError


class StructureKind(Enum):
    TARGET = "target"
    ORGAN_AT_RISK = "oar"
    UNCLASSIFIED_TISSUE = "tissue"


# rasterization priority: lower value claims voxels first
_PRIORITY = {
    StructureKind.TARGET: 0,
    StructureKind.ORGAN_AT_RISK: 1,
    StructureKind.UNCLASSIFIED_TISSUE: 2,
}


@dataclass(frozen=True)
class VoxelGrid:
    """Regular 2D grid of square voxels.

    ``origin`` is the physical (x, y) position in mm of the center of
    voxel (0, 0). Flat voxel index is ``iy * nx + ix``.
    """

    nx: int
    ny: int
    voxel_size_mm: float = 3.0
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise PhantomError(f"grid must be at least 1x1, got {self.nx}x{self.ny}")
        if self.voxel_size_mm <= 0:
            raise PhantomError(f"voxel size must be positive, got {self.voxel_size_mm}")

    @property
    def n_voxels(self) -> int:
        return self.nx * self.ny

    def centers_mm(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical (x, y) coordinates of every voxel center, flat order."""
        ix = np.arange(self.nx)
        iy = np.arange(self.ny)
        xs = self.origin[0] + ix * self.voxel_size_mm
        ys = self.origin[1] + iy * self.voxel_size_mm
        gx, gy = np.meshgrid(xs, ys)  # shape (ny, nx)
        return gx.ravel(), gy.ravel()

    def center_mm(self) -> tuple[float, float]:
        """Physical coordinates of the grid center."""
        return (
            self.origin[0] + (self.nx - 1) * self.voxel_size_mm / 2.0,
            self.origin[1] + (self.ny - 1) * self.voxel_size_mm / 2.0,
        )


@dataclass(frozen=True)
class Structure:
    """A contoured region: a named set of voxel indices."""

    name: str
    kind: StructureKind
    voxel_indices: np.ndarray
    prescription_gy: float | None = None

    def __post_init__(self):
        if self.voxel_indices.size == 0:
            raise PhantomError(f"empty structure: {self.name!r}")
        if self.kind is StructureKind.TARGET:
            if self.prescription_gy is None or self.prescription_gy <= 0:
                raise PhantomError(f"target {self.name!r} needs prescription_gy > 0")
        elif self.prescription_gy is not None:
            raise PhantomError(f"non-target {self.name!r} must not carry a prescription")

    @property
    def size(self) -> int:
        return int(self.voxel_indices.size)


@dataclass(frozen=True)
class Beam:
    """One parallel beam: gantry angle plus a row of beamlets.

    Gantry angle 0 points the beam along -y (entering from the top edge),
    increasing clockwise. Beamlets are spaced ``beamlet_width_mm`` apart
    along the axis perpendicular to the beam, centered on the grid center.
    """

    gantry_angle_deg: float
    beamlet_width_mm: float = 5.0
    n_beamlets: int = 20

    def __post_init__(self):
        if not 0.0 <= self.gantry_angle_deg < 360.0:
            raise PhantomError(f"gantry angle must be in [0, 360), got {self.gantry_angle_deg}")
        if self.beamlet_width_mm <= 0:
            raise PhantomError("beamlet width must be positive")
        if self.n_beamlets < 1:
            raise PhantomError("need at least one beamlet per beam")

    def direction(self) -> np.ndarray:
        """Unit propagation direction in (x, y)."""
        rad = math.radians(self.gantry_angle_deg)
        return np.array([math.sin(rad), -math.cos(rad)])

    def lateral_axis(self) -> np.ndarray:
        """Unit axis along which beamlets are stacked."""
        rad = math.radians(self.gantry_angle_deg)
        return np.array([math.cos(rad), math.sin(rad)])

    def beamlet_offsets_mm(self) -> np.ndarray:
        """Signed lateral offset of each beamlet axis from the beam axis."""
        slots = np.arange(self.n_beamlets, dtype=float)
        return (slots - (self.n_beamlets - 1) / 2.0) * self.beamlet_width_mm


@dataclass(frozen=True)
class ShapeSpec:
    """Circle or rectangle in grid coordinates (voxel units)."""

    type: str  # "circle" | "rect"
    center: tuple[float, float] | None = None
    radius: float | None = None
    lo: tuple[float, float] | None = None
    hi: tuple[float, float] | None = None

    def validate(self, grid: VoxelGrid, name: str) -> None:
        if self.type == "circle":
            if self.center is None or self.radius is None:
                raise PhantomError(f"circle {name!r} needs center and radius")
            if self.radius <= 0:
                raise PhantomError(f"empty structure: circle {name!r} has radius {self.radius}")
            cx, cy = self.center
            if not (0 <= cx <= grid.nx - 1 and 0 <= cy <= grid.ny - 1):
                raise PhantomError(f"circle {name!r} center outside grid")
            if (cx - self.radius < -0.5 or cx + self.radius > grid.nx - 0.5
                    or cy - self.radius < -0.5 or cy + self.radius > grid.ny - 0.5):
                raise PhantomError(f"circle {name!r} extends outside grid")
        elif self.type == "rect":
            if self.lo is None or self.hi is None:
                raise PhantomError(f"rect {name!r} needs lo and hi corners")
            if not (self.lo[0] <= self.hi[0] and self.lo[1] <= self.hi[1]):
                raise PhantomError(f"rect {name!r} has inverted corners")
            if self.lo[0] < 0 or self.lo[1] < 0 or self.hi[0] > grid.nx - 1 or self.hi[1] > grid.ny - 1:
                raise PhantomError(f"rect {name!r} extends outside grid")
        else:
            raise PhantomError(f"unknown shape type {self.type!r} for {name!r}")

    def rasterize(self, grid: VoxelGrid) -> np.ndarray:
        """Flat indices of voxels whose centers fall inside the shape."""
        ix, iy = np.meshgrid(np.arange(grid.nx), np.arange(grid.ny))
        if self.type == "circle":
            cx, cy = self.center
            inside = (ix - cx) ** 2 + (iy - cy) ** 2 <= self.radius**2
        else:
            inside = ((ix >= self.lo[0]) & (ix <= self.hi[0])
                      & (iy >= self.lo[1]) & (iy <= self.hi[1]))
        return np.flatnonzero(inside.ravel())


@dataclass(frozen=True)
class StructureSpec:
    name: str
    kind: StructureKind
    shape: ShapeSpec
    prescription_gy: float | None = None


@dataclass(frozen=True)
class PencilBeamParams:
    """Parameters of the 2D pencil-beam dose model.

    Exponential depth attenuation with Gaussian lateral penumbra,
    truncated at ``cutoff_sigma`` standard deviations. Entries below
    ``drop_rel`` times the per-beamlet maximum are stored as zeros.
    """

    mu_per_mm: float = 0.005
    sigma_mm: float = 3.0
    cutoff_sigma: float = 3.0
    drop_rel: float = 1e-4

    def __post_init__(self):
        if min(self.mu_per_mm, self.sigma_mm, self.cutoff_sigma) <= 0:
            raise PhantomError("pencil beam parameters must be positive")
        if self.drop_rel < 0:
            raise PhantomError("drop threshold must be nonnegative")


@dataclass(frozen=True)
class PhantomSpec:
    """Declarative description of a synthetic case."""

    name: str
    grid: VoxelGrid
    structures: tuple[StructureSpec, ...]
    beams: tuple[Beam, ...]
    model: PencilBeamParams = field(default_factory=PencilBeamParams)

    def __post_init__(self):
        kinds = {s.kind for s in self.structures}
        if StructureKind.TARGET not in kinds:
            raise PhantomError("phantom spec needs at least one target")
        if StructureKind.ORGAN_AT_RISK not in kinds:
            raise PhantomError("phantom spec needs at least one organ at risk")
        if not self.beams:
            raise PhantomError("phantom spec needs at least one beam")
        names = [s.name for s in self.structures]
        if len(names) != len(set(names)):
            raise PhantomError("structure names must be unique")


def build_phantom(spec: PhantomSpec) -> tuple[VoxelGrid, list[Structure]]:
    """Rasterize the spec's shapes into a disjoint structure partition.

    Overlaps are resolved by priority (target > OAR > tissue), ties by
    declaration order. Voxels not covered by any declared shape are
    collected into an implicit ``unclassified`` tissue structure so the
    result always partitions the grid.
    """
    grid = spec.grid
    for sspec in spec.structures:
        sspec.shape.validate(grid, sspec.name)

    order = sorted(
        range(len(spec.structures)),
        key=lambda i: (_PRIORITY[spec.structures[i].kind], i),
    )
    owner = np.full(grid.n_voxels, -1, dtype=np.int64)
    for i in order:
        raw = spec.structures[i].shape.rasterize(grid)
        if raw.size == 0:
            raise PhantomError(f"empty structure: {spec.structures[i].name!r} rasterizes to no voxels")
        free = raw[owner[raw] < 0]
        owner[free] = i

    structures: list[Structure] = []
    for i, sspec in enumerate(spec.structures):
        idx = np.flatnonzero(owner == i)
        if idx.size == 0:
            raise PhantomError(
                f"structure {sspec.name!r} is fully covered by higher-priority structures"
            )
        structures.append(
            Structure(sspec.name, sspec.kind, idx, prescription_gy=sspec.prescription_gy)
        )

    leftover = np.flatnonzero(owner < 0)
    if leftover.size:
        if any(s.name == "unclassified" for s in structures):
            raise PhantomError("voxels left unassigned but name 'unclassified' is taken")
        structures.append(Structure("unclassified", StructureKind.UNCLASSIFIED_TISSUE, leftover))
    return grid, structures


def count_beam_sets(n_angles: int, k: int) -> int:
    """Number of k-element beam angle subsets out of n_angles candidates."""
    if n_angles < 0 or k < 0 or k > n_angles:
        raise ValueError(f"need 0 <= k <= n_angles, got k={k}, n_angles={n_angles}")
    return math.comb(n_angles, k)


def equally_spaced_beams(n_beams: int, beamlet_width_mm: float = 5.0,
                         n_beamlets: int = 20) -> tuple[Beam, ...]:
    """Coplanar beams on a uniform angular grid starting at 0 degrees."""
    if n_beams < 1:
        raise PhantomError("need at least one beam")
    step = 360.0 / n_beams
    return tuple(
        Beam(i * step, beamlet_width_mm=beamlet_width_mm, n_beamlets=n_beamlets)
        for i in range(n_beams)
    )


def _shape_from_dict(d: dict) -> ShapeSpec:
    t = d.get("type")
    if t == "circle":
        return ShapeSpec("circle", center=tuple(d["center"]), radius=float(d["radius"]))
    if t == "rect":
        return ShapeSpec("rect", lo=tuple(d["lo"]), hi=tuple(d["hi"]))
    raise PhantomError(f"unknown shape type {t!r}")


_KIND_ALIASES = {
    "target": StructureKind.TARGET,
    "oar": StructureKind.ORGAN_AT_RISK,
    "organatrisk": StructureKind.ORGAN_AT_RISK,
    "tissue": StructureKind.UNCLASSIFIED_TISSUE,
    "unclassifiedtissue": StructureKind.UNCLASSIFIED_TISSUE,
}


def phantom_spec_from_dict(doc: dict) -> PhantomSpec:
    """Parse the phantom section of a case JSON document."""
    try:
        g = doc["grid"]
        grid = VoxelGrid(
            nx=int(g["nx"]), ny=int(g["ny"]),
            voxel_size_mm=float(g.get("voxel_size_mm", 3.0)),
            origin=tuple(g.get("origin", (0.0, 0.0))),
        )
        structures = []
        for s in doc["structures"]:
            kind_key = str(s["kind"]).replace("_", "").lower()
            if kind_key not in _KIND_ALIASES:
                raise PhantomError(f"unknown structure kind {s['kind']!r}")
            structures.append(StructureSpec(
                name=str(s["name"]),
                kind=_KIND_ALIASES[kind_key],
                shape=_shape_from_dict(s["shape"]),
                prescription_gy=(float(s["prescription_gy"]) if "prescription_gy" in s and s["prescription_gy"] is not None else None),
            ))
        b = doc["beams"]
        if isinstance(b, list):
            beams = tuple(
                Beam(float(e["gantry_angle_deg"]),
                     beamlet_width_mm=float(e.get("beamlet_width_mm", 5.0)),
                     n_beamlets=int(e.get("n_beamlets", 20)))
                for e in b
            )
        else:
            beams = equally_spaced_beams(
                int(b.get("n_beams", 36)),
                beamlet_width_mm=float(b.get("beamlet_width_mm", 5.0)),
                n_beamlets=int(b.get("n_beamlets", 20)),
            )
        m = doc.get("model", {})
        model = PencilBeamParams(
            mu_per_mm=float(m.get("mu_per_mm", 0.005)),
            sigma_mm=float(m.get("sigma_mm", 3.0)),
            cutoff_sigma=float(m.get("cutoff_sigma", 3.0)),
            drop_rel=float(m.get("drop_rel", 1e-4)),
        )
    except KeyError as e:
        raise PhantomError(f"phantom spec missing field {e.args[0]!r}") from e
    return PhantomSpec(
        name=str(doc.get("name", "case")),
        grid=grid, structures=tuple(structures), beams=beams, model=model,
    )


def load_phantom_spec(path: str | Path) -> PhantomSpec:
    with open(path, encoding="utf-8") as f:
        return phantom_spec_from_dict(json.load(f))
