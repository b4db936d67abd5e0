"""Dose-influence matrix: sparse beamlet-intensity -> voxel-dose mapping.

Columns are beamlets (grouped by beam), rows are voxels. Entries come
from a 2D pencil-beam model: exponential depth attenuation along the
beam direction times a truncated Gaussian lateral penumbra. Beamlets
that deposit nothing inside the grid are dropped at build time and
recorded, so the intensity vector carries no dead variables.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import PhantomError
from .phantom import Beam, PencilBeamParams, VoxelGrid

_MAGIC = b"DINF"
_VERSION = 1


@dataclass(frozen=True)
class DoseInfluenceMatrix:
    """Immutable sparse dose-influence matrix with per-beam column ranges."""

    matrix: sp.csc_matrix
    beam_offsets: np.ndarray  # (n_beams + 1,) column ranges per beam
    beam_angles: np.ndarray  # (n_beams,) gantry angles in degrees
    col_beam: np.ndarray  # (n_cols,) beam index of each kept column
    col_slot: np.ndarray  # (n_cols,) beamlet slot within its beam
    dropped: tuple[tuple[int, int], ...] = ()  # (beam, slot) of removed beamlets

    def __post_init__(self):
        if self.matrix.nnz and self.matrix.data.min() < 0:
            raise PhantomError("dose-influence entries must be nonnegative")
        if self.beam_offsets[-1] != self.matrix.shape[1]:
            raise PhantomError("beam offsets must partition the columns")

    @property
    def n_voxels(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_beamlets_total(self) -> int:
        return self.matrix.shape[1]

    @property
    def n_beams(self) -> int:
        return len(self.beam_angles)

    def dose(self, x: np.ndarray) -> np.ndarray:
        """d = Dx for an intensity vector x."""
        return self.matrix @ x

    def columns_of_beam(self, beam: int) -> slice:
        return slice(int(self.beam_offsets[beam]), int(self.beam_offsets[beam + 1]))

    @classmethod
    def from_dense(cls, dense: np.ndarray, col_beam: np.ndarray | None = None,
                   angles: np.ndarray | None = None) -> "DoseInfluenceMatrix":
        """Wrap a small dense array; each column its own beam by default."""
        dense = np.asarray(dense, dtype=float)
        n_cols = dense.shape[1]
        if col_beam is None:
            col_beam = np.arange(n_cols)
        col_beam = np.asarray(col_beam)
        n_beams = int(col_beam.max()) + 1 if n_cols else 0
        if angles is None:
            angles = np.linspace(0.0, 360.0, n_beams, endpoint=False)
        offsets = np.zeros(n_beams + 1, dtype=np.int64)
        for b in col_beam:
            offsets[b + 1] += 1
        offsets = np.cumsum(offsets)
        slot = np.zeros(n_cols, dtype=np.int64)
        seen: dict[int, int] = {}
        for j, b in enumerate(col_beam):
            slot[j] = seen.get(int(b), 0)
            seen[int(b)] = slot[j] + 1
        return cls(
            matrix=sp.csc_matrix(dense),
            beam_offsets=offsets,
            beam_angles=np.asarray(angles, dtype=float),
            col_beam=col_beam.astype(np.int64),
            col_slot=slot,
        )

    def save(self, path: str | Path) -> None:
        """Write the versioned binary format (bit-exact round trip)."""
        m = self.matrix
        with open(path, "wb") as f:
            f.write(_MAGIC)
            f.write(struct.pack("<I", _VERSION))
            f.write(struct.pack("<QQQQ", m.shape[0], m.shape[1], m.nnz, self.n_beams))
            self.beam_angles.astype("<f8").tofile(f)
            self.beam_offsets.astype("<u8").tofile(f)
            self.col_beam.astype("<u4").tofile(f)
            self.col_slot.astype("<u4").tofile(f)
            f.write(struct.pack("<Q", len(self.dropped)))
            if self.dropped:
                np.array(self.dropped, dtype="<u4").tofile(f)
            m.indptr.astype("<u8").tofile(f)
            m.indices.astype("<u8").tofile(f)
            m.data.astype("<f8").tofile(f)

    @classmethod
    def load(cls, path: str | Path) -> "DoseInfluenceMatrix":
        with open(path, "rb") as f:
            magic = f.read(4)
            if magic != _MAGIC:
                raise PhantomError(f"not a dose-influence file: bad magic {magic!r}")
            (version,) = struct.unpack("<I", f.read(4))
            if version != _VERSION:
                raise PhantomError(f"unsupported dose-influence format version {version}")
            n_voxels, n_cols, nnz, n_beams = struct.unpack("<QQQQ", f.read(32))
            angles = np.fromfile(f, dtype="<f8", count=n_beams)
            offsets = np.fromfile(f, dtype="<u8", count=n_beams + 1).astype(np.int64)
            col_beam = np.fromfile(f, dtype="<u4", count=n_cols).astype(np.int64)
            col_slot = np.fromfile(f, dtype="<u4", count=n_cols).astype(np.int64)
            (n_dropped,) = struct.unpack("<Q", f.read(8))
            dropped_arr = np.fromfile(f, dtype="<u4", count=2 * n_dropped).reshape(-1, 2)
            indptr = np.fromfile(f, dtype="<u8", count=n_cols + 1).astype(np.int64)
            indices = np.fromfile(f, dtype="<u8", count=nnz).astype(np.int64)
            data = np.fromfile(f, dtype="<f8", count=nnz)
        matrix = sp.csc_matrix((data, indices, indptr), shape=(n_voxels, n_cols))
        return cls(
            matrix=matrix,
            beam_offsets=offsets,
            beam_angles=angles,
            col_beam=col_beam,
            col_slot=col_slot,
            dropped=tuple((int(b), int(s)) for b, s in dropped_arr),
        )


def compute_dose_influence(grid: VoxelGrid, beams: tuple[Beam, ...] | list[Beam],
                           model: PencilBeamParams) -> DoseInfluenceMatrix:
    """Build the sparse dose-influence matrix for a set of parallel beams.

    Entry (v, b) = exp(-mu * depth) * exp(-lateral^2 / (2 sigma^2)),
    with depth measured from the beam's entry plane (through the most
    upstream voxel center) and the lateral term truncated at
    ``cutoff_sigma * sigma`` from the beamlet axis. Entries below
    ``drop_rel`` of the per-beamlet maximum become structural zeros.
    """
    if not beams:
        raise PhantomError("need at least one beam")
    gx, gy = grid.centers_mm()
    cx, cy = grid.center_mm()
    px, py = gx - cx, gy - cy

    cutoff = model.cutoff_sigma * model.sigma_mm
    two_sigma_sq = 2.0 * model.sigma_mm**2

    col_rows: list[np.ndarray] = []
    col_vals: list[np.ndarray] = []
    col_beam: list[int] = []
    col_slot: list[int] = []
    dropped: list[tuple[int, int]] = []
    beam_counts = np.zeros(len(beams), dtype=np.int64)

    for bi, beam in enumerate(beams):
        dvec = beam.direction()
        lvec = beam.lateral_axis()
        s = px * dvec[0] + py * dvec[1]
        depth = s - s.min()
        t = px * lvec[0] + py * lvec[1]
        att = np.exp(-model.mu_per_mm * depth)
        for slot, tb in enumerate(beam.beamlet_offsets_mm()):
            lat = np.abs(t - tb)
            mask = lat <= cutoff
            if not mask.any():
                dropped.append((bi, slot))
                continue
            vals = att[mask] * np.exp(-(lat[mask] ** 2) / two_sigma_sq)
            peak = vals.max()
            keep = vals >= peak * model.drop_rel
            if peak <= 0.0 or not keep.any():
                dropped.append((bi, slot))
                continue
            rows = np.flatnonzero(mask)[keep]
            col_rows.append(rows)
            col_vals.append(vals[keep])
            col_beam.append(bi)
            col_slot.append(slot)
            beam_counts[bi] += 1

    n_cols = len(col_rows)
    if n_cols == 0:
        raise PhantomError("every beamlet missed the grid; check beam geometry")
    indptr = np.zeros(n_cols + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([r.size for r in col_rows])
    indices = np.concatenate(col_rows)
    data = np.concatenate(col_vals)
    matrix = sp.csc_matrix((data, indices, indptr), shape=(grid.n_voxels, n_cols))

    offsets = np.zeros(len(beams) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(beam_counts)
    return DoseInfluenceMatrix(
        matrix=matrix,
        beam_offsets=offsets,
        beam_angles=np.array([b.gantry_angle_deg for b in beams], dtype=float),
        col_beam=np.array(col_beam, dtype=np.int64),
        col_slot=np.array(col_slot, dtype=np.int64),
        dropped=tuple(dropped),
    )
