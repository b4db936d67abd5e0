import numpy as np
import pytest

from mcoplan.errors import PhantomError
from mcoplan.phantom import (
    Beam,
    PhantomSpec,
    ShapeSpec,
    Structure,
    StructureKind,
    StructureSpec,
    VoxelGrid,
    build_phantom,
    count_beam_sets,
    equally_spaced_beams,
    phantom_spec_from_dict,
)


def spec_with(structures, nx=20, ny=20):
    return PhantomSpec(
        name="t", grid=VoxelGrid(nx=nx, ny=ny, voxel_size_mm=3.0),
        structures=tuple(structures),
        beams=equally_spaced_beams(4, n_beamlets=8),
    )


def circle(name, kind, cx, cy, r, presc=None):
    return StructureSpec(name, kind, ShapeSpec("circle", center=(cx, cy), radius=r),
                         prescription_gy=presc)


def rect(name, kind, lo, hi, presc=None):
    return StructureSpec(name, kind, ShapeSpec("rect", lo=lo, hi=hi),
                         prescription_gy=presc)


class TestGridAndTypes:
    def test_grid_validation(self):
        with pytest.raises(PhantomError):
            VoxelGrid(nx=0, ny=5)
        with pytest.raises(PhantomError):
            VoxelGrid(nx=5, ny=5, voxel_size_mm=-1.0)

    def test_structure_requires_voxels_and_prescription(self):
        with pytest.raises(PhantomError, match="empty"):
            Structure("s", StructureKind.TARGET, np.array([], dtype=int), prescription_gy=60)
        with pytest.raises(PhantomError):
            Structure("s", StructureKind.TARGET, np.array([1]))  # no prescription
        with pytest.raises(PhantomError):
            Structure("s", StructureKind.ORGAN_AT_RISK, np.array([1]), prescription_gy=10)

    def test_beam_validation(self):
        with pytest.raises(PhantomError):
            Beam(gantry_angle_deg=360.0)
        with pytest.raises(PhantomError):
            Beam(gantry_angle_deg=0.0, n_beamlets=0)

    def test_beamlet_offsets_centered(self):
        b = Beam(0.0, beamlet_width_mm=5.0, n_beamlets=4)
        offsets = b.beamlet_offsets_mm()
        assert np.allclose(offsets, [-7.5, -2.5, 2.5, 7.5])
        assert offsets.sum() == pytest.approx(0.0)


class TestBuildPhantom:
    def test_zero_radius_circle_is_empty_structure(self):
        structures = [
            circle("t", StructureKind.TARGET, 10, 10, 0.0, presc=60),
            circle("o", StructureKind.ORGAN_AT_RISK, 5, 5, 2),
        ]
        with pytest.raises(PhantomError, match="empty"):
            build_phantom(spec_with(structures))

    def test_full_grid_tissue_gets_remainder(self):
        structures = [
            circle("t", StructureKind.TARGET, 10, 10, 3, presc=60),
            circle("o", StructureKind.ORGAN_AT_RISK, 4, 4, 2),
            rect("body", StructureKind.UNCLASSIFIED_TISSUE, (0, 0), (19, 19)),
        ]
        grid, built = build_phantom(spec_with(structures))
        sizes = {s.name: s.size for s in built}
        assert sizes["body"] == 20 * 20 - sizes["t"] - sizes["o"]
        covered = np.concatenate([s.voxel_indices for s in built])
        assert len(covered) == grid.n_voxels
        assert len(np.unique(covered)) == grid.n_voxels

    def test_circle_rasterization_matches_pointwise_oracle(self):
        # independent oracle: pure-python point-in-circle test per voxel center
        structures = [
            circle("t", StructureKind.TARGET, 9.5, 9.5, 3.0, presc=60),
            circle("o", StructureKind.ORGAN_AT_RISK, 3, 3, 1.5),
        ]
        grid, built = build_phantom(spec_with(structures))
        expected = set()
        for iy in range(20):
            for ix in range(20):
                if (ix - 9.5) ** 2 + (iy - 9.5) ** 2 <= 3.0**2:
                    expected.add(iy * 20 + ix)
        target = next(s for s in built if s.name == "t")
        assert set(target.voxel_indices.tolist()) == expected

    def test_priority_target_beats_oar(self):
        structures = [
            circle("o", StructureKind.ORGAN_AT_RISK, 10, 10, 5),
            circle("t", StructureKind.TARGET, 10, 10, 2, presc=60),
        ]
        grid, built = build_phantom(spec_with(structures))
        t = next(s for s in built if s.name == "t")
        o = next(s for s in built if s.name == "o")
        assert not set(t.voxel_indices) & set(o.voxel_indices)
        # the OAR keeps only the annulus
        assert o.size < np.pi * 5**2 + 10

    def test_fully_covered_structure_rejected(self):
        structures = [
            circle("t", StructureKind.TARGET, 10, 10, 5, presc=60),
            circle("o", StructureKind.ORGAN_AT_RISK, 10, 10, 2),  # inside target
        ]
        with pytest.raises(PhantomError, match="covered"):
            build_phantom(spec_with(structures))

    def test_shape_outside_grid_rejected(self):
        structures = [
            circle("t", StructureKind.TARGET, 1, 1, 5, presc=60),
            circle("o", StructureKind.ORGAN_AT_RISK, 10, 10, 2),
        ]
        with pytest.raises(PhantomError, match="outside"):
            build_phantom(spec_with(structures))

    def test_needs_target_and_oar(self):
        with pytest.raises(PhantomError):
            spec_with([circle("t", StructureKind.TARGET, 10, 10, 3, presc=60)])


class TestCountBeamSets:
    def test_paper_bao_grid(self):
        # 10-degree coplanar grid, 7-beam plans
        assert count_beam_sets(36, 7) == 8_347_680

    def test_choose_zero(self):
        assert count_beam_sets(17, 0) == 1

    def test_small_value_matches_enumeration(self):
        from itertools import combinations

        assert count_beam_sets(10, 3) == sum(1 for _ in combinations(range(10), 3))

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            count_beam_sets(5, 6)
        with pytest.raises(ValueError):
            count_beam_sets(-1, 0)


def test_phantom_spec_parsing_roundtrip():
    doc = {
        "name": "parse-test",
        "grid": {"nx": 12, "ny": 10, "voxel_size_mm": 2.5},
        "structures": [
            {"name": "t", "kind": "target",
             "shape": {"type": "circle", "center": [6, 5], "radius": 2}, "prescription_gy": 50},
            {"name": "o", "kind": "oar",
             "shape": {"type": "rect", "lo": [0, 0], "hi": [2, 2]}},
        ],
        "beams": [{"gantry_angle_deg": 90.0, "n_beamlets": 5}],
        "model": {"mu_per_mm": 0.004},
    }
    spec = phantom_spec_from_dict(doc)
    assert spec.grid.nx == 12 and spec.grid.voxel_size_mm == 2.5
    assert spec.structures[0].prescription_gy == 50
    assert spec.beams[0].gantry_angle_deg == 90.0
    assert spec.model.mu_per_mm == 0.004
    with pytest.raises(PhantomError):
        phantom_spec_from_dict({"grid": {"nx": 2, "ny": 2}})
