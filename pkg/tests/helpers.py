"""Shared construction helpers for tests."""

import numpy as np

from mcoplan.dinf import compute_dose_influence
from mcoplan.mco import ParetoDatabase, Plan, Provenance, weighted_sum_point
from mcoplan.metrics import ObjectiveKind, ObjectiveSpec
from mcoplan.phantom import (
    PhantomSpec,
    ShapeSpec,
    Structure,
    StructureKind,
    StructureSpec,
    VoxelGrid,
    build_phantom,
    equally_spaced_beams,
)
from mcoplan.solver import SolverOptions


def db_from_doses(doses, n_objectives=None):
    """Synthetic database: one singleton mean-dose objective per voxel, so
    a plan's objective vector equals its dose vector."""
    doses = np.asarray(doses, dtype=float)
    n_plans, n_vox = doses.shape
    n_obj = n_objectives or n_vox
    structures = {
        f"s{j}": Structure(f"s{j}", StructureKind.ORGAN_AT_RISK, np.array([j]))
        for j in range(n_vox)
    }
    structures["t"] = Structure("t", StructureKind.TARGET, np.array([0]),
                                prescription_gy=1.0)
    objectives = [ObjectiveSpec(f"f{j}", f"s{j}", ObjectiveKind.MEAN_DOSE)
                  for j in range(n_obj)]
    db = ParetoDatabase(objectives=objectives)
    for d in doses:
        db.plans.append(Plan(x=d.copy(), d=d.copy(), fvals=d[:n_obj].copy(),
                             provenance=Provenance.WEIGHTED_SUM))
        db.generator_weights.append(np.ones(n_obj))
    return db, structures


def build_mini_case(n_beams=5, seed_reference=True):
    """5-beam miniature case, small enough for exhaustive beam-subset
    enumeration."""
    grid = VoxelGrid(nx=20, ny=20, voxel_size_mm=3.0)
    spec = PhantomSpec(
        name="mini", grid=grid,
        structures=(
            StructureSpec("t", StructureKind.TARGET,
                          ShapeSpec("circle", center=(9.5, 9.5), radius=3.0),
                          prescription_gy=50.0),
            StructureSpec("o", StructureKind.ORGAN_AT_RISK,
                          ShapeSpec("circle", center=(9.5, 3.5), radius=2.0)),
            StructureSpec("body", StructureKind.UNCLASSIFIED_TISSUE,
                          ShapeSpec("rect", lo=(0, 0), hi=(19, 19))),
        ),
        beams=equally_spaced_beams(n_beams, beamlet_width_mm=5.0, n_beamlets=8),
    )
    g, structs = build_phantom(spec)
    smap = {s.name: s for s in structs}
    dinf = compute_dose_influence(grid, spec.beams, spec.model)
    objectives = [
        ObjectiveSpec("fit", "t", ObjectiveKind.QUADRATIC_DEVIATION, reference_gy=50.0),
        ObjectiveSpec("spare", "o", ObjectiveKind.QUADRATIC_OVERDOSE, reference_gy=0.0),
    ]
    opts = SolverOptions(max_iters=4000)
    case = {"dinf": dinf, "structures": smap, "objectives": objectives, "opts": opts}
    if seed_reference:
        ref, _ = weighted_sum_point([1.0, 0.001], objectives, [], dinf, smap, opts)
        case["reference"] = ref
    return case
