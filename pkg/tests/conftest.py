import json
from pathlib import Path

import numpy as np
import pytest

from mcoplan.dinf import DoseInfluenceMatrix, compute_dose_influence
from mcoplan.mco import build_pareto_surface
from mcoplan.metrics import ObjectiveKind, ObjectiveSpec
from mcoplan.phantom import Structure, StructureKind, build_phantom
from mcoplan.solver import SolverOptions
from mcoplan.store import parse_case_document

CASE_FILE = Path(__file__).resolve().parents[1] / "cases" / "demo_case.json"


def make_toy():
    """1-beamlet, 2-voxel case whose objectives trace f1 = x^2 and
    f2 = (1 - x)^2; the Pareto front is f2 = (1 - sqrt(f1))^2."""
    dinf = DoseInfluenceMatrix.from_dense(np.array([[1.0], [1.0]]))
    structures = {
        "a": Structure("a", StructureKind.ORGAN_AT_RISK, np.array([0])),
        "b": Structure("b", StructureKind.TARGET, np.array([1]), prescription_gy=1.0),
    }
    f1 = ObjectiveSpec("f1", "a", ObjectiveKind.QUADRATIC_DEVIATION, reference_gy=0.0)
    f2 = ObjectiveSpec("f2", "b", ObjectiveKind.QUADRATIC_DEVIATION, reference_gy=1.0)
    return dinf, structures, [f1, f2]


@pytest.fixture(scope="session")
def toy():
    return make_toy()


@pytest.fixture(scope="session")
def demo_doc():
    with open(CASE_FILE, encoding="utf-8") as f:
        return json.load(f)


@pytest.fixture(scope="session")
def demo_case(demo_doc):
    """The bundled phantom case, fully assembled (no disk)."""
    spec, objectives, constraints, opts = parse_case_document(demo_doc)
    grid, structures = build_phantom(spec)
    dinf = compute_dose_influence(grid, spec.beams, spec.model)
    return {
        "doc": demo_doc,
        "spec": spec,
        "grid": grid,
        "structures": {s.name: s for s in structures},
        "dinf": dinf,
        "objectives": objectives,
        "constraints": constraints,
        "opts": opts,
    }


@pytest.fixture(scope="session")
def demo_surface(demo_case):
    """A built Pareto surface over the bundled case (shared; treat as
    immutable)."""
    return build_pareto_surface(
        demo_case["objectives"], demo_case["constraints"], demo_case["dinf"],
        demo_case["structures"], budget=10, target_gap=0.02,
        opts=demo_case["opts"],
    )


@pytest.fixture(scope="session")
def toy_options():
    return SolverOptions(max_iters=6000)
