"""Command-line pipeline: phantom generation, surface builds, the two
single-plan MCO modes, the navigation service, and sparsification.

Exit codes: 0 success, 1 usage error, 2 computation failure.
"""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click
import numpy as np

from .errors import McoplanError
from .mco import (
    GoalSpec,
    PriorityLevel,
    PrioritySpec,
    SlipMode,
    goal_program,
    prioritized_optimize,
)
from .metrics import dvh, dvh_rows
from .navigator import open_session
from .sparsifier import SparsifyMode, SparsifySpec, sparsify
from .store import Case, CaseStore


def _store_for(case_dir: Path) -> tuple[CaseStore, str]:
    case_dir = case_dir.resolve()
    return CaseStore(case_dir.parent), case_dir.name


def _load_case(case_dir: Path) -> tuple[CaseStore, Case]:
    store, case_id = _store_for(case_dir)
    return store, store.load_case(case_id)


def _objective_by_id(case: Case, objective_id: str):
    for o in case.objectives:
        if o.id == objective_id:
            return o
    raise McoplanError(f"case has no objective {objective_id!r}")


def _write_dvh_csv(case: Case, d: np.ndarray, path: Path) -> None:
    curves = [dvh(s, d, n_samples=64) for s in case.structures.values()]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["structure", "dose_gy", "volume_fraction"])
        writer.writerows(dvh_rows(curves))


@click.group()
def cli():
    """Multi-criteria radiotherapy planning on synthetic 2D cases."""


@cli.command("gen-phantom")
@click.argument("spec_file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("-o", "--output", "case_dir", required=True,
              type=click.Path(path_type=Path), help="Case directory to create.")
def gen_phantom(spec_file: Path, case_dir: Path):
    """Build a case (structures + dose-influence matrix) from a spec JSON."""
    with open(spec_file, encoding="utf-8") as f:
        doc = json.load(f)
    store = CaseStore(case_dir.resolve().parent)
    case_id = store.create_case(doc, case_id=case_dir.name)
    record = store.record(case_id)
    case = store.load_case(case_id)
    nnz = case.dinf.matrix.nnz
    total = record.n_voxels * record.n_beamlets
    click.echo(f"case {case_id}: {record.n_voxels} voxels x {record.n_beamlets} beamlets "
               f"({record.n_beams} beams), {nnz} nonzeros "
               f"({100.0 * nnz / total:.2f}% dense)")
    if case.dinf.dropped:
        click.echo(f"dropped {len(case.dinf.dropped)} beamlets that miss the grid")


@cli.group()
def mco():
    """Multi-criteria planning modes."""


@mco.command("build-surface")
@click.argument("case_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--budget", type=int, required=True, help="Max number of plans.")
@click.option("--gap", type=float, default=0.01, show_default=True,
              help="Target relative sandwich gap.")
def build_surface(case_dir: Path, budget: int, gap: float):
    """Compute the Pareto surface approximation and persist it."""
    store, case_id = _store_for(case_dir)
    db = store.build_surface(case_id, budget, gap)
    click.echo(f"surface ready: {db.n_plans} plans, gap estimate {db.gap_estimate:.4f}")
    click.echo("gap history: " + ", ".join(f"{g:.4f}" for g in db.gap_history))


@mco.command("goal")
@click.argument("case_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--goals", "goals_file", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="JSON list of {objective, goal_value, weight?}.")
def goal_cmd(case_dir: Path, goals_file: Path):
    """Goal programming: minimize total slack over the stated goals."""
    store, case = _load_case(case_dir)
    with open(goals_file, encoding="utf-8") as f:
        entries = json.load(f)
    goals = [
        GoalSpec(_objective_by_id(case, e["objective"]), float(e["goal_value"]),
                 weight=float(e.get("weight", 1.0)))
        for e in entries
    ]
    plan, slacks = goal_program(goals, case.constraints, case.dinf,
                                case.structures, case.solver_options)
    plan_id = store.save_plan(case.case_id, plan, label="goal")
    _write_dvh_csv(case, plan.d, case_dir / "reports" / f"{plan_id}-dvh.csv")
    for g, s in zip(goals, slacks):
        status = "met" if s <= 0 else f"missed by {s:.4g}"
        click.echo(f"goal {g.objective.id} <= {g.goal_value:.4g}: {status}")
    click.echo(f"total slack {slacks.sum():.6g}; plan saved as {plan_id}")


@mco.command("priority")
@click.argument("case_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--priorities", "priorities_file", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="JSON {levels: [{objective, slip?, slip_mode?}]}.")
def priority_cmd(case_dir: Path, priorities_file: Path):
    """Prioritized (lexicographic) optimization with slip factors."""
    store, case = _load_case(case_dir)
    with open(priorities_file, encoding="utf-8") as f:
        doc = json.load(f)
    levels = tuple(
        PriorityLevel(
            _objective_by_id(case, e["objective"]),
            slip=float(e.get("slip", 0.03)),
            slip_mode=SlipMode(e.get("slip_mode", "relative")),
        )
        for e in doc["levels"]
    )
    plan, log = prioritized_optimize(PrioritySpec(levels), case.constraints,
                                     case.dinf, case.structures, case.solver_options)
    plan_id = store.save_plan(case.case_id, plan, label="priority")
    _write_dvh_csv(case, plan.d, case_dir / "reports" / f"{plan_id}-dvh.csv")
    for rec in log:
        click.echo(f"stage {rec.objective_id}: optimum {rec.optimum:.6g}, "
                   f"cap for later stages {rec.cap:.6g}")
    click.echo(f"plan saved as {plan_id}")


@cli.command("navigate")
@click.argument("case_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--serve", is_flag=True, help="Start the HTTP service.")
@click.option("--port", type=int, default=8431, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--export", "export_path", type=click.Path(path_type=Path),
              help="Headless: export the opened session's plan and exit.")
def navigate(case_dir: Path, serve: bool, port: int, host: str, export_path: Path | None):
    """Open the case for navigation: serve the UI or export headless."""
    store, case = _load_case(case_dir)
    if export_path is not None:
        db = store.load_surface(case.case_id, case)
        session = open_session(db, case.structures)
        plan = session.export_plan()
        plan_id = store.save_plan(case.case_id, plan, alpha=session.alpha, label="navigated")
        meta = case_dir / "plans" / f"{plan_id}.json"
        if export_path.resolve() != meta.resolve():
            export_path.write_text(meta.read_text(encoding="utf-8"), encoding="utf-8")
        click.echo(f"exported {plan_id} (fvals: "
                   + ", ".join(f"{v:.4g}" for v in plan.fvals) + ")")
        return
    if not serve:
        raise click.UsageError("pass --serve to start the service or --export for headless export")
    import uvicorn

    from .api import create_app

    ui_dir = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    app = create_app(store, ui_dir=ui_dir if ui_dir.is_dir() else None)
    click.echo(f"serving case store {store.root} on http://{host}:{port} "
               f"(UI at /ui when built)")
    uvicorn.run(app, host=host, port=port, log_level="warning")


@cli.command("sparsify")
@click.argument("case_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--plan", "plan_ref", required=True,
              help="Plan id or path to an exported plan JSON.")
@click.option("--beams", type=int, required=True, help="Target beam count.")
@click.option("--epsilon", type=float, required=True,
              help="Per-objective relative degradation allowance.")
@click.option("--mode", type=click.Choice([m.value for m in SparsifyMode]),
              default=SparsifyMode.CONTRIBUTION_SCORE.value, show_default=True)
def sparsify_cmd(case_dir: Path, plan_ref: str, beams: int, epsilon: float, mode: str):
    """Reduce a navigated plan to fewer beams within the allowance."""
    store, case = _load_case(case_dir)
    reference = store.load_plan(case.case_id, plan_ref, case)
    report = sparsify(
        SparsifySpec(beams, epsilon, reference, SparsifyMode(mode)),
        case.dinf, case.objectives, case.constraints, case.structures,
        case.solver_options,
    )
    plan_id = store.save_plan(case.case_id, report.final_plan, label="sparse")
    out = {
        "achieved": report.achieved,
        "active_beam_count": report.active_beam_count,
        "removed_beams": report.removed_beams,
        "caps": report.caps.tolist(),
        "final_fvals": report.final_plan.fvals.tolist(),
        "steps": [
            {"beam": s.beam, "gantry_angle_deg": s.gantry_angle_deg,
             "score": s.score, "fvals": s.fvals.tolist(), "resolved": s.resolved}
            for s in report.steps
        ],
        "search_space_note": report.search_space_note,
        "note": report.note,
        "final_plan": plan_id,
    }
    n = 1
    while (case_dir / "reports" / f"sparsify-{n:04d}.json").exists():
        n += 1
    report_path = case_dir / "reports" / f"sparsify-{n:04d}.json"
    with open(report_path, "w", encoding="utf-8") as f:
        json.dump(out, f, indent=1)
    click.echo(f"{report.search_space_note}")
    click.echo(f"achieved={report.achieved} active_beams={report.active_beam_count} "
               f"removed={len(report.removed_beams)}")
    click.echo(f"report written to {report_path}, final plan {plan_id}")


def main() -> int:
    try:
        cli.main(standalone_mode=False)
    except click.UsageError as e:
        click.echo(f"usage error: {e.format_message()}", err=True)
        return 1
    except click.ClickException as e:
        e.show()
        return 1
    except click.exceptions.Abort:
        return 1
    except McoplanError as e:
        click.echo(f"error: {e}", err=True)
        return 2
    except OSError as e:
        click.echo(f"error: {e}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
