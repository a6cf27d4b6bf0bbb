"""JSON documents and plot-ready CSV files.

CSV floats are written with 17 significant digits so every value reads back exactly.
"""
import json
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

import pandas as pd

from miab_planner.models import AssignmentFile, RunManifest, ScenarioFile
from miab_planner.service.experiments import CampaignConfig, CampaignReport, RunRecord, VariantId
from miab_planner.service.network import Assignment, Evaluation, Scenario
from miab_planner.service.optimizer import SolveResult
from shared.logging import get_logger

logger = get_logger(__name__)

FLOAT_FORMAT = "%.17g"
RECORD_COLUMNS = [
    "area_id",
    "scenario_index",
    "variant",
    "scheduler",
    "status",
    "objective_bps",
    "gain_percent",
    "miab_positions",
    "associations",
    "backhaul_capacity_bps",
    "served_capacity_bps",
    "avg_topology_distance_m",
    "inter_distance_m",
    "feasible",
    "solver",
    "error",
]


def _g17(value: float) -> str:
    return format(value, ".17g")


def scenario_payload(scenario: Scenario) -> dict[str, Any]:
    """Scenario as a schema-valid document, embedded in manifests so runs can be repeated."""
    return ScenarioFile.from_scenario(scenario).model_dump(mode="json", exclude={"manifest"})


def assignment_payload(assignment: Assignment) -> dict[str, Any]:
    return AssignmentFile.from_assignment(assignment).model_dump(mode="json", exclude={"manifest"})


def evaluation_payload(evaluation: Evaluation) -> dict[str, Any]:
    v = evaluation.violations
    return {
        "objective_bps": evaluation.objective_bps,
        "feasible": evaluation.feasible,
        "per_ue_capacity_bps": list(evaluation.per_ue_capacity_bps),
        "backhaul_capacity_bps": list(evaluation.backhaul_capacity_bps),
        "served_capacity_bps": list(evaluation.served_capacity_bps),
        "violations": {
            "rsrp_deficit_db": v.rsrp_deficit_db,
            "backhaul_deficit_bps": list(v.backhaul_deficit_bps),
            "range_violations": v.range_violations,
            "range_violation_m": v.range_violation_m,
            "area_violation_m": v.area_violation_m,
        },
        "loads": evaluation.loads.model_dump(mode="json"),
        "links": [link.model_dump(mode="json") for link in evaluation.links],
    }


def evaluation_document(assignment: Assignment, evaluation: Evaluation, manifest: RunManifest) -> dict[str, Any]:
    return {
        "assignment": assignment_payload(assignment),
        "evaluation": evaluation_payload(evaluation),
        "manifest": manifest.model_dump(mode="json"),
    }


def solve_document(result: SolveResult, manifest: RunManifest) -> dict[str, Any]:
    return {
        "solver": result.solver,
        "feasible": result.feasible,
        "generations_run": result.generations_run,
        "evaluations_count": result.evaluations_count,
        "best_objective_trace": list(result.best_objective_trace),
        "meta": result.meta,
        "best_assignment": assignment_payload(result.best_assignment),
        "evaluation": evaluation_payload(result.best_evaluation),
        "manifest": manifest.model_dump(mode="json"),
    }


def dumps(document: dict[str, Any]) -> str:
    return json.dumps(document, indent=2, ensure_ascii=False) + "\n"


def write_json(document: dict[str, Any], path: Optional[str] = None) -> None:
    """Writes to `path`, or to stdout when no path is given."""
    text = dumps(document)
    if path is None:
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    Path(path).write_text(text, encoding="utf-8")
    logger.info(f"Wrote {path}")


def write_trace_csv(result: SolveResult, path: str) -> None:
    fractions: Sequence[Optional[float]] = result.feasible_fraction_trace or [None] * len(result.best_objective_trace)
    frame = pd.DataFrame(
        {
            "generation": range(len(result.best_objective_trace)),
            "best_objective_bps": list(result.best_objective_trace),
            "feasible_fraction": list(fractions),
        }
    )
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"Wrote trace {path} ({len(frame)} generations)")


def _record_row(record: RunRecord) -> dict[str, Any]:
    return {
        "area_id": record.area_id,
        "scenario_index": record.scenario_index,
        "variant": record.variant.value,
        "scheduler": record.scheduler,
        "status": record.status,
        "objective_bps": record.objective_bps,
        "gain_percent": record.gain_percent,
        "miab_positions": ";".join(f"{_g17(x)} {_g17(y)}" for x, y in record.miab_xy),
        "associations": ";".join(record.associations),
        "backhaul_capacity_bps": sum(record.backhaul_capacity_bps) if record.backhaul_capacity_bps else None,
        "served_capacity_bps": sum(record.served_capacity_bps) if record.served_capacity_bps else None,
        "avg_topology_distance_m": record.avg_topology_distance_m,
        "inter_distance_m": record.inter_distance_m,
        "feasible": record.feasible,
        "solver": record.solver_meta.get("solver", ""),
        "error": record.error or "",
    }


def records_frame(records: Sequence[RunRecord]) -> pd.DataFrame:
    return pd.DataFrame([_record_row(r) for r in records], columns=RECORD_COLUMNS)


def write_campaign(report: CampaignReport, config: CampaignConfig, manifest: RunManifest, out_dir: str) -> list[Path]:
    """records.csv, cdf_<variant>.csv, backhaul_cdf.csv, gains_by_area.csv and campaign.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "records.csv"
    records_frame(report.records).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    written.append(path)

    for variant in VariantId:
        path = out / f"cdf_{variant.value}.csv"
        pd.DataFrame(list(report.cdfs.get(variant.value, ())), columns=["value", "fraction"]).to_csv(
            path, index=False, float_format=FLOAT_FORMAT
        )
        written.append(path)

    rows = [
        {"variant": variant, "series": series, "value": value, "fraction": fraction}
        for variant, by_series in report.backhaul_cdfs.items()
        for series, points in by_series.items()
        for value, fraction in points
    ]
    path = out / "backhaul_cdf.csv"
    pd.DataFrame(rows, columns=["variant", "series", "value", "fraction"]).to_csv(
        path, index=False, float_format=FLOAT_FORMAT
    )
    written.append(path)

    gains = [
        {"area_id": r.area_id, "scenario_index": r.scenario_index, "variant": r.variant.value, "gain_percent": r.gain_percent}
        for r in report.records
        if r.status == "ok"
    ]
    path = out / "gains_by_area.csv"
    pd.DataFrame(gains, columns=["area_id", "scenario_index", "variant", "gain_percent"]).to_csv(
        path, index=False, float_format=FLOAT_FORMAT
    )
    written.append(path)

    document = {
        "config": config.model_dump(mode="json"),
        "summary": report.summary,
        "records": len(report.records),
        "failed": sum(r.status == "failed" for r in report.records),
        "manifest": manifest.model_dump(mode="json"),
    }
    path = out / "campaign.json"
    write_json(document, str(path))
    written.append(path)
    logger.info(f"Campaign outputs written to {out}")
    return written
