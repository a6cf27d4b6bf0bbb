import json

import pandas as pd
import pytest

from miab_planner.adapters.report_writer import (
    RECORD_COLUMNS,
    evaluation_document,
    records_frame,
    solve_document,
    write_campaign,
    write_json,
    write_trace_csv,
)
from miab_planner.models import AssignmentFile, RunManifest
from miab_planner.service.experiments import CampaignConfig, RunRecord, VariantId, build_report
from miab_planner.service.geometry import AreaPolygon
from miab_planner.service.network import Evaluator, baseline_assignment
from miab_planner.service.optimizer import GaConfig, solve_ga


@pytest.fixture
def manifest() -> RunManifest:
    return RunManifest(command="test", masterSeed=3, decisions={"oracle_tie_break": "first"})


@pytest.fixture
def records() -> list[RunRecord]:
    rows = []
    for index, (v0, v3) in enumerate([(100e6, 150e6), (80e6, 40e6)]):
        rows.append(RunRecord(
            area_id="A1", scenario_index=index, variant=VariantId.V0, scheduler="n/a",
            objective_bps=v0, gain_percent=0.0, associations=("fiab0",) * 5, feasible=True,
            avg_topology_distance_m=70.0, inter_distance_m=80.0, solver_meta={"solver": "baseline"},
        ))
        rows.append(RunRecord(
            area_id="A1", scenario_index=index, variant=VariantId.V3, scheduler="PF",
            objective_bps=v3, gain_percent=(v3 - v0) * 100 / v0, miab_xy=((12.5, 0.1),),
            associations=("miab0", "fiab0", "fiab0", "fiab0", "fiab0"),
            backhaul_capacity_bps=(90e6,), served_capacity_bps=(60e6,), feasible=True,
            avg_topology_distance_m=70.0, inter_distance_m=80.0, solver_meta={"solver": "ga"},
        ))
    rows.append(RunRecord(
        area_id="A2", scenario_index=0, variant=VariantId.V5, scheduler="RR", status="failed", error="boom"
    ))
    return rows


# --- JSON documents ---
def test_evaluation_document(desk_miab, manifest):
    assignment = baseline_assignment(desk_miab)
    evaluation = Evaluator(desk_miab).evaluate(assignment)
    document = evaluation_document(assignment, evaluation, manifest)
    assert document["assignment"]["ue_cell"] == ["fiab0"] * 5
    assert document["evaluation"]["objective_bps"] == evaluation.objective_bps
    assert document["evaluation"]["feasible"] is True
    assert len(document["evaluation"]["links"]) == 6
    assert document["manifest"]["masterSeed"] == 3
    assert AssignmentFile.model_validate(document["assignment"]).to_assignment() == assignment


def test_solve_document_and_trace(desk_miab, manifest, tmp_path):
    result = solve_ga(desk_miab, GaConfig(population_size=6, generations=4, elite_count=1, seed=1))
    document = solve_document(result, manifest)
    assert document["solver"] == "ga"
    assert document["generations_run"] == 4
    assert document["meta"]["seed"] == 1
    assert json.loads(json.dumps(document)) == document

    path = tmp_path / "trace.csv"
    write_trace_csv(result, str(path))
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["generation", "best_objective_bps", "feasible_fraction"]
    assert frame["generation"].tolist() == [0, 1, 2, 3]
    assert frame["best_objective_bps"].tolist() == list(result.best_objective_trace)


def test_write_json_to_stdout_and_file(capsys, tmp_path):
    write_json({"value": 0.1})
    assert json.loads(capsys.readouterr().out) == {"value": 0.1}
    path = tmp_path / "out.json"
    write_json({"value": 0.1}, str(path))
    assert json.loads(path.read_text()) == {"value": 0.1}


# --- campaign outputs ---
def test_records_frame_column_order(records):
    frame = records_frame(records)
    assert list(frame.columns) == RECORD_COLUMNS
    assert frame.loc[1, "miab_positions"] == "12.5 0.10000000000000001"
    assert frame.loc[1, "associations"] == "miab0;fiab0;fiab0;fiab0;fiab0"
    assert frame.loc[4, "status"] == "failed"
    assert frame.loc[4, "error"] == "boom"


def test_write_campaign(records, manifest, tmp_path):
    config = CampaignConfig(areas=(AreaPolygon.rectangle(0, 0, 200, 200, name="A1"),))
    written = write_campaign(build_report(records), config, manifest, str(tmp_path / "out"))
    names = sorted(p.name for p in written)
    assert names == sorted(
        ["records.csv", "backhaul_cdf.csv", "gains_by_area.csv", "campaign.json"] + [f"cdf_V{i}.csv" for i in range(6)]
    )

    frame = pd.read_csv(tmp_path / "out" / "records.csv")
    assert len(frame) == 5
    assert frame["objective_bps"].iloc[1] == 150e6

    cdf = pd.read_csv(tmp_path / "out" / "cdf_V3.csv")
    assert cdf["value"].tolist() == [-50.0, 50.0]
    assert cdf["fraction"].tolist() == [0.5, 1.0]
    assert pd.read_csv(tmp_path / "out" / "cdf_V5.csv").empty

    backhaul = pd.read_csv(tmp_path / "out" / "backhaul_cdf.csv")
    assert set(backhaul["series"]) == {"served", "backhaul"}

    summary = json.loads((tmp_path / "out" / "campaign.json").read_text())
    assert summary["records"] == 5
    assert summary["failed"] == 1
    assert summary["summary"]["V3"]["median"] == pytest.approx(0.0)
    assert summary["manifest"]["command"] == "test"


def test_campaign_csv_is_byte_stable(records, manifest, tmp_path):
    config = CampaignConfig(areas=(AreaPolygon.rectangle(0, 0, 200, 200, name="A1"),))
    write_campaign(build_report(records), config, manifest, str(tmp_path / "a"))
    write_campaign(build_report(records), config, manifest, str(tmp_path / "b"))
    for name in ("records.csv", "cdf_V3.csv", "gains_by_area.csv", "campaign.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
