import json
from pathlib import Path

import pandas as pd
import pytest

from miab_planner.adapters.scenario_store import JsonScenarioStore
from miab_planner.main import main
from miab_planner.service.experiments import VariantId, run_campaign
from shared.settings import settings

SCENARIOS = Path(__file__).resolve().parents[2] / "scenarios"


def test_campaign_end_to_end(small_campaign_file, tmp_path):
    """
    Runs the campaign command on a small configuration and checks the files a plotting
    script relies on: one record per (area, scenario, variant), a CDF per variant and
    the JSON summary.
    """
    out = tmp_path / "out"
    assert main(["campaign", str(small_campaign_file), "--out-dir", str(out), "--workers", "1"]) == 0

    records = pd.read_csv(out / "records.csv")
    assert len(records) == 2 * 2 * 6
    assert (records["status"] == "ok").all()
    assert records["variant"].tolist()[:6] == [v.value for v in VariantId]

    v0 = records[records["variant"] == "V0"]
    assert (v0["gain_percent"] == 0.0).all()
    v1 = records[records["variant"] == "V1"]
    assert (v1["gain_percent"] <= 1e-9).all()
    v2 = records[records["variant"] == "V2"]
    # the GA population always contains the MIAB-free layout
    assert (v2["gain_percent"] >= -1e-9).all()

    for variant in VariantId:
        cdf = pd.read_csv(out / f"cdf_{variant.value}.csv")
        assert cdf["fraction"].is_monotonic_increasing
        assert cdf["fraction"].iloc[-1] == 1.0

    summary = json.loads((out / "campaign.json").read_text())
    assert summary["records"] == 24
    assert summary["failed"] == 0
    assert summary["manifest"]["masterSeed"] == 99
    assert summary["summary"]["V0"]["median"] == 0.0


def test_campaign_is_byte_identical_on_rerun(small_campaign_file, tmp_path):
    for name in ("first", "second"):
        assert main(["campaign", str(small_campaign_file), "--out-dir", str(tmp_path / name), "--workers", "1"]) == 0
    for name in ("records.csv", "gains_by_area.csv", "backhaul_cdf.csv", "campaign.json", "cdf_V3.csv"):
        assert (tmp_path / "first" / name).read_bytes() == (tmp_path / "second" / name).read_bytes()


@pytest.mark.slow
def test_campaign_output_does_not_depend_on_workers(small_campaign_file, tmp_path):
    assert main(["campaign", str(small_campaign_file), "--out-dir", str(tmp_path / "serial"), "--workers", "1"]) == 0
    assert main(["campaign", str(small_campaign_file), "--out-dir", str(tmp_path / "pool"), "--workers", "3"]) == 0
    assert (tmp_path / "serial" / "records.csv").read_bytes() == (tmp_path / "pool" / "records.csv").read_bytes()


def test_solve_then_evaluate_round_trip(desk_scenario_file, tmp_path, capsys):
    solved = tmp_path / "solved.json"
    assert main(["solve", str(desk_scenario_file), "--seed", "4", "--generations", "3", "--population", "6",
                 "--elite", "1", "--out", str(solved)]) == 0
    document = json.loads(solved.read_text())

    assignment = tmp_path / "assignment.json"
    assignment.write_text(json.dumps(document["best_assignment"]))
    assert main(["evaluate", str(desk_scenario_file), str(assignment)]) == 0
    evaluated = json.loads(capsys.readouterr().out)
    assert evaluated["evaluation"]["objective_bps"] == document["evaluation"]["objective_bps"]


def test_campaign_rerun_from_manifest_is_byte_identical(small_campaign_file, tmp_path):
    first = tmp_path / "first"
    assert main(["campaign", str(small_campaign_file), "--out-dir", str(first), "--workers", "1"]) == 0
    again = tmp_path / "again"
    assert main(["rerun", "--manifest", str(first / "campaign.json"), "--out-dir", str(again), "--workers", "1"]) == 0
    for name in ("records.csv", "gains_by_area.csv", "campaign.json"):
        assert (first / name).read_bytes() == (again / name).read_bytes()


def test_solve_rerun_from_output_is_byte_identical(desk_scenario_file, tmp_path):
    solved = tmp_path / "solved.json"
    assert main(["solve", str(desk_scenario_file), "--seed", "8", "--generations", "3", "--population", "6",
                 "--elite", "1", "--out", str(solved)]) == 0
    again = tmp_path / "again.json"
    assert main(["rerun", "--manifest", str(solved), "--out", str(again)]) == 0
    assert solved.read_bytes() == again.read_bytes()


@pytest.mark.slow
def test_bundled_campaign_has_the_expected_shape():
    """V1 loses a large share of V0, RR gains at least as much as PF, and the upper tail gains."""
    base = JsonScenarioStore().load_campaign(str(SCENARIOS / "campaign.json"))
    medians: dict[str, list[float]] = {"V1": [], "V2": [], "V4": []}
    for seed in (2024, 2025, 2026):
        report = run_campaign(base.model_copy(update={"seed": seed}), workers=settings.effective_workers)
        for variant in medians:
            medians[variant].append(report.summary[variant]["median"])
        assert report.summary["V4"]["p90"] > 0
    mean = {variant: sum(values) / len(values) for variant, values in medians.items()}
    assert -70.0 <= mean["V1"] <= -30.0
    assert mean["V4"] >= mean["V2"]
