import math

import numpy as np
import pytest
from pydantic import ValidationError

from miab_planner.exceptions import ScenarioGenerationError, UndefinedGainError, UnsupportedMetricError
from miab_planner.service.capacity import SchedulerKind
from miab_planner.service.geometry import AreaPolygon, LosClass, Segment, los_class
from miab_planner.service.experiments import (
    CampaignConfig,
    ObstacleRanges,
    VariantId,
    avg_topology_distance,
    build_report,
    empirical_cdf,
    gain_percent,
    generate_scenario,
    inter_distance,
    make_solver,
    run_campaign,
    run_scenario,
    summarize_gains,
)
from miab_planner.service.network import Scenario
from miab_planner.service.optimizer import GaConfig, GaSolver, OracleSolver, derived_seed
from miab_planner.tests.conftest import desk_scenario

AREAS = (AreaPolygon.rectangle(0, 0, 200, 200, name="A1"), AreaPolygon.rectangle(300, 0, 500, 200, name="A2"))


@pytest.fixture
def campaign() -> CampaignConfig:
    return CampaignConfig(
        areas=AREAS,
        scenarios_per_area=1,
        seed=11,
        ga=GaConfig(population_size=6, generations=3, elite_count=1),
    )


@pytest.fixture
def oracle_campaign(campaign) -> CampaignConfig:
    return campaign.model_copy(update={"solver": "oracle", "oracle_grid_step": 100.0})


# --- variants and config ---
def test_variant_table():
    assert [v.has_miab for v in VariantId] == [False, False, True, True, True, True]
    assert [v.has_obstacles for v in VariantId] == [False, True, False, True, False, True]
    assert [v.scheduler for v in VariantId] == [
        None, None, SchedulerKind.PF, SchedulerKind.PF, SchedulerKind.RR, SchedulerKind.RR
    ]


def test_campaign_config_defaults(campaign):
    assert campaign.ues_total == 5
    assert campaign.special_team_size == 2
    assert campaign.obstacles_per_scenario == 1
    assert campaign.solver == "ga"
    assert not campaign.v1_with_miab


@pytest.mark.parametrize(
    "overrides",
    [
        {"special_team_size": 6},
        {"areas": (AREAS[0], AREAS[0])},
        {"areas": (AreaPolygon.rectangle(0, 0, 10, 10),)},
        {"obstacle_ranges": {"footprint_min_m": 50, "footprint_max_m": 40}},
        {"scenarios_per_area": 0},
    ],
)
def test_campaign_config_rejects_invalid_values(overrides):
    with pytest.raises(ValidationError):
        CampaignConfig(**{"areas": AREAS, **overrides})


# --- metrics ---
@pytest.mark.parametrize("c_vx,c_v0,expected", [(150, 50, 200.0), (50, 50, 0.0), (25, 50, -50.0)])
def test_gain_percent(c_vx, c_v0, expected):
    assert gain_percent(c_vx, c_v0) == pytest.approx(expected)


def test_gain_percent_undefined_for_zero_baseline():
    with pytest.raises(UndefinedGainError):
        gain_percent(10, 0)


def test_avg_topology_distance(desk_v0):
    expected = np.mean([math.hypot(ue.x - 100, ue.y - 100) for ue in desk_v0.ues])
    assert avg_topology_distance(desk_v0) == pytest.approx(expected)
    equidistant = desk_scenario(ue_xy=[(0, 100), (200, 100), (100, 0), (100, 200), (29.289321881345245, 29.289321881345245)])
    assert avg_topology_distance(equidistant) == pytest.approx(100.0)


def test_inter_distance():
    assert inter_distance(desk_scenario()) == pytest.approx(80.0)
    assert inter_distance(desk_scenario(ue_xy=[(0, 0), (30, 40), (100, 160), (30, 30), (180, 40)])) == pytest.approx(50.0)
    assert inter_distance(desk_scenario(ue_xy=[(30, 30), (30, 30), (100, 160), (60, 100), (180, 40)])) == 0.0


def test_inter_distance_needs_two_members(desk_v0):
    solo = Scenario(**{**dict(desk_v0), "special_team": (0,)})
    with pytest.raises(UnsupportedMetricError):
        inter_distance(solo)


def test_empirical_cdf_examples():
    assert empirical_cdf([10]) == [(10.0, 1.0)]
    assert dict(empirical_cdf([4, 1, 3, 2]))[2.0] == 0.5
    (v1, f1), (v2, f2) = empirical_cdf([1, 1, 2])
    assert (v1, v2, f2) == (1.0, 2.0, 1.0)
    assert f1 == pytest.approx(2 / 3)


def test_empirical_cdf_is_monotone():
    values = np.random.default_rng(2).normal(0, 50, size=200)
    cdf = empirical_cdf(values)
    assert all(b[0] > a[0] and b[1] > a[1] for a, b in zip(cdf, cdf[1:]))
    assert cdf[-1][1] == 1.0
    assert all(0 < f <= 1 for _, f in cdf)


def test_empirical_cdf_rejects_empty_sample():
    with pytest.raises(ValueError):
        empirical_cdf([])


def test_summarize_gains():
    summary = summarize_gains(list(range(10, 0, -1)))
    ordered = sorted(range(1, 11))
    position = 0.9 * (len(ordered) - 1)
    lower = int(position)
    p90 = ordered[lower] + (position - lower) * (ordered[lower + 1] - ordered[lower])
    assert summary["count"] == 10
    assert summary["min"] == 1.0
    assert summary["median"] == pytest.approx(5.5)
    assert summary["p90"] == pytest.approx(p90)
    assert summarize_gains([]) == {"count": 0, "min": None, "median": None, "p90": None}


# --- scenario generation ---
def test_generate_scenario_is_deterministic(campaign):
    first = generate_scenario(AREAS[0], campaign, np.random.default_rng(5))
    second = generate_scenario(AREAS[0], campaign, np.random.default_rng(5))
    assert {v: s.model_dump() for v, s in first.items()} == {v: s.model_dump() for v, s in second.items()}


def test_generate_scenario_shares_geometry_across_variants(campaign):
    family = generate_scenario(AREAS[0], campaign, np.random.default_rng(8))
    assert set(family) == set(VariantId)
    base = family[VariantId.V3]
    assert len(base.obstacles) == 1
    for variant, scenario in family.items():
        assert scenario.ues == base.ues
        assert scenario.fiabs == base.fiabs
        assert scenario.obstacles == (base.obstacles if variant.has_obstacles else ())
        assert scenario.miab_count == (1 if variant.has_miab else 0)
        assert scenario.scheduler is (variant.scheduler or SchedulerKind.PF)
        assert scenario.deployment_area == "A1"


def test_generate_scenario_keeps_v1_miab_when_configured(campaign):
    family = generate_scenario(AREAS[0], campaign.model_copy(update={"v1_with_miab": True}), np.random.default_rng(8))
    assert family[VariantId.V1].miab_count == 1
    assert family[VariantId.V0].miab_count == 0


def test_generated_layouts_respect_ranges(campaign):
    for seed in range(100):
        family = generate_scenario(AREAS[1], campaign, np.random.default_rng(seed))
        scenario = family[VariantId.V5]
        fiab = scenario.fiabs[0]
        for u in scenario.special_team:
            assert AREAS[1].contains(scenario.ues[u].x, scenario.ues[u].y)
        for ue in scenario.ues:
            assert 10.0 <= math.hypot(ue.x - fiab.x, ue.y - fiab.y) <= 5000.0
            assert any(area.contains(ue.x, ue.y) for area in AREAS)
        obstacle, = scenario.obstacles
        xmin, xmax, ymin, ymax = obstacle.footprint_bounds
        assert 10.0 <= xmax - xmin <= 40.0
        assert 10.0 <= ymax - ymin <= 40.0
        assert 6.0 <= max(v.z for v in obstacle.vertices) <= 15.0
        for node in (fiab, *scenario.ues):
            assert not (xmin <= node.x <= xmax and ymin <= node.y <= ymax)


def test_shadowing_obstacle_blocks_a_team_link(campaign):
    for seed in range(50):
        scenario = generate_scenario(AREAS[0], campaign, np.random.default_rng(seed))[VariantId.V1]
        fiab = scenario.fiabs[0]
        team_links = [Segment(p=fiab, q=scenario.ues[u]) for u in scenario.special_team]
        assert any(los_class(link, scenario.obstacles) is LosClass.NLOS for link in team_links)


def test_uniform_obstacles_are_centred_in_the_area(campaign):
    config = campaign.model_copy(update={"obstacle_ranges": ObstacleRanges(placement="uniform")})
    for seed in range(50):
        obstacle, = generate_scenario(AREAS[0], config, np.random.default_rng(seed))[VariantId.V3].obstacles
        xmin, xmax, ymin, ymax = obstacle.footprint_bounds
        assert AREAS[0].contains((xmin + xmax) / 2, (ymin + ymax) / 2)


def test_generate_scenario_gives_up_on_impossible_area():
    tiny = AreaPolygon.rectangle(0, 0, 5, 5, name="tiny")
    config = CampaignConfig(areas=(tiny,))
    with pytest.raises(ScenarioGenerationError) as excinfo:
        generate_scenario(tiny, config, np.random.default_rng(0), scenario_index=3)
    assert excinfo.value.area_id == "tiny"
    assert excinfo.value.scenario_index == 3


# --- solvers and runs ---
def test_derived_seed_is_stable_and_keyed():
    assert derived_seed(1, 2, 3) == derived_seed(1, 2, 3)
    assert derived_seed(1, 2, 3) != derived_seed(1, 2, 4)
    assert 0 <= derived_seed(1, 2, 3) < 2**64


def test_make_solver(campaign, oracle_campaign):
    solver = make_solver(campaign, 99)
    assert isinstance(solver, GaSolver)
    assert solver.config.seed == 99
    assert solver.config.population_size == 6
    assert isinstance(make_solver(oracle_campaign, 99), OracleSolver)


def test_run_scenario_emits_one_record_per_variant(campaign):
    records = run_scenario(campaign, 0, 0)
    assert [r.variant for r in records] == list(VariantId)
    assert all(r.status == "ok" for r in records)
    v0, v1 = records[0], records[1]
    assert v0.gain_percent == 0.0
    assert v0.scheduler == "n/a"
    assert v0.miab_xy == ()
    assert v1.objective_bps <= v0.objective_bps
    assert records[2].scheduler == "PF"
    assert records[5].scheduler == "RR"
    assert all(len(r.miab_xy) == 1 for r in records[2:])
    assert records[2].solver_meta["solver"] == "ga"


def test_run_scenario_with_v1_miab_reuses_v2_placement(campaign):
    records = run_scenario(campaign.model_copy(update={"v1_with_miab": True}), 0, 0)
    assert records[1].miab_xy == records[2].miab_xy
    assert records[1].associations == records[2].associations
    assert records[1].solver_meta["solver"] == "V2 placement"


def test_run_scenario_reports_generation_failure():
    tiny = AreaPolygon.rectangle(0, 0, 5, 5, name="tiny")
    records = run_scenario(CampaignConfig(areas=(tiny,)), 0, 0)
    assert len(records) == 6
    assert all(r.status == "failed" and "tiny" in r.error for r in records)


def test_feasible_records_have_backhaul_for_served_capacity(campaign):
    for record in run_scenario(campaign, 1, 0):
        if record.feasible and record.backhaul_capacity_bps:
            for served, backhaul in zip(record.served_capacity_bps, record.backhaul_capacity_bps):
                assert backhaul >= served


def test_oracle_campaign_pf_dominance(oracle_campaign):
    report = run_campaign(oracle_campaign)
    by_key = {(r.area_id, r.variant): r for r in report.records}
    for area in ("A1", "A2"):
        v0, v1 = by_key[area, VariantId.V0], by_key[area, VariantId.V1]
        v2, v3 = by_key[area, VariantId.V2], by_key[area, VariantId.V3]
        if v0.feasible:
            assert v2.objective_bps >= v0.objective_bps
        if v1.feasible:
            assert v3.objective_bps >= v1.objective_bps
        assert v1.objective_bps <= v0.objective_bps


def test_run_campaign_record_count_and_report(campaign):
    report = run_campaign(campaign)
    assert len(report.records) == 2 * 1 * 6
    assert [(r.area_id, r.variant) for r in report.records[:6]] == [("A1", v) for v in VariantId]
    assert set(report.cdfs) == {v.value for v in VariantId}
    assert report.cdfs["V0"] == ((0.0, 1.0),)
    assert report.summary["V0"]["count"] == 2
    assert report == build_report(report.records)


def test_run_campaign_is_reproducible(campaign):
    first = run_campaign(campaign)
    second = run_campaign(campaign)
    assert [r.model_dump() for r in first.records] == [r.model_dump() for r in second.records]


@pytest.mark.slow
def test_run_campaign_is_independent_of_worker_count(campaign):
    serial = run_campaign(campaign, workers=1)
    parallel = run_campaign(campaign, workers=2)
    assert [r.model_dump() for r in parallel.records] == [r.model_dump() for r in serial.records]
