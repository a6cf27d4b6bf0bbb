"""Campaign layer: random scenario families, the V0-V5 variant matrix and gain metrics.

Every (area, scenario) pair gets its own random stream derived from the master seed,
so a campaign reduces to the same records whatever the worker count.
"""
import math
from concurrent.futures import ProcessPoolExecutor
from enum import Enum
from typing import Any, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from miab_planner.exceptions import (
    DegenerateAreaError,
    PlannerError,
    ScenarioGenerationError,
    UndefinedGainError,
    UnsupportedMetricError,
)
from miab_planner.service.capacity import SchedulerKind
from miab_planner.service.geometry import MAX_SAMPLE_REJECTIONS, AreaPolygon, Cuboid, Point3, area_sample
from miab_planner.service.network import Assignment, Evaluation, Scenario, baseline_assignment, evaluate
from miab_planner.service.optimizer import GaConfig, GaSolver, OracleSolver, SolveResult, derived_seed
from miab_planner.service.ports import AbstractSolver
from miab_planner.service.radio import MAX_D2D_M, MIN_D2D_M, RadioParams
from shared.logging import get_logger

logger = get_logger(__name__)

MAX_LAYOUT_ATTEMPTS = 100
MAX_OBSTACLE_ATTEMPTS = 50
# range of the FIAB-to-UE fraction where a shadowing obstacle is centred
SHADOW_FRACTION = (0.35, 0.8)


class VariantId(str, Enum):
    V0 = "V0"
    V1 = "V1"
    V2 = "V2"
    V3 = "V3"
    V4 = "V4"
    V5 = "V5"

    @property
    def has_miab(self) -> bool:
        return self not in (VariantId.V0, VariantId.V1)

    @property
    def has_obstacles(self) -> bool:
        return self in (VariantId.V1, VariantId.V3, VariantId.V5)

    @property
    def scheduler(self) -> Optional[SchedulerKind]:
        """None for the MIAB-free baselines, where PF and RR coincide."""
        if self in (VariantId.V2, VariantId.V3):
            return SchedulerKind.PF
        if self in (VariantId.V4, VariantId.V5):
            return SchedulerKind.RR
        return None


class ObstacleRanges(BaseModel):
    """Obstacle size ranges and placement mode.

    "shadowing" centres the obstacle on the line of sight between a random FIAB and a random
    special-team UE, past the point where that line dips below the roof; "uniform" centres it
    anywhere in the area.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    footprint_min_m: float = Field(default=10.0, gt=0)
    footprint_max_m: float = Field(default=40.0, gt=0)
    height_min_m: float = Field(default=6.0, gt=0)
    height_max_m: float = Field(default=15.0, gt=0)
    placement: Literal["shadowing", "uniform"] = "shadowing"

    @model_validator(mode="after")
    def _ordered(self) -> "ObstacleRanges":
        if self.footprint_min_m > self.footprint_max_m:
            raise ValueError("footprint_min_m must not exceed footprint_max_m")
        if self.height_min_m > self.height_max_m:
            raise ValueError("height_min_m must not exceed height_max_m")
        return self


class CampaignConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    areas: tuple[AreaPolygon, ...] = Field(min_length=1)
    scenarios_per_area: int = Field(default=5, ge=1)
    ues_total: int = Field(default=5, ge=1)
    special_team_size: int = Field(default=2, ge=1)
    obstacles_per_scenario: int = Field(default=1, ge=1)
    fiabs_per_scenario: int = Field(default=1, ge=1)
    miab_count: int = Field(default=1, ge=1)
    seed: int = Field(default=0, ge=0)
    ga: GaConfig = GaConfig()
    radio: RadioParams = RadioParams()
    solver: Literal["ga", "oracle"] = "ga"
    oracle_grid_step: float = Field(default=20.0, gt=0)
    obstacle_ranges: ObstacleRanges = ObstacleRanges()
    v1_with_miab: bool = False

    @model_validator(mode="after")
    def _check(self) -> "CampaignConfig":
        if self.special_team_size > self.ues_total:
            raise ValueError("special_team_size must not exceed ues_total")
        names = [a.name for a in self.areas]
        if any(not n for n in names) or len(set(names)) != len(names):
            raise ValueError("campaign areas need unique, non-empty names")
        return self


class RunRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    area_id: str
    scenario_index: int
    variant: VariantId
    scheduler: str
    status: Literal["ok", "failed"] = "ok"
    objective_bps: Optional[float] = None
    gain_percent: Optional[float] = None
    miab_xy: tuple[tuple[float, float], ...] = ()
    associations: tuple[str, ...] = ()
    backhaul_capacity_bps: tuple[float, ...] = ()
    served_capacity_bps: tuple[float, ...] = ()
    avg_topology_distance_m: Optional[float] = None
    inter_distance_m: Optional[float] = None
    feasible: Optional[bool] = None
    solver_meta: dict[str, Any] = {}
    error: Optional[str] = None


class CampaignReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    records: tuple[RunRecord, ...]
    cdfs: dict[str, tuple[tuple[float, float], ...]]
    summary: dict[str, dict[str, Optional[float]]]
    backhaul_cdfs: dict[str, dict[str, tuple[tuple[float, float], ...]]]


def gain_percent(c_vx: float, c_v0: float) -> float:
    if c_v0 <= 0.0:
        raise UndefinedGainError(f"gain undefined for baseline capacity {c_v0}")
    return (c_vx - c_v0) * 100.0 / c_v0


def avg_topology_distance(scenario: Scenario) -> float:
    """Mean 2D UE-FIAB distance over all UEs (and FIABs)."""
    distances = [math.hypot(u.x - f.x, u.y - f.y) for u in scenario.ues for f in scenario.fiabs]
    return float(np.mean(distances))


def inter_distance(scenario: Scenario) -> float:
    if len(scenario.special_team) != 2:
        raise UnsupportedMetricError(f"inter-distance needs a two-member team, got {len(scenario.special_team)}")
    a, b = (scenario.ues[u] for u in scenario.special_team)
    return math.hypot(a.x - b.x, a.y - b.y)


def empirical_cdf(values: Sequence[float]) -> list[tuple[float, float]]:
    """Right-continuous step CDF at each distinct value."""
    if len(values) == 0:
        raise ValueError("empirical CDF of an empty sample")
    ordered = np.sort(np.asarray(values, dtype=float))
    distinct, counts = np.unique(ordered, return_counts=True)
    fractions = np.cumsum(counts) / len(ordered)
    return [(float(v), float(f)) for v, f in zip(distinct, fractions)]


def summarize_gains(values: Sequence[float]) -> dict[str, Optional[float]]:
    if len(values) == 0:
        return {"count": 0, "min": None, "median": None, "p90": None}
    arr = np.asarray(values, dtype=float)
    return {
        "count": len(arr),
        "min": float(arr.min()),
        "median": float(np.percentile(arr, 50)),
        "p90": float(np.percentile(arr, 90)),
    }


def _union_sample(areas: Sequence[AreaPolygon], rng: np.random.Generator) -> tuple[float, float]:
    boxes = np.array([a.bounding_box() for a in areas])
    lo = (boxes[:, 0].min(), boxes[:, 2].min())
    hi = (boxes[:, 1].max(), boxes[:, 3].max())
    for _ in range(MAX_SAMPLE_REJECTIONS):
        x, y = (float(v) for v in rng.uniform(lo, hi))
        if any(a.contains(x, y) for a in areas):
            return x, y
    raise DegenerateAreaError("no sample accepted in the union of the campaign areas")


def _covers(obstacle: Cuboid, x: float, y: float) -> bool:
    xmin, xmax, ymin, ymax = obstacle.footprint_bounds
    return xmin <= x <= xmax and ymin <= y <= ymax


def _shadow_centre(
    fiab: Point3, ue: Point3, height: float, radio: RadioParams, rng: np.random.Generator
) -> tuple[float, float]:
    # the FIAB-UE ray is below `height` beyond fraction `dip` of the way to the UE
    dip = (radio.h_fiab - height) / (radio.h_fiab - radio.h_ut) if radio.h_fiab > radio.h_ut else 0.0
    low = min(max(SHADOW_FRACTION[0], dip), SHADOW_FRACTION[1])
    t = float(rng.uniform(low, SHADOW_FRACTION[1]))
    return fiab.x + t * (ue.x - fiab.x), fiab.y + t * (ue.y - fiab.y)


def _place_obstacle(
    area: AreaPolygon,
    config: CampaignConfig,
    fiabs: list[Point3],
    ues: list[Point3],
    rng: np.random.Generator,
) -> Optional[Cuboid]:
    ranges = config.obstacle_ranges
    team = ues[: config.special_team_size]
    for _ in range(MAX_OBSTACLE_ATTEMPTS):
        sx, sy = rng.uniform(ranges.footprint_min_m, ranges.footprint_max_m, size=2)
        height = float(rng.uniform(ranges.height_min_m, ranges.height_max_m))
        if ranges.placement == "shadowing":
            fiab = fiabs[int(rng.integers(len(fiabs)))]
            ue = team[int(rng.integers(len(team)))]
            cx, cy = _shadow_centre(fiab, ue, height, config.radio, rng)
        else:
            cx, cy = area_sample(area, rng)
        obstacle = Cuboid.footprint(cx, cy, float(sx), float(sy), height)
        if not any(_covers(obstacle, node.x, node.y) for node in fiabs + ues):
            return obstacle
    return None


def _sample_layout(
    area: AreaPolygon, config: CampaignConfig, rng: np.random.Generator
) -> Optional[tuple[list[Point3], list[Point3], list[Cuboid]]]:
    radio = config.radio
    fiabs = [Point3(x=x, y=y, z=radio.h_fiab) for x, y in (area_sample(area, rng) for _ in range(config.fiabs_per_scenario))]
    team = [area_sample(area, rng) for _ in range(config.special_team_size)]
    others = [_union_sample(config.areas, rng) for _ in range(config.ues_total - config.special_team_size)]
    ues = [Point3(x=x, y=y, z=radio.h_ut) for x, y in team + others]
    for fiab in fiabs:
        for ue in ues:
            if not MIN_D2D_M <= math.hypot(fiab.x - ue.x, fiab.y - ue.y) <= MAX_D2D_M:
                return None

    obstacles = []
    for _ in range(config.obstacles_per_scenario):
        obstacle = _place_obstacle(area, config, fiabs, ues, rng)
        if obstacle is None:
            return None
        obstacles.append(obstacle)
    return fiabs, ues, obstacles


def variant_scenario(base: Scenario, variant: VariantId, config: CampaignConfig) -> Scenario:
    with_miab = variant.has_miab or (variant is VariantId.V1 and config.v1_with_miab)
    return base.model_copy(
        update={
            "miab_count": config.miab_count if with_miab else 0,
            "obstacles": base.obstacles if variant.has_obstacles else (),
            "scheduler": variant.scheduler or SchedulerKind.PF,
        }
    )


def generate_scenario(
    area: AreaPolygon, config: CampaignConfig, rng: np.random.Generator, scenario_index: int = 0
) -> dict[VariantId, Scenario]:
    """Scenario family sharing one node/obstacle layout, keyed by variant."""
    for attempt in range(MAX_LAYOUT_ATTEMPTS):
        layout = _sample_layout(area, config, rng)
        if layout is None:
            logger.debug(f"Layout attempt {attempt} rejected for area '{area.name}', scenario {scenario_index}")
            continue
        fiabs, ues, obstacles = layout
        # model_copy skips validation, so the base is validated once with obstacles in place
        base = Scenario(
            areas=config.areas,
            fiabs=tuple(fiabs),
            miab_count=config.miab_count,
            ues=tuple(ues),
            special_team=tuple(range(config.special_team_size)),
            obstacles=tuple(obstacles),
            radio=config.radio,
            scheduler=SchedulerKind.PF,
            deployment_area=area.name,
        )
        return {variant: variant_scenario(base, variant, config) for variant in VariantId}
    raise ScenarioGenerationError(
        area.name, scenario_index, f"no valid layout in {MAX_LAYOUT_ATTEMPTS} attempts (UE-FIAB range or obstacle overlap)"
    )


def make_solver(config: CampaignConfig, seed: int) -> AbstractSolver:
    if config.solver == "oracle":
        return OracleSolver(config.oracle_grid_step)
    return GaSolver(config.ga.model_copy(update={"seed": seed}), workers=1)


def _record(
    area_id: str,
    scenario_index: int,
    variant: VariantId,
    scenario: Scenario,
    assignment: Assignment,
    evaluation: Evaluation,
    baseline_bps: float,
    solver_meta: dict[str, Any],
) -> RunRecord:
    try:
        gain: Optional[float] = gain_percent(evaluation.objective_bps, baseline_bps)
    except UndefinedGainError:
        gain = None
    try:
        team_distance: Optional[float] = inter_distance(scenario)
    except UnsupportedMetricError:
        team_distance = None
    scheduler = variant.scheduler
    return RunRecord(
        area_id=area_id,
        scenario_index=scenario_index,
        variant=variant,
        scheduler=scheduler.value if scheduler else "n/a",
        objective_bps=evaluation.objective_bps,
        gain_percent=gain,
        miab_xy=assignment.miab_xy,
        associations=tuple(str(c) for c in assignment.ue_cell),
        backhaul_capacity_bps=evaluation.backhaul_capacity_bps,
        served_capacity_bps=evaluation.served_capacity_bps,
        avg_topology_distance_m=avg_topology_distance(scenario),
        inter_distance_m=team_distance,
        feasible=evaluation.feasible,
        solver_meta=solver_meta,
    )


def _failed(area_id: str, scenario_index: int, variant: VariantId, error: Exception) -> RunRecord:
    scheduler = variant.scheduler
    return RunRecord(
        area_id=area_id,
        scenario_index=scenario_index,
        variant=variant,
        scheduler=scheduler.value if scheduler else "n/a",
        status="failed",
        error=str(error),
    )


def run_scenario(config: CampaignConfig, area_index: int, scenario_index: int) -> list[RunRecord]:
    """Six records, one per variant, for one (area, scenario) pair."""
    area = config.areas[area_index]
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, area_index, scenario_index]))
    try:
        family = generate_scenario(area, config, rng, scenario_index)
    except (ScenarioGenerationError, DegenerateAreaError) as exc:
        logger.warning(f"Scenario generation failed: {exc}")
        return [_failed(area.name, scenario_index, v, exc) for v in VariantId]

    v0 = family[VariantId.V0]
    v0_assignment = baseline_assignment(v0)
    v0_evaluation = evaluate(v0, v0_assignment)
    baseline_bps = v0_evaluation.objective_bps
    baseline_meta = {"solver": "baseline", "assignment": "lowest path-loss FIAB per UE"}
    records = {VariantId.V0: _record(area.name, scenario_index, VariantId.V0, v0, v0_assignment, v0_evaluation, baseline_bps, baseline_meta)}

    solved: dict[VariantId, SolveResult] = {}
    for variant in (VariantId.V2, VariantId.V3, VariantId.V4, VariantId.V5):
        scenario = family[variant]
        solver = make_solver(config, derived_seed(config.seed, area_index, scenario_index, list(VariantId).index(variant)))
        try:
            result = solver.solve(scenario)
        except PlannerError as exc:
            logger.warning(f"{variant.value} failed for area '{area.name}', scenario {scenario_index}: {exc}")
            records[variant] = _failed(area.name, scenario_index, variant, exc)
            continue
        solved[variant] = result
        meta = {**solver.describe(), **result.meta}
        records[variant] = _record(
            area.name, scenario_index, variant, scenario, result.best_assignment, result.best_evaluation, baseline_bps, meta
        )
        logger.info(
            f"area '{area.name}' scenario {scenario_index} {variant.value}: "
            f"objective={result.best_evaluation.objective_bps:.6g} bit/s, feasible={result.feasible}"
        )

    v1 = family[VariantId.V1]
    if config.v1_with_miab:
        # obstacle-unaware placement: the obstacle-free PF solution evaluated with the obstacle present
        if VariantId.V2 in solved:
            placement = solved[VariantId.V2].best_assignment
            records[VariantId.V1] = _record(
                area.name, scenario_index, VariantId.V1, v1, placement, evaluate(v1, placement), baseline_bps,
                {"solver": "V2 placement", "v1_with_miab": True},
            )
        else:
            records[VariantId.V1] = _failed(area.name, scenario_index, VariantId.V1, PlannerError("V2 placement unavailable"))
    else:
        v1_assignment = baseline_assignment(v1)
        records[VariantId.V1] = _record(
            area.name, scenario_index, VariantId.V1, v1, v1_assignment, evaluate(v1, v1_assignment), baseline_bps,
            {**baseline_meta, "v1_with_miab": False},
        )
    return [records[v] for v in VariantId]


def _tasks(config: CampaignConfig) -> list[tuple[int, int]]:
    return [(a, s) for a in range(len(config.areas)) for s in range(config.scenarios_per_area)]


def _run_task(args: tuple[CampaignConfig, int, int]) -> list[RunRecord]:
    return run_scenario(*args)


def _series_cdf(values: Sequence[float]) -> tuple[tuple[float, float], ...]:
    return tuple(empirical_cdf(values)) if values else ()


def build_report(records: Sequence[RunRecord]) -> CampaignReport:
    cdfs: dict[str, tuple[tuple[float, float], ...]] = {}
    summary: dict[str, dict[str, Optional[float]]] = {}
    backhaul_cdfs: dict[str, dict[str, tuple[tuple[float, float], ...]]] = {}
    for variant in VariantId:
        rows = [r for r in records if r.variant is variant and r.status == "ok"]
        gains = [r.gain_percent for r in rows if r.gain_percent is not None]
        cdfs[variant.value] = _series_cdf(gains)
        summary[variant.value] = summarize_gains(gains)
        with_miab = [r for r in rows if r.feasible and r.backhaul_capacity_bps]
        if with_miab:
            backhaul_cdfs[variant.value] = {
                "served": _series_cdf([sum(r.served_capacity_bps) for r in with_miab]),
                "backhaul": _series_cdf([sum(r.backhaul_capacity_bps) for r in with_miab]),
            }
    return CampaignReport(records=tuple(records), cdfs=cdfs, summary=summary, backhaul_cdfs=backhaul_cdfs)


def run_campaign(config: CampaignConfig, workers: int = 1) -> CampaignReport:
    tasks = _tasks(config)
    logger.info(
        f"Campaign started: {len(config.areas)} areas x {config.scenarios_per_area} scenarios, "
        f"solver={config.solver}, seed={config.seed}, workers={workers}"
    )
    args = [(config, a, s) for a, s in tasks]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            batches = list(pool.map(_run_task, args))
    else:
        batches = [_run_task(a) for a in args]
    # map() preserves task order, which is already (area, scenario, variant)
    records = [r for batch in batches for r in batch]
    failed = sum(r.status == "failed" for r in records)
    if failed:
        logger.warning(f"Campaign finished with {failed} failed runs out of {len(records)}")
    logger.info(f"Campaign finished: {len(records)} records")
    return build_report(records)
