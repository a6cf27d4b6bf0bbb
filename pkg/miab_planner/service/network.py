"""Scenario data model, assignments and the constrained evaluation.

An evaluation builds the budget of every associated access link and every MIAB
backhaul, turns them into capacities under the scenario's scheduler, sums the
special team's capacities into the objective and measures each constraint residual.
"""
import math
from enum import Enum
from typing import NamedTuple, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from miab_planner.exceptions import AssignmentError
from miab_planner.service.capacity import (
    LoadCounts,
    SchedulerKind,
    access_capacity,
    backhaul_capacity,
    compute_loads,
)
from miab_planner.service.geometry import AreaPolygon, Cuboid, LosClass, Point3, area_distance, area_project, los_between
from miab_planner.service.radio import (
    MAX_D2D_M,
    MIN_D2D_M,
    LinkBudget,
    RadioParams,
    budget_from_pathloss,
    pathloss_db,
)

POSITION_TOLERANCE = 1e-9


class CellKind(str, Enum):
    FIAB = "fiab"
    MIAB = "miab"


class CellRef(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: CellKind
    index: int = Field(ge=0)

    def __str__(self) -> str:
        return f"{self.kind.value}{self.index}"


class Scenario(BaseModel):
    """Immutable world description: areas, donors, UEs, team, obstacles and radio."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    areas: tuple[AreaPolygon, ...] = Field(min_length=1)
    fiabs: tuple[Point3, ...] = Field(min_length=1)
    miab_count: int = Field(default=1, ge=0)
    ues: tuple[Point3, ...] = Field(min_length=1)
    special_team: tuple[int, ...] = Field(min_length=1)
    obstacles: tuple[Cuboid, ...] = ()
    radio: RadioParams = RadioParams()
    scheduler: SchedulerKind = SchedulerKind.PF
    deployment_area: str

    @model_validator(mode="after")
    def _check_invariants(self) -> "Scenario":
        names = [a.name for a in self.areas]
        if len(set(names)) != len(names):
            raise ValueError("area names must be unique")
        if self.deployment_area not in names:
            raise ValueError(f"deployment_area '{self.deployment_area}' is not one of the areas {names}")
        for k, fiab in enumerate(self.fiabs):
            if abs(fiab.z - self.radio.h_fiab) > POSITION_TOLERANCE:
                raise ValueError(f"FIAB {k} must sit at h_fiab = {self.radio.h_fiab} m")
        for u, ue in enumerate(self.ues):
            if abs(ue.z - self.radio.h_ut) > POSITION_TOLERANCE:
                raise ValueError(f"UE {u} must sit at h_ut = {self.radio.h_ut} m")
        if len(set(self.special_team)) != len(self.special_team):
            raise ValueError("special_team contains duplicates")
        area = self.deployment
        for u in self.special_team:
            if not 0 <= u < len(self.ues):
                raise ValueError(f"special_team index {u} is not a UE index")
            if not area.contains(self.ues[u].x, self.ues[u].y):
                raise ValueError(f"special-team UE {u} lies outside the deployment area '{area.name}'")
        for k, fiab in enumerate(self.fiabs):
            for u, ue in enumerate(self.ues):
                d2d = math.hypot(fiab.x - ue.x, fiab.y - ue.y)
                if not MIN_D2D_M <= d2d <= MAX_D2D_M:
                    raise ValueError(f"UE {u} to FIAB {k} 2D distance {d2d:.3f} m outside [{MIN_D2D_M}, {MAX_D2D_M}]")
        return self

    @property
    def deployment(self) -> AreaPolygon:
        return next(a for a in self.areas if a.name == self.deployment_area)

    def area(self, name: str) -> AreaPolygon:
        return next(a for a in self.areas if a.name == name)


class Assignment(BaseModel):
    """Decision variables: MIAB positions (z fixed at h_miab), UE cells, backhaul donors."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    miab_xy: tuple[tuple[float, float], ...] = ()
    ue_cell: tuple[CellRef, ...]
    backhaul_donor: tuple[int, ...] = ()


class Violations(BaseModel):
    model_config = ConfigDict(frozen=True)

    rsrp_deficit_db: dict[str, float] = {}
    backhaul_deficit_bps: tuple[float, ...] = ()
    range_violations: int = 0
    range_violation_m: float = 0.0
    area_violation_m: float = 0.0

    def is_zero(self) -> bool:
        return (
            all(v == 0.0 for v in self.rsrp_deficit_db.values())
            and all(v == 0.0 for v in self.backhaul_deficit_bps)
            and self.range_violations == 0
            and self.range_violation_m == 0.0
            and self.area_violation_m == 0.0
        )


class LinkReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    link_id: str
    share_count: int
    budget: Optional[LinkBudget]
    capacity_bps: float
    range_violation_m: float = 0.0


class Evaluation(BaseModel):
    model_config = ConfigDict(frozen=True)

    per_ue_capacity_bps: tuple[float, ...]
    backhaul_capacity_bps: tuple[float, ...]
    served_capacity_bps: tuple[float, ...]
    objective_bps: float
    violations: Violations
    feasible: bool
    loads: LoadCounts
    links: tuple[LinkReport, ...]


class LinkGeometry(NamedTuple):
    """Load-independent part of a link: LoS class, distances and path loss (None out of range)."""

    los: LosClass
    d2d: float
    d3d: float
    dbp: float
    pl_db: Optional[float]
    range_violation_m: float


def link_geometry(tx: np.ndarray, rx: np.ndarray, f_ghz: float, params: RadioParams, obstacles: Sequence[Cuboid]) -> LinkGeometry:
    d2d = math.hypot(tx[0] - rx[0], tx[1] - rx[1])
    d3d = math.dist(tx, rx)
    if d2d < MIN_D2D_M:
        return LinkGeometry(LosClass.LOS, d2d, d3d, math.nan, None, MIN_D2D_M - d2d)
    if d2d > MAX_D2D_M:
        return LinkGeometry(LosClass.LOS, d2d, d3d, math.nan, None, d2d - MAX_D2D_M)
    los = los_between(tx, rx, obstacles)
    pl, dbp = pathloss_db(d2d, d3d, los, f_ghz, float(tx[2]), float(rx[2]), params.h_e)
    return LinkGeometry(los, d2d, d3d, dbp, pl, 0.0)


class MiabLinks:
    """Lazily computed geometry of the links touching MIABs at fixed positions."""

    def __init__(self, evaluator: "Evaluator", miab_xy: Sequence[tuple[float, float]]):
        self.miab_xy = tuple((float(x), float(y)) for x, y in miab_xy)
        self._evaluator = evaluator
        params = evaluator.scenario.radio
        self._miab_xyz = [np.array((x, y, params.h_miab)) for x, y in self.miab_xy]
        self._access: dict[tuple[int, int], LinkGeometry] = {}
        self._backhaul: dict[tuple[int, int], LinkGeometry] = {}

    def access(self, m: int, u: int) -> LinkGeometry:
        key = (m, u)
        if key not in self._access:
            ev = self._evaluator
            self._access[key] = link_geometry(
                self._miab_xyz[m], ev.ue_xyz[u], ev.params.f_miab_ghz, ev.params, ev.scenario.obstacles
            )
        return self._access[key]

    def backhaul(self, m: int, k: int) -> LinkGeometry:
        key = (m, k)
        if key not in self._backhaul:
            ev = self._evaluator
            self._backhaul[key] = link_geometry(
                ev.fiab_xyz[k], self._miab_xyz[m], ev.params.f_fiab_ghz, ev.params, ev.scenario.obstacles
            )
        return self._backhaul[key]


class Evaluator:
    """Evaluates assignments of one scenario, reusing the static FIAB-UE link geometry."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.params = scenario.radio
        self.ue_xyz = [ue.as_array() for ue in scenario.ues]
        self.fiab_xyz = [fiab.as_array() for fiab in scenario.fiabs]
        self.fiab_ue = [
            [link_geometry(f, u, self.params.f_fiab_ghz, self.params, scenario.obstacles) for u in self.ue_xyz]
            for f in self.fiab_xyz
        ]
        self.upper_bound = objective_upper_bound(scenario)
        self._links: Optional[MiabLinks] = None

    def links_for(self, miab_xy: Sequence[tuple[float, float]]) -> MiabLinks:
        """MIAB link geometry; the last position set is kept, so repeated positions are free."""
        key = tuple((float(x), float(y)) for x, y in miab_xy)
        if self._links is None or self._links.miab_xy != key:
            self._links = MiabLinks(self, key)
        return self._links

    def check_structure(self, assignment: Assignment) -> None:
        sc = self.scenario
        if len(assignment.ue_cell) != len(sc.ues):
            given, expected = len(assignment.ue_cell), len(sc.ues)
            missing = expected - given
            detail = f"{missing} UEs have no cell" if missing > 0 else f"{-missing} cells are extra"
            raise AssignmentError(f"assignment associates {given} UEs, scenario has {expected}; {detail}")
        if len(assignment.miab_xy) != sc.miab_count:
            raise AssignmentError(f"assignment places {len(assignment.miab_xy)} MIABs, scenario has {sc.miab_count}")
        if len(assignment.backhaul_donor) != sc.miab_count:
            raise AssignmentError(
                f"assignment gives {len(assignment.backhaul_donor)} backhaul donors for {sc.miab_count} MIABs"
            )
        for u, cell in enumerate(assignment.ue_cell):
            limit = len(sc.fiabs) if cell.kind is CellKind.FIAB else sc.miab_count
            if cell.index >= limit:
                raise AssignmentError(f"UE {u} is associated to unknown cell {cell}")
        for m, k in enumerate(assignment.backhaul_donor):
            if not 0 <= k < len(sc.fiabs):
                raise AssignmentError(f"MIAB {m} has unknown backhaul donor FIAB {k}")

    def evaluate(self, assignment: Assignment, links: Optional[MiabLinks] = None) -> Evaluation:
        self.check_structure(assignment)
        sc = self.scenario
        params = self.params
        b = params.rb_per_slot
        delta = params.delta_hz
        if links is None or links.miab_xy != tuple(assignment.miab_xy):
            links = self.links_for(assignment.miab_xy)
        loads = compute_loads(assignment, sc.scheduler, fiab_count=len(sc.fiabs))

        reports: list[LinkReport] = []
        rsrp_deficit: dict[str, float] = {}
        range_count = 0
        range_m = 0.0

        def assess(link_id: str, geometry: LinkGeometry, share: int) -> Optional[LinkBudget]:
            nonlocal range_count, range_m
            if geometry.pl_db is None:
                range_count += 1
                range_m += geometry.range_violation_m
                return None
            budget = budget_from_pathloss(
                geometry.pl_db, share, params, geometry.los, geometry.d2d, geometry.d3d, geometry.dbp
            )
            rsrp_deficit[link_id] = max(0.0, params.q_rx_lev_min_dbm - budget.rsrp_dbm)
            return budget

        per_ue: list[float] = []
        served = [0.0] * sc.miab_count
        for u, cell in enumerate(assignment.ue_cell):
            if cell.kind is CellKind.MIAB:
                geometry = links.access(cell.index, u)
                share = loads.u_m[cell.index]
            else:
                geometry = self.fiab_ue[cell.index][u]
                share = loads.u_z[cell.index]
            link_id = f"ue{u}-{cell}"
            budget = assess(link_id, geometry, share)
            capacity = access_capacity(b, delta, budget.se, share) if budget is not None else 0.0
            per_ue.append(capacity)
            if cell.kind is CellKind.MIAB:
                served[cell.index] += capacity
            reports.append(LinkReport(
                link_id=link_id, share_count=share, budget=budget, capacity_bps=capacity,
                range_violation_m=geometry.range_violation_m,
            ))

        backhaul: list[float] = []
        for m, k in enumerate(assignment.backhaul_donor):
            geometry = links.backhaul(m, k)
            share = loads.u_z[k]
            link_id = f"miab{m}-fiab{k}"
            if share == 0:
                # idle MIAB on an idle donor under PF: no RNTI, nothing to budget
                if geometry.pl_db is None:
                    range_count += 1
                    range_m += geometry.range_violation_m
                budget = None
            else:
                budget = assess(link_id, geometry, share)
            capacity = (
                backhaul_capacity(b, delta, budget.se, loads.u_m[m], share, sc.scheduler) if budget is not None else 0.0
            )
            backhaul.append(capacity)
            reports.append(LinkReport(
                link_id=link_id, share_count=share, budget=budget, capacity_bps=capacity,
                range_violation_m=geometry.range_violation_m,
            ))

        area = sc.deployment
        violations = Violations(
            rsrp_deficit_db=rsrp_deficit,
            backhaul_deficit_bps=tuple(max(0.0, served[m] - backhaul[m]) for m in range(sc.miab_count)),
            range_violations=range_count,
            range_violation_m=range_m,
            area_violation_m=sum(area_distance(area, x, y) for x, y in assignment.miab_xy),
        )
        return Evaluation(
            per_ue_capacity_bps=tuple(per_ue),
            backhaul_capacity_bps=tuple(backhaul),
            served_capacity_bps=tuple(served),
            objective_bps=sum(per_ue[u] for u in sc.special_team),
            violations=violations,
            feasible=violations.is_zero(),
            loads=loads,
            links=tuple(reports),
        )


def evaluate(scenario: Scenario, assignment: Assignment) -> Evaluation:
    return Evaluator(scenario).evaluate(assignment)


def objective_upper_bound(scenario: Scenario) -> float:
    """|S| * B * delta * se_max: every team member alone on a cell at peak efficiency."""
    params = scenario.radio
    return len(scenario.special_team) * params.rb_per_slot * params.delta_hz * params.se_max


def assignment_feasible(evaluation: Evaluation) -> bool:
    return evaluation.violations.is_zero()


def violation_measure(evaluation: Evaluation, upper_bound: float) -> float:
    """Normalised violation sum; any infeasibility costs at least 1."""
    v = evaluation.violations
    if v.is_zero():
        return 0.0
    backhaul = sum(v.backhaul_deficit_bps) / upper_bound if upper_bound > 0 else float(any(v.backhaul_deficit_bps))
    return (
        1.0
        + sum(v.rsrp_deficit_db.values()) / 10.0
        + backhaul
        + v.range_violation_m / 10.0
        + v.area_violation_m / 10.0
    )


def baseline_assignment(scenario: Scenario) -> Assignment:
    """Every UE on its lowest-path-loss FIAB; MIABs idle at the area centroid, or at the first
    area corner in backhaul range of its nearest FIAB when the centroid is not."""
    params = scenario.radio
    ue_cell = []
    for ue in scenario.ues:
        losses = [
            link_geometry(fiab.as_array(), ue.as_array(), params.f_fiab_ghz, params, scenario.obstacles).pl_db
            for fiab in scenario.fiabs
        ]
        best = min(range(len(losses)), key=lambda k: (losses[k], k))
        ue_cell.append(CellRef(kind=CellKind.FIAB, index=best))
    area = scenario.deployment
    parking, donor = _parking_spot(scenario, [area_project(area, *area.centroid), *area.vertices])
    return Assignment(
        miab_xy=tuple(parking for _ in range(scenario.miab_count)),
        ue_cell=tuple(ue_cell),
        backhaul_donor=tuple(donor for _ in range(scenario.miab_count)),
    )


def _parking_spot(scenario: Scenario, candidates: Sequence[tuple[float, float]]) -> tuple[tuple[float, float], int]:
    """First candidate whose nearest FIAB is within the model range; the first candidate otherwise."""
    choices = []
    for x, y in candidates:
        distances = [math.hypot(f.x - x, f.y - y) for f in scenario.fiabs]
        donor = min(range(len(distances)), key=lambda k: (distances[k], k))
        if MIN_D2D_M <= distances[donor] <= MAX_D2D_M:
            return (x, y), donor
        choices.append(((x, y), donor))
    return choices[0]
