import pytest

from miab_planner.service.capacity import SchedulerKind
from miab_planner.service.geometry import AreaPolygon, Cuboid, Point3
from miab_planner.service.network import Assignment, CellKind, CellRef, Scenario

UE_XY = [(60, 100), (140, 100), (100, 160), (30, 30), (180, 40)]


def fiab(k: int) -> CellRef:
    return CellRef(kind=CellKind.FIAB, index=k)


def miab(m: int) -> CellRef:
    return CellRef(kind=CellKind.MIAB, index=m)


def desk_scenario(miab_count: int = 0, scheduler: SchedulerKind = SchedulerKind.PF, obstacles=(), ue_xy=UE_XY) -> Scenario:
    """200 m square, one FIAB in the middle, five UEs, team {0, 1}."""
    return Scenario(
        areas=(AreaPolygon.rectangle(0, 0, 200, 200, name="A1"),),
        fiabs=(Point3(x=100, y=100, z=10),),
        miab_count=miab_count,
        ues=tuple(Point3(x=x, y=y, z=1.5) for x, y in ue_xy),
        special_team=(0, 1),
        obstacles=tuple(obstacles),
        scheduler=scheduler,
        deployment_area="A1",
    )


@pytest.fixture
def desk_v0() -> Scenario:
    return desk_scenario()


@pytest.fixture
def wall() -> Cuboid:
    # between the FIAB and UE 0
    return Cuboid.from_box(70, 90, 0, 90, 110, 12)


@pytest.fixture
def desk_miab(wall) -> Scenario:
    return desk_scenario(miab_count=1, obstacles=[wall])


@pytest.fixture
def all_on_fiab() -> Assignment:
    return Assignment(miab_xy=((100.0, 40.0),), ue_cell=(fiab(0),) * 5, backhaul_donor=(0,))
