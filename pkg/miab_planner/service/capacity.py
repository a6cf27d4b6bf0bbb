"""Load counting, PF/RR resource-block shares and access/backhaul capacities.

RB shares are static ratios and stay fractional. Quantities whose formula divides
by an empty cell's count are reported as None.
"""
from enum import Enum
from typing import TYPE_CHECKING, Optional

from pydantic import BaseModel, ConfigDict

if TYPE_CHECKING:
    from miab_planner.service.network import Assignment


class SchedulerKind(str, Enum):
    PF = "PF"
    RR = "RR"


class LoadCounts(BaseModel):
    """u_m per MIAB, u_k and u_z per FIAB; donor per MIAB; backhauls per FIAB."""

    model_config = ConfigDict(frozen=True)

    u_m: tuple[int, ...]
    u_k: tuple[int, ...]
    u_z: tuple[int, ...]
    donor: tuple[int, ...]
    backhauls: tuple[int, ...]


class RbAllocation(BaseModel):
    model_config = ConfigDict(frozen=True)

    rb_access_fiab: tuple[Optional[float], ...]
    rb_access_miab: tuple[Optional[float], ...]
    rb_backhaul: tuple[Optional[float], ...]


def compute_loads(assignment: "Assignment", scheduler: SchedulerKind, *, fiab_count: int) -> LoadCounts:
    miab_count = len(assignment.backhaul_donor)
    u_m = [0] * miab_count
    u_k = [0] * fiab_count
    for cell in assignment.ue_cell:
        if cell.kind == "miab":
            u_m[cell.index] += 1
        else:
            u_k[cell.index] += 1

    backhauls = [0] * fiab_count
    backhauled_ues = [0] * fiab_count
    for m, k in enumerate(assignment.backhaul_donor):
        backhauls[k] += 1
        backhauled_ues[k] += u_m[m]

    if scheduler is SchedulerKind.PF:
        u_z = [u_k[k] + backhauled_ues[k] for k in range(fiab_count)]
    else:
        # each MIAB backhaul is one RNTI at its donor
        u_z = [u_k[k] + backhauls[k] for k in range(fiab_count)]

    return LoadCounts(
        u_m=tuple(u_m),
        u_k=tuple(u_k),
        u_z=tuple(u_z),
        donor=tuple(assignment.backhaul_donor),
        backhauls=tuple(backhauls),
    )


def rb_allocation(b: int, loads: LoadCounts, scheduler: SchedulerKind) -> RbAllocation:
    rb_fiab = tuple(b / uz if uz > 0 else None for uz in loads.u_z)
    rb_miab = tuple(b / um if um > 0 else None for um in loads.u_m)
    rb_backhaul: list[Optional[float]] = []
    for m, k in enumerate(loads.donor):
        uz = loads.u_z[k]
        if uz == 0:
            rb_backhaul.append(None)
        elif scheduler is SchedulerKind.PF:
            rb_backhaul.append(b * loads.u_m[m] / uz)
        else:
            rb_backhaul.append(b / uz)
    return RbAllocation(rb_access_fiab=rb_fiab, rb_access_miab=rb_miab, rb_backhaul=tuple(rb_backhaul))


def link_bandwidth(rb: float, delta_hz: float) -> float:
    if rb < 0:
        raise ValueError(f"RB count must be non-negative, got {rb}")
    return rb * delta_hz


def access_capacity(b: int, delta_hz: float, eta: float, divisor: int) -> float:
    """B * delta * eta / divisor; divisor is U_m for MIAB access, U_z for FIAB access."""
    if divisor < 1:
        raise ValueError("access capacity requested for a cell without load")
    return b * delta_hz * eta / divisor


def backhaul_capacity(b: int, delta_hz: float, eta: float, u_m: int, u_z: int, scheduler: SchedulerKind) -> float:
    if u_z == 0:
        # only reachable under PF with an idle MIAB and an idle donor
        return 0.0
    if scheduler is SchedulerKind.PF:
        return b * u_m * delta_hz * eta / u_z
    return b * delta_hz * eta / u_z
