"""Per-link radio chain: UMi path loss, RSRP with load-based power share,
thermal noise, interference-free SINR and the clamped spectral-efficiency regression.

Path losses are handled in dB; linear units only appear in the RSRP/noise ratio.
"""
import math
from typing import Sequence

from pydantic import BaseModel, ConfigDict, Field

from miab_planner.exceptions import ModelRangeError
from miab_planner.service.geometry import Cuboid, LosClass, Point3, breakpoint_distance, los_between

SCS_BASE_HZ = 15_000.0
SUBCARRIERS_PER_RB = 9
MIN_D2D_M = 10.0
MAX_D2D_M = 5000.0


class RadioParams(BaseModel):
    """Radio configuration; defaults are the campaign parameter table."""

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    pt_dbm: float = Field(default=24.0, gt=0)
    mu: int = Field(default=1, ge=0, le=3)
    rb_per_slot: int = Field(default=133, gt=0)
    subcarriers_per_rb: int = Field(default=SUBCARRIERS_PER_RB, gt=0)
    scs_base_hz: float = Field(default=SCS_BASE_HZ, gt=0)
    noise_exponent: float = -19.9
    q_rx_lev_min_dbm: float = -122.0
    se_slope: float = Field(default=0.23, gt=0)
    se_intercept: float = Field(default=0.21, gt=0)
    se_max: float = Field(default=6.4, gt=0)
    f_miab_ghz: float = Field(default=3.9, gt=0)
    f_fiab_ghz: float = Field(default=3.8, gt=0)
    h_miab: float = Field(default=5.0, gt=0)
    h_fiab: float = Field(default=10.0, gt=0)
    h_ut: float = Field(default=1.5, gt=0)
    h_e: float = Field(default=1.0, gt=0)

    @property
    def delta_hz(self) -> float:
        return self.subcarriers_per_rb * self.scs_base_hz * 2**self.mu


class LinkBudget(BaseModel):
    model_config = ConfigDict(frozen=True)

    los_class: LosClass
    d2d_m: float
    d3d_m: float
    dbp_m: float
    pl_db: float
    rsrp_w: float
    rsrp_dbm: float
    sinr_db: float
    se: float
    above_rsrp_floor: bool


def delta_fr1(mu: int) -> float:
    """Subcarrier spacing times the 9 subcarriers of an RB, in Hz."""
    if mu not in (0, 1, 2, 3):
        raise ModelRangeError(f"FR1 numerology must be 0..3, got {mu}")
    return 2**mu * SCS_BASE_HZ * SUBCARRIERS_PER_RB


def check_d2d_range(d2d: float) -> None:
    if not MIN_D2D_M <= d2d <= MAX_D2D_M:
        raise ModelRangeError(f"2D distance {d2d:.3f} m outside the UMi model range [{MIN_D2D_M}, {MAX_D2D_M}]")


def pathloss_los_db(d2d: float, d3d: float, dbp: float, f_ghz: float, h_bs: float, h_ut: float) -> float:
    check_d2d_range(d2d)
    if d2d <= dbp:
        return 32.4 + 21.0 * math.log10(d3d) + 20.0 * math.log10(f_ghz)
    return (
        32.4
        + 40.0 * math.log10(d3d)
        + 20.0 * math.log10(f_ghz)
        - 9.5 * math.log10(dbp**2 + (h_bs - h_ut) ** 2)
    )


def pathloss_nlos_db(d3d: float, f_ghz: float, h_ut: float, los_pl_db: float) -> float:
    nlos = 22.4 + 35.3 * math.log10(d3d) + 21.3 * math.log10(f_ghz) - 0.3 * (h_ut - 1.5)
    return max(los_pl_db, nlos)


def noise_power_w(rb_per_slot: int, delta_hz: float, noise_exponent: float = -19.9) -> float:
    return 10.0**noise_exponent * (rb_per_slot * delta_hz)


def rsrp_w(pt_dbm: float, share_count: int, pl_db: float) -> float:
    """Received power per served RNTI; the transmit power is split over share_count."""
    if share_count < 1:
        raise ValueError("RSRP requested for a cell without load (share_count < 1)")
    return 10.0 ** ((pt_dbm - 30.0) / 10.0) / (share_count * 10.0 ** (pl_db / 10.0))


def watts_to_dbm(power_w: float) -> float:
    return 10.0 * math.log10(power_w) + 30.0


def sinr_db(rsrp: float, noise_w: float) -> float:
    return 10.0 * math.log10(rsrp / noise_w)


def spectral_efficiency(sinr: float, slope: float = 0.23, intercept: float = 0.21, se_max: float = 6.4) -> float:
    return min(max(slope * sinr - intercept, 0.0), se_max)


def pathloss_db(
    d2d: float, d3d: float, los: LosClass, f_ghz: float, h_bs: float, h_ut: float, h_e: float
) -> tuple[float, float]:
    """(path loss, breakpoint distance) of one link."""
    dbp = breakpoint_distance(h_bs, h_ut, h_e, f_ghz)
    pl = pathloss_los_db(d2d, d3d, dbp, f_ghz, h_bs, h_ut)
    if los is LosClass.NLOS:
        pl = pathloss_nlos_db(d3d, f_ghz, h_ut, pl)
    return pl, dbp


def budget_from_pathloss(
    pl_db: float,
    share_count: int,
    params: RadioParams,
    los: LosClass,
    d2d: float,
    d3d: float,
    dbp: float,
) -> LinkBudget:
    """Second half of the chain, from a known path loss to spectral efficiency."""
    received = rsrp_w(params.pt_dbm, share_count, pl_db)
    received_dbm = watts_to_dbm(received)
    noise = noise_power_w(params.rb_per_slot, params.delta_hz, params.noise_exponent)
    sinr = sinr_db(received, noise)
    return LinkBudget(
        los_class=los,
        d2d_m=d2d,
        d3d_m=d3d,
        dbp_m=dbp,
        pl_db=pl_db,
        rsrp_w=received,
        rsrp_dbm=received_dbm,
        sinr_db=sinr,
        se=spectral_efficiency(sinr, params.se_slope, params.se_intercept, params.se_max),
        above_rsrp_floor=received_dbm >= params.q_rx_lev_min_dbm,
    )


def link_budget(
    tx_pos: Point3,
    rx_pos: Point3,
    f_ghz: float,
    share_count: int,
    params: RadioParams,
    obstacles: Sequence[Cuboid] = (),
) -> LinkBudget:
    """Full chain for one link; the transmitter is the base-station end (height h_BS)."""
    tx = tx_pos.as_array()
    rx = rx_pos.as_array()
    d2d = math.hypot(tx_pos.x - rx_pos.x, tx_pos.y - rx_pos.y)
    d3d = math.dist(tx, rx)
    los = los_between(tx, rx, obstacles)
    pl, dbp = pathloss_db(d2d, d3d, los, f_ghz, tx_pos.z, rx_pos.z, params.h_e)
    return budget_from_pathloss(pl, share_count, params, los, d2d, d3d, dbp)
