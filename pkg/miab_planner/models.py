"""File-level models: scenario, assignment and campaign documents plus the run manifest.

Documents are checked against libs/schemas/*-v1.json before they reach these models.
"""
from __future__ import annotations

import re
from typing import Any, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator

from miab_planner import __version__
from miab_planner.service.experiments import CampaignConfig
from miab_planner.service.network import Assignment, CellKind, CellRef, Scenario

CELL_PATTERN = re.compile(r"^(fiab|miab)(\d+)$")


class RunManifest(BaseModel):
    """Everything needed to re-run a command and get the same bytes."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    tool: str = "miab-planner"
    toolVersion: str = __version__
    command: str
    masterSeed: Optional[int] = None
    config: dict[str, Any] = {}
    decisions: dict[str, Any] = {}


class ScenarioFile(Scenario):
    """Scenario document; `manifest` is present when the file was written by a run."""

    manifest: Optional[RunManifest] = None

    def to_scenario(self) -> Scenario:
        return Scenario(**{name: getattr(self, name) for name in Scenario.model_fields})

    @classmethod
    def from_scenario(cls, scenario: Scenario, manifest: Optional[RunManifest] = None) -> "ScenarioFile":
        return cls(**{name: getattr(scenario, name) for name in Scenario.model_fields}, manifest=manifest)


class AssignmentFile(BaseModel):
    """Assignment document; cells are written as 'fiab<k>' or 'miab<m>'."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    miab_xy: List[Tuple[float, float]] = []
    ue_cell: List[str] = Field(..., min_length=1)
    backhaul_donor: List[int] = []
    manifest: Optional[RunManifest] = None

    @field_validator("ue_cell")
    @classmethod
    def _cell_names(cls, cells: List[str]) -> List[str]:
        for u, cell in enumerate(cells):
            if not CELL_PATTERN.match(cell):
                raise ValueError(f"UE {u}: cell '{cell}' must look like 'fiab0' or 'miab0'")
        return cells

    def to_assignment(self) -> Assignment:
        refs = []
        for cell in self.ue_cell:
            match = CELL_PATTERN.match(cell)
            assert match is not None
            refs.append(CellRef(kind=CellKind(match.group(1)), index=int(match.group(2))))
        return Assignment(
            miab_xy=tuple(self.miab_xy), ue_cell=tuple(refs), backhaul_donor=tuple(self.backhaul_donor)
        )

    @classmethod
    def from_assignment(cls, assignment: Assignment, manifest: Optional[RunManifest] = None) -> "AssignmentFile":
        return cls(
            miab_xy=list(assignment.miab_xy),
            ue_cell=[str(c) for c in assignment.ue_cell],
            backhaul_donor=list(assignment.backhaul_donor),
            manifest=manifest,
        )


class CampaignFile(CampaignConfig):
    manifest: Optional[RunManifest] = None

    def to_config(self) -> CampaignConfig:
        return CampaignConfig(
            **{name: getattr(self, name) for name in CampaignConfig.model_fields if name in self.model_fields_set}
        )
