"""Exception hierarchy shared by the planner modules and the CLI.

Each exception carries the CLI exit code it maps to; infeasible plans are results,
not exceptions.
"""
from typing import Optional


class PlannerError(Exception):
    exit_code = 1


class InputError(PlannerError, ValueError):
    """Invalid scenario/assignment/config content (schema or invariant)."""

    exit_code = 2

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        self.field = field
        self.line = line
        location = []
        if line is not None:
            location.append(f"line {line}")
        if field:
            location.append(f"field '{field}'")
        super().__init__(f"{message} ({', '.join(location)})" if location else message)


class ModelRangeError(PlannerError, ValueError):
    """Inputs outside the validity range of the UMi channel model."""

    exit_code = 2


class AssignmentError(PlannerError, ValueError):
    """Structurally invalid assignment: missing or multiple associations."""

    exit_code = 2


class DegenerateAreaError(InputError):
    pass


class OracleBudgetError(PlannerError):
    exit_code = 5

    def __init__(self, required: int, budget: int):
        self.required = required
        self.budget = budget
        super().__init__(f"Oracle enumeration needs {required} evaluations, budget is {budget}")


class ScenarioGenerationError(PlannerError):
    def __init__(self, area_id: str, scenario_index: int, reason: str):
        self.area_id = area_id
        self.scenario_index = scenario_index
        super().__init__(f"Scenario generation failed for area '{area_id}', scenario {scenario_index}: {reason}")


class UndefinedGainError(PlannerError, ValueError):
    pass


class UnsupportedMetricError(PlannerError, ValueError):
    pass
