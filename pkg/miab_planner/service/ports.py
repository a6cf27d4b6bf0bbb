from abc import ABC, abstractmethod
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from miab_planner.service.experiments import CampaignConfig
    from miab_planner.service.network import Assignment, Scenario
    from miab_planner.service.optimizer import GaConfig, SolveResult


class AbstractSolver(ABC):
    """Interface shared by the placement solvers (GA and exhaustive oracle)."""

    name: str

    @abstractmethod
    def solve(self, scenario: "Scenario") -> "SolveResult":
        """Returns the best assignment found for the scenario, feasible or least violating."""
        raise NotImplementedError

    @abstractmethod
    def describe(self) -> dict:
        """Solver settings recorded in run manifests."""
        raise NotImplementedError


class AbstractScenarioRepository(ABC):
    """Abstract interface for reading planner documents."""

    @abstractmethod
    def load_scenario(self, path: str) -> "Scenario":
        """Loads and validates a scenario document."""
        raise NotImplementedError

    @abstractmethod
    def load_assignment(self, path: str) -> "Assignment":
        """Loads an assignment document; structural checks against a scenario happen at evaluation."""
        raise NotImplementedError

    @abstractmethod
    def load_campaign(self, path: str) -> "CampaignConfig":
        """Loads a campaign configuration; unset fields keep their defaults."""
        raise NotImplementedError

    @abstractmethod
    def load_ga_config(self, path: str) -> "GaConfig":
        """Loads GA hyperparameters; unset fields keep their defaults."""
        raise NotImplementedError
