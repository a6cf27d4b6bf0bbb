import json
from pathlib import Path

import pytest

SCENARIOS = Path(__file__).resolve().parents[2] / "scenarios"


def _rectangle(name: str, xmin: float, ymin: float, xmax: float, ymax: float) -> dict:
    return {
        "name": name,
        "half_planes": [
            {"a": 1, "b": 0, "c": xmax},
            {"a": -1, "b": 0, "c": -xmin},
            {"a": 0, "b": 1, "c": ymax},
            {"a": 0, "b": -1, "c": -ymin},
        ],
    }


@pytest.fixture
def small_campaign_file(tmp_path: Path) -> Path:
    """Two areas, two scenarios each, a GA small enough for CI."""
    document = {
        "areas": [_rectangle("A1", 0, 0, 200, 200), _rectangle("A2", 300, 0, 500, 150)],
        "scenarios_per_area": 2,
        "seed": 99,
        "ga": {"population_size": 6, "generations": 3, "elite_count": 1},
    }
    path = tmp_path / "campaign.json"
    path.write_text(json.dumps(document, indent=2))
    return path


@pytest.fixture
def desk_scenario_file() -> Path:
    return SCENARIOS / "desk_miab.json"
