import json
from pathlib import Path
from typing import Any, Iterable, Optional, Union

from jsonschema import Draft202012Validator
from pydantic import ValidationError
from referencing import Registry, Resource

from miab_planner.exceptions import InputError
from miab_planner.models import AssignmentFile, CampaignFile, RunManifest, ScenarioFile
from miab_planner.service.experiments import CampaignConfig
from miab_planner.service.network import Assignment, Scenario
from miab_planner.service.optimizer import GaConfig
from miab_planner.service.ports import AbstractScenarioRepository
from shared.logging import get_logger
from shared.settings import settings

logger = get_logger(__name__)

SCHEMA_FILES = {
    "scenario": "scenario-v1.json",
    "assignment": "assignment-v1.json",
    "campaign": "campaign-v1.json",
}
GA_SCHEMA_REF = "campaign-v1.json#/$defs/ga"


def _json_path(parts: Iterable[Union[str, int]]) -> Optional[str]:
    path = "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in parts).lstrip(".")
    return path or None


def wrap_validation_error(source: str, exc: ValidationError) -> InputError:
    first = exc.errors()[0]
    return InputError(f"{source}: {first['msg']}", field=_json_path(first["loc"]))


class JsonScenarioStore(AbstractScenarioRepository):
    """Reads planner documents: JSON syntax, then JSON Schema, then the domain models."""

    def __init__(self, schema_dir: Optional[str] = None):
        self.schema_dir = Path(schema_dir or settings.SCHEMA_DIR)
        self._schemas = {
            kind: json.loads((self.schema_dir / name).read_text(encoding="utf-8")) for kind, name in SCHEMA_FILES.items()
        }
        self._registry: Registry = Registry().with_resources(
            (SCHEMA_FILES[kind], Resource.from_contents(schema)) for kind, schema in self._schemas.items()
        )

    def schema(self, kind: str) -> dict[str, Any]:
        if kind not in self._schemas:
            raise InputError(f"unknown schema '{kind}', expected one of {sorted(self._schemas)}")
        return self._schemas[kind]

    def _validator(self, kind: str) -> Draft202012Validator:
        schema = {"$ref": GA_SCHEMA_REF} if kind == "ga" else self.schema(kind)
        return Draft202012Validator(schema, registry=self._registry)

    def read_document(self, path: str, kind: str) -> dict[str, Any]:
        logger.debug(f"Reading {kind} document {path}")
        data = self._read_json(path, kind)
        self.check_document(data, kind, path)
        return data

    def _read_json(self, path: str, kind: str) -> Any:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise InputError(f"cannot read {kind} file '{path}': {exc.strerror}") from exc
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON, {exc.msg} (column {exc.colno})", line=exc.lineno) from exc

    def check_document(self, data: Any, kind: str, source: str) -> None:
        errors = sorted(self._validator(kind).iter_errors(data), key=lambda e: [str(p) for p in e.absolute_path])
        if errors:
            first = errors[0]
            raise InputError(f"{source}: {first.message}", field=_json_path(first.absolute_path))

    def parse_scenario(self, data: Any, source: str) -> Scenario:
        """Scenario from an in-memory document, e.g. one embedded in a run manifest."""
        self.check_document(data, "scenario", source)
        try:
            return ScenarioFile.model_validate(data).to_scenario()
        except ValidationError as exc:
            raise wrap_validation_error(source, exc) from exc

    def load_scenario(self, path: str) -> Scenario:
        data = self.read_document(path, "scenario")
        try:
            document = ScenarioFile.model_validate(data)
        except ValidationError as exc:
            raise wrap_validation_error(path, exc) from exc
        logger.info(f"Loaded scenario {path}: {len(document.ues)} UEs, {len(document.fiabs)} FIABs, {document.miab_count} MIABs")
        return document.to_scenario()

    def load_manifest(self, path: str) -> RunManifest:
        """The run manifest of an output document, or a bare manifest file."""
        data = self._read_json(path, "manifest")
        if isinstance(data, dict) and "manifest" in data:
            data = data["manifest"]
        try:
            return RunManifest.model_validate(data)
        except ValidationError as exc:
            raise wrap_validation_error(path, exc) from exc

    def parse_assignment(self, data: Any, source: str) -> Assignment:
        self.check_document(data, "assignment", source)
        try:
            return AssignmentFile.model_validate(data).to_assignment()
        except ValidationError as exc:
            raise wrap_validation_error(source, exc) from exc

    def load_assignment(self, path: str) -> Assignment:
        data = self.read_document(path, "assignment")
        try:
            return AssignmentFile.model_validate(data).to_assignment()
        except ValidationError as exc:
            raise wrap_validation_error(path, exc) from exc

    def load_campaign(self, path: str) -> CampaignConfig:
        data = self.read_document(path, "campaign")
        try:
            return CampaignFile.model_validate(data).to_config()
        except ValidationError as exc:
            raise wrap_validation_error(path, exc) from exc

    def load_ga_config(self, path: str) -> GaConfig:
        data = self.read_document(path, "ga")
        try:
            return GaConfig.model_validate(data)
        except ValidationError as exc:
            raise wrap_validation_error(path, exc) from exc
