import argparse
import json
import sys
from typing import Any, Optional, Sequence, TypeVar

from pydantic import BaseModel, ValidationError

from miab_planner import __version__
from miab_planner.adapters.report_writer import (
    assignment_payload,
    evaluation_document,
    scenario_payload,
    solve_document,
    write_campaign,
    write_json,
    write_trace_csv,
)
from miab_planner.adapters.scenario_store import JsonScenarioStore, wrap_validation_error
from miab_planner.exceptions import InputError, PlannerError
from miab_planner.models import RunManifest
from miab_planner.service.experiments import CampaignConfig, run_campaign
from miab_planner.service.network import Assignment, Evaluator, Scenario, baseline_assignment
from miab_planner.service.optimizer import ORACLE_TIE_BREAK, GaConfig, GaSolver, OracleSolver
from shared.logging import get_logger
from shared.settings import settings

logger = get_logger(__name__)

ModelT = TypeVar("ModelT", bound=BaseModel)

EXIT_OK = 0
EXIT_INFEASIBLE = 3
EXIT_SEARCH_FAILED = 4

DECISIONS = {
    "blockage": "segment crosses a cuboid face or has its midpoint strictly inside",
    "out_of_range_links": "no budget, zero capacity, range violation in meters outside [10, 5000]",
    "idle_pf_donor": "idle MIAB on an idle PF donor gets no backhaul budget and zero capacity",
    "violation_measure": "1 + rsrp_deficit_db/10 + backhaul_deficit/upper_bound + range_m/10 + area_m/10",
    "ga_trace": "best feasible objective so far, 0 before the first feasible individual",
    "ga_operators": "DEAP tournament selection, blend and uniform crossover, gaussian and uniform-int mutation",
    "ga_random_streams": "initial individuals from SeedSequence([seed, 0, index]), operators from random.seed per generation",
    "ga_refinement": "association sweep and compass search on each new incumbent",
    "ga_initial_population": "individual 0 is the baseline assignment",
    "oracle_tie_break": ORACLE_TIE_BREAK,
}


def _resolve_seed(flag: Optional[int], file_value: Optional[int] = None) -> int:
    """Flag, then file value, then MIAB_PLAN_SEED, then 0."""
    for value in (flag, file_value, settings.SEED):
        if value is not None:
            return value
    return 0


def _manifest(command: str, seed: Optional[int], config: dict[str, Any], **decisions: Any) -> RunManifest:
    return RunManifest(command=command, masterSeed=seed, config=config, decisions={**DECISIONS, **decisions})


def _evaluate(scenario: Scenario, assignment: Assignment, source: str, out: Optional[str]) -> int:
    evaluation = Evaluator(scenario).evaluate(assignment)
    manifest = _manifest(
        "evaluate",
        None,
        {"scenario": scenario_payload(scenario), "assignment": assignment_payload(assignment)},
        assignment_source=source,
    )
    write_json(evaluation_document(assignment, evaluation, manifest), out)
    if not evaluation.feasible:
        logger.warning("Assignment is infeasible")
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace, store: JsonScenarioStore) -> int:
    scenario = store.load_scenario(args.scenario)
    assignment = store.load_assignment(args.assignment) if args.assignment else baseline_assignment(scenario)
    return _evaluate(scenario, assignment, args.assignment or "baseline", args.out)


def _ga_config(args: argparse.Namespace, store: JsonScenarioStore) -> GaConfig:
    base = store.load_ga_config(args.ga_config) if args.ga_config else GaConfig()
    file_seed = base.seed if "seed" in base.model_fields_set else None
    overrides = {
        "generations": args.generations,
        "population_size": args.population,
        "mutation_rate": args.mutation_rate,
        "crossover_rate": args.crossover_rate,
        "elite_count": args.elite,
        "penalty_weight": args.penalty_weight,
    }
    merged = {**base.model_dump(), **{k: v for k, v in overrides.items() if v is not None}}
    merged["seed"] = _resolve_seed(args.seed, file_seed)
    try:
        return GaConfig(**merged)
    except ValidationError as exc:
        raise wrap_validation_error("command line", exc) from exc


def _solve(scenario: Scenario, config: GaConfig, workers: int, out: Optional[str], trace: Optional[str]) -> int:
    result = GaSolver(config, workers=workers).solve(scenario)
    manifest = _manifest(
        "solve", config.seed, {"ga": config.model_dump(mode="json"), "scenario": scenario_payload(scenario)}
    )
    write_json(solve_document(result, manifest), out)
    if trace:
        write_trace_csv(result, trace)
    if not result.feasible:
        logger.warning("No feasible assignment found; the least violating one was written")
        return EXIT_SEARCH_FAILED
    return EXIT_OK


def cmd_solve(args: argparse.Namespace, store: JsonScenarioStore) -> int:
    return _solve(store.load_scenario(args.scenario), _ga_config(args, store), args.workers or 1, args.out, args.trace)


def _oracle(scenario: Scenario, grid_step: float, budget: Optional[int], out: Optional[str]) -> int:
    solver = OracleSolver(grid_step, budget)
    result = solver.solve(scenario)
    manifest = _manifest(
        "oracle", None, {**solver.describe(), "budget": budget, "scenario": scenario_payload(scenario)}
    )
    write_json(solve_document(result, manifest), out)
    if not result.feasible:
        logger.warning("No feasible grid assignment exists; the least violating one was written")
        return EXIT_SEARCH_FAILED
    return EXIT_OK


def cmd_oracle(args: argparse.Namespace, store: JsonScenarioStore) -> int:
    return _oracle(store.load_scenario(args.scenario), args.grid_step, args.budget, args.out)


def _campaign_config(args: argparse.Namespace, store: JsonScenarioStore) -> CampaignConfig:
    config = store.load_campaign(args.config)
    file_seed = config.seed if "seed" in config.model_fields_set else None
    updates: dict[str, Any] = {"seed": _resolve_seed(args.seed, file_seed)}
    if args.v1_with_miab:
        updates["v1_with_miab"] = True
    if args.solver:
        updates["solver"] = args.solver
    if args.scenarios is not None:
        updates["scenarios_per_area"] = args.scenarios
    try:
        return CampaignConfig(**{**config.model_dump(), **updates})
    except ValidationError as exc:
        raise wrap_validation_error("command line", exc) from exc


def _campaign(config: CampaignConfig, workers: int, out_dir: str) -> int:
    report = run_campaign(config, workers=workers)
    manifest = _manifest(
        "campaign",
        config.seed,
        config.model_dump(mode="json"),
        v1_mode="with MIAB (obstacle-unaware placement)" if config.v1_with_miab else "no MIAB, all UEs on FIAB",
        obstacle_ranges=config.obstacle_ranges.model_dump(),
        ga=config.ga.model_dump(mode="json"),
        scenario_seeds="SeedSequence([seed, area_index, scenario_index])",
    )
    write_campaign(report, config, manifest, out_dir)
    if report.records and all(r.status == "failed" for r in report.records):
        logger.error("Every campaign run failed")
        return EXIT_SEARCH_FAILED
    return EXIT_OK


def cmd_campaign(args: argparse.Namespace, store: JsonScenarioStore) -> int:
    return _campaign(_campaign_config(args, store), args.workers or settings.effective_workers, args.out_dir)


def _validated(model: type[ModelT], data: Any, source: str) -> ModelT:
    try:
        return model.model_validate(data)
    except ValidationError as exc:
        raise wrap_validation_error(source, exc) from exc


def cmd_rerun(args: argparse.Namespace, store: JsonScenarioStore) -> int:
    """Repeats a run from the manifest embedded in one of its outputs."""
    manifest = store.load_manifest(args.manifest)
    config = manifest.config
    source = f"{args.manifest} manifest"
    logger.info(f"Re-running '{manifest.command}' from {args.manifest} (written by {manifest.tool} {manifest.toolVersion})")
    if manifest.toolVersion != __version__:
        logger.warning(f"Manifest was written by version {manifest.toolVersion}, running {__version__}")
    try:
        if manifest.command == "campaign":
            if not args.out_dir:
                raise InputError("re-running a campaign needs --out-dir", field="out_dir")
            campaign = _validated(CampaignConfig, config, source)
            return _campaign(campaign, args.workers or settings.effective_workers, args.out_dir)
        scenario = store.parse_scenario(config["scenario"], source)
        if manifest.command == "solve":
            return _solve(scenario, _validated(GaConfig, config["ga"], source), args.workers or 1, args.out, args.trace)
        if manifest.command == "oracle":
            return _oracle(scenario, config["grid_step_m"], config.get("budget"), args.out)
        if manifest.command == "evaluate":
            assignment = store.parse_assignment(config["assignment"], source)
            return _evaluate(scenario, assignment, manifest.decisions.get("assignment_source", "manifest"), args.out)
    except KeyError as exc:
        raise InputError(f"{source}: missing {exc.args[0]!r}", field=f"config.{exc.args[0]}") from exc
    raise InputError(f"{source}: cannot re-run command '{manifest.command}'", field="command")


def cmd_schema(args: argparse.Namespace, store: JsonScenarioStore) -> int:
    sys.stdout.write(json.dumps(store.schema(args.kind), indent=2) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="miab-plan", description="MIAB/FIAB IAB network planner")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evaluate", help="Evaluate an assignment (default: every UE on its best FIAB)")
    p.add_argument("scenario", help="Scenario JSON file")
    p.add_argument("assignment", nargs="?", help="Assignment JSON file")
    p.add_argument("--out", help="Write the JSON result here instead of stdout")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("solve", help="Place the MIAB with the genetic algorithm")
    p.add_argument("scenario", help="Scenario JSON file")
    p.add_argument("--ga-config", help="GA hyperparameter JSON file")
    p.add_argument("--seed", type=int, help="Master seed (fallback: MIAB_PLAN_SEED)")
    p.add_argument("--generations", type=int)
    p.add_argument("--population", type=int)
    p.add_argument("--mutation-rate", type=float)
    p.add_argument("--crossover-rate", type=float)
    p.add_argument("--elite", type=int)
    p.add_argument("--penalty-weight", type=float)
    p.add_argument("--workers", type=int, help="Processes for population evaluation (default 1)")
    p.add_argument("--trace", help="Write generation,best_objective_bps,feasible_fraction CSV here")
    p.add_argument("--out", help="Write the JSON result here instead of stdout")
    p.set_defaults(handler=cmd_solve)

    p = sub.add_parser("oracle", help="Exhaustive grid and association search")
    p.add_argument("scenario", help="Scenario JSON file")
    p.add_argument("--grid-step", type=float, default=20.0, help="Grid spacing in meters (default 20)")
    p.add_argument("--budget", type=int, help="Evaluation budget (default MIAB_PLAN_ORACLE_BUDGET)")
    p.add_argument("--out", help="Write the JSON result here instead of stdout")
    p.set_defaults(handler=cmd_oracle)

    p = sub.add_parser("campaign", help="Run the V0-V5 campaign")
    p.add_argument("config", help="Campaign JSON file")
    p.add_argument("--out-dir", required=True, help="Directory for the CSV and JSON outputs")
    p.add_argument("--seed", type=int, help="Master seed (fallback: MIAB_PLAN_SEED)")
    p.add_argument("--workers", type=int, help="Worker processes (default: available parallelism)")
    p.add_argument("--v1-with-miab", action="store_true", help="V1 keeps a MIAB placed without obstacle knowledge")
    p.add_argument("--solver", choices=["ga", "oracle"])
    p.add_argument("--scenarios", type=int, help="Scenarios per area")
    p.set_defaults(handler=cmd_campaign)

    p = sub.add_parser("rerun", help="Repeat a run from the manifest embedded in one of its outputs")
    p.add_argument("--manifest", required=True, help="Output JSON (or bare manifest) of the run to repeat")
    p.add_argument("--out", help="Write the JSON result here instead of stdout (evaluate, solve, oracle)")
    p.add_argument("--out-dir", help="Directory for the campaign outputs")
    p.add_argument("--trace", help="Write the GA trace CSV here (solve)")
    p.add_argument("--workers", type=int, help="Worker processes; results do not depend on it")
    p.set_defaults(handler=cmd_rerun)

    p = sub.add_parser("schema", help="Print a bundled JSON Schema")
    p.add_argument("kind", nargs="?", default="scenario", choices=["scenario", "assignment", "campaign"])
    p.set_defaults(handler=cmd_schema)
    return parser


def main(argv: Optional[Sequence[str]] = None, store: Optional[JsonScenarioStore] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args, store or JsonScenarioStore())
    except PlannerError as exc:
        logger.error(str(exc))
        sys.stderr.write(f"error: {exc}\n")
        return exc.exit_code
    except Exception:
        logger.error(f"Unexpected failure in '{args.command}'", exc_info=True)
        return 1


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
