"""MIAB placement search.

The genetic algorithm runs on DEAP over a flat gene list: (x, y) per MIAB, then a cell
gene per UE and a donor gene per MIAB. Area violations are repaired by projection and
written back into the genes; the remaining constraints are penalised. The incumbent is
polished by a local search that sweeps the association patterns and walks the MIAB
positions on a shrinking compass. All random draws happen in the calling process from
streams keyed by (seed, generation), so results do not depend on the worker count.

The oracle enumerates every association pattern at every grid position of the
deployment area and is meant for desk-scale certification of the GA.
"""
import itertools
import math
import random
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Iterator, NamedTuple, Optional, Sequence

import numpy as np
from deap import base, creator, tools
from pydantic import BaseModel, ConfigDict, Field, model_validator

from miab_planner.exceptions import InputError, OracleBudgetError
from miab_planner.service.geometry import AreaPolygon, area_project, area_sample
from miab_planner.service.network import (
    Assignment,
    CellKind,
    CellRef,
    Evaluation,
    Evaluator,
    Scenario,
    baseline_assignment,
    violation_measure,
)
from miab_planner.service.ports import AbstractSolver
from shared.logging import get_logger
from shared.settings import settings

logger = get_logger(__name__)

MUTATION_SIGMA_FRACTION = 0.05
TOURNAMENT_SIZE = 2
HALL_OF_FAME_SIZE = 3
# exhaustive association sweep up to this many patterns, greedy per-gene sweep above
SWEEP_PATTERN_LIMIT = 64
GREEDY_SWEEP_PASSES = 2
MIN_COMPASS_STEP_M = 0.25
MAX_COMPASS_MOVES = 200
MAX_REFINE_ROUNDS = 3
ORACLE_TIE_BREAK = "lexicographically smallest (position index tuple, cell genes, donor genes)"

if not hasattr(creator, "PlanFitness"):
    creator.create("PlanFitness", base.Fitness, weights=(1.0,))
if not hasattr(creator, "PlanIndividual"):
    creator.create("PlanIndividual", list, fitness=creator.PlanFitness)


class GaConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    population_size: int = Field(default=50, ge=2)
    mutation_rate: float = Field(default=0.20, ge=0.0, le=1.0)
    crossover_rate: float = Field(default=0.80, ge=0.0, le=1.0)
    generations: int = Field(default=200, ge=1)
    elite_count: int = Field(default=2, ge=0)
    seed: int = Field(default=0, ge=0, lt=2**64)
    penalty_weight: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _elites_fit(self) -> "GaConfig":
        if self.elite_count >= self.population_size:
            raise ValueError("elite_count must be smaller than population_size")
        return self


class GeneLayout(NamedTuple):
    """Slices of the flat gene list. Cell gene g < F is FIAB g, otherwise MIAB g - F."""

    miab_count: int
    ue_count: int
    fiab_count: int

    @classmethod
    def of(cls, scenario: Scenario) -> "GeneLayout":
        return cls(scenario.miab_count, len(scenario.ues), len(scenario.fiabs))

    @property
    def positions(self) -> slice:
        return slice(0, 2 * self.miab_count)

    @property
    def cells(self) -> slice:
        return slice(2 * self.miab_count, 2 * self.miab_count + self.ue_count)

    @property
    def donors(self) -> slice:
        return slice(2 * self.miab_count + self.ue_count, 3 * self.miab_count + self.ue_count)

    @property
    def length(self) -> int:
        return 3 * self.miab_count + self.ue_count


class SolveResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    solver: str
    best_assignment: Assignment
    best_evaluation: Evaluation
    feasible: bool
    generations_run: int
    best_objective_trace: tuple[float, ...]
    feasible_fraction_trace: tuple[float, ...]
    evaluations_count: int
    meta: dict[str, Any] = {}


def substream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


def derived_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1, dtype=np.uint64)[0])


def decode_and_repair(genes: Sequence[float], scenario: Scenario) -> Assignment:
    layout = GeneLayout.of(scenario)
    flat = genes[layout.positions]
    positions = tuple(area_project(scenario.deployment, float(x), float(y)) for x, y in zip(flat[::2], flat[1::2]))
    cells = tuple(
        CellRef(kind=CellKind.FIAB, index=int(g))
        if g < layout.fiab_count
        else CellRef(kind=CellKind.MIAB, index=int(g) - layout.fiab_count)
        for g in genes[layout.cells]
    )
    return Assignment(miab_xy=positions, ue_cell=cells, backhaul_donor=tuple(int(k) for k in genes[layout.donors]))


def encode(assignment: Assignment, scenario: Scenario) -> list[float]:
    fiab_count = len(scenario.fiabs)
    genes: list[float] = [float(v) for xy in assignment.miab_xy for v in xy]
    genes += [c.index if c.kind is CellKind.FIAB else c.index + fiab_count for c in assignment.ue_cell]
    genes += list(assignment.backhaul_donor)
    return genes


class _Candidate:
    """Scored assignment; better_than() orders feasible-by-objective before least-violating."""

    __slots__ = ("assignment", "evaluation", "fitness", "violation")

    def __init__(self, assignment: Assignment, evaluation: Evaluation, penalty_weight: float, upper_bound: float):
        self.assignment = assignment
        self.evaluation = evaluation
        self.violation = violation_measure(evaluation, upper_bound)
        self.fitness = evaluation.objective_bps - penalty_weight * self.violation

    def __deepcopy__(self, memo: dict) -> "_Candidate":
        # immutable once scored, so clones of an individual share it
        return self

    def better_than(self, other: Optional["_Candidate"]) -> bool:
        if other is None:
            return True
        if self.evaluation.feasible != other.evaluation.feasible:
            return self.evaluation.feasible
        if self.evaluation.feasible:
            return self.evaluation.objective_bps > other.evaluation.objective_bps
        return (self.violation, -self.evaluation.objective_bps) < (other.violation, -other.evaluation.objective_bps)


_WORKER_EVALUATOR: Optional[Evaluator] = None


def _init_worker(scenario: Scenario) -> None:
    global _WORKER_EVALUATOR
    _WORKER_EVALUATOR = Evaluator(scenario)


def _evaluate_in_worker(assignment: Assignment) -> Evaluation:
    assert _WORKER_EVALUATOR is not None
    return _WORKER_EVALUATOR.evaluate(assignment)


class _PopulationScorer:
    """Evaluates assignments in input order, serially or on a process pool."""

    def __init__(self, scenario: Scenario, evaluator: Evaluator, workers: int):
        self._evaluator = evaluator
        self._pool: Optional[ProcessPoolExecutor] = None
        if workers > 1:
            self._pool = ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(scenario,))

    def __enter__(self) -> "_PopulationScorer":
        return self

    def __exit__(self, *exc: object) -> None:
        if self._pool is not None:
            self._pool.shutdown()

    def evaluate(self, assignments: Sequence[Assignment]) -> list[Evaluation]:
        if self._pool is None or len(assignments) < 2:
            return [self._evaluator.evaluate(a) for a in assignments]
        return list(self._pool.map(_evaluate_in_worker, assignments, chunksize=max(1, len(assignments) // 8)))


def _association_patterns(scenario: Scenario) -> Iterator[tuple[tuple[int, ...], tuple[int, ...]]]:
    f, m, u = len(scenario.fiabs), scenario.miab_count, len(scenario.ues)
    for cells in itertools.product(range(f + m), repeat=u):
        for donors in itertools.product(range(f), repeat=m):
            yield cells, donors


def _cell_refs(scenario: Scenario) -> list[CellRef]:
    refs = [CellRef(kind=CellKind.FIAB, index=k) for k in range(len(scenario.fiabs))]
    return refs + [CellRef(kind=CellKind.MIAB, index=m) for m in range(scenario.miab_count)]


def pattern_count(scenario: Scenario) -> int:
    f, m, u = len(scenario.fiabs), scenario.miab_count, len(scenario.ues)
    return (f + m) ** u * f**m


class GeneticSearch:
    """DEAP toolbox over flat gene lists plus a local refinement of the incumbent.

    Every scored assignment passes through `score`, which keeps the best feasible and the
    least violating candidate seen, so the reported result is never worse than the trace.
    """

    def __init__(
        self,
        scenario: Scenario,
        config: GaConfig,
        scorer: _PopulationScorer,
        upper_bound: float,
        penalty_weight: float,
    ):
        self.scenario = scenario
        self.config = config
        self.layout = GeneLayout.of(scenario)
        self.area: AreaPolygon = scenario.deployment
        xmin, xmax, ymin, ymax = self.area.bounding_box()
        self.sigma = MUTATION_SIGMA_FRACTION * math.hypot(xmax - xmin, ymax - ymin)
        self.upper_bound = upper_bound
        self.penalty_weight = penalty_weight
        self.evaluations = 0
        self.best_feasible: Optional[_Candidate] = None
        self.least_violating: Optional[_Candidate] = None
        self.hall_of_fame = tools.HallOfFame(HALL_OF_FAME_SIZE)
        self._scorer = scorer
        self._cell_refs = _cell_refs(scenario)
        self._patterns: Optional[list[tuple[tuple[CellRef, ...], tuple[int, ...]]]] = None
        if pattern_count(scenario) <= SWEEP_PATTERN_LIMIT:
            self._patterns = [
                (tuple(self._cell_refs[g] for g in cells), donors) for cells, donors in _association_patterns(scenario)
            ]

        toolbox = base.Toolbox()
        toolbox.register("mate", self.mate)
        toolbox.register("mutate", self.mutate)
        toolbox.register("select", tools.selTournament, tournsize=TOURNAMENT_SIZE)
        self.toolbox = toolbox

    # --- operators ---
    def individual(self, rng: np.random.Generator) -> Any:
        layout = self.layout
        genes: list[float] = [v for _ in range(layout.miab_count) for v in area_sample(self.area, rng)]
        genes += [int(g) for g in rng.integers(0, layout.fiab_count + layout.miab_count, size=layout.ue_count)]
        genes += [int(k) for k in rng.integers(0, layout.fiab_count, size=layout.miab_count)]
        return creator.PlanIndividual(genes)

    def mate(self, a: Any, b: Any) -> tuple[Any, Any]:
        layout = self.layout
        pos_a, pos_b = a[layout.positions], b[layout.positions]
        tools.cxBlend(pos_a, pos_b, alpha=0.0)
        a[layout.positions], b[layout.positions] = pos_a, pos_b
        cat = slice(layout.cells.start, layout.length)
        cat_a, cat_b = a[cat], b[cat]
        tools.cxUniform(cat_a, cat_b, indpb=0.5)
        a[cat], b[cat] = cat_a, cat_b
        return a, b

    def mutate(self, individual: Any) -> tuple[Any]:
        layout = self.layout
        rate = self.config.mutation_rate
        positions = individual[layout.positions]
        tools.mutGaussian(positions, mu=0.0, sigma=self.sigma, indpb=rate)
        individual[layout.positions] = positions
        cells = individual[layout.cells]
        tools.mutUniformInt(cells, low=0, up=layout.fiab_count + layout.miab_count - 1, indpb=rate)
        individual[layout.cells] = cells
        donors = individual[layout.donors]
        tools.mutUniformInt(donors, low=0, up=layout.fiab_count - 1, indpb=rate)
        individual[layout.donors] = donors
        return (individual,)

    # --- scoring ---
    def score(self, assignments: Sequence[Assignment]) -> list[_Candidate]:
        evaluations = self._scorer.evaluate(assignments)
        self.evaluations += len(evaluations)
        candidates = [
            _Candidate(a, e, self.penalty_weight, self.upper_bound) for a, e in zip(assignments, evaluations)
        ]
        for candidate in candidates:
            if candidate.evaluation.feasible:
                if candidate.better_than(self.best_feasible):
                    self.best_feasible = candidate
            elif candidate.better_than(self.least_violating):
                self.least_violating = candidate
        return candidates

    def adopt(self, individual: Any, candidate: _Candidate) -> None:
        individual[:] = encode(candidate.assignment, self.scenario)
        individual.fitness.values = (candidate.fitness,)
        individual.candidate = candidate

    def evaluate_invalid(self, individuals: Sequence[Any]) -> int:
        invalid = [ind for ind in individuals if not ind.fitness.valid]
        assignments = [decode_and_repair(ind, self.scenario) for ind in invalid]
        for ind, candidate in zip(invalid, self.score(assignments)):
            self.adopt(ind, candidate)
        return len(invalid)

    # --- local refinement ---
    def sweep(self, start: _Candidate) -> _Candidate:
        """Best association for the MIAB positions of `start`."""
        xy = start.assignment.miab_xy
        best = start
        if self._patterns is not None:
            trials = [Assignment(miab_xy=xy, ue_cell=cells, backhaul_donor=donors) for cells, donors in self._patterns]
            for candidate in self.score(trials):
                if candidate.better_than(best):
                    best = candidate
            return best
        for _ in range(GREEDY_SWEEP_PASSES):
            before = best
            for u in range(self.layout.ue_count):
                current = best.assignment
                trials = [
                    current.model_copy(update={"ue_cell": current.ue_cell[:u] + (ref,) + current.ue_cell[u + 1:]})
                    for ref in self._cell_refs
                    if ref != current.ue_cell[u]
                ]
                for candidate in self.score(trials):
                    if candidate.better_than(best):
                        best = candidate
            for m in range(self.layout.miab_count):
                current = best.assignment
                trials = [
                    current.model_copy(
                        update={"backhaul_donor": current.backhaul_donor[:m] + (k,) + current.backhaul_donor[m + 1:]}
                    )
                    for k in range(self.layout.fiab_count)
                    if k != current.backhaul_donor[m]
                ]
                for candidate in self.score(trials):
                    if candidate.better_than(best):
                        best = candidate
            if best is before:
                break
        return best

    def compass(self, start: _Candidate) -> _Candidate:
        """Pattern search on the MIAB positions with the association held fixed."""
        best = start
        step = self.sigma
        moves = 0
        while step >= MIN_COMPASS_STEP_M and moves < MAX_COMPASS_MOVES:
            current = best.assignment
            trials = []
            for m, (x, y) in enumerate(current.miab_xy):
                for dx, dy in ((step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)):
                    moved = area_project(self.area, x + dx, y + dy)
                    if moved != (x, y):
                        xy = current.miab_xy[:m] + (moved,) + current.miab_xy[m + 1:]
                        trials.append(current.model_copy(update={"miab_xy": xy}))
            improved = False
            for candidate in self.score(trials):
                if candidate.better_than(best):
                    best, improved = candidate, True
            if improved:
                moves += 1
            else:
                step /= 2.0
        return best

    def refine(self, start: _Candidate) -> _Candidate:
        best = self.sweep(start)
        for _ in range(MAX_REFINE_ROUNDS):
            moved = self.compass(best)
            if not moved.better_than(best):
                break
            best = self.sweep(moved)
        return best

    # --- main loop ---
    def run(self) -> tools.Logbook:
        config = self.config
        size = config.population_size
        stats = tools.Statistics(lambda ind: ind.fitness.values[0])
        stats.register("max", np.max)
        stats.register("mean", np.mean)
        logbook = tools.Logbook()
        logbook.header = ["gen", "nevals", "best_bps", "feasible_fraction", "max", "mean"]
        refined_level = -math.inf

        # individual 0 is the baseline, so the search never ends below the MIAB-free layout
        population = [creator.PlanIndividual(encode(baseline_assignment(self.scenario), self.scenario))]
        population += [self.individual(substream(config.seed, 0, i)) for i in range(1, size)]

        for generation in range(config.generations):
            random.seed(derived_seed(config.seed, generation))
            before = self.evaluations
            if generation == 0:
                self.evaluate_invalid(population)
                for ind in population:
                    self.adopt(ind, self.sweep(ind.candidate))
            else:
                elites = [self.toolbox.clone(ind) for ind in tools.selBest(population, config.elite_count)]
                parents = self.toolbox.select(population, size - config.elite_count)
                offspring = [self.toolbox.clone(ind) for ind in parents]
                for a, b in zip(offspring[::2], offspring[1::2]):
                    if random.random() < config.crossover_rate:
                        self.toolbox.mate(a, b)
                        del a.fitness.values
                        del b.fitness.values
                for mutant in offspring:
                    genes = list(mutant)
                    self.toolbox.mutate(mutant)
                    if list(mutant) != genes:
                        del mutant.fitness.values
                self.evaluate_invalid(offspring)
                population = elites + offspring

            champion = tools.selBest(population, 1)[0]
            if champion.fitness.values[0] > refined_level:
                start_level = champion.fitness.values[0]
                self.adopt(champion, self.refine(champion.candidate))
                refined_level = max(start_level, champion.fitness.values[0])

            self.hall_of_fame.update(population)
            logbook.record(
                gen=generation,
                nevals=self.evaluations - before,
                best_bps=self.best_feasible.evaluation.objective_bps if self.best_feasible else 0.0,
                feasible_fraction=sum(ind.candidate.evaluation.feasible for ind in population) / size,
                **stats.compile(population),
            )
            logger.debug(logbook.stream)
        return logbook


def _trivial_search_space(scenario: Scenario) -> bool:
    return scenario.miab_count == 0 and len(scenario.fiabs) == 1


def solve_ga(scenario: Scenario, config: GaConfig, workers: int = 1) -> SolveResult:
    evaluator = Evaluator(scenario)
    upper_bound = evaluator.upper_bound
    weight = config.penalty_weight if config.penalty_weight is not None else upper_bound
    meta: dict[str, Any] = {
        **config.model_dump(),
        "penalty_weight": weight,
        "selection": f"deap.tools.selTournament(tournsize={TOURNAMENT_SIZE}) with {config.elite_count} elites",
        "crossover": "cxBlend(alpha=0) on positions, cxUniform(indpb=0.5) on cell and donor genes",
        "mutation": "mutGaussian on positions, mutUniformInt on cell and donor genes, both with indpb=mutation_rate",
        "mutation_sigma_m": None,
        "refinement": (
            f"association sweep (exhaustive up to {SWEEP_PATTERN_LIMIT} patterns) and compass search "
            f"down to {MIN_COMPASS_STEP_M} m on each new incumbent"
        ),
        "seeded_with_baseline": True,
    }
    logger.info(f"GA solve started: seed={config.seed}, population={config.population_size}, generations={config.generations}")

    if _trivial_search_space(scenario):
        assignment = baseline_assignment(scenario)
        evaluation = evaluator.evaluate(assignment)
        best = evaluation.objective_bps if evaluation.feasible else 0.0
        return SolveResult(
            solver="ga",
            best_assignment=assignment,
            best_evaluation=evaluation,
            feasible=evaluation.feasible,
            generations_run=1,
            best_objective_trace=(best,),
            feasible_fraction_trace=(1.0 if evaluation.feasible else 0.0,),
            evaluations_count=1,
            meta={**meta, "nevals": [1]},
        )

    saved_state = random.getstate()
    try:
        with _PopulationScorer(scenario, evaluator, workers) as scorer:
            search = GeneticSearch(scenario, config, scorer, upper_bound, weight)
            logbook = search.run()
    finally:
        random.setstate(saved_state)

    meta["mutation_sigma_m"] = search.sigma
    meta["nevals"] = logbook.select("nevals")
    meta["hall_of_fame_bps"] = [ind.candidate.evaluation.objective_bps for ind in search.hall_of_fame]
    chosen = search.best_feasible if search.best_feasible is not None else search.least_violating
    assert chosen is not None
    if search.best_feasible is None:
        logger.warning(f"GA found no feasible assignment (seed={config.seed}); returning the least violating one")
    logger.info(f"GA solve finished: objective={chosen.evaluation.objective_bps:.6g} bit/s, feasible={chosen.evaluation.feasible}")
    return SolveResult(
        solver="ga",
        best_assignment=chosen.assignment,
        best_evaluation=chosen.evaluation,
        feasible=chosen.evaluation.feasible,
        generations_run=config.generations,
        best_objective_trace=tuple(logbook.select("best_bps")),
        feasible_fraction_trace=tuple(logbook.select("feasible_fraction")),
        evaluations_count=search.evaluations,
        meta=meta,
    )


def grid_points(area: AreaPolygon, step: float) -> list[tuple[float, float]]:
    """Points of the step-spaced lattice anchored at the bounding-box corner that lie in the area.
    Halving the step yields a superset."""
    if step <= 0:
        raise InputError(f"grid step must be positive, got {step}", field="grid_step")
    xmin, xmax, ymin, ymax = area.bounding_box()
    nx = int(math.floor((xmax - xmin) / step + 1e-9)) + 1
    ny = int(math.floor((ymax - ymin) / step + 1e-9)) + 1
    points = []
    for i in range(nx):
        for j in range(ny):
            x, y = xmin + i * step, ymin + j * step
            if area.contains(x, y):
                points.append((x, y))
    return points


def oracle_requirement(scenario: Scenario, point_count: int) -> int:
    return pattern_count(scenario) * point_count**scenario.miab_count


def solve_oracle(scenario: Scenario, grid_step: float, budget: Optional[int] = None) -> SolveResult:
    budget = settings.ORACLE_BUDGET if budget is None else budget
    points = grid_points(scenario.deployment, grid_step) if scenario.miab_count else []
    required = oracle_requirement(scenario, len(points))
    if required > budget:
        raise OracleBudgetError(required, budget)
    if scenario.miab_count and not points:
        raise InputError(f"grid step {grid_step} m leaves no point inside the deployment area", field="grid_step")
    logger.info(f"Oracle started: {len(points)} grid points, {required} evaluations")

    evaluator = Evaluator(scenario)
    upper_bound = evaluator.upper_bound
    best_feasible: Optional[_Candidate] = None
    least_violating: Optional[_Candidate] = None
    count = 0
    cell_refs = _cell_refs(scenario)
    patterns = [(tuple(cell_refs[g] for g in cells), donors) for cells, donors in _association_patterns(scenario)]
    for position_index in itertools.product(range(len(points)), repeat=scenario.miab_count):
        miab_xy = tuple(points[i] for i in position_index)
        links = evaluator.links_for(miab_xy)
        for ue_cell, donors in patterns:
            assignment = Assignment(miab_xy=miab_xy, ue_cell=ue_cell, backhaul_donor=donors)
            candidate = _Candidate(assignment, evaluator.evaluate(assignment, links), upper_bound, upper_bound)
            count += 1
            # strict comparisons keep the first optimum in enumeration order
            if candidate.evaluation.feasible:
                if candidate.better_than(best_feasible):
                    best_feasible = candidate
            elif candidate.better_than(least_violating):
                least_violating = candidate

    chosen = best_feasible if best_feasible is not None else least_violating
    assert chosen is not None
    logger.info(f"Oracle finished: objective={chosen.evaluation.objective_bps:.6g} bit/s, feasible={chosen.evaluation.feasible}")
    return SolveResult(
        solver="oracle",
        best_assignment=chosen.assignment,
        best_evaluation=chosen.evaluation,
        feasible=chosen.evaluation.feasible,
        generations_run=1,
        best_objective_trace=(best_feasible.evaluation.objective_bps if best_feasible else 0.0,),
        feasible_fraction_trace=(),
        evaluations_count=count,
        meta={"grid_step_m": grid_step, "grid_points": len(points), "budget": budget, "tie_break": ORACLE_TIE_BREAK},
    )


class GaSolver(AbstractSolver):
    name = "ga"

    def __init__(self, config: GaConfig, workers: int = 1):
        self.config = config
        self.workers = workers

    def solve(self, scenario: Scenario) -> SolveResult:
        return solve_ga(scenario, self.config, workers=self.workers)

    def describe(self) -> dict:
        return {"solver": self.name, **self.config.model_dump()}


class OracleSolver(AbstractSolver):
    name = "oracle"

    def __init__(self, grid_step: float, budget: Optional[int] = None):
        self.grid_step = grid_step
        self.budget = budget

    def solve(self, scenario: Scenario) -> SolveResult:
        return solve_oracle(scenario, self.grid_step, self.budget)

    def describe(self) -> dict:
        return {"solver": self.name, "grid_step_m": self.grid_step, "tie_break": ORACLE_TIE_BREAK}
