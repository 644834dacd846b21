"""Strategic layer: utilities, best responses, equilibria, and dynamics.

Proposers submit subsets of their projects (or singletons in
single-project mode); a proposer's utility is the total cost of their
funded projects in the induced election. Strategies are ordered
canonically (as sorted id tuples, compared lexicographically), which
makes best-response tie-breaking, brute-force enumeration, and the
simultaneous best-response dynamics fully deterministic.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from enum import Enum
from itertools import chain, combinations, product
from typing import Mapping, Sequence

from .model import (
    Game,
    Mode,
    Strategy,
    StrategyProfile,
    StructureClass,
    classify_structure,
    induced_election,
    profile_to_lists,
    validate_profile,
)
from .rules import (
    EnumerationCapError,
    RuleKind,
    RuleSpec,
    WeightFunction,
    run_global_thiele,
    run_rule,
    thiele_score,
)

__all__ = [
    "BestResponseResult",
    "DynamicsStatus",
    "DynamicsResult",
    "SearchStatus",
    "NESearchResult",
    "Classification",
    "ClassifyResult",
    "UtilityCache",
    "strategy_space",
    "full_profile",
    "utilities",
    "best_response",
    "best_response_decision",
    "is_nash",
    "ne_exists_bruteforce",
    "br_dynamics",
    "constructive_ne_basicav_multiwinner",
    "constructive_ne_partylist",
    "constructive_ne_psg1_sequential",
    "constructive_ne_psg1_global_thiele",
    "experiment_classify",
    "payoff_matrix",
    "analysis_report",
]

MAX_CELL_PROJECTS = 20  # subset enumeration guard per proposer
MAX_BRUTEFORCE_PROFILES = 10_000_000


@dataclass(frozen=True)
class BestResponseResult:
    best_utility: int
    best_strategies: tuple[Strategy, ...]  # all maximizers, canonical order


class DynamicsStatus(Enum):
    CONVERGED = "converged"
    CYCLE = "cycle"
    ITERATION_LIMIT = "iteration_limit"


@dataclass(frozen=True)
class DynamicsResult:
    status: DynamicsStatus
    trajectory: tuple[StrategyProfile, ...]
    final: StrategyProfile
    iterations: int


class SearchStatus(Enum):
    FOUND = "found"
    NONE = "none"


@dataclass(frozen=True)
class NESearchResult:
    status: SearchStatus
    witness: StrategyProfile | None = None


class Classification(Enum):
    FULL_NE = "full_ne"
    BR_NE = "br_ne"
    BF_NE = "bf_ne"
    NO_NE = "no_ne"
    UNDECIDED = "undecided"


@dataclass(frozen=True)
class ClassifyResult:
    classification: Classification
    witness: StrategyProfile | None
    iterations: int
    dynamics: DynamicsResult | None = None


def _canonical_key(strategy: Strategy) -> tuple[str, ...]:
    return tuple(sorted(strategy))


def strategy_space(game: Game, i: int) -> tuple[Strategy, ...]:
    """All legal strategies of proposer ``i`` in canonical order."""
    ids = sorted(game.proposers[i])
    if game.mode is Mode.PSG1:
        return tuple(frozenset({pid}) for pid in ids)
    if len(ids) > MAX_CELL_PROJECTS:
        raise EnumerationCapError(
            f"proposer {i} owns {len(ids)} projects; subset enumeration "
            f"capped at {MAX_CELL_PROJECTS}"
        )
    subsets = chain.from_iterable(
        combinations(ids, r) for r in range(1, len(ids) + 1)
    )
    return tuple(frozenset(s) for s in sorted(subsets))


def strategy_space_size(game: Game, i: int) -> int:
    if game.mode is Mode.PSG1:
        return len(game.proposers[i])
    return 2 ** len(game.proposers[i]) - 1


def full_profile(game: Game) -> StrategyProfile:
    """Every proposer submits all their projects (subset-submission mode only)."""
    if game.mode is not Mode.PSG:
        raise ValueError("full profile is undefined in single-project mode")
    return tuple(game.proposers)


class UtilityCache:
    """Memoizes utility vectors per strategy profile for one (game, rule) pair."""

    def __init__(self, game: Game, spec: RuleSpec):
        self.game = game
        self.spec = spec
        self._memo: dict[StrategyProfile, tuple[int, ...]] = {}

    @property
    def evaluations(self) -> int:
        return len(self._memo)

    def utilities(self, profile: StrategyProfile) -> tuple[int, ...]:
        cached = self._memo.get(profile)
        if cached is not None:
            return cached
        validate_profile(self.game, profile)
        outcome = run_rule(induced_election(self.game, profile), self.spec)
        totals = [0] * self.game.num_proposers
        for pid in outcome.funded:
            totals[self.game.owner[pid]] += self.game.election.cost_of[pid]
        result = tuple(totals)
        self._memo[profile] = result
        return result


def utilities(
    game: Game,
    spec: RuleSpec,
    profile: StrategyProfile,
    *,
    cache: UtilityCache | None = None,
) -> tuple[int, ...]:
    """Per-proposer utility vector: funded cost owned by each proposer."""
    cache = cache if cache is not None else UtilityCache(game, spec)
    return cache.utilities(profile)


def _replace(profile: Sequence[Strategy | None], i: int, s: Strategy) -> StrategyProfile:
    return tuple(s if j == i else cell for j, cell in enumerate(profile))  # type: ignore[misc]


def best_response(
    game: Game,
    spec: RuleSpec,
    profile: Sequence[Strategy | None],
    i: int,
    *,
    cache: UtilityCache | None = None,
) -> BestResponseResult:
    """Exhaustive best response of proposer ``i`` against ``profile``.

    ``profile[i]`` is ignored (it may be None). Returns the maximum
    utility and every maximizing strategy, in canonical order.
    """
    cache = cache if cache is not None else UtilityCache(game, spec)
    best_utility = -1
    best: list[Strategy] = []
    for strategy in strategy_space(game, i):
        value = cache.utilities(_replace(profile, i, strategy))[i]
        if value > best_utility:
            best_utility = value
            best = [strategy]
        elif value == best_utility:
            best.append(strategy)
    return BestResponseResult(best_utility, tuple(best))


def best_response_decision(
    game: Game,
    spec: RuleSpec,
    profile: Sequence[Strategy | None],
    i: int,
    threshold: int,
    *,
    cache: UtilityCache | None = None,
) -> bool:
    """Can proposer ``i`` secure utility at least ``threshold`` against ``profile``?"""
    if threshold <= 0:
        return True
    cache = cache if cache is not None else UtilityCache(game, spec)
    for strategy in strategy_space(game, i):
        if cache.utilities(_replace(profile, i, strategy))[i] >= threshold:
            return True
    return False


def is_nash(
    game: Game,
    spec: RuleSpec,
    profile: StrategyProfile,
    *,
    cache: UtilityCache | None = None,
) -> bool:
    """True iff no proposer has a strictly improving unilateral deviation."""
    cache = cache if cache is not None else UtilityCache(game, spec)
    current = cache.utilities(profile)
    for i in range(game.num_proposers):
        for strategy in strategy_space(game, i):
            if strategy == profile[i]:
                continue
            if cache.utilities(_replace(profile, i, strategy))[i] > current[i]:
                return False
    return True


def ne_exists_bruteforce(
    game: Game,
    spec: RuleSpec,
    *,
    max_profiles: int = MAX_BRUTEFORCE_PROFILES,
    cache: UtilityCache | None = None,
) -> NESearchResult:
    """Exhaustive search; returns the canonically first equilibrium, if any."""
    space = math.prod(strategy_space_size(game, i) for i in range(game.num_proposers))
    if space > max_profiles:
        raise EnumerationCapError(
            f"profile space of {space} exceeds the brute-force cap {max_profiles}"
        )
    cache = cache if cache is not None else UtilityCache(game, spec)
    spaces = [strategy_space(game, i) for i in range(game.num_proposers)]
    for profile in product(*spaces):
        if is_nash(game, spec, profile, cache=cache):
            return NESearchResult(SearchStatus.FOUND, profile)
    return NESearchResult(SearchStatus.NONE)


def br_dynamics(
    game: Game,
    spec: RuleSpec,
    start: StrategyProfile,
    max_iter: int = 10,
    *,
    cache: UtilityCache | None = None,
) -> DynamicsResult:
    """Simultaneous best-response dynamics with cycle detection.

    In each iteration every proposer independently moves to a best
    response against the current profile; a proposer keeps its current
    strategy whenever that strategy is among the maximizers, otherwise it
    takes the canonically first maximizer. Equilibria are therefore fixed
    points, and the dynamics stop on convergence, on a revisited profile,
    or after ``max_iter`` updates.
    """
    validate_profile(game, start)
    cache = cache if cache is not None else UtilityCache(game, spec)
    trajectory = [start]
    visited = {start}
    current = start
    iterations = 0
    while True:
        if is_nash(game, spec, current, cache=cache):
            return DynamicsResult(
                DynamicsStatus.CONVERGED, tuple(trajectory), current, iterations
            )
        if iterations >= max_iter:
            return DynamicsResult(
                DynamicsStatus.ITERATION_LIMIT, tuple(trajectory), current, iterations
            )
        moves = []
        for i in range(game.num_proposers):
            response = best_response(game, spec, current, i, cache=cache)
            if current[i] in response.best_strategies:
                moves.append(current[i])
            else:
                moves.append(response.best_strategies[0])
        current = tuple(moves)
        iterations += 1
        trajectory.append(current)
        if current in visited:
            return DynamicsResult(
                DynamicsStatus.CYCLE, tuple(trajectory), current, iterations
            )
        visited.add(current)


def _require_unit_costs(game: Game, what: str) -> None:
    for project in game.election.projects:
        if project.cost != 1:
            raise ValueError(f"{what} requires unit costs (multiwinner setting)")


def constructive_ne_basicav_multiwinner(game: Game) -> StrategyProfile:
    """Equilibrium for greedy approval voting with unit costs: submit everything.

    With unit costs the rule simply elects the B most approved projects,
    so submitting all projects is a dominant strategy for every proposer.
    """
    if game.mode is not Mode.PSG:
        raise ValueError("subset-submission games only")
    _require_unit_costs(game, "the BasicAV construction")
    return full_profile(game)


_PARTY_LIST_KINDS = (
    RuleKind.PHRAGMEN,
    RuleKind.MES,
    RuleKind.SEQ_THIELE,
    RuleKind.GLOBAL_THIELE,
)


def constructive_ne_partylist(game: Game, spec: RuleSpec) -> StrategyProfile:
    """Equilibrium for party-list multiwinner games: submit everything.

    Valid for Phragmen, equal shares, and Thiele rules; withdrawing a
    funded project can only hand its seat to another party (or shrink the
    outcome), so the full profile is an equilibrium.
    """
    if game.mode is not Mode.PSG:
        raise ValueError("subset-submission games only")
    if spec.kind not in _PARTY_LIST_KINDS:
        raise ValueError(f"no party-list construction for rule {spec.kind.value}")
    _require_unit_costs(game, "the party-list construction")
    if classify_structure(game.election) is not StructureClass.PARTY_LIST:
        raise ValueError("the election is not party-list")
    return full_profile(game)


_SEQUENTIAL_KINDS = (
    RuleKind.BASIC_AV,
    RuleKind.PHRAGMEN,
    RuleKind.MES,
    RuleKind.SEQ_THIELE,
)


def constructive_ne_psg1_sequential(game: Game, spec: RuleSpec) -> StrategyProfile:
    """Equilibrium for single-project multiwinner games under sequential rules.

    Iteratively runs the rule with every undecided proposer submitting all
    of their projects; the earliest-funded project of an undecided
    proposer is a dominant choice for them (utility in this mode is at
    most one seat), so their strategy is fixed to it and the rule is
    rerun. Proposers that never get a project funded submit their
    canonically first project.
    """
    if game.mode is not Mode.PSG1:
        raise ValueError("single-project games only")
    if spec.kind not in _SEQUENTIAL_KINDS:
        raise ValueError(f"rule {spec.kind.value} is not sequential")
    _require_unit_costs(game, "the single-project construction")
    fixed: dict[int, str] = {}
    while len(fixed) < game.num_proposers:
        submitted = frozenset(
            pid
            for i, cell in enumerate(game.proposers)
            for pid in (fixed[i],) if i in fixed
        ) | frozenset(
            pid
            for i, cell in enumerate(game.proposers)
            if i not in fixed
            for pid in cell
        )
        outcome = run_rule(game.election.restrict(submitted), spec)
        new = None
        for pid in outcome.order:
            owner = game.owner[pid]
            if owner not in fixed:
                new = (owner, pid)
                break
        if new is None:
            break
        fixed[new[0]] = new[1]
    return tuple(
        frozenset({fixed.get(i, min(game.proposers[i]))})
        for i in range(game.num_proposers)
    )


def constructive_ne_psg1_global_thiele(
    game: Game,
    weights: WeightFunction,
    *,
    max_profiles: int = MAX_BRUTEFORCE_PROFILES,
) -> StrategyProfile:
    """Equilibrium for single-project games under a global Thiele rule.

    Enumerates all single-project profiles and returns the canonically
    first one whose induced outcome maximizes the w-score (ties between
    outcomes broken by the lexicographic extension of the tie order).
    Any such profile is an equilibrium: a profitable deviation would
    induce a strictly better outcome than the maximum.
    """
    if game.mode is not Mode.PSG1:
        raise ValueError("single-project games only")
    _require_unit_costs(game, "the global Thiele construction")
    space = math.prod(len(cell) for cell in game.proposers)
    if space > max_profiles:
        raise EnumerationCapError(
            f"profile space of {space} exceeds the enumeration cap {max_profiles}"
        )
    tie = game.election.tie_index
    spaces = [strategy_space(game, i) for i in range(game.num_proposers)]
    best_profile = None
    best_key = None
    for profile in product(*spaces):
        outcome = run_global_thiele(induced_election(game, profile), weights)
        score = thiele_score(game.election, weights, outcome.funded)
        lex = tuple(sorted(tie[pid] for pid in outcome.funded))
        key = (-score, lex)
        if best_key is None or key < best_key:
            best_profile, best_key = profile, key
    assert best_profile is not None
    return best_profile


def experiment_classify(
    game: Game,
    spec: RuleSpec,
    *,
    rng: random.Random | None = None,
    max_iter: int = 10,
    max_profiles: int = MAX_BRUTEFORCE_PROFILES,
) -> ClassifyResult:
    """Three-stage equilibrium hunt: full profile, dynamics, brute force.

    Subset-submission games start the dynamics from the full profile;
    single-project games have no full profile, so they start from a
    profile drawn uniformly at random using the caller-supplied ``rng``.
    Cap overruns yield UNDECIDED instead of an error.
    """
    cache = UtilityCache(game, spec)
    try:
        if game.mode is Mode.PSG:
            start = full_profile(game)
            if is_nash(game, spec, start, cache=cache):
                return ClassifyResult(Classification.FULL_NE, start, 0)
        else:
            if rng is None:
                raise ValueError("single-project classification needs an explicit rng")
            start = tuple(
                frozenset({rng.choice(sorted(cell))}) for cell in game.proposers
            )
        dynamics = br_dynamics(game, spec, start, max_iter, cache=cache)
        if dynamics.status is DynamicsStatus.CONVERGED:
            return ClassifyResult(
                Classification.BR_NE, dynamics.final, dynamics.iterations, dynamics
            )
        search = ne_exists_bruteforce(game, spec, max_profiles=max_profiles, cache=cache)
    except EnumerationCapError:
        return ClassifyResult(Classification.UNDECIDED, None, 0)
    if search.status is SearchStatus.FOUND:
        return ClassifyResult(
            Classification.BF_NE, search.witness, dynamics.iterations, dynamics
        )
    return ClassifyResult(Classification.NO_NE, None, dynamics.iterations, dynamics)


def payoff_matrix(
    game: Game,
    spec: RuleSpec,
    *,
    max_profiles: int = 256,
    cache: UtilityCache | None = None,
) -> dict:
    """Full payoff table of a two-proposer game as a JSON-friendly dict."""
    if game.num_proposers != 2:
        raise ValueError("payoff matrices are rendered for two-proposer games only")
    space = strategy_space_size(game, 0) * strategy_space_size(game, 1)
    if space > max_profiles:
        raise EnumerationCapError(
            f"profile space of {space} exceeds the matrix cap {max_profiles}"
        )
    cache = cache if cache is not None else UtilityCache(game, spec)
    rows = strategy_space(game, 0)
    cols = strategy_space(game, 1)
    return {
        "rows": [sorted(s) for s in rows],
        "cols": [sorted(s) for s in cols],
        "payoffs": [
            [list(cache.utilities((r, c))) for c in cols] for r in rows
        ],
    }


def analysis_report(
    game: Game,
    spec: RuleSpec,
    *,
    rng: random.Random | None = None,
    max_iter: int = 10,
    max_profiles: int = MAX_BRUTEFORCE_PROFILES,
    matrix_cap: int = 256,
) -> dict:
    """JSON-friendly single-game report: classification, witness, dynamics, matrix."""
    cache = UtilityCache(game, spec)
    result = experiment_classify(
        game, spec, rng=rng, max_iter=max_iter, max_profiles=max_profiles
    )
    report: dict = {
        "mode": game.mode.value,
        "rule": spec.label,
        "structure": classify_structure(game.election).value,
        "classification": result.classification.value,
        "ne_witness": (
            profile_to_lists(result.witness) if result.witness is not None else None
        ),
        "iterations": result.iterations,
    }
    if result.witness is not None:
        report["witness_utilities"] = list(
            utilities(game, spec, result.witness, cache=cache)
        )
    if result.dynamics is not None:
        report["dynamics"] = {
            "status": result.dynamics.status.value,
            "trajectory": [profile_to_lists(p) for p in result.dynamics.trajectory],
        }
    if game.num_proposers == 2:
        try:
            report["payoff_matrix"] = payoff_matrix(
                game, spec, max_profiles=matrix_cap, cache=cache
            )
        except EnumerationCapError:
            report["payoff_matrix"] = None
    return report
