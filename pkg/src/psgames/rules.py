"""Deterministic participatory-budgeting voting rules over exact rationals.

Implemented rules: greedy approval (BasicAV), continuous-time Phragmen,
Method of Equal Shares (cost- and binary-utility variants), and sequential
and global w-Thiele rules for the unit-cost (multiwinner) setting.

All money, time, and rho arithmetic uses ``fractions.Fraction`` so that
tie detection is exact; ties are always resolved by the election's
tie-breaking order. Each rule returns an :class:`Outcome` whose ``order``
records the funding sequence and whose optional trace carries per-round
times/rho values and voter balance snapshots.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from itertools import combinations
from typing import Iterator, Mapping, Sequence

from .model import BallotGroup, Election

__all__ = [
    "RuleKind",
    "MesUtilities",
    "WeightFunction",
    "RuleSpec",
    "TraceEvent",
    "Outcome",
    "RuleDomainError",
    "EnumerationCapError",
    "run_basicav",
    "run_phragmen",
    "run_mes",
    "run_seq_thiele",
    "run_global_thiele",
    "run_rule",
    "thiele_score",
    "trace_json_lines",
    "parse_rule_name",
    "RULE_NAMES",
]


class RuleKind(str, Enum):
    BASIC_AV = "basicav"
    PHRAGMEN = "phragmen"
    MES = "mes"
    SEQ_THIELE = "seq_thiele"
    GLOBAL_THIELE = "global_thiele"


class MesUtilities(str, Enum):
    COST = "cost"
    BINARY = "binary"


_THIELE_KINDS = (RuleKind.SEQ_THIELE, RuleKind.GLOBAL_THIELE)


class RuleDomainError(ValueError):
    """The election violates a precondition of the requested rule."""


class EnumerationCapError(RuleDomainError):
    """An exhaustive enumeration would exceed its configured cap."""


@dataclass(frozen=True)
class WeightFunction:
    """Non-increasing weights w(1), w(2), ... with w(1) = 1.

    Only finitely many values are stored; the last one repeats forever.
    """

    values: tuple[Fraction, ...]

    def __post_init__(self) -> None:
        if not self.values:
            raise ValueError("weight function needs at least one value")
        if self.values[0] != 1:
            raise ValueError("w(1) must equal 1")
        for a, b in zip(self.values, self.values[1:]):
            if b > a:
                raise ValueError("weights must be non-increasing")
        if self.values[-1] < 0:
            raise ValueError("weights must be non-negative")

    def __call__(self, i: int) -> Fraction:
        if i < 1:
            raise ValueError("weight positions are 1-based")
        return self.values[min(i, len(self.values)) - 1]

    @classmethod
    def av(cls) -> "WeightFunction":
        return cls((Fraction(1),))

    @classmethod
    def cc(cls) -> "WeightFunction":
        return cls((Fraction(1), Fraction(0)))

    @classmethod
    def harmonic(cls, length: int) -> "WeightFunction":
        """Truncated 1, 1/2, 1/3, ...; exact for committees up to ``length`` seats."""
        if length < 1:
            raise ValueError("length must be positive")
        return cls(tuple(Fraction(1, i) for i in range(1, length + 1)))


@dataclass(frozen=True)
class RuleSpec:
    """Which rule to run, plus its rule-specific configuration."""

    kind: RuleKind
    mes_utilities: MesUtilities | None = None
    weights: WeightFunction | None = None

    def __post_init__(self) -> None:
        if (self.kind is RuleKind.MES) != (self.mes_utilities is not None):
            raise ValueError("mes_utilities must be set exactly for MES")
        if (self.kind in _THIELE_KINDS) != (self.weights is not None):
            raise ValueError("weights must be set exactly for Thiele rules")

    @classmethod
    def basic_av(cls) -> "RuleSpec":
        return cls(RuleKind.BASIC_AV)

    @classmethod
    def phragmen(cls) -> "RuleSpec":
        return cls(RuleKind.PHRAGMEN)

    @classmethod
    def mes(cls, utilities: MesUtilities = MesUtilities.COST) -> "RuleSpec":
        return cls(RuleKind.MES, mes_utilities=utilities)

    @classmethod
    def seq_thiele(cls, weights: WeightFunction) -> "RuleSpec":
        return cls(RuleKind.SEQ_THIELE, weights=weights)

    @classmethod
    def global_thiele(cls, weights: WeightFunction) -> "RuleSpec":
        return cls(RuleKind.GLOBAL_THIELE, weights=weights)

    @property
    def label(self) -> str:
        if self.kind is RuleKind.MES and self.mes_utilities is MesUtilities.BINARY:
            return "mes-binary"
        if self.kind in _THIELE_KINDS:
            prefix = "seq" if self.kind is RuleKind.SEQ_THIELE else "global"
            return f"{prefix}thiele{self.weights.values}"  # type: ignore[union-attr]
        return self.kind.value


@dataclass(frozen=True)
class TraceEvent:
    round: int
    project: str
    action: str  # "funded" or "dropped"
    time_or_rho: Fraction | None
    balances: tuple[Fraction, ...] | None  # post-event, by voter index


@dataclass(frozen=True)
class Outcome:
    funded: frozenset[str]
    order: tuple[str, ...]
    trace: tuple[TraceEvent, ...] | None = None


def _expand_balances(
    election: Election, group_values: Mapping[frozenset[str], Fraction]
) -> tuple[Fraction, ...]:
    balances = [Fraction(0)] * len(election.voters)
    for group in election.ballot_groups:
        value = group_values[group.ballot]
        for i in group.members:
            balances[i] = value
    return tuple(balances)


def run_basicav(election: Election, *, with_trace: bool = False) -> Outcome:
    """Greedy by approval score: fund each project iff it still fits the budget."""
    tie = election.tie_index
    queue = sorted(
        election.project_ids,
        key=lambda pid: (-election.approval_score(pid), tie[pid]),
    )
    funded: list[str] = []
    events: list[TraceEvent] = []
    spent = 0
    for rnd, pid in enumerate(queue, start=1):
        cost = election.cost_of[pid]
        if spent + cost <= election.budget:
            funded.append(pid)
            spent += cost
            action = "funded"
        else:
            action = "dropped"
        if with_trace:
            events.append(TraceEvent(rnd, pid, action, None, None))
    return Outcome(
        funded=frozenset(funded),
        order=tuple(funded),
        trace=tuple(events) if with_trace else None,
    )


def run_phragmen(election: Election, *, with_trace: bool = False) -> Outcome:
    """Continuous-time Phragmen with exact rational clock.

    Voters earn one currency unit per time unit. Whenever the supporters of
    an unconsidered project jointly hold its cost, the project is funded if
    it fits the remaining budget (its supporters' accounts reset to zero)
    and is dropped otherwise (accounts untouched). Projects nobody approves
    are never considered. Simultaneous events are processed in tie order.
    """
    tie = election.tie_index
    groups = election.ballot_groups
    supporters: dict[str, list[BallotGroup]] = {}
    for group in groups:
        for pid in group.ballot:
            supporters.setdefault(pid, []).append(group)
    reset_time: dict[frozenset[str], Fraction] = {g.ballot: Fraction(0) for g in groups}
    pending = [pid for pid in election.project_ids if supporters.get(pid)]
    funded: list[str] = []
    events: list[TraceEvent] = []
    spent = 0
    rnd = 0
    while pending:
        best_pid = None
        best_time = None
        for pid in pending:
            sup = supporters[pid]
            weight = sum(g.count for g in sup)
            paid = sum(g.count * reset_time[g.ballot] for g in sup)
            when = Fraction(election.cost_of[pid] + paid, weight)
            if (
                best_time is None
                or when < best_time
                or (when == best_time and tie[pid] < tie[best_pid])
            ):
                best_pid, best_time = pid, when
        pending.remove(best_pid)
        rnd += 1
        cost = election.cost_of[best_pid]
        if spent + cost <= election.budget:
            spent += cost
            funded.append(best_pid)
            for group in supporters[best_pid]:
                reset_time[group.ballot] = best_time
            action = "funded"
        else:
            action = "dropped"
        if with_trace:
            balances = _expand_balances(
                election, {b: best_time - t for b, t in reset_time.items()}
            )
            events.append(TraceEvent(rnd, best_pid, action, best_time, balances))
    return Outcome(
        funded=frozenset(funded),
        order=tuple(funded),
        trace=tuple(events) if with_trace else None,
    )


def _min_rho(
    balances: Sequence[tuple[Fraction, int]], cost: int, utilities: MesUtilities
) -> tuple[Fraction, Fraction] | None:
    """Smallest rho making a project affordable, or None.

    ``balances`` holds (balance, count) pairs for the supporter groups.
    Returns (rho, uncapped_payment): supporters pay min(balance, payment).
    """
    ordered = sorted(balances)
    total = sum(b * n for b, n in ordered)
    if total < cost:
        return None
    prefix = Fraction(0)
    rest = sum(n for _, n in ordered)
    for balance, count in ordered:
        # groups seen so far pay their full balance, the rest pay `payment`
        payment = Fraction(cost - prefix, rest)
        if payment <= balance:
            rho = Fraction(payment, cost) if utilities is MesUtilities.COST else payment
            return rho, payment
        prefix += balance * count
        rest -= count
    raise AssertionError("unreachable: total balance covers the cost")


def run_mes(
    election: Election,
    utilities: MesUtilities = MesUtilities.COST,
    *,
    with_trace: bool = False,
) -> Outcome:
    """Method of Equal Shares; no completion method, so outcomes may be non-exhaustive.

    Each voter starts with budget/n. A project is rho-affordable when its
    supporters can cover its cost with everyone contributing at most
    rho*cost (cost utilities) or rho (binary utilities); each round funds
    the project with minimal rho, ties by tie order.
    """
    if not election.voters:
        raise RuleDomainError("equal shares needs at least one voter")
    tie = election.tie_index
    groups = election.ballot_groups
    supporters: dict[str, list[BallotGroup]] = {}
    for group in groups:
        for pid in group.ballot:
            supporters.setdefault(pid, []).append(group)
    endowment = Fraction(election.budget, len(election.voters))
    balance: dict[frozenset[str], Fraction] = {g.ballot: endowment for g in groups}
    pending = [pid for pid in election.project_ids if supporters.get(pid)]
    funded: list[str] = []
    events: list[TraceEvent] = []
    rnd = 0
    while pending:
        best = None  # (rho, tie, pid, payment)
        for pid in pending:
            result = _min_rho(
                [(balance[g.ballot], g.count) for g in supporters[pid]],
                election.cost_of[pid],
                utilities,
            )
            if result is None:
                continue
            rho, payment = result
            key = (rho, tie[pid])
            if best is None or key < best[:2]:
                best = (rho, tie[pid], pid, payment)
        if best is None:
            break
        rho, _, pid, payment = best
        pending.remove(pid)
        for group in supporters[pid]:
            balance[group.ballot] -= min(balance[group.ballot], payment)
        funded.append(pid)
        rnd += 1
        if with_trace:
            events.append(
                TraceEvent(rnd, pid, "funded", rho, _expand_balances(election, balance))
            )
    return Outcome(
        funded=frozenset(funded),
        order=tuple(funded),
        trace=tuple(events) if with_trace else None,
    )


def _require_unit_costs(election: Election, rule: str) -> None:
    for project in election.projects:
        if project.cost != 1:
            raise RuleDomainError(
                f"{rule} is defined for unit costs only; "
                f"project {project.id!r} costs {project.cost}"
            )


def thiele_score(
    election: Election, weights: WeightFunction, committee: frozenset[str]
) -> Fraction:
    """w-score of a committee: every voter contributes w(1)+...+w(#approved in it)."""
    score = Fraction(0)
    for group in election.ballot_groups:
        hits = len(group.ballot & committee)
        score += group.count * sum(
            (weights(i) for i in range(1, hits + 1)), Fraction(0)
        )
    return score


def run_seq_thiele(
    election: Election, weights: WeightFunction, *, with_trace: bool = False
) -> Outcome:
    """Greedy Thiele for unit costs: each round adds the best marginal-score project."""
    _require_unit_costs(election, "sequential Thiele")
    tie = election.tie_index
    groups = election.ballot_groups
    covered = {g.ballot: 0 for g in groups}
    remaining = set(election.project_ids)
    rounds = min(election.budget, len(election.projects))
    funded: list[str] = []
    events: list[TraceEvent] = []
    for rnd in range(1, rounds + 1):
        best_pid = None
        best_marginal = None
        for pid in sorted(remaining, key=tie.__getitem__):
            marginal = Fraction(0)
            for group in groups:
                if pid in group.ballot:
                    marginal += group.count * weights(covered[group.ballot] + 1)
            if best_marginal is None or marginal > best_marginal:
                best_pid, best_marginal = pid, marginal
        remaining.remove(best_pid)
        funded.append(best_pid)
        for group in groups:
            if best_pid in group.ballot:
                covered[group.ballot] += 1
        if with_trace:
            events.append(TraceEvent(rnd, best_pid, "funded", None, None))
    return Outcome(
        funded=frozenset(funded),
        order=tuple(funded),
        trace=tuple(events) if with_trace else None,
    )


def run_global_thiele(
    election: Election,
    weights: WeightFunction,
    *,
    max_projects: int = 20,
    max_subsets: int = 500_000,
    with_trace: bool = False,
) -> Outcome:
    """Exhaustive Thiele for unit costs: the score-maximal committee of B projects.

    Score ties are broken by the tie order extended lexicographically to
    sets (a committee wins if its best project outside the other committee
    beats everything the other has outside it).
    """
    _require_unit_costs(election, "global Thiele")
    m = len(election.projects)
    size = min(election.budget, m)
    if m > max_projects:
        raise EnumerationCapError(
            f"global Thiele enumeration refused: {m} projects > cap {max_projects}"
        )
    if math.comb(m, size) > max_subsets:
        raise EnumerationCapError(
            f"global Thiele enumeration refused: C({m},{size}) > cap {max_subsets}"
        )
    tie = election.tie_index
    by_preference = sorted(election.project_ids, key=tie.__getitem__)
    best_committee: tuple[str, ...] | None = None
    best_score: Fraction | None = None
    # combinations() over tie-ordered projects yields committees in
    # lexicographic tie order, so the first maximum is the tie-break winner
    for committee in combinations(by_preference, size):
        score = thiele_score(election, weights, frozenset(committee))
        if best_score is None or score > best_score:
            best_committee, best_score = committee, score
    funded = frozenset(best_committee or ())
    order = tuple(sorted(funded, key=tie.__getitem__))
    trace = (
        tuple(
            TraceEvent(i, pid, "funded", None, None) for i, pid in enumerate(order, 1)
        )
        if with_trace
        else None
    )
    return Outcome(funded=funded, order=order, trace=trace)


def run_rule(election: Election, spec: RuleSpec, *, with_trace: bool = False) -> Outcome:
    """Dispatch to the rule selected by ``spec``."""
    if spec.kind is RuleKind.BASIC_AV:
        return run_basicav(election, with_trace=with_trace)
    if spec.kind is RuleKind.PHRAGMEN:
        return run_phragmen(election, with_trace=with_trace)
    if spec.kind is RuleKind.MES:
        assert spec.mes_utilities is not None
        return run_mes(election, spec.mes_utilities, with_trace=with_trace)
    if spec.kind is RuleKind.SEQ_THIELE:
        assert spec.weights is not None
        return run_seq_thiele(election, spec.weights, with_trace=with_trace)
    assert spec.weights is not None
    return run_global_thiele(election, spec.weights, with_trace=with_trace)


def trace_json_lines(outcome: Outcome) -> str:
    """Outcome trace as JSON lines, one record per round."""
    if outcome.trace is None:
        raise ValueError("outcome was computed without a trace")
    lines = []
    for event in outcome.trace:
        record: dict = {
            "round": event.round,
            "project": event.project,
            "action": event.action,
            "time_or_rho": (
                f"{event.time_or_rho.numerator}/{event.time_or_rho.denominator}"
                if event.time_or_rho is not None
                else None
            ),
        }
        if event.balances is not None:
            record["balances"] = [f"{b.numerator}/{b.denominator}" for b in event.balances]
        lines.append(json.dumps(record))
    return "\n".join(lines)


# name -> spec factory, used by the command line and run manifests
RULE_NAMES: Mapping[str, RuleSpec] = {
    "basicav": RuleSpec.basic_av(),
    "phragmen": RuleSpec.phragmen(),
    "mes": RuleSpec.mes(MesUtilities.COST),
    "mes-binary": RuleSpec.mes(MesUtilities.BINARY),
    "seqcc": RuleSpec.seq_thiele(WeightFunction.cc()),
    "seqpav": RuleSpec.seq_thiele(WeightFunction.harmonic(32)),
    "globalcc": RuleSpec.global_thiele(WeightFunction.cc()),
    "globalpav": RuleSpec.global_thiele(WeightFunction.harmonic(32)),
}


def parse_rule_name(name: str) -> RuleSpec:
    try:
        return RULE_NAMES[name]
    except KeyError:
        raise ValueError(
            f"unknown rule {name!r}; available: {', '.join(sorted(RULE_NAMES))}"
        ) from None
