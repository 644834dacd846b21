"""Core data model: elections, games, strategy profiles, and structure classifiers.

All amounts (costs, budgets, utilities) are integers in minor currency
units; converting fractional inputs is the job of the pabulib module.
Every type here is immutable after construction, so values can be shared
freely between threads and used as dictionary keys.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Iterable, Mapping, Sequence

__all__ = [
    "Mode",
    "StructureClass",
    "Project",
    "Voter",
    "Election",
    "Game",
    "Strategy",
    "StrategyProfile",
    "Violation",
    "ProfileError",
    "validate_election",
    "classify_structure",
    "validate_profile",
    "submitted_projects",
    "induced_election",
    "election_to_dict",
    "election_from_dict",
    "game_to_dict",
    "game_from_dict",
    "profile_to_lists",
    "profile_from_lists",
]


class Mode(str, Enum):
    """Which strategy sets proposers have: arbitrary nonempty subsets or singletons."""

    PSG = "psg"
    PSG1 = "psg1"


class StructureClass(Enum):
    """Approval structure of an election, most specific class first."""

    PARTY_LIST = "party_list"
    LAMINAR = "laminar"
    GENERAL = "general"


@dataclass(frozen=True)
class Project:
    id: str
    cost: int


@dataclass(frozen=True)
class Voter:
    id: str
    approvals: frozenset[str]


@dataclass(frozen=True)
class BallotGroup:
    """Voters sharing one approval set; rules treat them as one weighted agent."""

    ballot: frozenset[str]
    count: int
    members: tuple[int, ...]  # voter indices in election order


@dataclass(frozen=True, eq=True)
class Election:
    """A participatory-budgeting election.

    ``tie_break`` is a total order over project ids (earlier = preferred)
    used by every rule to resolve internal ties.
    """

    projects: tuple[Project, ...]
    voters: tuple[Voter, ...]
    budget: int
    tie_break: tuple[str, ...]

    @classmethod
    def of(
        cls,
        costs: Mapping[str, int],
        ballots: Iterable[Iterable[str]],
        budget: int,
        tie_break: Sequence[str] | None = None,
    ) -> "Election":
        """Convenience constructor from a cost map and a list of approval ballots.

        Voter ids are generated as ``v1, v2, ...``; ``tie_break`` defaults to
        the iteration order of ``costs``.
        """
        projects = tuple(Project(pid, cost) for pid, cost in costs.items())
        voters = tuple(
            Voter(f"v{i + 1}", frozenset(ballot)) for i, ballot in enumerate(ballots)
        )
        order = tuple(tie_break) if tie_break is not None else tuple(costs)
        return cls(projects=projects, voters=voters, budget=budget, tie_break=order)

    @cached_property
    def project_ids(self) -> tuple[str, ...]:
        return tuple(p.id for p in self.projects)

    @cached_property
    def cost_of(self) -> Mapping[str, int]:
        return {p.id: p.cost for p in self.projects}

    @cached_property
    def tie_index(self) -> Mapping[str, int]:
        return {pid: i for i, pid in enumerate(self.tie_break)}

    @cached_property
    def ballot_groups(self) -> tuple[BallotGroup, ...]:
        members: dict[frozenset[str], list[int]] = {}
        for i, voter in enumerate(self.voters):
            members.setdefault(voter.approvals, []).append(i)
        return tuple(
            BallotGroup(ballot, len(idx), tuple(idx)) for ballot, idx in members.items()
        )

    @cached_property
    def support(self) -> Mapping[str, frozenset[int]]:
        """For each project id, the set of voter indices approving it."""
        sup: dict[str, set[int]] = {pid: set() for pid in self.project_ids}
        for group in self.ballot_groups:
            for pid in group.ballot:
                if pid in sup:
                    sup[pid].update(group.members)
        return {pid: frozenset(vs) for pid, vs in sup.items()}

    def approval_score(self, project_id: str) -> int:
        return len(self.support[project_id])

    def restrict(self, submitted: frozenset[str]) -> "Election":
        """The election on a subset of projects; approvals and tie order restricted."""
        projects = tuple(p for p in self.projects if p.id in submitted)
        restricted = {g.ballot: g.ballot & submitted for g in self.ballot_groups}
        by_index: list[Voter | None] = [None] * len(self.voters)
        for group in self.ballot_groups:
            ballot = restricted[group.ballot]
            for i in group.members:
                by_index[i] = Voter(self.voters[i].id, ballot)
        election = Election(
            projects=projects,
            voters=tuple(v for v in by_index if v is not None),
            budget=self.budget,
            tie_break=tuple(pid for pid in self.tie_break if pid in submitted),
        )
        # Seed derived caches from the parent so evaluating many induced
        # elections does not rescan every voter.
        merged: Counter[frozenset[str]] = Counter()
        member_map: dict[frozenset[str], list[int]] = {}
        for group in self.ballot_groups:
            ballot = restricted[group.ballot]
            merged[ballot] += group.count
            member_map.setdefault(ballot, []).extend(group.members)
        election.__dict__["ballot_groups"] = tuple(
            BallotGroup(ballot, count, tuple(sorted(member_map[ballot])))
            for ballot, count in merged.items()
        )
        election.__dict__["support"] = {
            pid: self.support[pid] for pid in election.project_ids
        }
        return election


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str


def validate_election(election: Election) -> list[Violation]:
    """Report every violated election invariant; empty list means well formed."""
    violations: list[Violation] = []
    seen: set[str] = set()
    for project in election.projects:
        if project.id in seen:
            violations.append(
                Violation("duplicate-project", f"project id {project.id!r} repeated")
            )
        seen.add(project.id)
        if project.cost < 1:
            violations.append(
                Violation("nonpositive-cost", f"project {project.id!r} has cost {project.cost}")
            )
    if election.budget < 0:
        violations.append(Violation("negative-budget", f"budget is {election.budget}"))
    ids = {p.id for p in election.projects}
    order = list(election.tie_break)
    if sorted(order) != sorted(ids):
        missing = ids.difference(order)
        extra = [pid for pid in order if pid not in ids]
        duplicated = [pid for pid, n in Counter(order).items() if n > 1]
        details = []
        if missing:
            details.append(f"missing {sorted(missing)}")
        if extra:
            details.append(f"unknown {sorted(set(extra))}")
        if duplicated:
            details.append(f"repeated {sorted(duplicated)}")
        violations.append(
            Violation(
                "tie-break-permutation",
                "tie_break is not a permutation of the project ids"
                + (f" ({'; '.join(details)})" if details else ""),
            )
        )
    for voter in election.voters:
        for pid in sorted(voter.approvals):
            if pid not in ids:
                violations.append(
                    Violation(
                        "dangling-approval",
                        f"voter {voter.id!r} approves unknown project {pid!r}",
                    )
                )
    return violations


def classify_structure(election: Election) -> StructureClass:
    """Most specific approval structure: party-list, laminar, or general.

    Party-list: any two supporter sets are equal or disjoint. Laminar: any
    two are nested or disjoint.
    """
    supports = [election.support[pid] for pid in election.project_ids]
    party_list = True
    laminar = True
    for i, a in enumerate(supports):
        for b in supports[i + 1 :]:
            if not (a == b or a.isdisjoint(b)):
                party_list = False
                if not (a <= b or b <= a):
                    laminar = False
                    break
        if not laminar:
            break
    if party_list:
        return StructureClass.PARTY_LIST
    if laminar:
        return StructureClass.LAMINAR
    return StructureClass.GENERAL


Strategy = frozenset[str]
StrategyProfile = tuple[Strategy, ...]


class ProfileError(ValueError):
    """A strategy profile violates the game's constraints."""


@dataclass(frozen=True)
class Game:
    """An election together with an ordered partition of projects into proposers."""

    election: Election
    proposers: tuple[frozenset[str], ...]
    mode: Mode = Mode.PSG

    def __post_init__(self) -> None:
        if not self.proposers:
            raise ValueError("a game needs at least one proposer")
        covered: set[str] = set()
        for i, cell in enumerate(self.proposers):
            if not cell:
                raise ValueError(f"proposer {i} owns no projects")
            if covered & cell:
                raise ValueError("proposer project sets overlap")
            covered |= cell
        if covered != set(self.election.project_ids):
            raise ValueError("proposers must partition exactly the election's projects")

    @cached_property
    def owner(self) -> Mapping[str, int]:
        return {pid: i for i, cell in enumerate(self.proposers) for pid in cell}

    @property
    def num_proposers(self) -> int:
        return len(self.proposers)


def validate_profile(game: Game, profile: StrategyProfile) -> None:
    """Raise ProfileError unless ``profile`` is a valid strategy profile for ``game``."""
    if len(profile) != game.num_proposers:
        raise ProfileError(
            f"profile has {len(profile)} strategies for {game.num_proposers} proposers"
        )
    for i, strategy in enumerate(profile):
        if not strategy:
            raise ProfileError(f"proposer {i} submits an empty set")
        if not strategy <= game.proposers[i]:
            raise ProfileError(
                f"proposer {i} submits projects it does not own: "
                f"{sorted(strategy - game.proposers[i])}"
            )
        if game.mode is Mode.PSG1 and len(strategy) != 1:
            raise ProfileError(
                f"single-project mode: proposer {i} submits {len(strategy)} projects"
            )


def submitted_projects(profile: StrategyProfile) -> frozenset[str]:
    return frozenset().union(*profile)


def induced_election(game: Game, profile: StrategyProfile) -> Election:
    """The election restricted to the projects submitted under ``profile``."""
    validate_profile(game, profile)
    return game.election.restrict(submitted_projects(profile))


# --- canonical JSON forms ---------------------------------------------------


def election_to_dict(election: Election) -> dict:
    return {
        "projects": [{"id": p.id, "cost": p.cost} for p in election.projects],
        "voters": [
            {"id": v.id, "approvals": sorted(v.approvals)} for v in election.voters
        ],
        "budget": election.budget,
        "tie_break": list(election.tie_break),
    }


def election_from_dict(data: Mapping) -> Election:
    return Election(
        projects=tuple(Project(str(p["id"]), int(p["cost"])) for p in data["projects"]),
        voters=tuple(
            Voter(str(v["id"]), frozenset(str(a) for a in v["approvals"]))
            for v in data["voters"]
        ),
        budget=int(data["budget"]),
        tie_break=tuple(str(pid) for pid in data["tie_break"]),
    )


def game_to_dict(game: Game) -> dict:
    return {
        "election": election_to_dict(game.election),
        "proposers": [sorted(cell) for cell in game.proposers],
        "mode": game.mode.value,
    }


def game_from_dict(data: Mapping) -> Game:
    return Game(
        election=election_from_dict(data["election"]),
        proposers=tuple(frozenset(str(pid) for pid in cell) for cell in data["proposers"]),
        mode=Mode(data["mode"]),
    )


def profile_to_lists(profile: StrategyProfile) -> list[list[str]]:
    return [sorted(cell) for cell in profile]


def profile_from_lists(data: Sequence[Sequence[str]]) -> StrategyProfile:
    return tuple(frozenset(str(pid) for pid in cell) for cell in data)


def game_to_json(game: Game) -> str:
    return json.dumps(game_to_dict(game), indent=2)


def game_from_json(text: str) -> Game:
    return game_from_dict(json.loads(text))
