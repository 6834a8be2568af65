"""Simplified points accounting: weighted sums over prior visit costs.

The cost of a visit is the stay duration times a venue- and
behaviour-weighted sum of the co-visitors' S values, where a person's S
value adds up their own recent visit costs (decayed by how contagious an
infection acquired back then would make them now).  People outside the
system carry a flat k-scaled background value.  The linear bookkeeping is
valid in the small-probability regime; the engine in ``inference`` is the
non-linear reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

DAY = 86400


class MissingBeta(KeyError):
    pass


class InsufficientHistory(ValueError):
    pass


@dataclass
class CoVisitorShare:
    """One co-visitor's term inside a recorded visit cost.

    ``contribution`` is that term in points: duration x beta x S at the
    time of the visit.  Keeping the terms makes exact recomputation with
    any one person removed possible later.
    """

    person: str
    behaviour: str
    s_value: float
    contribution: float = 0.0


@dataclass
class VisitCostRecord:
    person: str
    visit_index: int
    venue: str
    time: int                        # visit start, epoch seconds
    duration: float                  # seconds
    behaviour: str
    cost: float                      # points
    co_visitors: list[CoVisitorShare] = field(default_factory=list)

    def __post_init__(self):
        if self.cost < 0:
            raise ValueError("visit cost must be >= 0")


@dataclass
class PersonHistory:
    person: str
    joined: int                      # epoch seconds
    join_prevalence: float           # c(t) at join time
    visits: list[VisitCostRecord] = field(default_factory=list)

    def ordered(self) -> list[VisitCostRecord]:
        vs = sorted(self.visits, key=lambda v: v.visit_index)
        for a, b in zip(vs, vs[1:]):
            if b.visit_index <= a.visit_index:
                raise ValueError("visit indices must be strictly increasing")
        return vs


@dataclass
class BetaTable:
    """Venue interaction weights: (behaviour of payer, behaviour of source) -> beta."""

    venue: str
    pairs: dict[tuple[str, str], float] = field(default_factory=dict)
    symmetric: bool = False

    def __post_init__(self):
        for k, v in self.pairs.items():
            if v < 0:
                raise ValueError(f"beta{k} must be >= 0")

    def get(self, u_subject: str, u_other: str) -> float:
        key = (u_subject, u_other)
        if key in self.pairs:
            return self.pairs[key]
        if self.symmetric and (u_other, u_subject) in self.pairs:
            return self.pairs[(u_other, u_subject)]
        if ("*", "*") in self.pairs:
            return self.pairs[("*", "*")]
        raise MissingBeta(f"venue {self.venue}: no beta for {key}")

    @staticmethod
    def from_dict(venue: str, d: Mapping) -> "BetaTable":
        pairs = {}
        for key, val in d.get("pairs", d).items():
            if key == "symmetric":
                continue
            if isinstance(key, str):
                a, _, b = key.partition("|")
                pairs[(a, b)] = float(val)
            else:
                pairs[tuple(key)] = float(val)
        return BetaTable(venue, pairs, bool(d.get("symmetric", False))
                         if isinstance(d, dict) else False)


@dataclass
class GammaProfile:
    """Contagiousness weight of an old cost, by elapsed whole days.

    ``window`` is the elapsed-day interval (inclusive) in which an earlier
    infection could make the person contagious now; costs outside it carry
    no weight.  Buckets override the default weight of 1 inside the window.
    """

    window: tuple[int, int] = (2, 14)
    buckets: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        for d, g in self.buckets.items():
            if not 0.0 <= g <= 1.0:
                raise ValueError(f"gamma[{d}] must lie in [0, 1]")

    def infectious(self, elapsed_days: int) -> bool:
        lo, hi = self.window
        return lo <= elapsed_days <= hi

    def weight(self, elapsed_days: int) -> float:
        if not self.infectious(elapsed_days):
            return 0.0
        return self.buckets.get(elapsed_days, 1.0)

    @staticmethod
    def from_dict(d: Mapping) -> "GammaProfile":
        window = tuple(d.get("window", (2, 14)))
        buckets = {int(k): float(v) for k, v in d.get("buckets", {}).items()}
        return GammaProfile((int(window[0]), int(window[1])), buckets)


def elapsed_days(then: float, now: float) -> int:
    return int((now - then) // DAY)


def cold_start_cost(join_prevalence: float, p_point: float) -> float:
    """Cost carried in at sign-up: the background chance of already being
    infected, expressed in points."""
    return join_prevalence / p_point


def s_value(history: PersonHistory, gamma: GammaProfile, now: float,
            p_point: float, exclude_with: Optional[str] = None,
            cooling_off_factor: float = 1.0) -> float:
    """S value of a person: gamma-weighted sum of recent visit costs.

    The sign-up cost participates like a visit made at join time.  When
    ``exclude_with`` names another person, each recorded cost is replaced
    by its tweaked value with that person's interactions removed.
    """
    total = 0.0
    d0 = elapsed_days(history.joined, now)
    if gamma.infectious(d0):
        total += gamma.weight(d0) * cold_start_cost(history.join_prevalence,
                                                    p_point) * cooling_off_factor
    for v in history.ordered():
        if v.time > now:
            raise ValueError("visit in the future")
        d = elapsed_days(v.time, now)
        if not gamma.infectious(d):
            continue
        cost = v.cost if exclude_with is None else tweaked_cost(v, exclude_with)
        total += gamma.weight(d) * cost
    return total


def unmodeled_s_value(prevalence: float, k: float, p_point: float) -> float:
    """S for somebody outside the system: k times the background value."""
    if k < 1.0:
        raise ValueError("k must be >= 1")
    return k * prevalence / p_point


def visit_cost(behaviour: str, duration: float,
               co_visitors: Sequence[tuple[str, float]],
               beta: BetaTable) -> float:
    """Duration times the beta-weighted sum of co-visitor S values.

    ``co_visitors`` holds (behaviour, S value) pairs for everyone present
    during the stay or recent enough to have left active deposits behind.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    return duration * sum(beta.get(behaviour, u_m) * s_m for u_m, s_m in co_visitors)


def visit_shares(behaviour: str, duration: float,
                 co_visitors: Sequence[tuple[str, str, float]],
                 beta: BetaTable) -> list[CoVisitorShare]:
    """Per-co-visitor cost terms for (person, behaviour, S value) triples."""
    return [
        CoVisitorShare(person, u_m, s_m, duration * beta.get(behaviour, u_m) * s_m)
        for person, u_m, s_m in co_visitors
    ]


def tweaked_cost(record: VisitCostRecord, subject: str) -> float:
    """The recorded cost with every interaction involving ``subject`` removed
    (its beta set to zero), so people are not charged for the risk they
    themselves created earlier."""
    if record.cost > 0 and not record.co_visitors:
        raise InsufficientHistory(
            f"visit {record.person}#{record.visit_index} lacks co-visitor shares")
    removed = sum(s.contribution for s in record.co_visitors if s.person == subject)
    return max(0.0, record.cost - removed)


def tweak_for_subject(subject: str, histories: Mapping[str, PersonHistory],
                      gamma: GammaProfile, now: float,
                      p_point: float) -> dict[str, float]:
    """Tweaked S values of every co-visitor with the subject's own
    contributions removed.  Never exceeds the untweaked value."""
    return {person: s_value(h, gamma, now, p_point, exclude_with=subject)
            for person, h in histories.items()}


def additivity_gap(per_stop: Sequence[float]) -> tuple[float, float]:
    """(sum - composed, quadratic bound) for independent per-stop infection
    probabilities: 0 <= sum p_i - (1 - prod(1 - p_i)) <= (sum p_i)^2 / 2."""
    s = sum(per_stop)
    composed = 1.0
    for p in per_stop:
        composed *= (1.0 - p)
    return s - (1.0 - composed), 0.5 * s * s
