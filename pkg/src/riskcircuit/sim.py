"""Desk-scale synthetic-population experiments.

Agents carry per-venue preferences and sample daily visit intentions up
front from the scenario seed, so policy arms with the same seed face
identical mobility.  Participating agents quote each visit through the
ledger core and skip it when the quote exceeds their remaining daily
allowance; everyone else just goes.  Infections are sampled hour by hour
by exponential thinning against the same venue rate parameters the
inference engine uses, so simulator and calculator share one disease
model.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .ledger import HOUR, LedgerCore, MemorySink, PolicyConfig

SUSCEPTIBLE, EXPOSED, INFECTIOUS, RECOVERED = 0, 1, 2, 3
STATE_NAMES = ("susceptible", "exposed", "infectious", "recovered")


@dataclass
class Scenario:
    population: int = 200
    venues: int = 10
    days: int = 30
    seed: int = 1
    alpha: float = 1.0                    # participating fraction of people
    beta: float = 1.0                     # participating fraction of venues
    visits_per_day: float = 1.0
    visit_hours: int = 2
    initial_infected: int = 5
    lambda_direct: float = 0.08           # per hour per contagious co-visitor
    lambda_indirect: float = 0.01         # per hour per harboured level
    deposit: float = 0.05                 # per hour per contagious occupant
    decay: float = 0.2                    # per hour
    incubation_days: float = 2.0
    infectious_days: float = 5.0
    allowance: float = math.inf           # daily points budget
    policy: dict = field(default_factory=dict)
    service_backed: bool = False          # drive the real ledger core per visit

    def validate(self) -> None:
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ValueError("participation fractions must lie in [0, 1]")
        if self.population < 1 or self.venues < 1 or self.days < 1:
            raise ValueError("population, venues, and days must be positive")

    @staticmethod
    def from_dict(d: dict) -> "Scenario":
        return Scenario(**d)

    @staticmethod
    def from_file(path: str) -> "Scenario":
        with open(path, "r", encoding="utf-8") as fh:
            return Scenario.from_dict(json.load(fh))


@dataclass
class RunSummary:
    scenario: Scenario
    counts: list[tuple[int, int, int, int]]      # per step, by disease state
    infections: int
    attack_rate: float
    attack_rate_participants: float
    attack_rate_nonparticipants: float
    venue_transmissions: dict[int, int]
    points_spent: list[float]
    skipped_visits: int

    @property
    def mean_points_spent(self) -> float:
        return float(np.mean(self.points_spent)) if self.points_spent else 0.0


@dataclass
class _Visit:
    agent: int
    venue: int
    start_hour: int
    hours: int


def _sample_itinerary(sc: Scenario, rng: np.random.Generator) -> list[list[_Visit]]:
    """Visit intentions per day, drawn independently of any policy."""
    prefs = rng.dirichlet(np.ones(sc.venues), size=sc.population)
    days: list[list[_Visit]] = []
    for day in range(sc.days):
        todays: list[_Visit] = []
        n_visits = rng.poisson(sc.visits_per_day, size=sc.population)
        for agent in range(sc.population):
            for _ in range(int(n_visits[agent])):
                venue = int(rng.choice(sc.venues, p=prefs[agent]))
                start = int(rng.integers(8, 22 - sc.visit_hours))
                todays.append(_Visit(agent, venue, day * 24 + start, sc.visit_hours))
        todays.sort(key=lambda v: (v.start_hour, v.agent, v.venue))
        days.append(todays)
    return days


def run(scenario: Scenario) -> RunSummary:
    sc = scenario
    sc.validate()
    rng_mob = np.random.default_rng(np.random.SeedSequence([sc.seed, 1]))
    rng_dis = np.random.default_rng(np.random.SeedSequence([sc.seed, 2]))

    itinerary = _sample_itinerary(sc, rng_mob)
    participants = rng_mob.random(sc.population) < sc.alpha
    venue_participates = rng_mob.random(sc.venues) < sc.beta

    state = np.full(sc.population, SUSCEPTIBLE, dtype=int)
    seeds = rng_dis.choice(sc.population, size=min(sc.initial_infected, sc.population),
                           replace=False)
    state[seeds] = INFECTIOUS
    clock = np.zeros(sc.population)           # days remaining in current stage
    clock[seeds] = sc.infectious_days
    venue_level = np.zeros(sc.venues)

    core: Optional[LedgerCore] = None
    if sc.service_backed:
        core = _service_core(sc)

    # lightweight lite-ledger bookkeeping (used when not service backed)
    policy = PolicyConfig.from_dict({"engine": "lite", **sc.policy})
    gamma_lo, gamma_hi = policy.gamma_window
    beta_coeff = 0.002
    recent_costs: list[list[tuple[int, float]]] = [[] for _ in range(sc.population)]
    cold = policy.prevalence / policy.p_point
    spent_today = np.zeros(sc.population)
    points_spent = np.zeros(sc.population)
    skipped = 0
    venue_transmissions: dict[int, int] = {}
    infections = 0

    occupancy: list[list[tuple[int, int]]] = [[] for _ in range(sc.venues)]
    # (agent, leave_hour) per venue

    def s_value(agent: int, day: int) -> float:
        s = 0.0
        if gamma_lo <= day <= gamma_hi:
            s += cold
        for d, c in recent_costs[agent]:
            if gamma_lo <= day - d <= gamma_hi:
                s += c
        return s

    counts: list[tuple[int, int, int, int]] = []
    horizon = sc.days * 24
    visit_queue = [v for day in itinerary for v in day]
    qi = 0
    for hour in range(horizon):
        day = hour // 24
        if hour % 24 == 0:
            spent_today[:] = 0.0
        # visit starts this hour
        while qi < len(visit_queue) and visit_queue[qi].start_hour == hour:
            v = visit_queue[qi]
            qi += 1
            go = True
            if participants[v.agent] and venue_participates[v.venue]:
                occupants = [a for a, leave in occupancy[v.venue] if leave > hour]
                quote = v.hours * beta_coeff * sum(s_value(a, day) for a in occupants)
                quote *= policy.global_multiplier
                allowance = sc.allowance
                if quote > allowance - spent_today[v.agent]:
                    go = False
                    skipped += 1
                else:
                    spent_today[v.agent] += quote
                    points_spent[v.agent] += quote
                    recent_costs[v.agent].append((day, quote))
            if go:
                occupancy[v.venue].append((v.agent, hour + v.hours))
                if core is not None:
                    _service_visit(core, sc, v, hour)
        # disease dynamics per occupied venue
        for venue in range(sc.venues):
            occ = [(a, leave) for a, leave in occupancy[venue] if leave > hour]
            occupancy[venue] = occ
            if not occ and venue_level[venue] == 0.0:
                continue
            agents = [a for a, _ in occ]
            contagious = sum(1 for a in agents if state[a] == INFECTIOUS)
            level = venue_level[venue]
            if contagious:
                p_up = 1.0 - math.exp(-sc.deposit * contagious)
                if level < 4 and rng_dis.random() < p_up:
                    venue_level[venue] = level + 1
            if level > 0 and rng_dis.random() < 1.0 - math.exp(-sc.decay):
                venue_level[venue] = level - 1
            hazard_direct = sc.lambda_direct * contagious
            hazard_indirect = sc.lambda_indirect * venue_level[venue]
            hazard = hazard_direct + hazard_indirect
            if hazard <= 0:
                continue
            p_inf = 1.0 - math.exp(-hazard)
            for a in agents:
                if state[a] == SUSCEPTIBLE and rng_dis.random() < p_inf:
                    state[a] = EXPOSED
                    clock[a] = sc.incubation_days
                    infections += 1
                    venue_transmissions[venue] = venue_transmissions.get(venue, 0) + 1
        # stage progression once per day boundary
        if (hour + 1) % 24 == 0:
            active = state != SUSCEPTIBLE
            clock[active] -= 1.0
            for a in np.where(active & (clock <= 0))[0]:
                if state[a] == EXPOSED:
                    state[a] = INFECTIOUS
                    clock[a] = sc.infectious_days
                elif state[a] == INFECTIOUS:
                    state[a] = RECOVERED
        counts.append((
            int(np.sum(state == SUSCEPTIBLE)), int(np.sum(state == EXPOSED)),
            int(np.sum(state == INFECTIOUS)), int(np.sum(state == RECOVERED)),
        ))

    ever = state != SUSCEPTIBLE
    init = np.zeros(sc.population, dtype=bool)
    init[seeds] = True
    new_cases = ever & ~init
    pop = np.ones(sc.population, dtype=bool) & ~init

    def rate(mask: np.ndarray) -> float:
        denom = int(np.sum(mask))
        return float(np.sum(new_cases & mask) / denom) if denom else 0.0

    return RunSummary(
        scenario=sc,
        counts=counts,
        infections=infections,
        attack_rate=rate(pop),
        attack_rate_participants=rate(pop & participants),
        attack_rate_nonparticipants=rate(pop & ~participants),
        venue_transmissions=venue_transmissions,
        points_spent=list(points_spent),
        skipped_visits=skipped,
    )


def _service_core(sc: Scenario) -> LedgerCore:
    core = LedgerCore(MemorySink(),
                      PolicyConfig.from_dict({"engine": "lite", **sc.policy}))
    for a in range(sc.population):
        core.create_account(f"p{a}", {}, 0)
    for v in range(sc.venues):
        core.register_venue(f"v{v}", {"managed": True}, 0)
    return core


def _service_visit(core: LedgerCore, sc: Scenario, v: _Visit, hour: int) -> None:
    t = hour * HOUR
    window = (t, t + v.hours * HOUR)
    quote = core.plan_visit(f"p{v.agent}", f"v{v.venue}", window, "default", [], t)
    core.commit_visit(quote["token"], t, actual_window=window)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

CSV_HEADER = ["alpha", "beta", "allowance", "seed", "attack_rate",
              "attack_rate_participants", "attack_rate_nonparticipants",
              "mean_points_spent"]


def summary_row(s: RunSummary) -> list[str]:
    sc = s.scenario
    allowance = "inf" if math.isinf(sc.allowance) else f"{sc.allowance:.9f}"
    return [f"{sc.alpha:.3f}", f"{sc.beta:.3f}", allowance, str(sc.seed),
            f"{s.attack_rate:.9f}", f"{s.attack_rate_participants:.9f}",
            f"{s.attack_rate_nonparticipants:.9f}", f"{s.mean_points_spent:.9f}"]


def sweep(base: Scenario, alphas: Sequence[float] = (1.0,),
          betas: Sequence[float] = (1.0,),
          allowances: Sequence[float] = (math.inf,),
          seeds: Sequence[int] | None = None) -> list[RunSummary]:
    if not alphas or not betas or not allowances:
        raise ValueError("empty sweep grid")
    seeds = list(seeds) if seeds is not None else [base.seed]
    out = []
    for alpha in alphas:
        for beta in betas:
            for allowance in allowances:
                for seed in seeds:
                    sc = Scenario(**{**base.__dict__, "alpha": alpha, "beta": beta,
                                     "allowance": allowance, "seed": seed})
                    out.append(run(sc))
    return out


def to_csv(summaries: Sequence[RunSummary]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for s in summaries:
        w.writerow(summary_row(s))
    return buf.getvalue()


def sign_test_p(wins: int, losses: int) -> float:
    """One-sided exact sign test: P[X >= wins] for X ~ Binomial(wins+losses, 1/2)."""
    n = wins + losses
    if n == 0:
        return 1.0
    return sum(math.comb(n, k) for k in range(wins, n + 1)) / 2.0 ** n
