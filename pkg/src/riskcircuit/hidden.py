"""Hidden-variable state spaces for individuals and venues.

Every system in a circuit carries a discrete hidden-variable space.  Two
profiles are supported:

* ``simplified`` -- small flat enumerations: a 9-state disease table for
  registered individuals, a 2-state contagiousness toggle for unregistered
  individuals, and a 5-level harboured-risk scale for venues.
* ``factored`` -- product spaces built from discretized internal
  quantities (infection, contagiousness, susceptibility, per-symptom
  levels, alive flag for individuals; one contagiousness level per
  harboured source for venues).

Spaces are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Sequence

import numpy as np


class SystemKind(str, Enum):
    REGISTERED_INDIVIDUAL = "registered_individual"
    UNREGISTERED_INDIVIDUAL = "unregistered_individual"
    MANAGED_VENUE = "managed_venue"
    UNMANAGED_VENUE = "unmanaged_venue"

    @property
    def is_venue(self) -> bool:
        return self in (SystemKind.MANAGED_VENUE, SystemKind.UNMANAGED_VENUE)

    @property
    def is_individual(self) -> bool:
        return not self.is_venue


SIMPLIFIED_INDIVIDUAL_LABELS = (
    "uninfected, not contagious, no symptoms",
    "uninfected, not contagious, symptoms",
    "infected, not contagious, no symptoms",
    "infected, not contagious, symptoms",
    "infected, contagious, no symptoms",
    "infected, contagious, symptoms",
    "immune, no symptoms",
    "immune, symptoms",
    "deceased",
)

SIMPLIFIED_UNREGISTERED_LABELS = ("not contagious", "contagious")

SIMPLIFIED_VENUE_LABELS = ("safe", "slight risk", "medium risk", "risky", "very risky")


@dataclass(frozen=True)
class Factor:
    """One named enumeration axis of a hidden-variable space."""

    name: str
    labels: tuple[str, ...]

    @property
    def cardinality(self) -> int:
        return len(self.labels)


def _level_factor(name: str, top: int) -> Factor:
    return Factor(name, tuple(f"{name}={v}" for v in range(top + 1)))


@dataclass(frozen=True)
class HiddenSpace:
    """Mixed-radix product of factors, row-major (first factor most significant)."""

    kind: SystemKind
    profile: str
    factors: tuple[Factor, ...]
    parameters: dict = field(default_factory=dict, compare=False)
    grid_size: int = 1

    @cached_property
    def total_cardinality(self) -> int:
        n = 1
        for f in self.factors:
            n *= f.cardinality
        return n

    @cached_property
    def _radices(self) -> tuple[int, ...]:
        return tuple(f.cardinality for f in self.factors)

    def encode(self, levels: Sequence[int]) -> int:
        if len(levels) != len(self.factors):
            raise ValueError("level count does not match factor count")
        idx = 0
        for lvl, f in zip(levels, self.factors):
            if not 0 <= lvl < f.cardinality:
                raise ValueError(f"level {lvl} out of range for factor {f.name}")
            idx = idx * f.cardinality + lvl
        return idx

    def decode(self, index: int) -> tuple[int, ...]:
        if not 0 <= index < self.total_cardinality:
            raise ValueError(f"index {index} out of range")
        levels = []
        for card in reversed(self._radices):
            levels.append(index % card)
            index //= card
        return tuple(reversed(levels))

    def level(self, index: int, factor_name: str) -> int:
        names = [f.name for f in self.factors]
        return self.decode(index)[names.index(factor_name)]

    def has_factor(self, name: str) -> bool:
        return any(f.name == name for f in self.factors)

    def state_label(self, index: int) -> str:
        parts = [f.labels[lvl] for f, lvl in zip(self.factors, self.decode(index))]
        return ", ".join(parts) if len(parts) > 1 else parts[0]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "profile": self.profile,
            "parameters": dict(self.parameters),
            "grid_size": self.grid_size,
        }

    @staticmethod
    def from_dict(d: dict) -> "HiddenSpace":
        import dataclasses

        space = build_space(SystemKind(d["kind"]), d.get("profile", "simplified"),
                            **d.get("parameters", {}))
        grid = int(d.get("grid_size", 1))
        if grid != 1:
            space = dataclasses.replace(space, grid_size=grid)
        return space


@dataclass(frozen=True)
class ExtendedState:
    """A base hidden state paired with a position-grid cell.

    The flat index is ``base_index * grid_size + position_index``; the
    mapping is a bijection with the product set.
    """

    base_index: int
    position_index: int

    def flat(self, grid_size: int) -> int:
        if not 0 <= self.position_index < grid_size:
            raise ValueError("position index out of range")
        return self.base_index * grid_size + self.position_index

    @staticmethod
    def from_flat(flat: int, grid_size: int) -> "ExtendedState":
        return ExtendedState(flat // grid_size, flat % grid_size)


def build_space(kind: SystemKind, profile: str, **params) -> HiddenSpace:
    """Construct the hidden-variable space for a system kind.

    ``profile`` is ``"simplified"`` or ``"factored"``.  The factored
    profile takes level bounds ``L_I``, ``L_C``, ``L_S``, a list
    ``symptom_levels`` (one bound per monitored symptom), an
    ``include_alive`` switch for individuals, and ``harboured_levels``
    (one bound per harboured source) for venues.  All bounds default
    to 1 where unstated.
    """
    kind = SystemKind(kind)
    if profile == "simplified":
        return _simplified_space(kind)
    if profile == "factored":
        return _factored_space(kind, params)
    raise ValueError(f"unknown profile {profile!r}")


def _simplified_space(kind: SystemKind) -> HiddenSpace:
    if kind is SystemKind.REGISTERED_INDIVIDUAL:
        factors = (Factor("disease", SIMPLIFIED_INDIVIDUAL_LABELS),)
    elif kind is SystemKind.UNREGISTERED_INDIVIDUAL:
        factors = (Factor("contagious", SIMPLIFIED_UNREGISTERED_LABELS),)
    else:
        factors = (Factor("harbour", SIMPLIFIED_VENUE_LABELS),)
    return HiddenSpace(kind=kind, profile="simplified", factors=factors)


def _factored_space(kind: SystemKind, params: dict) -> HiddenSpace:
    def bound(name, default=1):
        v = int(params.get(name, default))
        if v < 0:
            raise ValueError(f"{name} must be >= 0")
        return v

    if kind is SystemKind.UNREGISTERED_INDIVIDUAL:
        extra = set(params) - {"L_C"}
        if extra:
            raise ValueError(
                "unregistered individuals admit only the contagiousness factor; "
                f"got {sorted(extra)}")
        factors = (_level_factor("C", bound("L_C")),)
    elif kind is SystemKind.REGISTERED_INDIVIDUAL:
        symptom_levels = params.get("symptom_levels", [])
        if "K" in params and not symptom_levels:
            symptom_levels = [1] * int(params["K"])
        factors = [
            _level_factor("I", bound("L_I")),
            _level_factor("C", bound("L_C")),
            _level_factor("S", bound("L_S")),
        ]
        for k, top in enumerate(symptom_levels, start=1):
            if int(top) < 0:
                raise ValueError("symptom level bounds must give cardinality >= 1")
            factors.append(_level_factor(f"s_{k}", int(top)))
        if params.get("include_alive", True):
            factors.append(Factor("A", ("A=0", "A=1")))
        factors = tuple(factors)
    else:
        harboured = params.get("harboured_levels", [4])
        if not harboured:
            raise ValueError("venues need at least one harboured source")
        for top in harboured:
            if int(top) < 0:
                raise ValueError("harboured level bounds must give cardinality >= 1")
        factors = tuple(
            _level_factor(f"C_{l}", int(top)) for l, top in enumerate(harboured, start=1)
        )
    clean = {k: v for k, v in params.items()}
    return HiddenSpace(kind=kind, profile="factored", factors=factors, parameters=clean)


def extend_with_position(space: HiddenSpace, grid_size: int) -> HiddenSpace:
    """Append a venue-position factor of the given grid size.

    Grid size 1 is the identity extension and returns the space untouched.
    The flat index of (base b, position q) is ``b * grid_size + q``.
    """
    if grid_size < 1:
        raise ValueError("grid_size must be >= 1")
    if grid_size == 1:
        return space
    pos = Factor("position", tuple(f"pos={q}" for q in range(grid_size)))
    return HiddenSpace(
        kind=space.kind,
        profile=space.profile,
        factors=space.factors + (pos,),
        parameters=dict(space.parameters),
        grid_size=grid_size,
    )


# ---------------------------------------------------------------------------
# Disease semantics: total projections from hidden states onto the quantities
# the rate models consume.  The simplified tables are hand-coded; factored
# spaces derive everything from their factors.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiseaseSemantics:
    """Per-state projections for one hidden space (arrays of length n)."""

    infected: np.ndarray          # bool
    contagiousness: np.ndarray    # float weights >= 0
    susceptibility: np.ndarray    # float weights >= 0
    alive: np.ndarray             # bool
    symptom_levels: np.ndarray    # (n_flags, n) int; empty if none monitored
    infect_target: np.ndarray     # int; resulting state on infection, -1 if not susceptible
    contagion_onset: tuple[tuple[int, int], ...]    # (from, to) jumps at rate rho
    symptom_onset: tuple[tuple[int, int], ...]      # (from, to) jumps for symptom development
    harbour_level: np.ndarray     # float; venue indirect-risk weight per state
    deposit_target: np.ndarray    # int; state after one deposit, -1 if saturated
    decay_target: np.ndarray      # int; state after one decay, -1 at floor


_SEM_CACHE: dict[tuple, DiseaseSemantics] = {}


def semantics(space: HiddenSpace) -> DiseaseSemantics:
    key = (space.kind, space.profile, space.factors)
    if key not in _SEM_CACHE:
        _SEM_CACHE[key] = _build_semantics(space)
    return _SEM_CACHE[key]


def _build_semantics(space: HiddenSpace) -> DiseaseSemantics:
    n = space.total_cardinality
    zeros = np.zeros(n)
    none = np.full(n, -1, dtype=int)
    if space.profile == "simplified":
        if space.kind is SystemKind.REGISTERED_INDIVIDUAL:
            infected = np.array([s in (2, 3, 4, 5) for s in range(9)])
            contag = np.array([0, 0, 0, 0, 1, 1, 0, 0, 0], dtype=float)
            suscep = np.array([1, 1, 0, 0, 0, 0, 0, 0, 0], dtype=float)
            alive = np.array([s != 8 for s in range(9)])
            symptoms = np.array([[0, 1, 0, 1, 0, 1, 0, 1, 0]])
            infect = none.copy()
            infect[0], infect[1] = 2, 3
            onset = ((2, 4), (3, 5))
            symptom_onset = ((2, 3), (4, 5))
            return DiseaseSemantics(infected, contag, suscep, alive, symptoms,
                                    infect, onset, symptom_onset, zeros, none, none)
        if space.kind is SystemKind.UNREGISTERED_INDIVIDUAL:
            return DiseaseSemantics(
                infected=np.array([False, True]),
                contagiousness=np.array([0.0, 1.0]),
                susceptibility=np.zeros(2),
                alive=np.ones(2, dtype=bool),
                symptom_levels=np.zeros((0, 2), dtype=int),
                infect_target=np.full(2, -1, dtype=int),
                contagion_onset=(),
                symptom_onset=(),
                harbour_level=np.zeros(2),
                deposit_target=np.full(2, -1, dtype=int),
                decay_target=np.full(2, -1, dtype=int),
            )
        # venues: a single 0..4 harboured-risk ladder
        level = np.arange(n, dtype=float)
        deposit = np.array([s + 1 if s + 1 < n else -1 for s in range(n)])
        decay = np.array([s - 1 for s in range(n)])
        return DiseaseSemantics(np.zeros(n, bool), zeros, zeros, np.ones(n, bool),
                                np.zeros((0, n), dtype=int), none, (), (),
                                level, deposit, decay)
    return _factored_semantics(space)


def _factored_semantics(space: HiddenSpace) -> DiseaseSemantics:
    n = space.total_cardinality
    names = [f.name for f in space.factors]
    levels = np.array([space.decode(i) for i in range(n)], dtype=int)

    def col(name):
        return levels[:, names.index(name)] if name in names else None

    if space.kind.is_venue:
        lv = levels.astype(float).sum(axis=1)
        deposit = np.full(n, -1, dtype=int)
        decay = np.full(n, -1, dtype=int)
        for i in range(n):
            ls = list(space.decode(i))
            # deposit raises the lowest unsaturated source; decay drains the highest
            for l in range(len(ls)):
                if ls[l] < space.factors[l].cardinality - 1:
                    up = ls.copy()
                    up[l] += 1
                    deposit[i] = space.encode(up)
                    break
            for l in reversed(range(len(ls))):
                if ls[l] > 0:
                    down = ls.copy()
                    down[l] -= 1
                    decay[i] = space.encode(down)
                    break
        zeros = np.zeros(n)
        return DiseaseSemantics(np.zeros(n, bool), zeros, zeros, np.ones(n, bool),
                                np.zeros((0, n), dtype=int), np.full(n, -1, dtype=int),
                                (), (), lv, deposit, decay)

    if space.kind is SystemKind.UNREGISTERED_INDIVIDUAL:
        c = col("C").astype(float)
        return DiseaseSemantics(col("C") > 0, c, np.zeros(n), np.ones(n, bool),
                                np.zeros((0, n), dtype=int), np.full(n, -1, dtype=int),
                                (), (), np.zeros(n), np.full(n, -1, dtype=int),
                                np.full(n, -1, dtype=int))

    i_lv = col("I")
    c_lv = col("C")
    s_lv = col("S")
    a_lv = col("A")
    alive = np.ones(n, bool) if a_lv is None else a_lv == 1
    infected = i_lv > 0
    contag = np.where(alive, c_lv.astype(float), 0.0)
    if s_lv is not None and s_lv.max(initial=0) > 0:
        base_susc = s_lv.astype(float)
    else:
        base_susc = np.ones(n)
    suscep = np.where(alive & ~infected, base_susc, 0.0)
    symptom_names = [nm for nm in names if nm.startswith("s_")]
    symptoms = np.stack([col(nm) for nm in symptom_names]) if symptom_names \
        else np.zeros((0, n), dtype=int)

    def jump(i, factor, delta):
        ls = list(space.decode(i))
        j = names.index(factor)
        ls[j] += delta
        if not 0 <= ls[j] < space.factors[j].cardinality:
            return None
        return space.encode(ls)

    infect = np.full(n, -1, dtype=int)
    for i in range(n):
        if suscep[i] > 0:
            t = jump(i, "I", 1)
            infect[i] = -1 if t is None else t
    onset = tuple(
        (i, jump(i, "C", 1)) for i in range(n)
        if infected[i] and alive[i] and jump(i, "C", 1) is not None
    )
    symptom_onset = tuple(
        (i, t) for i in range(n)
        if infected[i] and alive[i] and symptom_names
        and (t := jump(i, symptom_names[0], 1)) is not None
    )
    return DiseaseSemantics(infected, contag, suscep, alive, symptoms, infect,
                            onset, symptom_onset, np.zeros(n),
                            np.full(n, -1, dtype=int), np.full(n, -1, dtype=int))


def proposition_mask(space: HiddenSpace, name: str, value: int) -> np.ndarray:
    """Indicator over hidden states for an ontological proposition.

    ``O_1`` asks whether the system is infected (value 1) or not (value 0).
    Any other name is read as "the hidden-state index equals value", the
    most direct interrogation a space supports.
    """
    sem = semantics(space)
    n = space.total_cardinality
    if name == "O_1":
        ind = sem.infected.astype(float)
        return ind if value == 1 else 1.0 - ind
    mask = np.zeros(n)
    if 0 <= value < n:
        mask[value] = 1.0
    return mask


def null_state(space: HiddenSpace) -> int:
    """State index used for the null-person closure: present but inert."""
    if space.profile == "simplified":
        if space.kind is SystemKind.REGISTERED_INDIVIDUAL:
            return 6  # immune, no symptoms
        return 0
    sem = semantics(space)
    inert = np.where((sem.susceptibility == 0) & (sem.contagiousness == 0) & sem.alive)[0]
    return int(inert[0]) if inert.size else 0
