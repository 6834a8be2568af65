"""Transition-rate models and the forward solve that turns boxes into tensors.

A venue's rate model declares a behaviour catalogue, direct and indirect
transmission rates, disease progression rates, harboured-source deposit and
decay rates, procedure factors, and the rate processes behind outcome flags
(tests, symptom reports, bluetooth readings).

Outcomes ride on a record extension of the joint state space: each
monitored flag adds a record slot that starts "pending" and commits when
its marked jump fires.  All sectors share the pending block, which is what
makes outcome values indistinguishable until the event that separates
them.  The per-outcome rate matrix Q^o is the column block of the extended
generator landing in record o; summed over o these blocks recover a proper
generator with zero row sums.

The forward equation dP/dt = P Q is integrated by a classical fourth-order
fixed-step scheme with step <= min(duration/16, 0.1/||Q||_inf), piecewise
over constant-rate segments.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import hidden
from .circuit import BoxOp, Flag, Participant, SystemId
from .hidden import HiddenSpace, semantics
from .tensor import Axis, OpTensor

DEFAULT_STATE_LIMIT = 4096


class UnknownBehaviour(KeyError):
    pass


class StateSpaceTooLarge(RuntimeError):
    pass


class SolverDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class OutcomeSpec:
    """Rate process behind one outcome flag name."""

    kind: str                  # test | symptom | bluetooth
    rate: float
    false_positive: float = 0.0
    sensitivity: float = 1.0
    values: int = 1            # bluetooth: number of non-null values
    value_probs: tuple[float, ...] | None = None

    @staticmethod
    def from_dict(d: dict) -> "OutcomeSpec":
        return OutcomeSpec(
            kind=d["kind"],
            rate=float(d.get("rate", 0.0)),
            false_positive=float(d.get("false_positive", 0.0)),
            sensitivity=float(d.get("sensitivity", 1.0)),
            values=int(d.get("values", 1)),
            value_probs=tuple(d["value_probs"]) if d.get("value_probs") else None,
        )

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "rate": self.rate}
        if self.kind == "test":
            d["false_positive"] = self.false_positive
            d["sensitivity"] = self.sensitivity
        if self.kind == "bluetooth":
            d["values"] = self.values
            if self.value_probs:
                d["value_probs"] = list(self.value_probs)
        return d


@dataclass
class RateModel:
    """Per-venue disease dynamics and outcome processes."""

    venue: str
    behaviours: dict[str, float] = field(default_factory=dict)  # label -> proximity weight
    lambda_direct: float = 0.0
    lambda_indirect: float = 0.0
    rho: float = 0.0
    deposit: float = 0.0
    decay: float = 0.0
    procedures: dict[str, float] = field(default_factory=dict)  # name -> rate factor
    outcome_rates: dict[str, OutcomeSpec] = field(default_factory=dict)
    progression_rates: dict[str, float] = field(default_factory=dict)
    position_grid: int = 1
    state_limit: int = DEFAULT_STATE_LIMIT
    lite: dict = field(default_factory=dict)   # beta/gamma payload for the lite engine

    def __post_init__(self):
        for name, v in [("lambda_direct", self.lambda_direct),
                        ("lambda_indirect", self.lambda_indirect),
                        ("rho", self.rho), ("deposit", self.deposit),
                        ("decay", self.decay)]:
            if v < 0:
                raise ValueError(f"{name} must be >= 0")

    def weight(self, behaviour: Optional[str]) -> float:
        if behaviour is None:
            return 1.0
        if behaviour not in self.behaviours:
            raise UnknownBehaviour(behaviour)
        return self.behaviours[behaviour]

    @staticmethod
    def from_dict(d: dict) -> "RateModel":
        behaviours = {}
        for label, spec in d.get("behaviours", {}).items():
            behaviours[label] = float(spec["proximity_weight"]) \
                if isinstance(spec, dict) else float(spec)
        procedures = {}
        for name, spec in d.get("procedures", {}).items():
            procedures[name] = float(spec["factor"]) if isinstance(spec, dict) else float(spec)
        outcomes = {name: OutcomeSpec.from_dict(sp)
                    for name, sp in d.get("outcome_rates", {}).items()}
        lite = {k: d[k] for k in ("beta", "gamma") if k in d}
        return RateModel(
            venue=str(d["venue"]),
            behaviours=behaviours,
            lambda_direct=float(d.get("lambda_direct", 0.0)),
            lambda_indirect=float(d.get("lambda_indirect", 0.0)),
            rho=float(d.get("rho", 0.0)),
            deposit=float(d.get("deposit", 0.0)),
            decay=float(d.get("decay", 0.0)),
            procedures=procedures,
            outcome_rates=outcomes,
            progression_rates={k: float(v)
                               for k, v in d.get("progression_rates", {}).items()},
            position_grid=int(d.get("position_grid", 1)),
            state_limit=int(d.get("state_limit", DEFAULT_STATE_LIMIT)),
            lite=lite,
        )

    @staticmethod
    def from_file(path: str) -> "RateModel":
        with open(path, "r", encoding="utf-8") as fh:
            return RateModel.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Record slots for outcome flags
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RecordSlot:
    flag: Flag
    spec: OutcomeSpec
    n_records: int            # pending plus committed values
    value_count: int          # size of the flag's value set {0..value_count-1}

    def value_of_record(self, r: int) -> int:
        """Fold a record state onto the reported flag value."""
        if r == 0:
            return 0                      # pending / nothing reported
        if self.spec.kind == "test":
            return r - 1                  # 1 -> negative(0), 2 -> positive(1)
        return r                          # symptom level / bluetooth value


@dataclass(frozen=True)
class RecordStructure:
    slots: tuple[RecordSlot, ...]

    @property
    def n_records(self) -> int:
        n = 1
        for s in self.slots:
            n *= s.n_records
        return n

    def decode(self, r: int) -> tuple[int, ...]:
        out = []
        for s in reversed(self.slots):
            out.append(r % s.n_records)
            r //= s.n_records
        return tuple(reversed(out))

    def encode(self, rs: Sequence[int]) -> int:
        r = 0
        for s, v in zip(self.slots, rs):
            r = r * s.n_records + v
        return r

    def commit(self, r: int, slot_idx: int, rec_value: int) -> int:
        rs = list(self.decode(r))
        rs[slot_idx] = rec_value
        return self.encode(rs)

    def label(self, r: int) -> tuple:
        parts = []
        for slot, rv in zip(self.slots, self.decode(r)):
            tag = "none" if rv == 0 else slot.value_of_record(rv)
            parts.append((slot.flag.name, tag))
        return tuple(parts)

    def selection_weights(self) -> np.ndarray:
        """1 for records consistent with every recorded flag value, else 0."""
        w = np.zeros(self.n_records)
        for r in range(self.n_records):
            ok = all(slot.value_of_record(rv) == slot.flag.value
                     for slot, rv in zip(self.slots, self.decode(r)))
            w[r] = 1.0 if ok else 0.0
        return w


def _symptom_top(flag: Flag, space: HiddenSpace) -> int:
    sem = semantics(space)
    k = 1
    if "_" in flag.name:
        try:
            k = int(flag.name.split("_", 1)[1])
        except ValueError:
            k = 1
    if sem.symptom_levels.shape[0] >= k:
        return int(sem.symptom_levels[k - 1].max(initial=0))
    return 0


def build_record_structure(model: RateModel, box: BoxOp,
                           spaces: Mapping[SystemId, HiddenSpace]) -> RecordStructure:
    slots = []
    for f in box.flags:
        if f.kind not in {"symptom", "test", "bluetooth"}:
            continue
        spec = model.outcome_rates.get(f.name)
        if spec is None:
            spec = OutcomeSpec(kind=f.kind, rate=0.0)
        if f.kind == "test":
            slots.append(RecordSlot(f, spec, 3, 2))
        elif f.kind == "symptom":
            top = max((_symptom_top(f, spaces[s.system]) for s in f.subjects), default=0)
            slots.append(RecordSlot(f, spec, 1 + top, 1 + top))
        else:
            v = spec.values
            slots.append(RecordSlot(f, spec, 1 + v, 1 + v))
    return RecordStructure(tuple(slots))


def outcome_value_sets(model: RateModel, box: BoxOp,
                       spaces: Mapping[SystemId, HiddenSpace]) -> dict[str, list[int]]:
    """Flag name -> complete value set, for outcome-completeness sweeps."""
    rs = build_record_structure(model, box, spaces)
    return {s.flag.name: sorted({s.value_of_record(r) for r in range(s.n_records)})
            for s in rs.slots}


# ---------------------------------------------------------------------------
# Generator assembly
# ---------------------------------------------------------------------------

@dataclass
class OutcomeRateMatrix:
    """One outcome sector of the (record-extended) generator.

    ``segments`` is a piecewise-constant sequence of (duration, matrix).
    ``record_index``/``n_records``/``n_base`` describe where in the extended
    space this sector's columns live; plain single-sector problems have
    n_records == 1.
    """

    outcome: tuple
    segments: list[tuple[float, np.ndarray]]
    n_base: int
    record_index: int = 0
    n_records: int = 1

    def validate(self, tol: float = 0.0) -> None:
        for _, q in self.segments:
            off = q - np.diag(np.diag(q))
            if off.size and off.min() < -tol:
                raise ValueError("negative off-diagonal rate")


def plain_rate_matrix(q: np.ndarray, duration: float) -> OutcomeRateMatrix:
    """Wrap a bare generator as the single sector of an outcome-free process."""
    q = np.asarray(q, dtype=float)
    return OutcomeRateMatrix((), [(float(duration), q)], n_base=q.shape[0])


@dataclass
class _JointLayout:
    venue_space: HiddenSpace
    part_spaces: list[HiddenSpace]
    dims: list[int]

    @property
    def n(self) -> int:
        return int(np.prod(self.dims)) if self.dims else 1


def _joint_layout(box_venue_space: HiddenSpace,
                  parts: Sequence[Participant],
                  spaces: Mapping[SystemId, HiddenSpace]) -> _JointLayout:
    ps = [spaces[p.system] for p in parts]
    dims = [box_venue_space.total_cardinality] + [s.total_cardinality for s in ps]
    return _JointLayout(box_venue_space, ps, dims)


def _base_generator(model: RateModel, layout: _JointLayout,
                    parts: Sequence[Participant], proc_factor: float) -> np.ndarray:
    """Dense generator for the joint base dynamics of one segment."""
    n = layout.n
    dims = layout.dims
    v_sem = semantics(layout.venue_space)
    p_sems = [semantics(s) for s in layout.part_spaces]
    weights = [model.weight(p.behaviour) for p in parts]
    symptom_rate = model.progression_rates.get("symptom_onset", 0.0)

    q = np.zeros((n, n))
    onset_maps = []
    symptom_maps = []
    for sem in p_sems:
        m = {a: b for a, b in sem.contagion_onset}
        onset_maps.append(m)
        symptom_maps.append({a: b for a, b in sem.symptom_onset})

    def add(idx, slot, new_state, rate):
        if rate <= 0:
            return
        stride = int(np.prod(dims[slot + 1:])) if slot + 1 < len(dims) else 1
        old = (idx // stride) % dims[slot]
        j = idx + (new_state - old) * stride
        q[idx, j] += rate

    for idx in range(n):
        rem = idx
        states = []
        for d in reversed(dims):
            states.append(rem % d)
            rem //= d
        states.reverse()
        v_state, p_states = states[0], states[1:]
        harbour = v_sem.harbour_level[v_state]
        contagious = sum(p_sems[j].contagiousness[p_states[j]] * weights[j]
                         for j in range(len(parts)))
        for i_p, (sem, st) in enumerate(zip(p_sems, p_states)):
            target = sem.infect_target[st]
            if target >= 0:
                others = sum(p_sems[j].contagiousness[p_states[j]] * weights[j]
                             for j in range(len(parts)) if j != i_p)
                rate = sem.susceptibility[st] * (
                    model.lambda_direct * weights[i_p] * others
                    + model.lambda_indirect * harbour * proc_factor)
                add(idx, 1 + i_p, int(target), rate)
            t = onset_maps[i_p].get(st)
            if t is not None:
                add(idx, 1 + i_p, t, model.rho)
            t = symptom_maps[i_p].get(st)
            if t is not None:
                add(idx, 1 + i_p, t, symptom_rate)
        if v_sem.deposit_target[v_state] >= 0 and contagious > 0:
            add(idx, 0, int(v_sem.deposit_target[v_state]),
                model.deposit * contagious * proc_factor)
        if v_sem.decay_target[v_state] >= 0:
            add(idx, 0, int(v_sem.decay_target[v_state]), model.decay)
    np.fill_diagonal(q, -q.sum(axis=1))
    return q


def _firing_rates(model: RateModel, layout: _JointLayout, parts: Sequence[Participant],
                  slot: RecordSlot) -> dict[int, np.ndarray]:
    """record-value -> per-joint-state firing rate, zero if a subject is absent."""
    n = layout.n
    dims = layout.dims
    part_index = {(p.system, p.occurrence): i for i, p in enumerate(parts)}
    subj_slots = []
    for s in slot.flag.subjects:
        i = part_index.get((s.system, s.occurrence))
        if i is None:
            return {}          # a subject is not present: the process is dormant
        subj_slots.append(i)
    if not subj_slots:
        return {}

    def slot_states(i_slot):
        stride = int(np.prod(dims[i_slot + 2:])) if i_slot + 2 < len(dims) else 1
        idx = np.arange(n)
        return (idx // stride) % dims[i_slot + 1]

    spec = slot.spec
    out: dict[int, np.ndarray] = {}
    if spec.kind == "test":
        sem = semantics(layout.part_spaces[subj_slots[0]])
        st = slot_states(subj_slots[0])
        hit = np.where(sem.infected[st], spec.sensitivity, spec.false_positive)
        out[2] = spec.rate * hit            # positive result record
        out[1] = spec.rate * (1.0 - hit)    # negative result record
    elif spec.kind == "symptom":
        sem = semantics(layout.part_spaces[subj_slots[0]])
        st = slot_states(subj_slots[0])
        k = 1
        if "_" in slot.flag.name:
            try:
                k = int(slot.flag.name.split("_", 1)[1])
            except ValueError:
                k = 1
        if sem.symptom_levels.shape[0] < k:
            return {}
        level = sem.symptom_levels[k - 1][st]
        for v in range(1, slot.n_records):
            out[v] = spec.rate * (level == v).astype(float)
    else:  # bluetooth
        v_count = slot.n_records - 1
        probs = spec.value_probs or tuple(1.0 / v_count for _ in range(v_count))
        for v in range(1, slot.n_records):
            out[v] = np.full(n, spec.rate * probs[v - 1])
    return {v: r for v, r in out.items() if np.any(r > 0)}


def _extended_generator(q_base: np.ndarray, record: RecordStructure,
                        firing: list[dict[int, np.ndarray]]) -> np.ndarray:
    """Generator on (record x joint) space; record-major flat index."""
    n = q_base.shape[0]
    n_rec = record.n_records
    m = n_rec * n
    q = np.zeros((m, m))
    for r in range(n_rec):
        sl = slice(r * n, (r + 1) * n)
        q[sl, sl] += q_base
    for slot_idx, rates in enumerate(firing):
        if not rates:
            continue
        for r in range(n_rec):
            if record.decode(r)[slot_idx] != 0:
                continue
            for rec_value, rate_vec in rates.items():
                r2 = record.commit(r, slot_idx, rec_value)
                block = np.arange(n)
                q[r * n + block, r2 * n + block] += rate_vec
                q[r * n + block, r * n + block] -= rate_vec
    return q


def _procedure_segments(model: RateModel, box_flags: Sequence[Flag],
                        start: float, end: float) -> list[tuple[float, float, float]]:
    """(seg_start, seg_end, combined procedure factor) covering [start, end)."""
    events = sorted({f.time for f in box_flags
                     if f.kind == "procedure" and start < f.time < end})
    bounds = [start] + list(events) + [end]
    segs = []
    for a, b in zip(bounds, bounds[1:]):
        factor = 1.0
        for f in box_flags:
            if f.kind == "procedure" and f.time <= a:
                factor *= model.procedures.get(f.name, 1.0)
        segs.append((a, b, factor))
    return segs


def assemble_q(model: RateModel, box: BoxOp,
               spaces: Mapping[SystemId, HiddenSpace],
               present: Sequence[Participant] | None = None,
               window: tuple[float, float] | None = None) -> list[OutcomeRateMatrix]:
    """Per-outcome rate matrices for (a sub-window of) a box.

    Matrices live on the record-extended joint space; summing over
    outcomes gives a proper generator with zero row sums.
    """
    parts = list(present) if present is not None else list(box.participants)
    win = window or box.window
    layout = _joint_layout(spaces[box.venue], parts, spaces)
    record = build_record_structure(model, box, spaces)
    n_ext = layout.n * record.n_records
    if n_ext > model.state_limit:
        raise StateSpaceTooLarge(f"{n_ext} extended states exceed limit {model.state_limit}")
    firing = [_firing_rates(model, layout, parts, slot) for slot in record.slots]
    segs = []
    for a, b, factor in _procedure_segments(model, box.flags, win[0], win[1]):
        q_base = _base_generator(model, layout, parts, factor)
        segs.append((b - a, _extended_generator(q_base, record, firing)))

    n = layout.n
    out = []
    for r in range(record.n_records):
        cols = slice(r * n, (r + 1) * n)
        sector_segs = []
        for dur, q_ext in segs:
            q_o = np.zeros_like(q_ext)
            q_o[:, cols] = q_ext[:, cols]
            sector_segs.append((dur, q_o))
        out.append(OutcomeRateMatrix(record.label(r), sector_segs, n_base=n,
                                     record_index=r, n_records=record.n_records))
    return out


# ---------------------------------------------------------------------------
# Forward solve
# ---------------------------------------------------------------------------

def _rk4(p: np.ndarray, q: np.ndarray, duration: float,
         max_step: float | None = None) -> np.ndarray:
    """Classical RK4 with step <= min(duration/16, 0.1/||Q||_inf).

    An explicit ``max_step`` overrides the default policy outright (used
    by convergence studies that control the step themselves).
    """
    if duration <= 0:
        return p
    if max_step is not None:
        h = min(duration, max_step)
    else:
        norm = float(np.abs(q).sum(axis=1).max()) if q.size else 0.0
        h = duration / 16.0
        if norm > 0:
            h = min(h, 0.1 / norm)
    steps = max(1, math.ceil(duration / h - 1e-12))
    h = duration / steps
    for _ in range(steps):
        k1 = p @ q
        k2 = (p + 0.5 * h * k1) @ q
        k3 = (p + 0.5 * h * k2) @ q
        k4 = (p + h * k3) @ q
        p = p + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(p)) or (p.size and p.max() > 2.0):
        raise SolverDiverged("forward solve left the probability simplex")
    return p


def solve_kfe(qs: Sequence[OutcomeRateMatrix], duration: float | None = None,
              max_step: float | None = None) -> dict[tuple, np.ndarray]:
    """Integrate the outcome-enabled forward equation.

    Returns outcome label -> P^o(s, s+duration) on the base joint space.
    The sum over outcomes is row-stochastic; with a single trivial sector
    this is the plain transition matrix.
    """
    if not qs:
        raise ValueError("no rate matrices")
    first = qs[0]
    n_base, n_rec = first.n_base, first.n_records
    m = n_base * n_rec
    durations = [d for d, _ in first.segments]
    if duration is not None:
        total = sum(durations)
        if len(durations) == 1:
            durations = [float(duration)]
        elif not math.isclose(total, duration, rel_tol=1e-9):
            raise ValueError(f"segments span {total}, requested {duration}")
    combined = []
    for i, dur in enumerate(durations):
        q = np.zeros((m, m))
        for sector in qs:
            q += sector.segments[i][1]
        combined.append((dur, q))
    p = np.eye(m)
    for dur, q in combined:
        p = _rk4(p, q, dur, max_step=max_step)
    rows = slice(0, n_base)  # record starts pending
    out = {}
    for sector in qs:
        cols = slice(sector.record_index * n_base, (sector.record_index + 1) * n_base)
        out[sector.outcome] = p[rows, cols]
    return out


def _extended_solution(model: RateModel, box: BoxOp,
                       spaces: Mapping[SystemId, HiddenSpace],
                       parts: Sequence[Participant],
                       window: tuple[float, float],
                       record: RecordStructure,
                       max_step: float | None = None) -> np.ndarray:
    layout = _joint_layout(spaces[box.venue], parts, spaces)
    n_ext = layout.n * record.n_records
    if n_ext > model.state_limit:
        raise StateSpaceTooLarge(f"{n_ext} extended states exceed limit {model.state_limit}")
    firing = [_firing_rates(model, layout, parts, slot) for slot in record.slots]
    p = np.eye(n_ext)
    for a, b, factor in _procedure_segments(model, box.flags, window[0], window[1]):
        q_base = _base_generator(model, layout, parts, factor)
        q_ext = _extended_generator(q_base, record, firing)
        p = _rk4(p, q_ext, b - a, max_step=max_step)
    return p


# ---------------------------------------------------------------------------
# Box -> tensor
# ---------------------------------------------------------------------------

@dataclass
class _FrontAxis:
    role: str                      # "in" | "out" | "iface" | "rec"
    system: SystemId | None = None
    occurrence: int = 0
    slot: object = None            # "venue" or participant list index
    size: int = 0
    extended: bool = False


def tensor_of_box(model: RateModel, box: BoxOp,
                  spaces: Mapping[SystemId, HiddenSpace],
                  max_step: float | None = None) -> OpTensor:
    """Tensor of a box: partition at every entry/exit, solve each piece,
    chain the pieces, then select the recorded outcome sectors.

    Continuation legs (stays flowing into a neighbouring box) are emitted
    on the position-extended space when the venue declares a grid; within
    the box, intermediate positions are summed over.
    """
    t0, t1 = box.window
    parts = list(box.participants)
    record = build_record_structure(model, box, spaces)
    ont_flags = [f for f in box.flags if f.kind == "ontological"]

    def subject_span(s) -> tuple[int, int]:
        if s.system == box.venue:
            return box.window
        for p in parts:
            if p.system == s.system and p.occurrence == s.occurrence:
                return (p.enter, p.leave)
        raise KeyError(f"ontological subject {s.system}^{s.occurrence} not in box {box.id}")

    # every interrogation acts either on a free port (at a stay's edge) or on
    # the running interface strictly inside the stay
    port_masks: list[tuple[str, SystemId, int, np.ndarray]] = []   # (role, system, occ, mask)
    iface_masks: dict[int, list[tuple[object, np.ndarray]]] = {}   # time -> [(slot, mask)]
    for f in ont_flags:
        for s in f.subjects:
            enter, leave = subject_span(s)
            if not enter <= f.time <= leave:
                raise ValueError(f"flag {f.name} at {f.time} outside the stay of {s.system}")
            space = spaces[s.system] if s.system != box.venue else spaces[box.venue]
            mask = hidden.proposition_mask(space, f.name, f.value)
            if f.time == enter:
                occ = box.venue_occurrence if s.system == box.venue else s.occurrence
                port_masks.append(("in", s.system, occ, mask))
            elif f.time == leave:
                occ = (box.venue_occurrence + 1 if s.system == box.venue
                       else s.occurrence + 1)
                port_masks.append(("out", s.system, occ, mask))
            else:
                if s.system == box.venue:
                    slot: object = "venue"
                else:
                    slot = next(i for i, p in enumerate(parts)
                                if p.system == s.system and p.occurrence == s.occurrence)
                iface_masks.setdefault(f.time, []).append((slot, mask))

    bounds = sorted({t0, t1}
                    | {p.enter for p in parts} | {p.leave for p in parts}
                    | set(iface_masks))
    windows = [(a, b) for a, b in zip(bounds, bounds[1:]) if b > a]
    if not windows:
        windows = [(t0, t1)]

    front: np.ndarray | None = None
    axes: list[_FrontAxis] = []

    def axis_pos(pred) -> int:
        for i, a in enumerate(axes):
            if pred(a):
                return i
        raise KeyError("frontier axis not found")

    def mask_axis(i: int, mask: np.ndarray) -> None:
        nonlocal front
        shape = [1] * front.ndim
        shape[i] = mask.size
        front = front * mask.reshape(shape)

    for (a, b) in windows:
        present = [i for i, p in enumerate(parts) if p.enter <= a and p.leave >= b]
        cur_parts = [parts[i] for i in present]
        p_ext = _extended_solution(model, box, spaces, cur_parts, (a, b), record,
                                   max_step=max_step)
        layout = _joint_layout(spaces[box.venue], cur_parts, spaces)
        shape = [record.n_records] + layout.dims + [record.n_records] + layout.dims
        p_nd = p_ext.reshape(shape)

        if front is None:
            front = p_nd[0]  # record starts pending
            axes = [_FrontAxis("in", box.venue, box.venue_occurrence,
                               size=layout.dims[0])]
            for i, p in zip(present, cur_parts):
                axes.append(_FrontAxis("in", p.system, p.occurrence,
                                       size=spaces[p.system].total_cardinality))
            axes.append(_FrontAxis("rec", size=record.n_records))
            axes.append(_FrontAxis("iface", slot="venue", size=layout.dims[0]))
            for i, p in zip(present, cur_parts):
                axes.append(_FrontAxis("iface", slot=i,
                                       size=spaces[p.system].total_cardinality))
            continue

        # departures at this boundary become free out ports
        for ax in axes:
            if ax.role == "iface" and ax.slot != "venue" and ax.slot not in present:
                p = parts[ax.slot]
                ax.role, ax.system, ax.occurrence = "out", p.system, p.occurrence + 1
                ax.slot = None
        for slot, mask in iface_masks.get(a, []):
            mask_axis(axis_pos(lambda x, s=slot: x.role == "iface" and x.slot == s), mask)
        f_idx = [axis_pos(lambda x: x.role == "rec"),
                 axis_pos(lambda x: x.role == "iface" and x.slot == "venue")]
        p_idx = [0, 1]
        arrivals = []
        for pos, (i, p) in enumerate(zip(present, cur_parts), start=2):
            try:
                f_idx.append(axis_pos(lambda x, i=i: x.role == "iface" and x.slot == i))
                p_idx.append(pos)
            except KeyError:
                arrivals.append((i, p))
        front = np.tensordot(front, p_nd, axes=(f_idx, p_idx))
        new_axes = [ax for j, ax in enumerate(axes) if j not in f_idx]
        # remaining p_nd axes in order: arrival in-ports, then record + outputs
        for (i, p) in arrivals:
            new_axes.append(_FrontAxis("in", p.system, p.occurrence,
                                       size=spaces[p.system].total_cardinality))
        new_axes.append(_FrontAxis("rec", size=record.n_records))
        new_axes.append(_FrontAxis("iface", slot="venue", size=layout.dims[0]))
        for i, p in zip(present, cur_parts):
            new_axes.append(_FrontAxis("iface", slot=i,
                                       size=spaces[p.system].total_cardinality))
        axes = new_axes

    # settle remaining interface axes into out ports and fold the record
    for ax in axes:
        if ax.role == "iface":
            if ax.slot == "venue":
                ax.role, ax.system, ax.occurrence = "out", box.venue, box.venue_occurrence + 1
            else:
                p = parts[ax.slot]
                ax.role, ax.system, ax.occurrence = "out", p.system, p.occurrence + 1
            ax.slot = None
    rec_pos = axis_pos(lambda x: x.role == "rec")
    weights = record.selection_weights()
    front = np.tensordot(front, weights, axes=([rec_pos], [0]))
    axes = [ax for i, ax in enumerate(axes) if i != rec_pos]

    # interrogations at stay edges act on the (free) ports themselves
    for role, system, occ, mask in port_masks:
        mask_axis(axis_pos(lambda x: x.role == role and x.system == system
                           and x.occurrence == occ), mask)

    # position-extend continuation legs
    grid = max(1, model.position_grid)
    part_by_key = {(p.system, p.occurrence): p for p in parts}
    final_axes: list[Axis] = []
    for ax in axes:
        extended = False
        if not ax.system.kind.is_venue:
            if ax.role == "in":
                p = part_by_key.get((ax.system, ax.occurrence))
                extended = bool(p and p.continued)
            else:
                p = part_by_key.get((ax.system, ax.occurrence - 1))
                extended = bool(p and p.continues)
        final_axes.append(Axis(ax.system, ax.occurrence, ax.role, ax.size, extended))

    values = front
    if grid > 1:
        for i, ax in enumerate(final_axes):
            if not ax.extended:
                continue
            values = np.repeat(values, grid, axis=i)
            if ax.direction == "out":
                values = values / grid
            final_axes[i] = Axis(ax.system, ax.occurrence, ax.direction,
                                 ax.size * grid, True)
    return OpTensor(tuple(final_axes), values).clipped()
