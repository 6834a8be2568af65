"""Closing fragments and asking them questions.

A fragment plus a closure policy becomes a circuit: open start wires get
standard initialisations (background-prevalence priors, unregistered
priors, venue priors), open finish wires get the all-ones ignore effect or
an ontological interrogation.  Probabilities then come from contracting
the box tensors with the closure vectors; an enumeration oracle can check
any of them.

Risk quantities: the state of a subject (its marginal distribution given
the recorded evidence), the conditional infection probability, and the
points cost of a visit (the infection-probability increment divided by
the per-point quantum).
"""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import tensor as te
from .circuit import (CircuitDoc, SystemId, SystemRef, TerminalClosure, classify,
                      serialize)
from .hidden import HiddenSpace, SystemKind, null_state, proposition_mask, semantics
from .rates import RateModel, tensor_of_box


class SubjectNotOpen(ValueError):
    pass


class ZeroEvidence(ZeroDivisionError):
    pass


class UnknownVenueModel(KeyError):
    pass


@dataclass
class ClosurePolicy:
    """Defaults for closing a fragment plus prior parameters.

    ``prevalence`` is the operator's background-prevalence feed c(t);
    ``unregistered_multiplier`` (k >= 1) inflates it for people outside the
    system.  ``contagious_fraction`` splits an individual's prior infected
    mass between the not-yet-contagious and contagious stages.
    """

    prevalence: float = 1e-3
    unregistered_multiplier: float = 1.0
    contagious_fraction: float = 0.5
    venue_prior: tuple[float, ...] | None = None         # managed venues (R/I)
    unmanaged_venue_prior: tuple[float, ...] | None = None
    system_priors: dict[SystemId, tuple[float, ...]] = field(default_factory=dict)
    start_closures: dict[SystemKind, str] = field(default_factory=lambda: {
        SystemKind.REGISTERED_INDIVIDUAL: "R",
        SystemKind.UNREGISTERED_INDIVIDUAL: "U",
        SystemKind.MANAGED_VENUE: "R",
        SystemKind.UNMANAGED_VENUE: "U",
    })

    def __post_init__(self):
        if not 0.0 <= self.prevalence <= 1.0:
            raise ValueError("prevalence must be a probability")
        if self.unregistered_multiplier < 1.0:
            raise ValueError("unregistered multiplier must be >= 1")

    def individual_prior(self, space: HiddenSpace, scaled: bool = False) -> np.ndarray:
        p = min(1.0, self.prevalence * (self.unregistered_multiplier if scaled else 1.0))
        sem = semantics(space)
        vec = np.zeros(space.total_cardinality)
        if space.kind is SystemKind.UNREGISTERED_INDIVIDUAL:
            contagious = sem.contagiousness > 0
            vec[~contagious] = 0.0
            vec[np.argmax(contagious)] = p
            vec[int(np.argmin(sem.contagiousness))] = 1.0 - p
            return vec
        susceptible = np.where(sem.susceptibility > 0)[0]
        base = susceptible[0] if susceptible.size else 0
        infected = np.where(sem.infected)[0]
        quiet = [i for i in infected if sem.contagiousness[i] == 0]
        loud = [i for i in infected if sem.contagiousness[i] > 0]
        vec[base] = 1.0 - p
        if quiet and loud:
            vec[quiet[0]] = p * (1.0 - self.contagious_fraction)
            vec[loud[0]] = p * self.contagious_fraction
        elif infected.size:
            vec[infected[0]] = p
        else:
            vec[base] += p
        return vec

    def venue_prior_vector(self, space: HiddenSpace, managed: bool) -> np.ndarray:
        prior = self.venue_prior if managed else \
            (self.unmanaged_venue_prior or self.venue_prior)
        n = space.total_cardinality
        if prior is None:
            vec = np.zeros(n)
            vec[0] = 1.0
            return vec
        vec = np.asarray(prior, dtype=float)
        if vec.size != n:
            raise ValueError(f"venue prior has {vec.size} entries, space has {n}")
        return vec

    def closure_vector(self, closure: TerminalClosure, space: HiddenSpace) -> np.ndarray:
        kind = closure.system.kind
        if closure.end == "finish":
            if closure.closure == "ignore":
                return np.ones(space.total_cardinality)
            return proposition_mask(space, closure.name or "O_1", int(closure.value))
        if closure.system in self.system_priors:
            vec = np.asarray(self.system_priors[closure.system], dtype=float)
            if vec.size != space.total_cardinality:
                raise ValueError(f"prior override for {closure.system} has wrong size")
            return vec
        if closure.closure == "null":
            vec = np.zeros(space.total_cardinality)
            vec[null_state(space)] = 1.0
            return vec
        if kind.is_venue:
            if closure.closure == "I":
                vec = np.zeros(space.total_cardinality)
                vec[0] = 1.0
                return vec
            return self.venue_prior_vector(space, managed=kind is SystemKind.MANAGED_VENUE)
        scaled = closure.closure == "U" or kind is SystemKind.UNREGISTERED_INDIVIDUAL
        return self.individual_prior(space, scaled=scaled)


@dataclass
class RiskReport:
    subject: SystemRef
    p_infected: float
    evidence_digest: str
    thresholds: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "subject": self.subject.to_dict(),
            "p_infected": self.p_infected,
            "evidence_digest": self.evidence_digest,
            "thresholds": list(self.thresholds),
        }


# ---------------------------------------------------------------------------
# Closing fragments
# ---------------------------------------------------------------------------

def close_fragment(frag: CircuitDoc, policy: ClosurePolicy,
                   interrogations: Sequence[tuple[SystemRef, str, int]] = ()) -> CircuitDoc:
    """Close every open wire: starts by policy, finishes by ignore unless an
    interrogation targets that system's final wire."""
    doc = copy.deepcopy(frag)
    open_in, open_out = doc.open_wires()
    targeted: dict[tuple[SystemId, int], tuple[str, int]] = {}
    for ref, name, value in interrogations:
        targeted[(ref.system, ref.occurrence)] = (name, value)
    for system, occ in open_in:
        closure = policy.start_closures[system.kind]
        doc.terminals.append(TerminalClosure(system, occ, "start", closure))
    for system, occ in open_out:
        if (system, occ) in targeted:
            name, value = targeted[(system, occ)]
            doc.terminals.append(TerminalClosure(system, occ, "finish", "O", name, value))
        else:
            doc.terminals.append(TerminalClosure(system, occ, "finish", "ignore"))
    return doc


def closure_vectors(doc: CircuitDoc, policy: ClosurePolicy) -> dict[tuple, np.ndarray]:
    out = {}
    for t in doc.terminals:
        space = doc.space_of(t.system)
        out[(t.system, t.occurrence, t.end)] = policy.closure_vector(t, space)
    return out


def box_tensors(doc: CircuitDoc, models: Mapping[str, RateModel]) -> dict[str, te.OpTensor]:
    tensors = {}
    spaces = {sid: doc.space_of(sid) for sid in doc.systems}
    for b in doc.boxes:
        model = models.get(b.venue.id)
        if model is None:
            raise UnknownVenueModel(b.venue.id)
        tensors[b.id] = tensor_of_box(model, b, spaces)
    return tensors


def circuit_probability(doc: CircuitDoc, models: Mapping[str, RateModel],
                        policy: ClosurePolicy | None = None,
                        tensors: Mapping[str, te.OpTensor] | None = None) -> float:
    """Contract a closed circuit down to its probability."""
    policy = policy or ClosurePolicy()
    cls = classify(doc)
    if cls.category != "circuit":
        raise ValueError(f"document is a {cls.category}, not a circuit")
    tensors = dict(tensors) if tensors is not None else box_tensors(doc, models)
    pieces = list(tensors.values())
    for (system, occ, end), vec in closure_vectors(doc, policy).items():
        size = vec.size
        if end == "start":
            pieces.append(te.state_vector(system, occ, vec))
        else:
            pieces.append(te.OpTensor((te.Axis(system, occ, "in", size),), vec))
    return float(te.scalar(te.contract(pieces)))


def brute_force_circuit_probability(doc: CircuitDoc, models: Mapping[str, RateModel],
                                    policy: ClosurePolicy | None = None,
                                    tensors: Mapping[str, te.OpTensor] | None = None) -> float:
    policy = policy or ClosurePolicy()
    tensors = dict(tensors) if tensors is not None else box_tensors(doc, models)
    return te.brute_force_prob(doc, tensors, closure_vectors(doc, policy))


def evidence_digest(doc: CircuitDoc) -> str:
    return hashlib.sha256(serialize(doc).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# States and risk
# ---------------------------------------------------------------------------

def _final_wire(doc: CircuitDoc, subject: SystemId) -> int:
    """Occurrence of the subject's final wire.

    The wire may be open or closed by a finish terminal (the terminal is
    dropped before interrogation); a subject absent from the document has
    no final wire.
    """
    occs = [occ for (system, occ) in doc.out_ports() if system == subject]
    if not occs:
        raise SubjectNotOpen(f"{subject} has no finish wire in this fragment")
    return max(occs)


def state_of(frag: CircuitDoc, subject: SystemRef | SystemId,
             models: Mapping[str, RateModel],
             policy: ClosurePolicy | None = None) -> np.ndarray:
    """Subnormalised distribution over the subject's final hidden state.

    Component i is the probability of the circuit in which the subject's
    final wire is interrogated onto state i and everything else is closed
    by policy; the components sum to the probability of the evidence.
    """
    policy = policy or ClosurePolicy()
    subject_id = subject.system if isinstance(subject, SystemRef) else subject
    occ = _final_wire(frag, subject_id)
    doc = close_fragment(frag, policy)
    doc.terminals = [t for t in doc.terminals
                     if not (t.system == subject_id and t.occurrence == occ
                             and t.end == "finish")]
    tensors = box_tensors(doc, models)
    pieces = list(tensors.values())
    for (system, o, end), vec in closure_vectors(doc, policy).items():
        if end == "start":
            pieces.append(te.state_vector(system, o, vec))
        else:
            pieces.append(te.OpTensor((te.Axis(system, o, "in", vec.size),), vec))
    result = te.contract(pieces)
    if len(result.axes) != 1:
        raise RuntimeError("expected a single free axis for the subject state")
    return np.asarray(result.values, dtype=float)


def infection_probability(frag: CircuitDoc, subject: SystemRef | SystemId,
                          models: Mapping[str, RateModel],
                          policy: ClosurePolicy | None = None,
                          thresholds: Mapping[str, float] | None = None) -> RiskReport:
    """Conditional probability that the subject is infected given the
    fragment's recorded outcomes."""
    policy = policy or ClosurePolicy()
    subject_id = subject.system if isinstance(subject, SystemRef) else subject
    vec = state_of(frag, subject_id, models, policy)
    total = float(vec.sum())
    if total <= 0.0:
        raise ZeroEvidence("conditioning on probability-zero evidence")
    mask = proposition_mask(frag.space_of(subject_id), "O_1", 1)
    p = float((vec * mask).sum() / total)
    p = min(max(p, 0.0), 1.0)
    occ = _final_wire(frag, subject_id)
    ref = subject if isinstance(subject, SystemRef) else SystemRef(
        subject_id.kind, subject_id.id, occ)
    crossed = sorted(name for name, level in (thresholds or {}).items() if p >= level)
    return RiskReport(ref, p, evidence_digest(frag), crossed)


def prior_infection_probability(policy: ClosurePolicy, space: HiddenSpace,
                                system: SystemId | None = None) -> float:
    """Infected mass of the closure prior itself (a subject with no recorded
    boxes carries exactly this)."""
    if system is not None and system in policy.system_priors:
        vec = np.asarray(policy.system_priors[system], dtype=float)
    else:
        vec = policy.individual_prior(space)
    return float((vec * proposition_mask(space, "O_1", 1)).sum())


# ---------------------------------------------------------------------------
# Points
# ---------------------------------------------------------------------------

def points_cost(frag_before: CircuitDoc, frag_after: CircuitDoc,
                subject: SystemRef | SystemId,
                models: Mapping[str, RateModel],
                p_point: float,
                mode: str = "predicted",
                policy: ClosurePolicy | None = None,
                frag_cap: CircuitDoc | None = None) -> float:
    """Points charged for the visit that extends ``frag_before`` into
    ``frag_after``: the infection-probability increment over p_point,
    floored at zero.

    ``mode`` names what the fragments describe: "predicted" (anticipated
    behaviours, policy co-visitors), "actual", or "fine_grained" (actuals
    plus bluetooth outcome flags).  In actual mode the charge is capped by
    the prediction recomputed with the subject's own actual behaviour,
    supplied as ``frag_cap``.
    """
    if p_point <= 0:
        raise ValueError("p_point must be positive")
    if mode not in {"predicted", "actual", "fine_grained"}:
        raise ValueError(f"unknown mode {mode!r}")
    policy = policy or ClosurePolicy()
    subject_id = subject.system if isinstance(subject, SystemRef) else subject
    try:
        p_before = infection_probability(frag_before, subject, models, policy).p_infected
    except SubjectNotOpen:
        # the visit is the subject's first recorded box: before it, only the prior
        p_before = prior_infection_probability(policy, frag_after.space_of(subject_id))
    p_after = infection_probability(frag_after, subject, models, policy).p_infected
    delta = p_after - p_before
    if mode == "actual" and frag_cap is not None:
        p_cap = infection_probability(frag_cap, subject, models, policy).p_infected
        delta = min(delta, p_cap - p_before)
    return max(0.0, delta) / p_point
