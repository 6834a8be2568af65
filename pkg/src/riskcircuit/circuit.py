"""Circuit descriptions: boxes, wires, flags, and terminal closures.

A document describes who visited which venue when, what was chosen
(procedures, behaviours) and what happened (symptom reports, test results,
bluetooth readings), plus how open wires are closed.  Documents are pure
data; validation, classification, splitting, and JSON round-tripping live
here, while probabilities live in the tensor and inference modules.

Interchange format: UTF-8 JSON with top-level keys
``{version, spaces, systems, boxes, wires, terminals}``.  Timestamps are
integer seconds; box windows are half-open ``[start, end)``.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, replace
from typing import Optional

from .hidden import HiddenSpace, SystemKind, build_space

FORMAT_VERSION = "1"

# validation issue codes
OCCURRENCE_MISMATCH = "OccurrenceMismatch"
DANGLING_WIRE = "DanglingWire"
TIME_PARADOX = "TimeParadox"
UNPAIRED_CONTINUATION = "UnpairedContinuation"
BAD_FLAG = "BadFlag"
BAD_TERMINAL = "BadTerminal"
BAD_INTERVAL = "BadInterval"
UNKNOWN_SYSTEM = "UnknownSystem"
DUPLICATE_PORT = "DuplicatePort"
UNREGISTERED_REUSE = "UnregisteredReuse"

SETTING_KINDS = {"procedure", "behaviour"}
OUTCOME_KINDS = {"symptom", "test", "bluetooth"}

START_CLOSURES = {"P", "U", "R", "I", "null"}
FINISH_CLOSURES = {"ignore", "O"}


class SplitOutsideWindow(ValueError):
    pass


@dataclass(frozen=True, order=True)
class SystemId:
    kind: SystemKind
    id: str

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "id": self.id}

    @staticmethod
    def from_dict(d: dict) -> "SystemId":
        return SystemId(SystemKind(d["kind"]), str(d["id"]))

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.id}"


@dataclass(frozen=True, order=True)
class SystemRef:
    """A system together with a visit/iteration occurrence counter."""

    kind: SystemKind
    id: str
    occurrence: int

    @property
    def system(self) -> SystemId:
        return SystemId(self.kind, self.id)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "id": self.id, "occurrence": self.occurrence}

    @staticmethod
    def from_dict(d: dict) -> "SystemRef":
        return SystemRef(SystemKind(d["kind"]), str(d["id"]), int(d["occurrence"]))


@dataclass
class Flag:
    """A setting, outcome, or ontological marker attached to a box."""

    role: str          # setting | outcome | ontological
    kind: str          # procedure | behaviour | symptom | test | bluetooth | ontological
    name: str          # e.g. Proc_3, S_1, T, R_2, O_1
    value: int
    time: int
    subjects: tuple[SystemRef, ...] = ()

    def to_dict(self) -> dict:
        return {
            "role": self.role,
            "kind": self.kind,
            "name": self.name,
            "value": self.value,
            "time": self.time,
            "subjects": [s.to_dict() for s in self.subjects],
        }

    @staticmethod
    def from_dict(d: dict) -> "Flag":
        return Flag(d["role"], d["kind"], d["name"], int(d["value"]), int(d["time"]),
                    tuple(SystemRef.from_dict(s) for s in d.get("subjects", [])))


@dataclass
class Participant:
    """One stay of an individual inside a box window."""

    system: SystemId
    occurrence: int            # counter at entry; the output wire carries occurrence + 1
    enter: int
    leave: int
    behaviour: Optional[str] = None
    bluetooth_enabled: bool = False
    continues: bool = False    # stays on into the successor box of this venue
    continued: bool = False    # carried over from the predecessor box

    def to_dict(self) -> dict:
        return {
            "system": self.system.to_dict(),
            "occurrence": self.occurrence,
            "enter": self.enter,
            "leave": self.leave,
            "behaviour": self.behaviour,
            "bluetooth_enabled": self.bluetooth_enabled,
            "continues": self.continues,
            "continued": self.continued,
        }

    @staticmethod
    def from_dict(d: dict) -> "Participant":
        return Participant(SystemId.from_dict(d["system"]), int(d["occurrence"]),
                           int(d["enter"]), int(d["leave"]), d.get("behaviour"),
                           bool(d.get("bluetooth_enabled", False)),
                           bool(d.get("continues", False)),
                           bool(d.get("continued", False)))


@dataclass
class BoxOp:
    """A time-windowed interaction of systems at one venue."""

    id: str
    venue: SystemId
    venue_occurrence: int
    window: tuple[int, int]
    participants: list[Participant] = field(default_factory=list)
    flags: list[Flag] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "venue": self.venue.to_dict(),
            "venue_occurrence": self.venue_occurrence,
            "window": list(self.window),
            "participants": [p.to_dict() for p in self.participants],
            "flags": [f.to_dict() for f in self.flags],
        }

    @staticmethod
    def from_dict(d: dict) -> "BoxOp":
        return BoxOp(str(d["id"]), SystemId.from_dict(d["venue"]),
                     int(d["venue_occurrence"]),
                     (int(d["window"][0]), int(d["window"][1])),
                     [Participant.from_dict(p) for p in d.get("participants", [])],
                     [Flag.from_dict(f) for f in d.get("flags", [])])


@dataclass
class Wire:
    """A repeated index: output occurrence k of one box feeds input occurrence k
    of the next stay, whose own counter is k (its predecessor's counter plus one)."""

    system: SystemId
    occurrence: int
    from_box: str
    to_box: str
    continuation: bool = False

    def to_dict(self) -> dict:
        return {
            "system": self.system.to_dict(),
            "occurrence": self.occurrence,
            "from_box": self.from_box,
            "to_box": self.to_box,
            "continuation": self.continuation,
        }

    @staticmethod
    def from_dict(d: dict) -> "Wire":
        return Wire(SystemId.from_dict(d["system"]), int(d["occurrence"]),
                    str(d["from_box"]), str(d["to_box"]),
                    bool(d.get("continuation", False)))


@dataclass
class TerminalClosure:
    """Closes one open wire end.

    ``end`` is "start" (initialisation closures P/U/R/I/null) or "finish"
    (ignore or an ontological interrogation O with name and value).
    ``occurrence`` names the wire being closed.
    """

    system: SystemId
    occurrence: int
    end: str
    closure: str
    name: Optional[str] = None
    value: Optional[int] = None

    def to_dict(self) -> dict:
        d = {
            "system": self.system.to_dict(),
            "occurrence": self.occurrence,
            "end": self.end,
            "closure": self.closure,
        }
        if self.closure == "O":
            d["name"] = self.name
            d["value"] = self.value
        return d

    @staticmethod
    def from_dict(d: dict) -> "TerminalClosure":
        return TerminalClosure(SystemId.from_dict(d["system"]), int(d["occurrence"]),
                               d["end"], d["closure"], d.get("name"),
                               None if d.get("value") is None else int(d["value"]))


@dataclass
class CircuitDoc:
    spaces: dict[str, HiddenSpace] = field(default_factory=dict)
    systems: dict[SystemId, str] = field(default_factory=dict)   # system -> space name
    boxes: list[BoxOp] = field(default_factory=list)
    wires: list[Wire] = field(default_factory=list)
    terminals: list[TerminalClosure] = field(default_factory=list)

    # -- structure helpers -------------------------------------------------

    def box(self, box_id: str) -> BoxOp:
        for b in self.boxes:
            if b.id == box_id:
                return b
        raise KeyError(box_id)

    def space_of(self, system: SystemId) -> HiddenSpace:
        return self.spaces[self.systems[system]]

    def stays(self, system: SystemId) -> list[tuple[BoxOp, Participant | None]]:
        """All stays of a system, venue iterations included, time-ordered."""
        out: list[tuple[int, int, BoxOp, Participant | None]] = []
        for b in self.boxes:
            if b.venue == system:
                out.append((b.window[0], b.venue_occurrence, b, None))
            for p in b.participants:
                if p.system == system:
                    out.append((p.enter, p.occurrence, b, p))
        out.sort(key=lambda t: (t[0], t[1]))
        return [(b, p) for _, _, b, p in out]

    def in_ports(self) -> dict[tuple[SystemId, int], str]:
        """(system, wire occurrence) -> box id for every box input."""
        ports = {}
        for b in self.boxes:
            ports[(b.venue, b.venue_occurrence)] = b.id
            for p in b.participants:
                ports[(p.system, p.occurrence)] = b.id
        return ports

    def out_ports(self) -> dict[tuple[SystemId, int], str]:
        """(system, wire occurrence) -> box id for every box output."""
        ports = {}
        for b in self.boxes:
            ports[(b.venue, b.venue_occurrence + 1)] = b.id
            for p in b.participants:
                ports[(p.system, p.occurrence + 1)] = b.id
        return ports

    def open_wires(self) -> tuple[list[tuple[SystemId, int]], list[tuple[SystemId, int]]]:
        """(past-pointing open inputs, future-pointing open outputs)."""
        fed = {(w.system, w.occurrence) for w in self.wires}
        fed |= {(t.system, t.occurrence) for t in self.terminals if t.end == "start"}
        consumed = {(w.system, w.occurrence) for w in self.wires}
        consumed |= {(t.system, t.occurrence) for t in self.terminals if t.end == "finish"}
        open_in = [k for k in self.in_ports() if k not in fed]
        open_out = [k for k in self.out_ports() if k not in consumed]
        return sorted(open_in), sorted(open_out)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "spaces": {name: sp.to_dict() for name, sp in self.spaces.items()},
            "systems": [
                {**sid.to_dict(), "space": name} for sid, name in sorted(self.systems.items())
            ],
            "boxes": [b.to_dict() for b in self.boxes],
            "wires": [w.to_dict() for w in self.wires],
            "terminals": [t.to_dict() for t in self.terminals],
        }

    @staticmethod
    def from_dict(d: dict) -> "CircuitDoc":
        if d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported circuit format version {d.get('version')!r}")
        spaces = {name: HiddenSpace.from_dict(sd) for name, sd in d.get("spaces", {}).items()}
        systems = {}
        for s in d.get("systems", []):
            systems[SystemId.from_dict(s)] = s["space"]
        return CircuitDoc(
            spaces=spaces,
            systems=systems,
            boxes=[BoxOp.from_dict(b) for b in d.get("boxes", [])],
            wires=[Wire.from_dict(w) for w in d.get("wires", [])],
            terminals=[TerminalClosure.from_dict(t) for t in d.get("terminals", [])],
        )


def serialize(doc: CircuitDoc) -> str:
    return json.dumps(doc.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"


def parse(text: str) -> CircuitDoc:
    return CircuitDoc.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass
class Issue:
    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


@dataclass
class ValidationReport:
    errors: list[Issue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def add(self, code: str, message: str) -> None:
        self.errors.append(Issue(code, message))


def validate(doc: CircuitDoc) -> ValidationReport:
    rep = ValidationReport()
    _check_structure(doc, rep)
    _check_unregistered_scope(doc, rep)
    _check_wiring(doc, rep)
    _check_continuations(doc, rep)
    _check_flags(doc, rep)
    _check_terminals(doc, rep)
    return rep


def _check_structure(doc: CircuitDoc, rep: ValidationReport) -> None:
    ids = set()
    for b in doc.boxes:
        if b.id in ids:
            rep.add(DANGLING_WIRE, f"duplicate box id {b.id}")
        ids.add(b.id)
        if b.venue not in doc.systems:
            rep.add(UNKNOWN_SYSTEM, f"box {b.id}: venue {b.venue} not declared")
        elif not b.venue.kind.is_venue:
            rep.add(UNKNOWN_SYSTEM, f"box {b.id}: {b.venue} is not a venue")
        t0, t1 = b.window
        if t1 <= t0:
            rep.add(BAD_INTERVAL, f"box {b.id}: empty window")
        seen_stays: dict[SystemId, list[tuple[int, int]]] = {}
        for p in b.participants:
            if p.system not in doc.systems:
                rep.add(UNKNOWN_SYSTEM, f"box {b.id}: participant {p.system} not declared")
            if p.system.kind.is_venue:
                rep.add(UNKNOWN_SYSTEM, f"box {b.id}: venue {p.system} listed as participant")
            if not (t0 <= p.enter < p.leave <= t1):
                rep.add(BAD_INTERVAL,
                        f"box {b.id}: stay [{p.enter},{p.leave}) outside window [{t0},{t1})")
            for (a, z) in seen_stays.get(p.system, []):
                if p.enter < z and a < p.leave:
                    rep.add(BAD_INTERVAL,
                            f"box {b.id}: overlapping stays for {p.system}")
            seen_stays.setdefault(p.system, []).append((p.enter, p.leave))


def _check_unregistered_scope(doc: CircuitDoc, rep: ValidationReport) -> None:
    # unregistered labels are temporary and live inside a single box;
    # a continuation pair produced by splitting that box still counts as one
    seen: dict[SystemId, str] = {}
    for b in doc.boxes:
        for p in b.participants:
            if p.system.kind is not SystemKind.UNREGISTERED_INDIVIDUAL:
                continue
            if p.system in seen and seen[p.system] != b.id and not p.continued:
                rep.add(UNREGISTERED_REUSE,
                        f"unregistered label {p.system} used in boxes "
                        f"{seen[p.system]} and {b.id}")
            seen[p.system] = b.id


def _check_wiring(doc: CircuitDoc, rep: ValidationReport) -> None:
    in_ports = doc.in_ports()
    out_ports = doc.out_ports()
    # duplicate occurrences on ports
    counted: dict[tuple[SystemId, int], int] = {}
    for b in doc.boxes:
        keys = [(b.venue, b.venue_occurrence)] + [(p.system, p.occurrence) for p in b.participants]
        for k in keys:
            counted[k] = counted.get(k, 0) + 1
    for k, c in counted.items():
        if c > 1:
            rep.add(DUPLICATE_PORT, f"occurrence {k[1]} of {k[0]} consumed by {c} stays")

    fed: dict[tuple[SystemId, int], int] = {}
    for w in doc.wires:
        key = (w.system, w.occurrence)
        src = out_ports.get(key)
        dst = in_ports.get(key)
        if src is None or src != w.from_box:
            rep.add(OCCURRENCE_MISMATCH,
                    f"wire {w.system}^{w.occurrence}: no matching output on box {w.from_box}")
        if dst is None or dst != w.to_box:
            rep.add(OCCURRENCE_MISMATCH,
                    f"wire {w.system}^{w.occurrence}: no matching input on box {w.to_box}")
        fed[key] = fed.get(key, 0) + 1
        if src and dst and src == w.from_box and dst == w.to_box:
            try:
                b_from, b_to = doc.box(w.from_box), doc.box(w.to_box)
            except KeyError:
                rep.add(DANGLING_WIRE, f"wire {w.system}^{w.occurrence}: missing box")
                continue
            t_out = _port_time(b_from, w.system, w.occurrence, "out")
            t_in = _port_time(b_to, w.system, w.occurrence, "in")
            if t_in < t_out:
                rep.add(TIME_PARADOX,
                        f"wire {w.system}^{w.occurrence} runs backward in time "
                        f"({t_out} -> {t_in})")
    for key, c in fed.items():
        if c > 1:
            rep.add(DUPLICATE_PORT, f"wire {key[0]}^{key[1]} appears {c} times")

    # chains beginning with a fresh initialisation must start the counter at 1
    for t in doc.terminals:
        if t.end == "start" and t.closure in {"P", "U", "I"} and t.occurrence != 1:
            rep.add(OCCURRENCE_MISMATCH,
                    f"initialisation {t.closure}[{t.system}] must produce occurrence 1, "
                    f"got {t.occurrence}")

    # a gap exit and the later re-entry may not share a wire label: the
    # counter must advance across whatever happened outside the document
    wired = {(w.system, w.occurrence) for w in doc.wires}
    for key in set(in_ports) & set(out_ports):
        if key not in wired:
            rep.add(OCCURRENCE_MISMATCH,
                    f"wire {key[0]}^{key[1]} exits and re-enters with the same "
                    f"occurrence but no connecting wire")


def _port_time(box: BoxOp, system: SystemId, occurrence: int, side: str) -> int:
    if box.venue == system:
        return box.window[1] if side == "out" else box.window[0]
    for p in box.participants:
        if p.system == system:
            if side == "out" and p.occurrence + 1 == occurrence:
                return p.leave
            if side == "in" and p.occurrence == occurrence:
                return p.enter
    return box.window[0]


def _check_continuations(doc: CircuitDoc, rep: ValidationReport) -> None:
    cont_wires = {(w.system, w.occurrence): w for w in doc.wires if w.continuation}
    succ: dict[str, str] = {}
    for w in doc.wires:
        if w.system.kind.is_venue:
            succ[w.from_box] = w.to_box
    for b in doc.boxes:
        for p in b.participants:
            if p.continues:
                key = (p.system, p.occurrence + 1)
                w = cont_wires.get(key)
                nxt = succ.get(b.id)
                if w is None or nxt is None or w.to_box != nxt:
                    rep.add(UNPAIRED_CONTINUATION,
                            f"box {b.id}: {p.system} marked to continue but no matching "
                            f"stay in the successor box")
                    continue
                target = doc.box(w.to_box)
                match = [q for q in target.participants
                         if q.system == p.system and q.occurrence == p.occurrence + 1]
                if not match or not match[0].continued:
                    rep.add(UNPAIRED_CONTINUATION,
                            f"box {b.id}: continuation of {p.system} not accepted by {w.to_box}")
            if p.continued:
                key = (p.system, p.occurrence)
                w = cont_wires.get(key)
                if w is None or w.to_box != b.id:
                    rep.add(UNPAIRED_CONTINUATION,
                            f"box {b.id}: {p.system} marked as continued but no "
                            f"continuation wire feeds it")


def _check_flags(doc: CircuitDoc, rep: ValidationReport) -> None:
    for b in doc.boxes:
        present = {(p.system, p.occurrence): p for p in b.participants}
        for f in b.flags:
            want = ("setting" if f.kind in SETTING_KINDS
                    else "outcome" if f.kind in OUTCOME_KINDS
                    else "ontological")
            if f.role != want:
                rep.add(BAD_FLAG, f"box {b.id}: {f.kind} flag {f.name} has role {f.role}")
            if f.kind == "bluetooth":
                if not f.subjects:
                    rep.add(BAD_FLAG, f"box {b.id}: bluetooth flag {f.name} lists no subjects")
                for s in f.subjects:
                    p = present.get((s.system, s.occurrence))
                    if p is None:
                        rep.add(BAD_FLAG,
                                f"box {b.id}: bluetooth subject {s.system}^{s.occurrence} "
                                f"not a participant")
                    elif not p.bluetooth_enabled:
                        rep.add(BAD_FLAG,
                                f"box {b.id}: bluetooth subject {s.system} has bluetooth off")
            elif f.kind in {"symptom", "test", "ontological"}:
                for s in f.subjects:
                    if (s.system, s.occurrence) not in present and s.system != b.venue:
                        rep.add(BAD_FLAG,
                                f"box {b.id}: flag {f.name} subject {s.system}^{s.occurrence} "
                                f"not a participant")


def _check_terminals(doc: CircuitDoc, rep: ValidationReport) -> None:
    in_ports = doc.in_ports()
    out_ports = doc.out_ports()
    for t in doc.terminals:
        key = (t.system, t.occurrence)
        if t.end == "start":
            if t.closure not in START_CLOSURES:
                rep.add(BAD_TERMINAL, f"start terminal on {t.system} with closure {t.closure}")
            if key not in in_ports:
                rep.add(DANGLING_WIRE, f"start terminal {t.system}^{t.occurrence} "
                                       f"closes no input")
        elif t.end == "finish":
            if t.closure not in FINISH_CLOSURES:
                rep.add(BAD_TERMINAL, f"finish terminal on {t.system} with closure {t.closure}")
            if key not in out_ports:
                rep.add(DANGLING_WIRE, f"finish terminal {t.system}^{t.occurrence} "
                                       f"closes no output")
        else:
            rep.add(BAD_TERMINAL, f"terminal end {t.end!r}")
        if t.closure == "I" and not t.system.kind.is_venue:
            rep.add(BAD_TERMINAL, f"I closure on non-venue {t.system}")
        if t.closure in {"P", "R"} and t.system.kind is not SystemKind.REGISTERED_INDIVIDUAL \
                and t.end == "start" and not t.system.kind.is_venue:
            rep.add(BAD_TERMINAL, f"{t.closure} closure on {t.system.kind.value}")


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------

@dataclass
class Classification:
    category: str          # circuit | preparation | result | fragment
    gap_count: int


def classify(doc: CircuitDoc) -> Classification:
    open_in, open_out = doc.open_wires()
    if not open_in and not open_out:
        cat = "circuit"
    elif not open_in:
        cat = "preparation"
    elif not open_out:
        cat = "result"
    else:
        cat = "fragment"
    return Classification(cat, _gap_count(doc))


def _gap_count(doc: CircuitDoc) -> int:
    """Maximal intervals in which a system's wire exits and re-enters the doc."""
    wired = {(w.system, w.occurrence) for w in doc.wires}
    gaps = 0
    systems = {b.venue for b in doc.boxes}
    systems |= {p.system for b in doc.boxes for p in b.participants}
    for s in sorted(systems):
        stays = doc.stays(s)
        runs = 1 if stays else 0
        for (b_prev, p_prev), _ in zip(stays, stays[1:]):
            occ_out = (b_prev.venue_occurrence + 1 if p_prev is None
                       else p_prev.occurrence + 1)
            if (s, occ_out) not in wired:
                runs += 1
        gaps += max(0, runs - 1)
    return gaps


def is_deterministic(doc: CircuitDoc) -> bool:
    """True when no box carries an outcome or ontological flag and no terminal
    is ontological.  Symptom monitoring is explicit: a flagless box is
    deterministic; "nothing to report" is the outcome value 0 on a flag."""
    for b in doc.boxes:
        for f in b.flags:
            if f.kind in OUTCOME_KINDS or f.kind == "ontological":
                return False
    return all(t.closure != "O" for t in doc.terminals)


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------

def split_at(doc: CircuitDoc, box_id: str, t: int) -> CircuitDoc:
    """Replace one box by two sequential boxes cut at time ``t``.

    Stays spanning the cut become a paired continuation; their behaviour
    label stays attached to both halves because a behaviour covers the
    whole stay and does not factorize across the cut.  Occurrence counters
    downstream of the cut shift by one.
    """
    doc = copy.deepcopy(doc)
    box = doc.box(box_id)
    t0, t1 = box.window
    if not (t0 < t < t1):
        raise SplitOutsideWindow(f"cut {t} outside ({t0},{t1})")

    lo = BoxOp(f"{box_id}.1", box.venue, box.venue_occurrence, (t0, t),
               [], [f for f in box.flags if f.time < t])
    hi = BoxOp(f"{box_id}.2", box.venue, box.venue_occurrence + 1, (t, t1),
               [], [f for f in box.flags if f.time >= t])
    shifted: list[tuple[SystemId, int]] = [(box.venue, box.venue_occurrence + 1)]
    cont_wires: list[Wire] = []

    for p in box.participants:
        if p.leave <= t:
            lo.participants.append(p)
        elif p.enter >= t:
            hi.participants.append(p)
        else:
            first = replace(p, leave=t, continues=True)
            second = replace(p, enter=t, occurrence=p.occurrence + 1, continued=True)
            lo.participants.append(first)
            hi.participants.append(second)
            shifted.append((p.system, p.occurrence + 1))
            cont_wires.append(Wire(p.system, p.occurrence + 1, lo.id, hi.id,
                                   continuation=True))

    def shift_occ(system: SystemId, occ: int) -> int:
        for s, at in shifted:
            if s == system and occ >= at:
                return occ + 1
        return occ

    # everything downstream of the cut moves up by one occurrence
    for b in doc.boxes:
        if b.id == box_id:
            continue
        if (b.venue, b.venue_occurrence) != (box.venue, box.venue_occurrence):
            b.venue_occurrence = shift_occ(b.venue, b.venue_occurrence)
        for p in b.participants:
            p.occurrence = shift_occ(p.system, p.occurrence)
        for f in b.flags:
            f.subjects = tuple(
                replace(s, occurrence=shift_occ(s.system, s.occurrence)) for s in f.subjects
            )
    for w in doc.wires:
        w.occurrence = shift_occ(w.system, w.occurrence)
        if w.from_box == box_id:
            w.from_box = hi.id if _port_box(hi, w.system, w.occurrence, "out") else lo.id
        if w.to_box == box_id:
            w.to_box = lo.id if _port_box(lo, w.system, w.occurrence, "in") else hi.id
    for term in doc.terminals:
        term.occurrence = shift_occ(term.system, term.occurrence)
    for f in lo.flags + hi.flags:
        f.subjects = tuple(
            replace(s, occurrence=shift_occ(s.system, s.occurrence))
            if (s.system, s.occurrence + 1) not in shifted else s
            for s in f.subjects
        )

    doc.boxes = [b for b in doc.boxes if b.id != box_id] + [lo, hi]
    doc.boxes.sort(key=lambda b: (b.window[0], b.id))
    doc.wires.extend(cont_wires)
    doc.wires.append(Wire(box.venue, box.venue_occurrence + 1, lo.id, hi.id))
    return doc


def _port_box(box: BoxOp, system: SystemId, occ: int, side: str) -> bool:
    if box.venue == system:
        own = box.venue_occurrence + 1 if side == "out" else box.venue_occurrence
        return own == occ
    for p in box.participants:
        own = p.occurrence + 1 if side == "out" else p.occurrence
        if p.system == system and own == occ:
            return True
    return False


# ---------------------------------------------------------------------------
# Builder: occurrence bookkeeping and auto-wiring for programmatic use
# ---------------------------------------------------------------------------

DEFAULT_SPACE_NAMES = {
    SystemKind.REGISTERED_INDIVIDUAL: "registered_simplified",
    SystemKind.UNREGISTERED_INDIVIDUAL: "unregistered_simplified",
    SystemKind.MANAGED_VENUE: "venue_simplified",
    SystemKind.UNMANAGED_VENUE: "venue_simplified",
}


class CircuitBuilder:
    """Assembles a CircuitDoc, tracking occurrences and wiring chains."""

    def __init__(self):
        self.doc = CircuitDoc()
        self._next_occ: dict[SystemId, int] = {}
        self._last_box: dict[SystemId, str] = {}
        self._counter = 0

    def space(self, name: str, space: HiddenSpace) -> "CircuitBuilder":
        self.doc.spaces[name] = space
        return self

    def system(self, kind: SystemKind, sid: str, space: str | None = None,
               start_occurrence: int = 1) -> SystemId:
        system = SystemId(kind, str(sid))
        if system in self.doc.systems:
            return system
        if space is None:
            space = DEFAULT_SPACE_NAMES[kind]
            if space not in self.doc.spaces:
                self.doc.spaces[space] = build_space(kind, "simplified")
        self.doc.systems[system] = space
        self._next_occ[system] = start_occurrence
        return system

    def box(self, venue: SystemId, window: tuple[int, int],
            participants: list | None = None,
            flags: list[Flag] | None = None,
            box_id: str | None = None) -> BoxOp:
        participants = participants or []
        self._counter += 1
        bid = box_id or f"b{self._counter}"
        vocc = self._next_occ.setdefault(venue, 1)
        parts = []
        for spec in participants:
            system, enter, leave = spec[0], spec[1], spec[2]
            behaviour = spec[3] if len(spec) > 3 else None
            bt = bool(spec[4]) if len(spec) > 4 else False
            occ = self._next_occ.setdefault(system, 1)
            parts.append(Participant(system, occ, enter, leave, behaviour, bt))
            if system in self._last_box:
                self.doc.wires.append(Wire(system, occ, self._last_box[system], bid))
            self._next_occ[system] = occ + 1
            self._last_box[system] = bid
        b = BoxOp(bid, venue, vocc, window, parts, list(flags or []))
        if venue in self._last_box:
            self.doc.wires.append(Wire(venue, vocc, self._last_box[venue], bid))
        self._next_occ[venue] = vocc + 1
        self._last_box[venue] = bid
        self.doc.boxes.append(b)
        return b

    def first_occurrence(self, system: SystemId) -> int:
        for b in self.doc.boxes:
            if b.venue == system:
                return b.venue_occurrence
        occs = [p.occurrence for b in self.doc.boxes for p in b.participants
                if p.system == system]
        return min(occs) if occs else 1

    def close_start(self, system: SystemId, closure: str) -> None:
        occ = self.first_occurrence(system)
        self.doc.terminals.append(TerminalClosure(system, occ, "start", closure))

    def close_finish(self, system: SystemId, closure: str = "ignore",
                     name: str | None = None, value: int | None = None) -> None:
        occ = self._next_occ.get(system, 1)
        self.doc.terminals.append(TerminalClosure(system, occ, "finish", closure,
                                                  name, value))

    def build(self) -> CircuitDoc:
        return self.doc
