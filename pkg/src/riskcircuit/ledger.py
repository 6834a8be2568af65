"""Participatory backend: accounts, venues, visit planning, health reports,
points ledgers, and policy levers over an append-only event log.

Every state change is an event; folding the log reproduces the state
bit-for-bit, including stored risk reports (risk recomputation happens
inside event application and is a pure function of the folded state).
Quotes never debit; commits charge the minimum of the actual cost and the
prediction recomputed with the subject's own actual behaviour, so people
are not billed for surprises beyond their control.

Visits committed at a venue are merged into venue sessions (maximal
time-overlapping clusters); sessions become the boxes of the fragments the
risk engine evaluates.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from . import inference as inf
from . import pointslite as lite
from .circuit import CircuitBuilder, CircuitDoc, Flag, SystemId, SystemKind, SystemRef
from .rates import RateModel

HOUR = 3600
DAY = 86400


class UnknownVenue(KeyError):
    pass


class UnknownAccount(KeyError):
    pass


class BehaviourUnavailable(KeyError):
    pass


class TokenExpired(RuntimeError):
    pass


class TokenReplay(RuntimeError):
    pass


class InvalidPolicy(ValueError):
    pass


# ---------------------------------------------------------------------------
# Policy
# ---------------------------------------------------------------------------

@dataclass
class PolicyConfig:
    p_point: float = 1e-4
    base_daily_allowance: float = 100.0
    essential_multiplier: float = 2.0
    vulnerable_multiplier: float = 0.5
    isolation_threshold: float = 0.2
    cost_multiplier_threshold: float = 0.1   # raises others' cost to meet this person
    allowance_reduction_threshold: float = 0.05
    allowance_reduction_factor: float = 0.5
    contact_multiplier: float = 2.0
    global_multiplier: float = 1.0
    cohort_multipliers: dict[str, float] = field(default_factory=dict)
    time_of_day_multipliers: list[dict] = field(default_factory=list)
    bubbles: dict[str, list[str]] = field(default_factory=dict)
    bubble_penalty: float = 1.0
    token_horizon: int = DAY
    engine: str = "full"                      # full | lite
    prevalence: float = 1e-3
    unregistered_multiplier: float = 1.5
    gamma_window: tuple[int, int] = (2, 14)
    baf_horizon: int = 14 * DAY
    baf_depth: int = 3
    baf_max_boxes: int = 12
    cooling_off: bool = False
    cooling_off_factor: float = 5.0

    def validate(self) -> None:
        for name in ("isolation_threshold", "cost_multiplier_threshold",
                     "allowance_reduction_threshold"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise InvalidPolicy(f"{name} must lie in (0, 1]")
        for name in ("global_multiplier", "bubble_penalty", "essential_multiplier",
                     "vulnerable_multiplier", "allowance_reduction_factor",
                     "contact_multiplier"):
            if getattr(self, name) < 0:
                raise InvalidPolicy(f"{name} must be >= 0")
        if self.p_point <= 0:
            raise InvalidPolicy("p_point must be positive")
        if self.engine not in {"full", "lite"}:
            raise InvalidPolicy(f"unknown engine {self.engine!r}")
        seen: set[str] = set()
        for name, members in self.bubbles.items():
            for m in members:
                if m in seen:
                    raise InvalidPolicy(f"{m} assigned to two bubbles")
                seen.add(m)

    def bubble_of(self, person: str) -> Optional[str]:
        for name, members in self.bubbles.items():
            if person in members:
                return name
        return None

    def tod_multiplier(self, time: int) -> float:
        hour = (time % DAY) // HOUR
        factor = 1.0
        for band in self.time_of_day_multipliers:
            if band["start_hour"] <= hour < band["end_hour"]:
                factor *= float(band["factor"])
        return factor

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["gamma_window"] = list(self.gamma_window)
        return d

    @staticmethod
    def from_dict(d: Mapping) -> "PolicyConfig":
        kwargs = dict(d)
        if "gamma_window" in kwargs:
            kwargs["gamma_window"] = tuple(kwargs["gamma_window"])
        cfg = PolicyConfig(**kwargs)
        cfg.validate()
        return cfg


# ---------------------------------------------------------------------------
# Event log
# ---------------------------------------------------------------------------

class MemorySink:
    def __init__(self):
        self.records: list[dict] = []

    def append(self, record: dict) -> None:
        self.records.append(record)

    def __iter__(self):
        return iter(self.records)


class FileSink:
    """Newline-delimited JSON, fsynced on every commit-grade append."""

    def __init__(self, path: str):
        self.path = path
        self._fh = open(path, "a", encoding="utf-8")

    def append(self, record: dict, fsync: bool = True) -> None:
        self._fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")
        self._fh.flush()
        if fsync:
            os.fsync(self._fh.fileno())

    def close(self) -> None:
        self._fh.close()

    @staticmethod
    def read(path: str) -> list[dict]:
        out = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    out.append(json.loads(line))
        return out


# ---------------------------------------------------------------------------
# Core
# ---------------------------------------------------------------------------

DEFAULT_BEHAVIOURS = {"default": 1.0}


def _default_model_dict(venue: str) -> dict:
    # these outcome rates also govern synthesized report boxes, whose
    # 600-second window must make a reported result near-certain to fire;
    # hence the high rates
    return {
        "venue": venue,
        "behaviours": {"default": {"proximity_weight": 1.0}},
        "lambda_direct": 0.05 / HOUR,
        "lambda_indirect": 0.01 / HOUR,
        "rho": 0.5 / DAY,
        "deposit": 0.05 / HOUR,
        "decay": 0.2 / HOUR,
        "procedures": {},
        "progression_rates": {"symptom_onset": 2.0 / DAY},
        "outcome_rates": {
            "T": {"kind": "test", "rate": 600.0 / DAY, "false_positive": 0.02,
                  "sensitivity": 0.95},
            "S_1": {"kind": "symptom", "rate": 600.0 / DAY},
        },
        "beta": {"default|default": 0.002},
        "gamma": {"window": [2, 14]},
    }


@dataclass
class Account:
    id: str
    questionnaire: dict
    created: int
    entries: list[dict] = field(default_factory=list)
    reports: list[dict] = field(default_factory=list)       # health reports
    risk: Optional[dict] = None
    notifications: list[dict] = field(default_factory=list)

    @property
    def cohorts(self) -> list[str]:
        out = []
        if self.questionnaire.get("essential_worker"):
            out.append("essential")
        if self.questionnaire.get("vulnerable"):
            out.append("vulnerable")
        return out


@dataclass
class VenueState:
    id: str
    managed: bool
    questionnaire: dict
    model: dict
    strategy: str = "report_rate"            # report_rate | cap_rate
    cap: float = math.inf
    stays: list[dict] = field(default_factory=list)   # committed stays


class LedgerCore:
    """Single-writer fold over the event log."""

    def __init__(self, sink=None, policy: PolicyConfig | None = None):
        self.sink = sink if sink is not None else MemorySink()
        self.seq = 0
        self.policy = PolicyConfig()
        self.policy_versions: list[dict] = []
        self.accounts: dict[str, Account] = {}
        self.venues: dict[str, VenueState] = {}
        self.quotes: dict[str, dict] = {}
        if policy is not None:
            policy.validate()
            # the starting configuration is itself an event, so a replayed
            # log reproduces the policy exactly
            self._emit("policy_set", {"config": policy.to_dict()}, 0)

    # -- event machinery ----------------------------------------------------

    def _emit(self, kind: str, payload: dict, time: int) -> dict:
        self.seq += 1
        record = {"seq": self.seq, "time": int(time), "kind": kind, "payload": payload}
        self._apply(record)
        self.sink.append(record)
        return record

    def _apply(self, record: dict) -> None:
        handler = getattr(self, f"_apply_{record['kind']}")
        handler(record["payload"], record["time"], record["seq"])

    @classmethod
    def replay(cls, records: Iterable[dict], sink=None) -> "LedgerCore":
        core = cls(sink=sink if sink is not None else MemorySink())
        for record in records:
            core.seq = record["seq"]
            core._apply(record)
        return core

    def state_digest(self) -> str:
        state = {
            "policy": self.policy.to_dict(),
            "policy_versions": self.policy_versions,
            "accounts": {
                aid: {
                    "questionnaire": a.questionnaire,
                    "created": a.created,
                    "entries": a.entries,
                    "reports": a.reports,
                    "risk": a.risk,
                    "notifications": a.notifications,
                }
                for aid, a in sorted(self.accounts.items())
            },
            "venues": {
                vid: {
                    "managed": v.managed,
                    "questionnaire": v.questionnaire,
                    "model": v.model,
                    "strategy": v.strategy,
                    "cap": None if math.isinf(v.cap) else v.cap,
                    "stays": v.stays,
                }
                for vid, v in sorted(self.venues.items())
            },
            "quotes": {k: self.quotes[k] for k in sorted(self.quotes)},
        }
        blob = json.dumps(state, sort_keys=True, separators=(",", ":"), default=repr)
        return hashlib.sha256(blob.encode()).hexdigest()

    # -- commands ------------------------------------------------------------

    def create_account(self, account_id: str, questionnaire: dict, time: int) -> dict:
        if account_id in self.accounts:
            raise ValueError(f"account {account_id} exists")
        self._emit("account_created",
                   {"id": account_id, "questionnaire": questionnaire,
                    "prevalence": self.policy.prevalence}, time)
        return self.account_view(account_id)

    def register_venue(self, venue_id: str, payload: dict, time: int) -> dict:
        if venue_id in self.venues:
            raise ValueError(f"venue {venue_id} exists")
        model = payload.get("model") or _default_model_dict(venue_id)
        model["venue"] = venue_id
        RateModel.from_dict(model)  # fail fast on malformed models
        event = {
            "id": venue_id,
            "managed": bool(payload.get("managed", True)),
            "questionnaire": payload.get("questionnaire", {}),
            "model": model,
            "strategy": payload.get("strategy", "report_rate"),
            "cap": payload.get("cap"),
        }
        self._emit("venue_registered", event, time)
        return {"id": venue_id, "managed": event["managed"]}

    def set_policy(self, cfg: Mapping, time: int) -> dict:
        merged = {**self.policy.to_dict(), **dict(cfg)}
        PolicyConfig.from_dict(merged)  # validate before committing
        self._emit("policy_set", {"config": dict(cfg)}, time)
        return {"version": len(self.policy_versions)}

    def plan_visit(self, subject: str, venue: str, window: Sequence[int],
                   behaviour: str, co_visitors: Sequence[dict] | None,
                   time: int) -> dict:
        self._require_account(subject)
        v = self.venues.get(venue)
        if v is None:
            raise UnknownVenue(venue)
        model = RateModel.from_dict(v.model)
        if behaviour not in model.behaviours:
            raise BehaviourUnavailable(behaviour)
        co_visitors = list(co_visitors or [])
        quote_points, cost_rate = self._quote(subject, venue, tuple(window),
                                              behaviour, co_visitors, time)
        token = hashlib.sha256(
            f"{self.seq + 1}|{subject}|{venue}|{time}".encode()).hexdigest()[:20]
        payload = {
            "token": token,
            "subject": subject,
            "venue": venue,
            "window": [int(window[0]), int(window[1])],
            "behaviour": behaviour,
            "co_visitors": co_visitors,
            "predicted_points": quote_points,
            "cost_rate": cost_rate,
            "expires": int(time) + self.policy.token_horizon,
        }
        self._emit("visit_planned", payload, time)
        balance = self.balance(subject, time)
        return {**payload, "over_budget": quote_points > balance}

    def commit_visit(self, token: str, time: int,
                     actual_window: Sequence[int] | None = None,
                     actual_behaviour: str | None = None,
                     observed_co_visitors: Sequence[dict] | None = None) -> dict:
        q = self.quotes.get(token)
        if q is None:
            raise TokenExpired(f"unknown token {token}")
        if q.get("used"):
            raise TokenReplay(token)
        if time > q["expires"]:
            raise TokenExpired(token)
        window = [int(x) for x in (actual_window or q["window"])]
        behaviour = actual_behaviour or q["behaviour"]
        observed = list(observed_co_visitors if observed_co_visitors is not None
                        else q["co_visitors"])
        actual_points, _ = self._quote(q["subject"], q["venue"], tuple(window),
                                       behaviour, observed, time)
        cap_points, _ = self._quote(q["subject"], q["venue"], tuple(window),
                                    behaviour, q["co_visitors"], time)
        charged = min(actual_points, cap_points)
        payload = {
            "token": token,
            "subject": q["subject"],
            "venue": q["venue"],
            "window": window,
            "behaviour": behaviour,
            "co_visitors": observed,
            "actual_points": actual_points,
            "charged_points": charged,
        }
        self._emit("visit_committed", payload, time)
        return {"actual_points": charged,
                "entry": self.accounts[q["subject"]].entries[-1]}

    def report_health(self, subject: str, kind: str, name: str, value: int,
                      time: int) -> dict:
        self._require_account(subject)
        if kind not in {"symptom", "test"}:
            raise ValueError(f"unknown report kind {kind!r}")
        self._emit("health_reported",
                   {"subject": subject, "kind": kind, "name": name,
                    "value": int(value)}, time)
        acct = self.accounts[subject]
        return {"subject": subject, "affected": acct.notifications[-1]["affected"]
                if acct.notifications else []}

    # -- event handlers -------------------------------------------------------

    def _apply_account_created(self, p: dict, time: int, seq: int) -> None:
        self.accounts[p["id"]] = Account(p["id"], dict(p["questionnaire"]), time)

    def _apply_venue_registered(self, p: dict, time: int, seq: int) -> None:
        self.venues[p["id"]] = VenueState(
            p["id"], p["managed"], dict(p["questionnaire"]), dict(p["model"]),
            p.get("strategy", "report_rate"),
            math.inf if p.get("cap") is None else float(p["cap"]))

    def _apply_policy_set(self, p: dict, time: int, seq: int) -> None:
        merged = {**self.policy.to_dict(), **p["config"]}
        self.policy = PolicyConfig.from_dict(merged)
        self.policy_versions.append({"seq": seq, "time": time, "config": p["config"]})
        self._sweep_thresholds(time)

    def _apply_visit_planned(self, p: dict, time: int, seq: int) -> None:
        self.quotes[p["token"]] = {**p, "used": False, "planned_at": time}

    def _apply_visit_committed(self, p: dict, time: int, seq: int) -> None:
        self.quotes[p["token"]]["used"] = True
        acct = self.accounts[p["subject"]]
        entry = {
            "seq": seq,
            "time": time,
            "venue": p["venue"],
            "window": p["window"],
            "token": p["token"],
            "predicted_points": self.quotes[p["token"]]["predicted_points"],
            "charged_points": p["charged_points"],
        }
        acct.entries.append(entry)
        venue = self.venues[p["venue"]]
        venue.stays.append({
            "person": p["subject"],
            "kind": "registered",
            "enter": p["window"][0],
            "leave": p["window"][1],
            "behaviour": p["behaviour"],
            "seq": seq,
            "guests": [c for c in p["co_visitors"] if c.get("unregistered")],
        })
        acct.risk = None   # stale until next read or report

    def _apply_health_reported(self, p: dict, time: int, seq: int) -> None:
        acct = self.accounts[p["subject"]]
        acct.reports.append({"seq": seq, "time": time, "kind": p["kind"],
                             "name": p["name"], "value": p["value"]})
        affected = self._affected_by(p["subject"], time)
        for person in affected:
            self._refresh_risk(person, time, note=True)
        acct.notifications.append({
            "seq": seq, "time": time, "kind": "report_processed",
            "affected": sorted(affected),
        })

    # -- quoting ----------------------------------------------------------------

    def _require_account(self, subject: str) -> Account:
        a = self.accounts.get(subject)
        if a is None:
            raise UnknownAccount(subject)
        return a

    def _multipliers(self, subject: str, co_visitors: Sequence[dict], time: int) -> float:
        pol = self.policy
        m = pol.global_multiplier * pol.tod_multiplier(time)
        acct = self.accounts[subject]
        for cohort in acct.cohorts:
            m *= pol.cohort_multipliers.get(cohort, 1.0)
        mine = pol.bubble_of(subject)
        for c in co_visitors:
            other = c.get("id")
            if other and not c.get("unregistered"):
                if pol.bubble_of(other) != mine:
                    m *= pol.bubble_penalty
                other_acct = self.accounts.get(other)
                if other_acct and other_acct.risk and \
                        "cost_multiplier" in other_acct.risk.get("thresholds", []):
                    m *= pol.contact_multiplier
        return m

    def _quote(self, subject: str, venue: str, window: tuple[int, int],
               behaviour: str, co_visitors: Sequence[dict], time: int) -> tuple[float, float]:
        if self.policy.engine == "lite":
            base = self._lite_points(subject, venue, window, behaviour, co_visitors)
        else:
            base = self._full_points(subject, venue, window, behaviour, co_visitors, time)
        mult = self._multipliers(subject, co_visitors, time)
        points = base * mult
        hours = (window[1] - window[0]) / HOUR
        return points, (points / hours if hours > 0 else 0.0)

    def _gamma(self, venue: VenueState) -> lite.GammaProfile:
        raw = RateModel.from_dict(venue.model).lite.get("gamma")
        if raw:
            return lite.GammaProfile.from_dict(raw)
        return lite.GammaProfile(self.policy.gamma_window)

    def _beta(self, venue: VenueState) -> lite.BetaTable:
        raw = RateModel.from_dict(venue.model).lite.get("beta")
        if raw:
            return lite.BetaTable.from_dict(venue.id, raw)
        return lite.BetaTable(venue.id, {("*", "*"): 0.002})

    def _history(self, person: str) -> lite.PersonHistory:
        acct = self.accounts[person]
        visits = []
        for j, e in enumerate(acct.entries, start=1):
            visits.append(lite.VisitCostRecord(
                person, j, e["venue"], e["window"][0],
                e["window"][1] - e["window"][0], "default", e["charged_points"]))
        return lite.PersonHistory(person, acct.created, self.policy.prevalence, visits)

    def s_of(self, person: str, venue: VenueState, now: int) -> float:
        pol = self.policy
        if person not in self.accounts:
            return lite.unmodeled_s_value(pol.prevalence, pol.unregistered_multiplier,
                                          pol.p_point)
        factor = pol.cooling_off_factor if pol.cooling_off else 1.0
        return lite.s_value(self._history(person), self._gamma(venue), now,
                            pol.p_point, cooling_off_factor=factor)

    def _occupants(self, venue: VenueState, window: tuple[int, int]) -> list[dict]:
        """Stays overlapping the window or recent enough to leave deposits."""
        recency = self._gamma(venue).window[1] * DAY
        out = []
        for s in venue.stays:
            if s["enter"] < window[1] and window[0] - recency < s["leave"]:
                out.append(s)
        return out

    def _lite_points(self, subject: str, venue_id: str, window: tuple[int, int],
                     behaviour: str, co_visitors: Sequence[dict]) -> float:
        venue = self.venues[venue_id]
        beta = self._beta(venue)
        hours = (window[1] - window[0]) / HOUR
        now = window[0]
        others: list[tuple[str, float]] = []
        seen: set[str] = set()
        for c in co_visitors:
            cid = c.get("id") or f"guest-{len(others)}"
            seen.add(cid)
            if c.get("unregistered") or cid not in self.accounts:
                s = lite.unmodeled_s_value(self.policy.prevalence,
                                           self.policy.unregistered_multiplier,
                                           self.policy.p_point)
            else:
                s = self.s_of(cid, venue, now)
            others.append((c.get("behaviour", behaviour), s))
        for stay in self._occupants(venue, window):
            if stay["person"] in seen or stay["person"] == subject:
                continue
            seen.add(stay["person"])
            others.append((stay["behaviour"], self.s_of(stay["person"], venue, now)))
        if not others:
            return 0.0
        return lite.visit_cost(behaviour, hours, others, beta)

    # -- full engine --------------------------------------------------------------

    def _closure_policy(self) -> inf.ClosurePolicy:
        return inf.ClosurePolicy(prevalence=self.policy.prevalence,
                                 unregistered_multiplier=self.policy.unregistered_multiplier)

    def _models(self) -> dict[str, RateModel]:
        models = {vid: RateModel.from_dict(v.model) for vid, v in self.venues.items()}
        return models

    def _sessions(self, horizon_start: int, now: int) -> list[dict]:
        """Merge committed stays into venue sessions (overlap-connected)."""
        sessions = []
        for vid, venue in self.venues.items():
            stays = [s for s in venue.stays
                     if s["leave"] > horizon_start and s["enter"] < now]
            stays.sort(key=lambda s: (s["enter"], s["leave"], s["person"]))
            cur: list[dict] = []
            end = None
            for s in stays:
                if cur and s["enter"] >= end:
                    sessions.append({"venue": vid, "stays": cur})
                    cur, end = [], None
                cur.append(s)
                end = s["leave"] if end is None else max(end, s["leave"])
            if cur:
                sessions.append({"venue": vid, "stays": cur})
        for sess in sessions:
            sess["start"] = min(s["enter"] for s in sess["stays"])
            sess["end"] = max(s["leave"] for s in sess["stays"])
        sessions.sort(key=lambda s: (s["start"], s["venue"]))
        return sessions

    def _baf_sessions(self, seeds: set[str], now: int) -> list[dict]:
        sessions = self._sessions(now - self.policy.baf_horizon, now)
        people = set(seeds)
        chosen: list[dict] = []
        chosen_ids: set[int] = set()
        for _ in range(self.policy.baf_depth):
            added = False
            for i, sess in enumerate(sessions):
                if i in chosen_ids:
                    continue
                members = {s["person"] for s in sess["stays"]}
                if members & people:
                    chosen_ids.add(i)
                    chosen.append(sess)
                    people |= members
                    added = True
            if not added:
                break
        chosen.sort(key=lambda s: (s["start"], s["venue"]))
        return chosen[: self.policy.baf_max_boxes]

    def _build_fragment(self, sessions: list[dict], now: int,
                        extra_box: dict | None = None) -> tuple[CircuitDoc, dict]:
        """Fragment from sessions (+ optional hypothetical visit box)."""
        b = CircuitBuilder()
        refs: dict[str, SystemId] = {}

        def venue_system(vid: str) -> SystemId:
            managed = self.venues[vid].managed if vid in self.venues else False
            kind = SystemKind.MANAGED_VENUE if managed else SystemKind.UNMANAGED_VENUE
            return b.system(kind, vid)

        def person_system(pid: str) -> SystemId:
            return b.system(SystemKind.REGISTERED_INDIVIDUAL, pid)

        all_items = list(sessions)
        if extra_box is not None:
            all_items.append(extra_box)
            all_items.sort(key=lambda s: (s["start"], s["venue"]))
        guest_counter = 0
        boxes = []
        for sess in all_items:
            vid = sess["venue"]
            vsys = venue_system(vid)
            parts = []
            flags = []
            for s in sess["stays"]:
                psys = person_system(s["person"])
                parts.append((psys, s["enter"], s["leave"], s["behaviour"]))
                for g in s.get("guests", []):
                    guest_counter += 1
                    gsys = b.system(SystemKind.UNREGISTERED_INDIVIDUAL,
                                    f"g{guest_counter}")
                    parts.append((gsys, s["enter"], s["leave"],
                                  g.get("behaviour", s["behaviour"])))
            box = b.box(vsys, (sess["start"], sess["end"]), parts)
            boxes.append((sess, box))
        # attach health reports that fall inside a subject's stay
        home_boxes: dict[str, list[dict]] = {}
        for pid in {s["person"] for sess in all_items for s in sess["stays"]}:
            acct = self.accounts.get(pid)
            if not acct:
                continue
            for rep in acct.reports:
                placed = False
                for sess, box in boxes:
                    for p in box.participants:
                        if p.system.id == pid and p.enter <= rep["time"] < p.leave:
                            box.flags.append(Flag(
                                "outcome", rep["kind"], rep["name"], rep["value"],
                                rep["time"],
                                (SystemRef(p.system.kind, p.system.id, p.occurrence),)))
                            placed = True
                            break
                    if placed:
                        break
                if not placed:
                    home_boxes.setdefault(pid, []).append(rep)
        for pid, reps in sorted(home_boxes.items()):
            vsys = b.system(SystemKind.UNMANAGED_VENUE, f"home-{pid}")
            psys = person_system(pid)
            for rep in sorted(reps, key=lambda r: r["time"]):
                t0 = rep["time"]
                box = b.box(vsys, (t0, t0 + 600), [(psys, t0, t0 + 600, None)])
                p = box.participants[0]
                box.flags.append(Flag("outcome", rep["kind"], rep["name"],
                                      rep["value"], t0,
                                      (SystemRef(p.system.kind, p.system.id,
                                                 p.occurrence),)))
        doc = b.build()
        models = self._models()
        for sid in doc.systems:
            if sid.kind.is_venue and sid.id not in models:
                models[sid.id] = RateModel.from_dict(_default_model_dict(sid.id))
        return doc, models

    def _full_points(self, subject: str, venue_id: str, window: tuple[int, int],
                     behaviour: str, co_visitors: Sequence[dict], time: int) -> float:
        seeds = {subject} | {c["id"] for c in co_visitors
                             if c.get("id") and not c.get("unregistered")}
        sessions = self._baf_sessions(seeds, time)
        stays = [{"person": subject, "enter": window[0], "leave": window[1],
                  "behaviour": behaviour, "guests":
                      [c for c in co_visitors if c.get("unregistered")]}]
        for c in co_visitors:
            if c.get("id") and not c.get("unregistered"):
                stays.append({"person": c["id"], "enter": window[0], "leave": window[1],
                              "behaviour": c.get("behaviour", behaviour), "guests": []})
        extra = {"venue": venue_id, "stays": stays,
                 "start": window[0], "end": window[1]}
        frag_before, models_b = self._build_fragment(sessions, time)
        frag_after, models_a = self._build_fragment(sessions, time, extra_box=extra)
        subject_id = SystemId(SystemKind.REGISTERED_INDIVIDUAL, subject)
        policy = self._closure_policy()
        if subject_id not in frag_before.systems:
            p_before = self.policy.prevalence
        else:
            p_before = inf.infection_probability(frag_before, subject_id, models_b,
                                                 policy).p_infected
        p_after = inf.infection_probability(frag_after, subject_id, models_a,
                                            policy).p_infected
        return max(0.0, p_after - p_before) / self.policy.p_point

    # -- risk -------------------------------------------------------------------

    def _affected_by(self, reporter: str, now: int) -> set[str]:
        sessions = self._baf_sessions({reporter}, now)
        people = {s["person"] for sess in sessions for s in sess["stays"]}
        people.add(reporter)
        return {p for p in people if p in self.accounts}

    def _risk_report(self, person: str, now: int) -> dict:
        subject_id = SystemId(SystemKind.REGISTERED_INDIVIDUAL, person)
        sessions = self._baf_sessions({person}, now)
        frag, models = self._build_fragment(sessions, now)
        pol = self.policy
        thresholds = {
            "self_isolate": pol.isolation_threshold,
            "cost_multiplier": pol.cost_multiplier_threshold,
            "allowance_reduction": pol.allowance_reduction_threshold,
        }
        if subject_id not in frag.systems:
            p = pol.prevalence
            crossed = sorted(n for n, level in thresholds.items() if p >= level)
            return {"subject": person, "p_infected": p, "thresholds": crossed,
                    "computed_at": now, "evidence_digest": ""}
        report = inf.infection_probability(frag, subject_id, models,
                                           self._closure_policy(), thresholds)
        return {"subject": person, "p_infected": report.p_infected,
                "thresholds": report.thresholds, "computed_at": now,
                "evidence_digest": report.evidence_digest}

    def _refresh_risk(self, person: str, now: int, note: bool = False) -> dict:
        acct = self.accounts[person]
        old = acct.risk
        new = self._risk_report(person, now)
        acct.risk = new
        if note:
            old_t = set(old["thresholds"]) if old else set()
            new_t = set(new["thresholds"])
            for name in sorted(new_t - old_t):
                acct.notifications.append(
                    {"time": now, "kind": "threshold_crossed", "name": name,
                     "p_infected": new["p_infected"]})
            for name in sorted(old_t - new_t):
                acct.notifications.append(
                    {"time": now, "kind": "threshold_retracted", "name": name,
                     "p_infected": new["p_infected"]})
        return new

    def _sweep_thresholds(self, now: int) -> None:
        for person, acct in sorted(self.accounts.items()):
            if acct.risk is not None:
                p = acct.risk["p_infected"]
                pol = self.policy
                thresholds = {
                    "self_isolate": pol.isolation_threshold,
                    "cost_multiplier": pol.cost_multiplier_threshold,
                    "allowance_reduction": pol.allowance_reduction_threshold,
                }
                crossed = sorted(n for n, lvl in thresholds.items() if p >= lvl)
                old = set(acct.risk["thresholds"])
                acct.risk["thresholds"] = crossed
                for name in sorted(set(crossed) - old):
                    acct.notifications.append({"time": now, "kind": "threshold_crossed",
                                               "name": name, "p_infected": p})
                for name in sorted(old - set(crossed)):
                    acct.notifications.append({"time": now, "kind": "threshold_retracted",
                                               "name": name, "p_infected": p})

    # -- views --------------------------------------------------------------------

    def allowance_of(self, person: str) -> float:
        acct = self._require_account(person)
        pol = self.policy
        allowance = pol.base_daily_allowance
        if acct.questionnaire.get("essential_worker"):
            allowance *= pol.essential_multiplier
        if acct.questionnaire.get("vulnerable"):
            allowance *= pol.vulnerable_multiplier
        if acct.risk and "allowance_reduction" in acct.risk.get("thresholds", []):
            allowance *= pol.allowance_reduction_factor
        return allowance

    def balance(self, person: str, now: int) -> float:
        acct = self._require_account(person)
        day_start = (now // DAY) * DAY
        spent = sum(e["charged_points"] for e in acct.entries
                    if day_start <= e["time"] < day_start + DAY)
        return self.allowance_of(person) - spent

    def account_view(self, person: str) -> dict:
        acct = self._require_account(person)
        return {"id": acct.id, "questionnaire": acct.questionnaire,
                "created": acct.created, "allowance": self.allowance_of(person)}

    def risk_of(self, person: str, now: int) -> dict:
        acct = self._require_account(person)
        if acct.risk is None:
            return self._risk_report(person, now)
        return acct.risk

    def ledger_of(self, person: str, now: int) -> dict:
        acct = self._require_account(person)
        return {"id": person, "allowance": self.allowance_of(person),
                "balance": self.balance(person, now), "entries": acct.entries,
                "notifications": acct.notifications}

    def fragment_of(self, person: str, now: int) -> dict:
        """The biggest available fragment behind this person's risk figure,
        in the circuit interchange format."""
        self._require_account(person)
        sessions = self._baf_sessions({person}, now)
        frag, _ = self._build_fragment(sessions, now)
        return frag.to_dict()

    def venue_rate(self, venue_id: str, now: int) -> dict:
        v = self.venues.get(venue_id)
        if v is None:
            raise UnknownVenue(venue_id)
        window = (now, now + HOUR)
        points = self._lite_points("", venue_id, window, "default", [])
        rate = points * self.policy.global_multiplier * self.policy.tod_multiplier(now)
        return {"venue": venue_id, "cost_rate": rate, "strategy": v.strategy,
                "over_cap": v.strategy == "cap_rate" and rate > v.cap}
