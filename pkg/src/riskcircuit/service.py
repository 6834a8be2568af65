"""HTTP+JSON facade over the ledger core.

All state lives in the event-sourced LedgerCore; this layer only parses
requests, stamps times, and maps domain errors onto status codes.
Requests may carry an explicit ``time`` (epoch seconds) so that batch
runs and tests are reproducible; otherwise the server clock is used.
"""

from __future__ import annotations

import time as _time
from typing import Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .ledger import (BehaviourUnavailable, FileSink, InvalidPolicy, LedgerCore,
                     MemorySink, PolicyConfig, TokenExpired, TokenReplay,
                     UnknownAccount, UnknownVenue)


class AccountIn(BaseModel):
    id: str
    questionnaire: dict = Field(default_factory=dict)
    time: Optional[int] = None


class VenueIn(BaseModel):
    id: str
    managed: bool = True
    questionnaire: dict = Field(default_factory=dict)
    model: Optional[dict] = None
    strategy: str = "report_rate"
    cap: Optional[float] = None
    time: Optional[int] = None


class PlanIn(BaseModel):
    subject: str
    venue: str
    window: tuple[int, int]
    behaviour: str = "default"
    co_visitors: list[dict] = Field(default_factory=list)
    time: Optional[int] = None


class CommitIn(BaseModel):
    token: str
    window: Optional[tuple[int, int]] = None
    behaviour: Optional[str] = None
    co_visitors: Optional[list[dict]] = None
    time: Optional[int] = None


class HealthIn(BaseModel):
    subject: str
    kind: str
    name: str = "T"
    value: int = 1
    time: Optional[int] = None


def _now(explicit: Optional[int]) -> int:
    return int(explicit if explicit is not None else _time.time())


def create_app(core: LedgerCore | None = None) -> FastAPI:
    core = core or LedgerCore(MemorySink())
    app = FastAPI(title="riskcircuit ledger")
    app.state.core = core

    def run(fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (UnknownVenue, UnknownAccount) as e:
            raise HTTPException(404, str(e))
        except TokenReplay as e:
            raise HTTPException(409, f"token already used: {e}")
        except TokenExpired as e:
            raise HTTPException(410, f"token expired or unknown: {e}")
        except (InvalidPolicy, BehaviourUnavailable, ValueError, KeyError) as e:
            raise HTTPException(422, str(e))

    @app.post("/accounts")
    def create_account(body: AccountIn):
        return run(core.create_account, body.id, body.questionnaire, _now(body.time))

    @app.post("/venues")
    def register_venue(body: VenueIn):
        payload = body.model_dump(exclude={"id", "time"})
        return run(core.register_venue, body.id, payload, _now(body.time))

    @app.post("/visits/plan")
    def plan(body: PlanIn):
        return run(core.plan_visit, body.subject, body.venue, body.window,
                   body.behaviour, body.co_visitors, _now(body.time))

    @app.post("/visits/commit")
    def commit(body: CommitIn):
        return run(core.commit_visit, body.token, _now(body.time),
                   actual_window=body.window, actual_behaviour=body.behaviour,
                   observed_co_visitors=body.co_visitors)

    @app.post("/reports/health")
    def report(body: HealthIn):
        return run(core.report_health, body.subject, body.kind, body.name,
                   body.value, _now(body.time))

    @app.get("/individuals/{person}/risk")
    def risk(person: str, time: Optional[int] = None):
        return run(core.risk_of, person, _now(time))

    @app.get("/individuals/{person}/fragment")
    def fragment(person: str, time: Optional[int] = None):
        return run(core.fragment_of, person, _now(time))

    @app.get("/venues/{venue}/rate")
    def rate(venue: str, time: Optional[int] = None):
        return run(core.venue_rate, venue, _now(time))

    @app.get("/policy")
    def get_policy():
        return core.policy.to_dict()

    @app.put("/policy")
    def put_policy(body: dict):
        t = body.pop("time", None)
        return run(core.set_policy, body, _now(t))

    @app.get("/ledger/{person}")
    def ledger(person: str, time: Optional[int] = None):
        return run(core.ledger_of, person, _now(time))

    return app


def serve(config: dict | None = None, host: str = "127.0.0.1", port: int = 8000,
          log_path: str | None = None) -> None:
    import uvicorn

    config = config or {}
    policy = PolicyConfig.from_dict(config.get("policy", {}))
    sink = FileSink(log_path or config.get("event_log", "ledger-events.ndjson"))
    core = LedgerCore(sink, policy)
    uvicorn.run(create_app(core), host=host, port=port, log_level="warning")
