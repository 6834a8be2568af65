"""Command-line entry point.

Subcommands: validate, prob, risk, points, lite-points, simulate, sweep,
serve.  Numeric results print with 9 decimal places so golden files stay
exact.  Exit codes: 0 success, 1 validation failure, 2 runtime error,
64 usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from typing import Optional

from . import inference as inf
from . import pointslite as lite
from . import sim
from .circuit import CircuitDoc, SystemId, SystemKind, classify, parse, validate
from .rates import RateModel

USAGE_EXIT = 64
VALIDATION_EXIT = 1
RUNTIME_EXIT = 2

KIND_CODES = {
    "a": SystemKind.REGISTERED_INDIVIDUAL,
    "b": SystemKind.UNREGISTERED_INDIVIDUAL,
    "x": SystemKind.MANAGED_VENUE,
    "y": SystemKind.UNMANAGED_VENUE,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(USAGE_EXIT, f"{self.prog}: error: {message}\n")


def _load_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _load_doc(path: str) -> CircuitDoc:
    with open(path, "r", encoding="utf-8") as fh:
        return parse(fh.read())


def _load_models(path: str) -> dict[str, RateModel]:
    raw = _load_json(path)
    if isinstance(raw, list):
        models = [RateModel.from_dict(m) for m in raw]
    elif "venue" in raw:
        models = [RateModel.from_dict(raw)]
    else:
        models = [RateModel.from_dict(m) for m in raw.values()]
    return {m.venue: m for m in models}


def _load_config(path: Optional[str]) -> dict:
    path = path or os.environ.get("RISKCIRCUIT_CONFIG")
    return _load_json(path) if path else {}


def _policy_from_config(cfg: dict) -> inf.ClosurePolicy:
    p = cfg.get("closure_policy", {})
    return inf.ClosurePolicy(
        prevalence=float(p.get("prevalence", 1e-3)),
        unregistered_multiplier=float(p.get("unregistered_multiplier", 1.0)),
        contagious_fraction=float(p.get("contagious_fraction", 0.5)),
    )


def _subject(arg: str) -> SystemId:
    kind, _, sid = arg.partition(":")
    if not sid:
        raise ValueError(f"subject must be kind:id, got {arg!r}")
    if kind in KIND_CODES:
        return SystemId(KIND_CODES[kind], sid)
    return SystemId(SystemKind(kind), sid)


def _remove_box(doc: CircuitDoc, box_id: str) -> CircuitDoc:
    import copy

    out = copy.deepcopy(doc)
    box = out.box(box_id)
    ports = {(box.venue, box.venue_occurrence), (box.venue, box.venue_occurrence + 1)}
    for p in box.participants:
        ports |= {(p.system, p.occurrence), (p.system, p.occurrence + 1)}
    out.boxes = [b for b in out.boxes if b.id != box_id]
    out.wires = [w for w in out.wires if box_id not in (w.from_box, w.to_box)]
    out.terminals = [t for t in out.terminals if (t.system, t.occurrence) not in ports]
    return out


def _last_box_of(doc: CircuitDoc, subject: SystemId) -> str:
    best = None
    for b in doc.boxes:
        touches = b.venue == subject or any(p.system == subject for p in b.participants)
        if touches and (best is None or b.window[0] >= best.window[0]):
            best = b
    if best is None:
        raise ValueError(f"no box involves {subject}")
    return best.id


def main(argv: Optional[list[str]] = None) -> int:
    parser = _Parser(prog="riskcircuit")
    parser.add_argument("--config", help="config file (or RISKCIRCUIT_CONFIG)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[], help="check a circuit document")
    p.add_argument("circuit")

    p = sub.add_parser("prob", help="probability of a closed circuit")
    p.add_argument("circuit")
    p.add_argument("models")

    p = sub.add_parser("risk", help="infection probability of a subject")
    p.add_argument("circuit")
    p.add_argument("models")
    p.add_argument("--subject", required=True)

    p = sub.add_parser("points", help="points cost of a subject's last visit")
    p.add_argument("circuit")
    p.add_argument("models")
    p.add_argument("--subject", required=True)
    p.add_argument("--mode", choices=["predicted", "actual", "fine_grained"],
                   default="predicted")
    p.add_argument("--visit-box", help="box id of the visit (default: subject's last)")
    p.add_argument("--p-point", type=float, default=1e-4)

    p = sub.add_parser("lite-points", help="simplified points for one visit")
    p.add_argument("ledger")
    p.add_argument("--visit", required=True, help="visit spec JSON file")

    p = sub.add_parser("simulate", help="run one scenario")
    p.add_argument("scenario")
    p.add_argument("-o", "--output", help="CSV output path (default stdout)")

    p = sub.add_parser("sweep", help="run a scenario grid")
    p.add_argument("scenario")
    p.add_argument("--grid", required=True,
                   help='JSON like {"alpha":[0,1],"allowance":[50],"seeds":[1,2]}')
    p.add_argument("-o", "--output")

    p = sub.add_parser("serve", help="start the ledger service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--event-log", default=None)

    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config)
        return _dispatch(args, cfg)
    except (OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return RUNTIME_EXIT


def _dispatch(args: argparse.Namespace, cfg: dict) -> int:
    cmd = args.command
    try:
        if cmd == "validate":
            doc = _load_doc(args.circuit)
            report = validate(doc)
            if report.ok:
                cls = classify(doc)
                print(f"ok: {cls.category}, gap_count={cls.gap_count}, "
                      f"boxes={len(doc.boxes)}")
                return 0
            for issue in report.errors:
                print(str(issue))
            return VALIDATION_EXIT

        if cmd == "prob":
            doc = _load_doc(args.circuit)
            report = validate(doc)
            if not report.ok:
                for issue in report.errors:
                    print(str(issue), file=sys.stderr)
                return VALIDATION_EXIT
            models = _load_models(args.models)
            p = inf.circuit_probability(doc, models, _policy_from_config(cfg))
            print(f"{p:.9f}")
            return 0

        if cmd == "risk":
            doc = _load_doc(args.circuit)
            models = _load_models(args.models)
            report = inf.infection_probability(doc, _subject(args.subject), models,
                                               _policy_from_config(cfg))
            out = report.to_dict()
            out["p_infected"] = f"{report.p_infected:.9f}"
            print(json.dumps(out, sort_keys=True))
            return 0

        if cmd == "points":
            doc = _load_doc(args.circuit)
            models = _load_models(args.models)
            subject = _subject(args.subject)
            box_id = args.visit_box or _last_box_of(doc, subject)
            before = _remove_box(doc, box_id)
            pts = inf.points_cost(before, doc, subject, models, args.p_point,
                                  mode=args.mode, policy=_policy_from_config(cfg))
            print(f"{pts:.9f}")
            return 0

        if cmd == "lite-points":
            print(f"{_lite_points(args):.9f}")
            return 0

        if cmd == "simulate":
            scenario = sim.Scenario.from_file(args.scenario)
            csv_text = sim.to_csv([sim.run(scenario)])
            _write_out(csv_text, args.output)
            return 0

        if cmd == "sweep":
            scenario = sim.Scenario.from_file(args.scenario)
            grid = json.loads(args.grid)
            rows = sim.sweep(
                scenario,
                alphas=grid.get("alpha", [scenario.alpha]),
                betas=grid.get("beta", [scenario.beta]),
                allowances=[math.inf if a in ("inf", None) else float(a)
                            for a in grid.get("allowance", [scenario.allowance])],
                seeds=grid.get("seeds"),
            )
            _write_out(sim.to_csv(rows), args.output)
            return 0

        if cmd == "serve":
            from .service import serve
            serve(cfg, host=args.host, port=args.port, log_path=args.event_log)
            return 0
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return VALIDATION_EXIT
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return RUNTIME_EXIT
    return USAGE_EXIT


def _lite_points(args: argparse.Namespace) -> float:
    ledger = _load_json(args.ledger)
    visit = _load_json(args.visit)
    p_point = float(ledger.get("p_point", 1e-4))
    prevalence = float(ledger.get("prevalence", 1e-3))
    k = float(ledger.get("k", 1.0))
    beta = lite.BetaTable.from_dict(visit.get("venue", "?"), ledger.get("beta", {}))
    gamma = lite.GammaProfile.from_dict(ledger.get("gamma", {}))
    now = int(visit.get("time", 0))
    persons = ledger.get("persons", {})
    co = []
    for c in visit.get("co_visitors", []):
        if "s" in c:
            s = float(c["s"])
        elif c.get("id") in persons:
            pd = persons[c["id"]]
            history = lite.PersonHistory(
                c["id"], int(pd.get("joined", 0)),
                float(pd.get("join_prevalence", prevalence)),
                [lite.VisitCostRecord(c["id"], v["visit_index"], v.get("venue", "?"),
                                      int(v["time"]), float(v.get("duration", 0)),
                                      v.get("behaviour", "default"), float(v["cost"]))
                 for v in pd.get("visits", [])])
            s = lite.s_value(history, gamma, now, p_point)
        else:
            s = lite.unmodeled_s_value(prevalence, k, p_point)
        co.append((c.get("behaviour", "default"), s))
    duration = float(visit.get("duration_hours") or visit["duration"])
    return lite.visit_cost(visit.get("behaviour", "default"), duration, co, beta)


def _write_out(text: str, path: Optional[str]) -> None:
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


if __name__ == "__main__":
    sys.exit(main())
