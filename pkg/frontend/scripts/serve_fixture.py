"""Seeded ledger service for frontend integration tests.

Starts the HTTP API with two accounts (alice, bob) and one venue (cafe)
whose rates are brisk enough that desk-scale flows move the numbers.
"""

import argparse
import sys

from riskcircuit.ledger import DAY, HOUR, LedgerCore, MemorySink, PolicyConfig
from riskcircuit.service import create_app

T0 = 1_000_000 * DAY


def fixture_core() -> LedgerCore:
    policy = PolicyConfig.from_dict({
        "engine": "lite",
        "prevalence": 0.05,
        "isolation_threshold": 0.9,
        "cost_multiplier_threshold": 0.9,
        "allowance_reduction_threshold": 0.9,
        "base_daily_allowance": 100.0,
    })
    core = LedgerCore(MemorySink(), policy)
    model = {
        "venue": "cafe",
        "behaviours": {"default": {"proximity_weight": 1.0}},
        "lambda_direct": 0.3 / HOUR,
        "lambda_indirect": 0.02 / HOUR,
        "rho": 4.0 / DAY,
        "deposit": 0.02 / HOUR,
        "decay": 0.5 / HOUR,
        "procedures": {},
        "progression_rates": {"symptom_onset": 2.0 / DAY},
        "outcome_rates": {
            "T": {"kind": "test", "rate": 12.0 / DAY, "false_positive": 0.02,
                  "sensitivity": 0.95},
            "S_1": {"kind": "symptom", "rate": 8.0 / DAY},
        },
        "beta": {"default|default": 0.002},
        "gamma": {"window": [0, 14]},
    }
    core.register_venue("cafe", {"managed": True, "model": model}, T0)
    core.create_account("alice", {}, T0)
    core.create_account("bob", {}, T0)
    return core


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--port", type=int, default=8901)
    parser.add_argument("--host", default="127.0.0.1")
    args = parser.parse_args()

    import uvicorn

    app = create_app(fixture_core())
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


if __name__ == "__main__":
    sys.exit(main())
