"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines.
"""

import math
import time

import numpy as np
import pytest
from scipy.linalg import expm

from riskcircuit.circuit import (CircuitBuilder, Flag, SystemId, SystemKind,
                                 SystemRef, split_at)
from riskcircuit.inference import (ClosurePolicy, box_tensors,
                                   brute_force_circuit_probability,
                                   circuit_probability, close_fragment,
                                   infection_probability)
from riskcircuit.ledger import LedgerCore
from riskcircuit.pointslite import GammaProfile, PersonHistory, s_value
from riskcircuit.rates import (OutcomeSpec, RateModel, outcome_value_sets,
                               plain_rate_matrix, solve_kfe, tensor_of_box)
from riskcircuit.sim import Scenario, run, sign_test_p
from riskcircuit.tensor import contract

from conftest import make_model
from test_inference import TINY, two_pathway_setup

A = SystemKind.REGISTERED_INDIVIDUAL
B = SystemKind.UNREGISTERED_INDIVIDUAL
X = SystemKind.MANAGED_VENUE


def report(criterion: int, ok: bool, detail: str) -> None:
    print(f"[criterion {criterion:2d}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


# -- 1 ---------------------------------------------------------------------

def test_criterion_1_analytic_ctmc():
    started = time.perf_counter()
    worst = 0.0
    for lam_dt in (0.01, 0.1, 1.0):
        b = CircuitBuilder()
        v = b.system(X, "39")
        a = b.system(A, "14")
        u = b.system(B, "7")
        box = b.box(v, (0, 1), [(a, 0, 1, "default"), (u, 0, 1, "default")])
        doc = b.build()
        spaces = {sid: doc.space_of(sid) for sid in doc.systems}
        t = tensor_of_box(make_model(lambda_direct=lam_dt), box, spaces)
        p_inf = t.values[0, 0, 1][:, 2:6, :].sum()
        worst = max(worst, abs(p_inf - (1 - math.exp(-lam_dt))))
    elapsed = time.perf_counter() - started
    report(1, worst < 1e-6 and elapsed < 1.0,
           f"max |p - (1-exp(-lam dt))| = {worst:.3g}, runtime {elapsed:.2f}s")


# -- randomized circuit generator (criteria 2-5) -----------------------------

def random_fragment(rng, with_outcomes=False):
    """Valid random fragment: <= 4 systems, <= 3 boxes, simplified spaces."""
    b = CircuitBuilder()
    n_venues = int(rng.integers(1, 3))
    venues = [b.system(X, f"v{i}") for i in range(n_venues)]
    n_people = int(rng.integers(1, 5 - n_venues))
    people = []
    for i in range(n_people):
        if rng.random() < 0.4:
            people.append(b.system(B, f"b{i}"))
        else:
            people.append(b.system(A, f"a{i}"))
    n_boxes = int(rng.integers(1, 4))
    used_unregistered: set = set()
    boxes = []
    flagged = None
    for k in range(n_boxes):
        venue = venues[int(rng.integers(0, n_venues))]
        t0, t1 = k * 10, k * 10 + 10
        parts = []
        cap = 2
        order = list(rng.permutation(n_people))
        for i in order:
            p = people[i]
            if len(parts) >= cap:
                break
            if p.kind is B and p in used_unregistered:
                continue
            if rng.random() < 0.6:
                enter = t0 if rng.random() < 0.7 else t0 + int(rng.integers(1, 5))
                leave = t1 if rng.random() < 0.7 else enter + int(
                    rng.integers(1, t1 - enter + 1))
                parts.append((p, enter, leave, "default"))
                if p.kind is B:
                    used_unregistered.add(p)
        flags = []
        box = b.box(venue, (t0, t1), parts, flags=flags)
        boxes.append(box)
    if with_outcomes:
        light = [bx for bx in boxes if len(bx.participants) == 1]
        if light:
            box = light[int(rng.integers(0, len(light)))]
            p = box.participants[0]
            kind = "test" if rng.random() < 0.6 else "symptom"
            name = "T" if kind == "test" else "S_1"
            value = int(rng.integers(0, 2))
            box.flags.append(Flag("outcome", kind, name, value, box.window[0],
                                  (SystemRef(p.system.kind, p.system.id,
                                             p.occurrence),)))
            flagged = (box, name)
    doc = b.build()
    model_kw = dict(
        lambda_direct=float(rng.uniform(0.05, 0.4)),
        lambda_indirect=float(rng.uniform(0.0, 0.05)),
        rho=float(rng.uniform(0.0, 0.3)),
        deposit=float(rng.uniform(0.0, 0.2)),
        decay=float(rng.uniform(0.0, 0.2)),
        outcome_rates={
            "T": OutcomeSpec("test", rate=float(rng.uniform(0.2, 0.8)),
                             false_positive=0.05, sensitivity=0.9),
            "S_1": OutcomeSpec("symptom", rate=float(rng.uniform(0.2, 0.8))),
        },
        progression_rates={"symptom_onset": float(rng.uniform(0.0, 0.3))},
    )
    models = {v.id: make_model(v.id, **model_kw) for v in venues}
    policy = ClosurePolicy(prevalence=float(rng.uniform(0.0, 0.3)))
    return doc, models, policy, flagged


def wire_product(doc):
    total = 1
    counts: dict = {}
    for box in doc.boxes:
        counts[box.venue] = counts.get(box.venue, 0) + 1
        for p in box.participants:
            counts[p.system] = counts.get(p.system, 0) + 1
    for system, stays in counts.items():
        total *= doc.space_of(system).total_cardinality ** (stays + 1)
    return total


def test_criterion_2_oracle_equivalence():
    rng = np.random.default_rng(20260811)
    started = time.perf_counter()
    worst = 0.0
    done = 0
    while done < 100:
        doc, models, policy, _ = random_fragment(rng, with_outcomes=done % 3 == 0)
        if wire_product(doc) > 1_500_000 or not doc.boxes:
            continue
        closed = close_fragment(doc, policy)
        tensors = box_tensors(closed, models)
        p_fast = circuit_probability(closed, models, policy, tensors=tensors)
        p_slow = brute_force_circuit_probability(closed, models, policy,
                                                 tensors=tensors)
        assert -1e-12 <= p_fast <= 1 + 1e-12
        worst = max(worst, abs(p_fast - p_slow))
        done += 1
    elapsed = time.perf_counter() - started
    report(2, worst < 1e-9 and elapsed < 60.0,
           f"100 circuits, max |contract - brute| = {worst:.3g}, "
           f"runtime {elapsed:.1f}s")


def test_criterion_3_deterministic_normalization():
    rng = np.random.default_rng(505)
    worst = 0.0
    done = 0
    while done < 50:
        doc, models, policy, _ = random_fragment(rng, with_outcomes=False)
        if not doc.boxes:
            continue
        closed = close_fragment(doc, policy)
        p = circuit_probability(closed, models, policy)
        worst = max(worst, abs(p - 1.0))
        done += 1
    report(3, worst < 1e-9,
           f"50 outcome-free circuits, max |p - 1| = {worst:.3g}")


def test_criterion_4_outcome_completeness():
    rng = np.random.default_rng(909)
    worst = 0.0
    done = 0
    while done < 25:
        doc, models, policy, flagged = random_fragment(rng, with_outcomes=True)
        if flagged is None or wire_product(doc) > 1_500_000:
            continue
        box, name = flagged
        flag = next(f for f in box.flags if f.name == name)
        spaces = {sid: doc.space_of(sid) for sid in doc.systems}
        values = outcome_value_sets(models[box.venue.id], box, spaces)[name]
        total = 0.0
        for v in values:
            flag.value = v
            total += circuit_probability(close_fragment(doc, policy), models, policy)
        box.flags.remove(flag)
        ignored = circuit_probability(close_fragment(doc, policy), models, policy)
        worst = max(worst, abs(total - ignored))
        done += 1
    report(4, worst < 1e-9,
           f"25 outcome sweeps, max |sum_v P(v) - P(ignored)| = {worst:.3g}")


def test_criterion_5_disjoint_factorization():
    import copy

    rng = np.random.default_rng(1311)
    worst = 0.0
    done = 0
    while done < 20:
        doc1, models1, policy, f1 = random_fragment(rng, with_outcomes=True)
        doc2, models2, _, f2 = random_fragment(rng, with_outcomes=True)
        if not doc1.boxes or not doc2.boxes:
            continue
        if wire_product(doc1) * wire_product(doc2) > 4_000_000:
            continue
        closed1 = close_fragment(doc1, policy)
        closed2 = close_fragment(doc2, policy)
        models2 = {f"z{k}": RateModel(**{**m.__dict__, "venue": f"z{k}"})
                   for k, m in models2.items()}
        merged = copy.deepcopy(closed1)
        for name, sp in closed2.spaces.items():
            merged.spaces.setdefault(name, sp)
        for sid, space_name in closed2.systems.items():
            renamed = SystemId(sid.kind, f"z{sid.id}")
            merged.systems[renamed] = space_name
        for box in copy.deepcopy(closed2.boxes):
            box.id = "z" + box.id
            box.venue = SystemId(box.venue.kind, f"z{box.venue.id}")
            for p in box.participants:
                p.system = SystemId(p.system.kind, f"z{p.system.id}")
            for f in box.flags:
                f.subjects = tuple(SystemRef(s.kind, f"z{s.id}", s.occurrence)
                                   for s in f.subjects)
            merged.boxes.append(box)
        for w in copy.deepcopy(closed2.wires):
            w.system = SystemId(w.system.kind, f"z{w.system.id}")
            w.from_box = "z" + w.from_box
            w.to_box = "z" + w.to_box
            merged.wires.append(w)
        for t in copy.deepcopy(closed2.terminals):
            t.system = SystemId(t.system.kind, f"z{t.system.id}")
            merged.terminals.append(t)
        models = {**models1, **models2}
        p1 = circuit_probability(closed1, models1, policy)
        p2 = circuit_probability(
            closed2, {k[1:]: m for k, m in models2.items()}, policy)
        p_joint = circuit_probability(merged, models, policy)
        worst = max(worst, abs(p_joint - p1 * p2))
        done += 1
    report(5, worst < 1e-12,
           f"20 disjoint pairs, max |P(EF) - P(E)P(F)| = {worst:.3g}")


def test_criterion_6_split_invariance():
    worst = 0.0
    for grid in (1, 3):
        model = make_model(lambda_direct=0.5, rho=0.3, deposit=0.25, decay=0.15,
                           lambda_indirect=0.1, position_grid=grid)
        b = CircuitBuilder()
        v = b.system(X, "39")
        a = b.system(A, "14")
        u = b.system(B, "7")
        box = b.box(v, (0, 4), [(a, 0, 4, "default"), (u, 1, 3, "default")],
                    box_id="big")
        doc = b.build()
        spaces = {sid: doc.space_of(sid) for sid in doc.systems}
        whole = tensor_of_box(model, box, spaces)
        cut = split_at(doc, "big", 2)
        glued = contract([tensor_of_box(model, cut.box("big.1"), spaces),
                          tensor_of_box(model, cut.box("big.2"), spaces)])
        order = [(ax.system, ax.direction) for ax in whole.axes]
        perm = [next(i for i, bx in enumerate(glued.axes)
                     if (bx.system, bx.direction) == key) for key in order]
        diff = np.abs(np.transpose(glued.values, perm) - whole.values).max()
        worst = max(worst, diff)
    report(6, worst < 1e-9,
           f"split vs unsplit (grids 1 and 3), max abs diff = {worst:.3g}")


def test_criterion_7_kfe_solver_order():
    rng = np.random.default_rng(77)
    ratios = []
    for trial in range(5):
        n = int(rng.integers(4, 17))
        q = rng.random((n, n)) * 0.15
        np.fill_diagonal(q, 0.0)
        np.fill_diagonal(q, -q.sum(axis=1))
        t = 1.0
        reference = expm(q * t)
        (p1,) = solve_kfe([plain_rate_matrix(q, t)], max_step=t / 16).values()
        (p2,) = solve_kfe([plain_rate_matrix(q, t)], max_step=t / 32).values()
        e1 = np.abs(p1 - reference).max()
        e2 = np.abs(p2 - reference).max()
        ratios.append(e1 / e2)
    ok = all(12.0 <= r <= 20.0 for r in ratios)
    report(7, ok, "error ratio per halved step: "
           + ", ".join(f"{r:.1f}" for r in ratios) + " (nominal 16)")


# -- 8 -----------------------------------------------------------------------

def _isolated_visit_probability(lam, dur, c_prior):
    b = CircuitBuilder()
    b.space("tiny", TINY)
    v = b.system(X, "9")
    a = b.system(A, "s", "tiny")
    u = b.system(B, "c")
    b.box(v, (0, dur), [(a, 0, dur, "default"), (u, 0, dur, "default")])
    doc = b.build()
    policy = ClosurePolicy(prevalence=0.0, system_priors={
        a: (1.0, 0.0, 0.0, 0.0), u: (1 - c_prior, c_prior)})
    models = {"9": make_model("9", lambda_direct=lam)}
    return infection_probability(doc, a, models, policy).p_infected


def _chained_visits_probability(visits):
    b = CircuitBuilder()
    b.space("tiny", TINY)
    a = b.system(A, "s", "tiny")
    priors = {SystemId(A, "s"): (1.0, 0.0, 0.0, 0.0)}
    models = {}
    for i, (lam, dur, c_prior) in enumerate(visits):
        v = b.system(X, f"v{i}")
        u = b.system(B, f"c{i}")
        t0 = i * 10
        b.box(v, (t0, t0 + dur), [(a, t0, t0 + dur, "default"),
                                  (u, t0, t0 + dur, "default")])
        priors[SystemId(B, f"c{i}")] = (1 - c_prior, c_prior)
        models[f"v{i}"] = make_model(f"v{i}", lambda_direct=lam)
    doc = b.build()
    policy = ClosurePolicy(prevalence=0.0, system_priors=priors)
    return infection_probability(doc, SystemId(A, "s"), models, policy).p_infected


def test_criterion_8_points_lite_consistency():
    rng = np.random.default_rng(88)
    p_point = 1e-4
    worst_excess = -1.0
    for scenario in range(20):
        m = int(rng.integers(2, 5))
        visits = []
        for _ in range(m):
            c = float(rng.uniform(0.2, 0.9))
            dur = 1
            lam = float(rng.uniform(0.2, 1.0)) * 1e-3 / c
            visits.append((lam, dur, c))
        per_visit = [_isolated_visit_probability(*v) for v in visits]
        assert all(p <= 1e-3 + 1e-9 for p in per_visit)
        inference_points = _chained_visits_probability(visits) / p_point
        # beta calibrated per visit: lite charges exactly delta_p_i / p_point
        lite_points = sum(per_visit) / p_point
        bound = sum(per_visit) ** 2 / (2 * p_point)
        gap = abs(lite_points - inference_points)
        worst_excess = max(worst_excess, gap - bound)
        assert gap <= bound + 1e-6, (gap, bound)
    # tweaking never increases any S value
    gamma = GammaProfile(window=(2, 14))
    from riskcircuit.pointslite import CoVisitorShare, VisitCostRecord
    ok_tweak = True
    rs = np.random.RandomState(5)
    for _ in range(50):
        visits = []
        for j in range(1, rs.randint(2, 6)):
            shares = []
            cost = 0.0
            for _ in range(rs.randint(0, 4)):
                contribution = float(rs.rand())
                shares.append(CoVisitorShare(
                    rs.choice(["alice", "carol", "dan"]), "default",
                    float(rs.rand() * 10), contribution))
                cost += contribution
            visits.append(VisitCostRecord("bob", j, "v",
                                          int(rs.randint(2, 14)) * 86400, 1.0,
                                          "default", cost, shares))
        h = PersonHistory("bob", -50 * 86400, 1e-3, visits)
        plain = s_value(h, gamma, 20 * 86400, p_point)
        tweaked = s_value(h, gamma, 20 * 86400, p_point, exclude_with="alice")
        ok_tweak = ok_tweak and tweaked <= plain + 1e-12
    report(8, worst_excess <= 1e-6 and ok_tweak,
           f"lite vs engine gap-bound slack = {max(0.0, worst_excess):.3g}; "
           f"tweaks never increase S: {ok_tweak}")


def test_criterion_9_two_pathway_update():
    ps = []
    for stage in (0, 1, 2):
        doc, subject, models, policy = two_pathway_setup(stage)
        ps.append(infection_probability(doc, subject, models, policy).p_infected)
    oracle_gap = 0.0
    for stage in (1, 2):
        doc, subject, models, policy = two_pathway_setup(stage)
        p = infection_probability(doc, subject, models, policy).p_infected
        num = brute_force_circuit_probability(
            close_fragment(doc, policy,
                           interrogations=[(SystemRef(A, "n", 2), "O_1", 1)]),
            models, policy)
        den = brute_force_circuit_probability(close_fragment(doc, policy),
                                              models, policy)
        oracle_gap = max(oracle_gap, abs(p - num / den))
    ok = ps[1] > ps[0] and ps[2] < ps[1] and oracle_gap < 1e-9
    report(9, ok, f"p rises {ps[0]:.4f} -> {ps[1]:.4f} then falls to {ps[2]:.4f}; "
                  f"max oracle gap {oracle_gap:.3g}")


@pytest.mark.slow
def test_criterion_10_simulator_levers():
    started = time.perf_counter()
    base = dict(population=2000, venues=50, days=60, visits_per_day=0.8,
                visit_hours=2, initial_infected=20, lambda_direct=0.06,
                lambda_indirect=0.01, deposit=0.05, decay=0.2)
    wins = losses = 0
    tight_rates = []
    free_rates = []
    for seed in range(1, 21):
        free = run(Scenario(seed=seed, allowance=math.inf, **base))
        tight = run(Scenario(seed=seed, allowance=0.02, **base))
        free_rates.append(free.attack_rate)
        tight_rates.append(tight.attack_rate)
        if tight.attack_rate < free.attack_rate:
            wins += 1
        elif tight.attack_rate > free.attack_rate:
            losses += 1
    p_value = sign_test_p(wins, losses)
    median_free = float(np.median(free_rates))
    median_tight = float(np.median(tight_rates))

    # service-backed event log replays bit-for-bit
    sc = Scenario(population=25, venues=4, days=6, seed=9, service_backed=True)
    run(sc)
    from test_sim import _rebuild_core
    core = _rebuild_core(sc)
    replay_ok = LedgerCore.replay(list(core.sink)).state_digest() \
        == core.state_digest()
    elapsed = time.perf_counter() - started
    ok = (median_tight < median_free and p_value < 0.05 and elapsed < 300.0
          and replay_ok)
    report(10, ok,
           f"median attack rate {median_tight:.3f} (constrained) vs "
           f"{median_free:.3f} (unlimited), sign test p = {p_value:.2g}, "
           f"replay bit-for-bit: {replay_ok}, runtime {elapsed:.0f}s")
