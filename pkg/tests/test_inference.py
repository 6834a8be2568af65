import math

import numpy as np
import pytest

from riskcircuit.circuit import (CircuitBuilder, Flag, SystemId, SystemKind,
                                 SystemRef, classify)
from riskcircuit.hidden import build_space
from riskcircuit.inference import (ClosurePolicy, SubjectNotOpen, ZeroEvidence,
                                   brute_force_circuit_probability,
                                   circuit_probability, close_fragment,
                                   infection_probability, points_cost, state_of)
from riskcircuit.rates import OutcomeSpec

from conftest import make_model

A = SystemKind.REGISTERED_INDIVIDUAL
B = SystemKind.UNREGISTERED_INDIVIDUAL
X = SystemKind.MANAGED_VENUE
Y = SystemKind.UNMANAGED_VENUE

TINY = build_space(A, "factored", L_I=1, L_C=1, L_S=0, include_alive=False)
# four states over (infection, contagiousness): 0=(0,0) 1=(0,1) 2=(1,0) 3=(1,1)


def tiny_prior(p_infected, contagious_fraction=0.5):
    p = p_infected
    return (1 - p, 0.0, p * (1 - contagious_fraction), p * contagious_fraction)


class TestCloseFragment:
    def _baf_fragment(self):
        b = CircuitBuilder()
        v42 = b.system(X, "42")
        v39 = b.system(X, "39")
        v97 = b.system(Y, "97")
        b7 = b.system(B, "7")
        a14 = b.system(A, "14", start_occurrence=5)
        a26 = b.system(A, "26", start_occurrence=2)
        b.box(v42, (0, 10), [(b7, 0, 10, "default"), (a14, 0, 10, "default")],
              flags=[Flag("outcome", "symptom", "S_2", 3, 5,
                          (SystemRef(A, "14", 5),))], box_id="A")
        b.box(v39, (10, 20), [(a14, 10, 20, "default")], box_id="Bv")
        b.box(v97, (20, 30), [(a26, 20, 30, "default"), (a14, 20, 30, "default")],
              box_id="C")
        return b.build()

    def test_baf_closure_pattern(self):
        frag = self._baf_fragment()
        policy = ClosurePolicy()
        doc = close_fragment(frag, policy,
                             interrogations=[(SystemRef(A, "14", 8), "O_2", 3)])
        assert classify(doc).category == "circuit"
        starts = {(str(t.system), t.closure) for t in doc.terminals if t.end == "start"}
        assert starts == {
            ("managed_venue:42", "R"), ("unregistered_individual:7", "U"),
            ("registered_individual:14", "R"), ("managed_venue:39", "R"),
            ("unmanaged_venue:97", "U"), ("registered_individual:26", "R"),
        }
        finishes = {(str(t.system), t.closure) for t in doc.terminals
                    if t.end == "finish"}
        assert ("registered_individual:14", "O") in finishes
        assert sum(1 for t in doc.terminals
                   if t.end == "finish" and t.closure == "ignore") == 5
        ont = [t for t in doc.terminals if t.closure == "O"]
        assert ont[0].name == "O_2" and ont[0].value == 3

    def test_idempotent_on_circuits(self):
        frag = self._baf_fragment()
        doc = close_fragment(frag, ClosurePolicy())
        again = close_fragment(doc, ClosurePolicy())
        assert len(again.terminals) == len(doc.terminals)

    def test_deterministic_preparation_closes_to_one(self):
        b = CircuitBuilder()
        v = b.system(X, "1")
        a = b.system(A, "2")
        b.box(v, (0, 3600), [(a, 0, 3600, "default")])
        b.close_start(a, "P")
        b.close_start(v, "I")
        doc = close_fragment(b.build(), ClosurePolicy())
        p = circuit_probability(doc, {"1": make_model("1", lambda_direct=0.3,
                                                      rho=0.1, deposit=0.2,
                                                      decay=0.1)})
        assert p == pytest.approx(1.0, abs=1e-9)


class TestCircuitProbability:
    def test_deterministic_circuit_is_one(self):
        b = CircuitBuilder()
        v = b.system(X, "5")
        a1 = b.system(A, "1")
        a2 = b.system(A, "2")
        b.box(v, (0, 3600), [(a1, 0, 3600, "default"), (a2, 600, 1800, "default")])
        b.box(v, (3600, 7200), [(a1, 3600, 7200, "default")])
        doc = close_fragment(b.build(), ClosurePolicy(prevalence=0.2))
        model = make_model("5", lambda_direct=1e-4, lambda_indirect=1e-5,
                           rho=1e-4, deposit=1e-4, decay=1e-3)
        assert circuit_probability(doc, {"5": model}) == pytest.approx(1.0, abs=1e-9)

    def test_disjoint_parts_factorize(self):
        def one_part(vid, aid, lam):
            b = CircuitBuilder()
            v = b.system(X, vid)
            a = b.system(A, aid)
            u = b.system(B, "u" + aid)
            box = b.box(v, (0, 1), [(a, 0, 1, "default"), (u, 0, 1, "default")])
            doc = b.build()
            return close_fragment(doc, ClosurePolicy(prevalence=0.3)), box

        doc1, _ = one_part("1", "10", 0.5)
        doc2, _ = one_part("2", "20", 0.5)
        # interrogate both subjects so the probabilities are not trivially 1
        doc1.terminals = [t for t in doc1.terminals
                          if not (t.system.id == "10" and t.end == "finish")]
        doc1.terminals.append(
            __import__("riskcircuit.circuit", fromlist=["TerminalClosure"])
            .TerminalClosure(SystemId(A, "10"), 2, "finish", "O", "O_1", 0))
        models = {"1": make_model("1", lambda_direct=0.5),
                  "2": make_model("2", lambda_direct=0.5)}
        p1 = circuit_probability(doc1, models)
        p2 = circuit_probability(doc2, models)
        merged = __import__("copy").deepcopy(doc1)
        merged.spaces.update(doc2.spaces)
        merged.systems.update(doc2.systems)
        for box in doc2.boxes:
            box = __import__("copy").deepcopy(box)
            box.id = "z-" + box.id
            merged.boxes.append(box)
        merged.wires += doc2.wires
        merged.terminals += doc2.terminals
        p_joint = circuit_probability(merged, models)
        assert abs(p_joint - p1 * p2) < 1e-12

    def test_false_positive_rate_formula_and_oracle(self):
        mu, f, dur = 0.8, 0.07, 1.0
        b = CircuitBuilder()
        b.space("tiny", TINY)
        b.space("venue", build_space(X, "factored", harboured_levels=[1]))
        v = b.system(X, "9", "venue")
        a = b.system(A, "14", "tiny")
        box = b.box(v, (0, 1), [(a, 0, 1, "default")],
                    flags=[Flag("outcome", "test", "T", 1, 0,
                                (SystemRef(A, "14", 1),))])
        doc = b.build()
        policy = ClosurePolicy(prevalence=0.0,
                               system_priors={a: (1.0, 0.0, 0.0, 0.0)})
        model = make_model("9", outcome_rates={
            "T": OutcomeSpec("test", rate=mu, false_positive=f, sensitivity=0.9)})
        closed = close_fragment(doc, policy)
        p = circuit_probability(closed, {"9": model}, policy)
        assert p == pytest.approx(f * (1 - math.exp(-mu * dur)), abs=1e-6)
        brute = brute_force_circuit_probability(closed, {"9": model}, policy)
        assert abs(p - brute) < 1e-9


class TestStateOf:
    def test_fresh_initialisation_passthrough(self):
        b = CircuitBuilder()
        b.space("tiny", TINY)
        v = b.system(X, "9")
        a = b.system(A, "14", "tiny")
        b.box(v, (0, 1), [(a, 0, 1, "default")])
        doc = b.build()
        policy = ClosurePolicy(system_priors={a: (0.99, 0.0, 0.01, 0.0)})
        state = state_of(doc, a, {"9": make_model("9")}, policy)
        np.testing.assert_allclose(state, [0.99, 0.0, 0.01, 0.0], atol=1e-12)

    def test_contact_mixture_closed_form(self):
        lam, dur, p0 = 0.6, 1.0, 0.2
        b = CircuitBuilder()
        v = b.system(X, "9")
        a = b.system(A, "14")
        u = b.system(B, "7")
        b.box(v, (0, 1), [(a, 0, 1, "default"), (u, 0, 1, "default")])
        doc = b.build()
        policy = ClosurePolicy(
            prevalence=0.0,
            system_priors={
                a: (1 - p0, 0, p0, 0, 0, 0, 0, 0, 0),
                u: (0.0, 1.0),
            })
        state = state_of(doc, a, {"9": make_model("9", lambda_direct=lam)}, policy)
        infected_mass = state[2:6].sum()
        expected = p0 + (1 - p0) * (1 - math.exp(-lam * dur))
        assert infected_mass == pytest.approx(expected, abs=1e-6)

    def test_outcome_free_components_sum_to_one(self):
        b = CircuitBuilder()
        v = b.system(X, "9")
        a = b.system(A, "14")
        u = b.system(B, "7")
        b.box(v, (0, 2), [(a, 0, 2, "default"), (u, 0, 1, "default")])
        doc = b.build()
        policy = ClosurePolicy(prevalence=0.1)
        state = state_of(doc, a, {"9": make_model("9", lambda_direct=0.4, rho=0.2,
                                                  deposit=0.3, decay=0.1,
                                                  lambda_indirect=0.2)}, policy)
        assert state.sum() == pytest.approx(1.0, abs=1e-9)

    def test_subject_must_be_open(self):
        b = CircuitBuilder()
        v = b.system(X, "9")
        a = b.system(A, "14")
        b.box(v, (0, 1), [(a, 0, 1, "default")])
        doc = close_fragment(b.build(), ClosurePolicy())
        with pytest.raises(SubjectNotOpen):
            state_of(doc, SystemId(A, "99"), {"9": make_model("9")})


def two_pathway_setup(stage):
    """n meets m; later m meets m2; then m (and at stage 2, m2) test positive."""
    H = 1
    b = CircuitBuilder()
    b.space("tiny", TINY)
    b.space("venue", build_space(X, "factored", harboured_levels=[1]))
    v1 = b.system(X, "10", "venue")
    v2 = b.system(X, "11", "venue")
    n = b.system(A, "n", "tiny")
    m = b.system(A, "m", "tiny")
    m2 = b.system(A, "m2", "tiny")
    b.box(v1, (0, H), [(n, 0, H, "default"), (m, 0, H, "default")], box_id="V1")
    flags = []
    if stage >= 1:
        flags.append(Flag("outcome", "test", "T", 1, 2 * H,
                          (SystemRef(A, "m", 2),)))
    if stage >= 2:
        flags.append(Flag("outcome", "test", "T", 1, 2 * H,
                          (SystemRef(A, "m2", 1),)))
    b.box(v2, (H, 2 * H), [(m, H, 2 * H, "default"), (m2, H, 2 * H, "default")],
          flags=flags, box_id="V2")
    doc = b.build()
    prior = tiny_prior(0.08, contagious_fraction=0.6)
    policy = ClosurePolicy(
        prevalence=0.0,
        system_priors={n: (1.0, 0.0, 0.0, 0.0), m: prior, m2: prior})
    model = make_model(lambda_direct=1.6, rho=1.2, outcome_rates={
        "T": OutcomeSpec("test", rate=1.5, false_positive=0.01, sensitivity=0.95)})
    models = {"10": model, "11": model}
    return doc, SystemId(A, "n"), models, policy


class TestInfectionProbability:
    def test_no_contacts_keeps_prior(self):
        b = CircuitBuilder()
        b.space("tiny", TINY)
        v = b.system(X, "9")
        a = b.system(A, "14", "tiny")
        b.box(v, (0, 1), [(a, 0, 1, "default")])
        doc = b.build()
        policy = ClosurePolicy(system_priors={a: tiny_prior(0.01)})
        report = infection_probability(doc, a, {"9": make_model("9")}, policy)
        assert report.p_infected == pytest.approx(0.01, abs=1e-9)

    def test_two_pathway_rise_then_fall(self):
        ps = []
        for stage in (0, 1, 2):
            doc, subject, models, policy = two_pathway_setup(stage)
            ps.append(infection_probability(doc, subject, models, policy).p_infected)
        p0, p1, p2 = ps
        assert p1 > p0 + 1e-4
        assert p2 < p1 - 1e-4

    def test_two_pathway_matches_oracle(self):
        for stage in (1, 2):
            doc, subject, models, policy = two_pathway_setup(stage)
            p = infection_probability(doc, subject, models, policy).p_infected
            closed_num = close_fragment(
                doc, policy, interrogations=[(SystemRef(A, "n", 2), "O_1", 1)])
            closed_den = close_fragment(doc, policy)
            num = brute_force_circuit_probability(closed_num, models, policy)
            den = brute_force_circuit_probability(closed_den, models, policy)
            assert abs(p - num / den) < 1e-9

    def test_conditioning_twice_is_certain(self):
        doc, subject, models, policy = two_pathway_setup(0)
        # interrogate n as infected inside the fragment, then ask again
        import copy

        frag = copy.deepcopy(doc)
        frag.boxes[-1].flags.append(Flag("ontological", "ontological", "O_1", 1,
                                         frag.boxes[-1].window[0],
                                         (SystemRef(A, "m", 2),)))
        report_m = infection_probability(frag, SystemId(A, "m"), models, policy)
        assert report_m.p_infected == pytest.approx(1.0, abs=1e-9)

    def test_zero_evidence_raises(self):
        b = CircuitBuilder()
        b.space("tiny", TINY)
        v = b.system(X, "9")
        a = b.system(A, "14", "tiny")
        b.box(v, (0, 1), [(a, 0, 1, "default")],
              flags=[Flag("outcome", "test", "T", 1, 0, (SystemRef(A, "14", 1),))])
        doc = b.build()
        policy = ClosurePolicy(prevalence=0.0,
                               system_priors={a: (1.0, 0.0, 0.0, 0.0)})
        model = make_model("9", outcome_rates={
            "T": OutcomeSpec("test", rate=0.9, false_positive=0.0, sensitivity=1.0)})
        with pytest.raises(ZeroEvidence):
            infection_probability(doc, a, {"9": model}, policy)

    def test_threshold_flags(self):
        doc, subject, models, policy = two_pathway_setup(1)
        report = infection_probability(doc, subject, models, policy,
                                       thresholds={"self_isolate": 1e-6,
                                                   "never": 0.999})
        assert report.thresholds == ["self_isolate"]


class TestPointsCost:
    def _visit_docs(self, lam, dur, companion_prior, extra_dur=None):
        def build(duration):
            b = CircuitBuilder()
            b.space("tiny", TINY)
            v = b.system(X, "9")
            a = b.system(A, "14", "tiny")
            u = b.system(B, "7")
            b.box(v, (0, duration), [(a, 0, duration, "default"),
                                     (u, 0, duration, "default")])
            return b, v, a, u

        b0 = CircuitBuilder()
        b0.space("tiny", TINY)
        v0 = b0.system(X, "9")
        a0 = b0.system(A, "14", "tiny")
        b0.box(v0, (0, dur), [(a0, 0, dur, "default")])
        before = b0.build()
        b1, v, a, u = build(dur)
        after = b1.build()
        priors = {SystemId(A, "14"): (1.0, 0.0, 0.0, 0.0),
                  SystemId(B, "7"): companion_prior}
        policy = ClosurePolicy(prevalence=0.0, system_priors=priors)
        return before, after, SystemId(A, "14"), policy

    def test_empty_venue_costs_nothing(self):
        b = CircuitBuilder()
        b.space("tiny", TINY)
        v = b.system(X, "9")
        a = b.system(A, "14", "tiny")
        b.box(v, (0, 3600), [(a, 0, 3600, "default")])
        after = b.build()
        b2 = CircuitBuilder()
        b2.space("tiny", TINY)
        v2 = b2.system(X, "9")
        a2 = b2.system(A, "14", "tiny")
        b2.box(v2, (0, 1), [(a2, 0, 1, "default")])
        before = b2.build()
        policy = ClosurePolicy(prevalence=0.0,
                               system_priors={SystemId(A, "14"): (1, 0, 0, 0)})
        pts = points_cost(before, after, SystemId(A, "14"),
                          {"9": make_model("9", lambda_direct=0.5)}, 1e-4,
                          policy=policy)
        assert pts == 0.0

    def test_known_contact_value(self):
        lam_t = 0.001
        before, after, subject, policy = self._visit_docs(lam_t, 1, (0.0, 1.0))
        models = {"9": make_model("9", lambda_direct=lam_t)}
        pts = points_cost(before, after, subject, models, 1e-4, policy=policy)
        assert pts == pytest.approx((1 - math.exp(-lam_t)) / 1e-4, rel=1e-4)
        assert pts == pytest.approx(9.995, abs=1e-2)

    def test_actual_at_least_predicted_for_longer_stay(self):
        lam = 0.3
        before, after_short, subject, policy = self._visit_docs(lam, 1, (0.0, 1.0))
        _, after_long, _, _ = self._visit_docs(lam, 2, (0.0, 1.0))
        models = {"9": make_model("9", lambda_direct=lam)}
        predicted = points_cost(before, after_short, subject, models, 1e-4,
                                policy=policy)
        actual = points_cost(before, after_long, subject, models, 1e-4,
                             mode="actual", policy=policy, frag_cap=after_long)
        assert actual >= predicted

    def test_negative_delta_floors_at_zero(self):
        lam = 0.4
        before, after, subject, policy = self._visit_docs(lam, 1, (1.0, 0.0))
        models = {"9": make_model("9", lambda_direct=lam)}
        # companion certainly non-contagious: delta is zero, never negative
        pts = points_cost(before, after, subject, models, 1e-4, policy=policy)
        assert pts == 0.0

    def test_invariant_under_disjoint_boxes(self):
        lam = 0.3
        before, after, subject, policy = self._visit_docs(lam, 1, (0.0, 1.0))
        models = {"9": make_model("9", lambda_direct=lam),
                  "77": make_model("77", lambda_direct=0.8)}
        base = points_cost(before, after, subject, models, 1e-4, policy=policy)

        def with_bystanders(doc):
            import copy

            out = copy.deepcopy(doc)
            b = CircuitBuilder()
            b.doc = out
            v = b.system(X, "77")
            c = b.system(A, "99")
            d = b.system(B, "98")
            b._next_occ[v] = b._next_occ[c] = b._next_occ[d] = 1
            b.box(v, (0, 2), [(c, 0, 2, "default"), (d, 0, 2, "default")],
                  box_id="bystander")
            return out

        noisy = points_cost(with_bystanders(before), with_bystanders(after),
                            subject, models, 1e-4, policy=policy)
        assert noisy == pytest.approx(base, abs=1e-9)


class TestCoarseVsFine:
    def test_fine_grained_average_matches_coarse(self):
        """Sampling the extra outcome information from the engine's own
        distribution, the ensemble mean of the fine-grained probability
        matches the coarse probability within Monte-Carlo error."""
        rng = np.random.default_rng(17)
        lam = 0.8
        spec = OutcomeSpec("test", rate=1.2, false_positive=0.1, sensitivity=0.9)

        def build(flag_value):
            b = CircuitBuilder()
            b.space("tiny", TINY)
            v = b.system(X, "9")
            a = b.system(A, "14", "tiny")
            u = b.system(B, "7")
            flags = []
            if flag_value is not None:
                flags.append(Flag("outcome", "test", "T", flag_value, 0,
                                  (SystemRef(B, "7", 1),)))
            b.box(v, (0, 1), [(a, 0, 1, "default"), (u, 0, 1, "default")],
                  flags=flags)
            doc = b.build()
            policy = ClosurePolicy(prevalence=0.0, system_priors={
                a: (1.0, 0.0, 0.0, 0.0), u: (0.6, 0.4)})
            models = {"9": make_model("9", lambda_direct=lam,
                                      outcome_rates={"T": spec})}
            return doc, a, models, policy

        # outcome distribution and per-outcome conditional probabilities
        weights = []
        fine = []
        for v in range(2):
            doc, a, models, policy = build(v)
            closed = close_fragment(doc, policy)
            weights.append(circuit_probability(closed, models, policy))
            fine.append(infection_probability(doc, a, models, policy).p_infected)
        weights = np.array(weights)
        assert weights.sum() == pytest.approx(1.0, abs=1e-9)
        assert abs(fine[1] - fine[0]) > 0.05  # the reading is informative
        doc, a, models, policy = build(None)
        coarse = infection_probability(doc, a, models, policy).p_infected

        n = 4000
        draws = rng.choice(2, size=n, p=weights / weights.sum())
        samples = np.array(fine)[draws]
        mc_mean = samples.mean()
        sigma = samples.std(ddof=1) / math.sqrt(n)
        assert abs(mc_mean - coarse) <= 3 * sigma + 1e-9
