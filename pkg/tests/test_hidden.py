import numpy as np
import pytest

from riskcircuit.hidden import (ExtendedState, SystemKind, build_space,
                                extend_with_position, null_state,
                                proposition_mask, semantics)


class TestSimplifiedTables:
    def test_registered_has_nine_states_in_table_order(self):
        space = build_space(SystemKind.REGISTERED_INDIVIDUAL, "simplified")
        assert space.total_cardinality == 9
        assert space.state_label(0) == "uninfected, not contagious, no symptoms"
        assert space.state_label(4) == "infected, contagious, no symptoms"
        assert space.state_label(8) == "deceased"

    def test_unregistered_has_two_states(self):
        space = build_space(SystemKind.UNREGISTERED_INDIVIDUAL, "simplified")
        assert space.total_cardinality == 2
        assert space.state_label(0) == "not contagious"
        assert space.state_label(1) == "contagious"

    @pytest.mark.parametrize("kind", [SystemKind.MANAGED_VENUE, SystemKind.UNMANAGED_VENUE])
    def test_venues_have_five_levels(self, kind):
        space = build_space(kind, "simplified")
        assert space.total_cardinality == 5
        assert space.state_label(0) == "safe"
        assert space.state_label(4) == "very risky"

    def test_projections_agree_with_table_labels(self):
        space = build_space(SystemKind.REGISTERED_INDIVIDUAL, "simplified")
        sem = semantics(space)
        for i in range(9):
            parts = [p.strip() for p in space.state_label(i).split(",")]
            assert sem.infected[i] == (parts[0] == "infected")
            assert (sem.contagiousness[i] > 0) == ("contagious" in parts)
            assert (sem.symptom_levels[0][i] > 0) == (parts[-1] == "symptoms")
            assert sem.alive[i] == (parts[0] != "deceased")


class TestFactoredSpaces:
    def test_product_cardinality(self):
        space = build_space(SystemKind.REGISTERED_INDIVIDUAL, "factored",
                            L_I=1, L_C=1, L_S=1, symptom_levels=[1])
        assert space.total_cardinality == 2 * 2 * 2 * 2 * 2

    def test_factor_order_is_fixed(self):
        space = build_space(SystemKind.REGISTERED_INDIVIDUAL, "factored",
                            L_I=2, L_C=1, L_S=1, symptom_levels=[1, 3])
        assert [f.name for f in space.factors] == ["I", "C", "S", "s_1", "s_2", "A"]

    def test_unregistered_rejects_extra_factors(self):
        with pytest.raises(ValueError):
            build_space(SystemKind.UNREGISTERED_INDIVIDUAL, "factored", L_I=1)

    def test_unregistered_single_contagiousness_factor(self):
        space = build_space(SystemKind.UNREGISTERED_INDIVIDUAL, "factored", L_C=3)
        assert space.total_cardinality == 4
        assert [f.name for f in space.factors] == ["C"]

    def test_venue_harboured_sources(self):
        space = build_space(SystemKind.MANAGED_VENUE, "factored",
                            harboured_levels=[2, 3])
        assert space.total_cardinality == 3 * 4
        sem = semantics(space)
        assert sem.harbour_level[space.encode((2, 3))] == 5.0

    def test_rejects_negative_bounds(self):
        with pytest.raises(ValueError):
            build_space(SystemKind.REGISTERED_INDIVIDUAL, "factored", L_I=-1)


class TestEncodeDecode:
    @pytest.mark.parametrize("kind,profile,params", [
        (SystemKind.REGISTERED_INDIVIDUAL, "simplified", {}),
        (SystemKind.UNREGISTERED_INDIVIDUAL, "simplified", {}),
        (SystemKind.MANAGED_VENUE, "simplified", {}),
        (SystemKind.REGISTERED_INDIVIDUAL, "factored",
         dict(L_I=2, L_C=2, L_S=1, symptom_levels=[2])),
        (SystemKind.MANAGED_VENUE, "factored", dict(harboured_levels=[3, 2, 1])),
    ])
    def test_roundtrip_identity_exhaustive(self, kind, profile, params):
        space = build_space(kind, profile, **params)
        for i in range(space.total_cardinality):
            assert space.encode(space.decode(i)) == i

    def test_encode_rejects_out_of_range(self):
        space = build_space(SystemKind.REGISTERED_INDIVIDUAL, "simplified")
        with pytest.raises(ValueError):
            space.encode((9,))
        with pytest.raises(ValueError):
            space.decode(9)


class TestPositionExtension:
    def test_grid_multiplies_cardinality(self):
        space = build_space(SystemKind.REGISTERED_INDIVIDUAL, "simplified")
        assert extend_with_position(space, 5).total_cardinality == 45

    def test_grid_one_is_identity(self):
        space = build_space(SystemKind.MANAGED_VENUE, "simplified")
        ext = extend_with_position(space, 1)
        assert ext is space
        assert [f.labels for f in ext.factors] == [f.labels for f in space.factors]

    def test_flat_index_formula(self):
        space = build_space(SystemKind.UNREGISTERED_INDIVIDUAL, "simplified")
        ext = extend_with_position(space, 3)
        assert ext.encode((1, 2)) == 5
        assert ExtendedState(1, 2).flat(3) == 5
        assert ExtendedState.from_flat(5, 3) == ExtendedState(1, 2)

    def test_bijective_with_product(self):
        space = build_space(SystemKind.REGISTERED_INDIVIDUAL, "simplified")
        seen = set()
        for b in range(9):
            for q in range(4):
                seen.add(ExtendedState(b, q).flat(4))
        assert seen == set(range(36))

    def test_rejects_zero_grid(self):
        space = build_space(SystemKind.REGISTERED_INDIVIDUAL, "simplified")
        with pytest.raises(ValueError):
            extend_with_position(space, 0)


class TestSerialization:
    def test_space_dict_roundtrip(self):
        from riskcircuit.hidden import HiddenSpace

        space = build_space(SystemKind.REGISTERED_INDIVIDUAL, "factored",
                            L_I=1, L_C=2, L_S=1, symptom_levels=[1])
        again = HiddenSpace.from_dict(space.to_dict())
        assert again.total_cardinality == space.total_cardinality
        assert [f.name for f in again.factors] == [f.name for f in space.factors]


class TestPropositions:
    def test_infected_mask_matches_table(self):
        space = build_space(SystemKind.REGISTERED_INDIVIDUAL, "simplified")
        np.testing.assert_array_equal(
            proposition_mask(space, "O_1", 1),
            [0, 0, 1, 1, 1, 1, 0, 0, 0])
        np.testing.assert_array_equal(
            proposition_mask(space, "O_1", 0),
            [1, 1, 0, 0, 0, 0, 1, 1, 1])

    def test_state_index_interrogation(self):
        space = build_space(SystemKind.REGISTERED_INDIVIDUAL, "simplified")
        mask = proposition_mask(space, "O_2", 3)
        assert mask[3] == 1.0 and mask.sum() == 1.0

    def test_null_state_is_inert(self):
        space = build_space(SystemKind.REGISTERED_INDIVIDUAL, "simplified")
        sem = semantics(space)
        ns = null_state(space)
        assert sem.susceptibility[ns] == 0 and sem.contagiousness[ns] == 0
