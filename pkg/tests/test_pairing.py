import numpy as np
import pytest

from attnguide.attention import AttentionMaps
from attnguide.errors import ConfigError, DimensionError, PairingError
from attnguide.numerics import Node, Tape, Tensor, seeded_rng
from attnguide.pairing import (
    TokenGroup,
    TokenGroups,
    build_features,
    enumerate_pairs,
    pairable,
)


def _random_maps(rng, h=2, w=2, l=8, timestep=0):
    raw = rng.random((h, w, l)) + 0.05
    return AttentionMaps(Tensor(raw / raw.sum(axis=2, keepdims=True)), timestep=timestep)


def test_duplicate_token_across_groups_is_rejected():
    with pytest.raises(ConfigError):
        TokenGroups((TokenGroup(1, (2,)), TokenGroup(2, ())))


def test_negative_token_index_rejected():
    with pytest.raises(ConfigError):
        TokenGroups((TokenGroup(-1, ()),))


def test_out_of_range_token_is_config_error(two_pair_groups):
    rng = seeded_rng(0)
    small = _random_maps(rng, l=3)  # groups reference tokens up to 5
    with pytest.raises(ConfigError):
        build_features(small, None, two_pair_groups)


def test_two_pair_groups_give_eight_features(two_pair_groups):
    rng = seeded_rng(1)
    a_t = _random_maps(rng, timestep=3)
    a_prev = _random_maps(rng, timestep=4)
    features = build_features(a_t, a_prev, two_pair_groups)
    assert len(features) == 8
    assert sorted(f.label for f in features) == [0, 0, 0, 0, 1, 1, 1, 1]
    assert {f.source_timestep for f in features} == {3, 4}
    assert all(f.detached == (f.source_timestep == 4) for f in features)


def test_minimal_single_token_group():
    rng = seeded_rng(2)
    a_t = _random_maps(rng, timestep=0)
    a_prev = _random_maps(rng, timestep=1)
    features = build_features(a_t, a_prev, TokenGroups((TokenGroup(0),)))
    assert len(features) == 2
    assert features[0].label == features[1].label == 0


def test_identical_timesteps_duplicate_feature_values(two_pair_groups):
    a_t = _random_maps(seeded_rng(3))
    a_prev = AttentionMaps(a_t.maps, timestep=a_t.timestep + 1)
    features = build_features(a_t, a_prev, two_pair_groups)
    for cur, prev in zip(features[0::2], features[1::2]):
        np.testing.assert_array_equal(cur.map.data, prev.map.data)
        assert cur.token == prev.token


def test_shape_mismatch_between_timesteps(two_pair_groups):
    rng = seeded_rng(4)
    with pytest.raises(DimensionError):
        build_features(_random_maps(rng, h=2), _random_maps(rng, h=3), two_pair_groups)


def test_current_features_stay_differentiable(two_pair_groups):
    rng = seeded_rng(5)
    a_prev = _random_maps(rng, timestep=1)
    tape = Tape()
    a_t = AttentionMaps(tape.variable(a_prev.values()), timestep=0)
    features = build_features(a_t, a_prev, two_pair_groups)
    assert all(isinstance(f.map, Node) for f in features if not f.detached)
    assert all(isinstance(f.map, Tensor) for f in features if f.detached)


def test_pair_enumeration_on_eight_features(two_pair_groups):
    rng = seeded_rng(6)
    features = build_features(_random_maps(rng, timestep=0),
                              _random_maps(rng, timestep=1), two_pair_groups)
    pairs = enumerate_pairs(features)
    assert len(pairs) == 24  # each of 8 anchors pairs with 3 same-label partners
    for entry in pairs.entries:
        assert entry.anchor is not entry.positive
        assert entry.anchor.label == entry.positive.label
        assert len(entry.negatives) == 4
        assert all(n.label != entry.anchor.label for n in entry.negatives)


def test_pair_enumeration_single_token_groups():
    groups = TokenGroups((TokenGroup(0), TokenGroup(1)))
    rng = seeded_rng(7)
    features = build_features(_random_maps(rng, timestep=0),
                              _random_maps(rng, timestep=1), groups)
    pairs = enumerate_pairs(features)
    assert len(pairs) == 4
    for entry in pairs.entries:
        assert len(entry.negatives) == 2


def test_single_label_has_no_negatives():
    rng = seeded_rng(8)
    features = build_features(_random_maps(rng, timestep=0), _random_maps(rng, timestep=1),
                              TokenGroups((TokenGroup(0, (1,)),)))
    with pytest.raises(PairingError, match="no negatives"):
        enumerate_pairs(features)


def test_lonely_label_has_no_positive_partner():
    groups = TokenGroups((TokenGroup(0), TokenGroup(1, (2,))))
    features = build_features(_random_maps(seeded_rng(9), timestep=0), None, groups)
    with pytest.raises(PairingError, match="no positive partner"):
        enumerate_pairs(features)


def _brute_force_counts(labels):
    ordered_positive = 0
    negatives_per_anchor = []
    for i, li in enumerate(labels):
        negs = sum(1 for lj in labels if lj != li)
        negatives_per_anchor.append(negs)
        for j, lj in enumerate(labels):
            if i != j and li == lj:
                ordered_positive += 1
    return ordered_positive, negatives_per_anchor


def test_pair_counts_match_brute_force_on_random_structures():
    rng = seeded_rng(10)
    for _ in range(50):
        n_groups = int(rng.integers(2, 4))
        sizes = [int(rng.integers(1, 4)) for _ in range(n_groups)]
        tokens = iter(range(sum(sizes)))
        groups = TokenGroups(tuple(
            TokenGroup(next(tokens), tuple(next(tokens) for _ in range(size - 1)))
            for size in sizes
        ))
        l = sum(sizes)
        with_prev = bool(rng.integers(0, 2))
        a_t = _random_maps(rng, l=l, timestep=0)
        a_prev = _random_maps(rng, l=l, timestep=1) if with_prev else None
        features = build_features(a_t, a_prev, groups)
        labels = [f.label for f in features]
        expected_pos, expected_negs = _brute_force_counts(labels)

        per_group = [labels.count(i) for i in range(n_groups)]
        assert expected_pos == sum(g * (g - 1) for g in per_group)

        if len(set(labels)) < 2 or min(per_group) < 2:
            with pytest.raises(PairingError):
                enumerate_pairs(features)
            continue
        pairs = enumerate_pairs(features)
        assert len(pairs) == expected_pos
        total = len(features)
        for entry in pairs.entries:
            g = per_group[entry.anchor.label]
            assert len(entry.negatives) == total - g


def test_no_feature_is_both_positive_and_negative_for_one_anchor(two_pair_groups):
    rng = seeded_rng(11)
    features = build_features(_random_maps(rng, timestep=0),
                              _random_maps(rng, timestep=1), two_pair_groups)
    for entry in enumerate_pairs(features).entries:
        assert entry.positive not in entry.negatives


def test_relabelling_groups_permutes_nothing_essential(two_pair_groups):
    rng = seeded_rng(12)
    a_t = _random_maps(rng, timestep=0)
    a_prev = _random_maps(rng, timestep=1)
    swapped = TokenGroups(tuple(reversed(two_pair_groups.groups)))
    base = enumerate_pairs(build_features(a_t, a_prev, two_pair_groups))
    other = enumerate_pairs(build_features(a_t, a_prev, swapped))
    assert len(base) == len(other)

    def signature(pairset):
        return sorted(
            (e.anchor.token, e.anchor.source_timestep,
             e.positive.token, e.positive.source_timestep,
             tuple(sorted((n.token, n.source_timestep) for n in e.negatives)))
            for e in pairset.entries
        )

    assert signature(base) == signature(other)


def test_pairable_predicate():
    two_singletons = TokenGroups((TokenGroup(0), TokenGroup(1)))
    assert not pairable(two_singletons, with_prev=False)
    assert pairable(two_singletons, with_prev=True)
    one_group = TokenGroups((TokenGroup(0, (1,)),))
    assert not pairable(one_group, with_prev=True)
    pairs = TokenGroups((TokenGroup(0, (1,)), TokenGroup(2, (3,))))
    assert pairable(pairs, with_prev=False)
