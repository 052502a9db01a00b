import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinopt.osed import (
    MembershipMissingError,
    OseSet,
    TooLargeError,
    brute_force_osed,
    osed_all,
    osed_reduced,
    osed_table,
    root_osed_after_combine,
)
from spinopt.spine import GeounitId, build_spine, combine_siblings

from conftest import random_indicator, random_oses, random_spine
from oracles import exhaustive_signed_selection


def three_block_spine():
    return build_spine([1, 3], {(2, 1): 1, (2, 2): 1, (2, 3): 1})


def test_ose_matching_a_geounit_has_distance_one():
    s = build_spine([1, 2, 4], {(2, 1): 1, (2, 2): 1, (3, 1): 1, (3, 2): 1, (3, 3): 2, (3, 4): 2})
    lo, hi = s.block_range(GeounitId(2, 1))
    oses = OseSet.from_block_indices(s, {"unit": range(lo, hi)})
    assert osed_all(s, oses) == {"unit": 1}


def test_empty_ose_has_distance_zero():
    s = three_block_spine()
    oses = OseSet.from_block_indices(s, {"empty": []})
    assert osed_all(s, oses) == {"empty": 0}


def test_single_block_ose(figure1_spine):
    oses = OseSet.from_block_indices(figure1_spine, {"one": [1]})
    assert osed_all(figure1_spine, oses) == {"one": 1}
    assert brute_force_osed(figure1_spine, [1, 0]) == 1


def test_complement_of_one_block_in_three_block_root():
    s = three_block_spine()
    assert brute_force_osed(s, [0, 1, 1]) == 2  # root minus one block
    oses = OseSet.from_block_indices(s, {"c": [2, 3]})
    assert osed_all(s, oses) == {"c": 2}


def test_reducers():
    s = build_spine([1, 4], {(2, u): 1 for u in range(1, 5)})
    oses = OseSet.from_block_indices(s, {"a": [1, 3], "b": [2]})
    dists = osed_all(s, oses)
    assert sorted(dists.values(), reverse=True) == osed_reduced(s, oses, "sorted_descending")
    assert osed_reduced(s, oses, "max") == max(dists.values())
    assert osed_reduced(s, oses, "mean") == pytest.approx(np.mean(list(dists.values())))
    with pytest.raises(ValueError):
        osed_reduced(s, oses, "median")


def test_membership_missing():
    s = three_block_spine()
    with pytest.raises(MembershipMissingError):
        OseSet.from_block_indices(s, {"bad": [7]})
    other = build_spine([1, 2], {(2, 1): 1, (2, 2): 1}, labels={(2, 1): "x", (2, 2): "y"})
    oses = OseSet.from_block_indices(s, {"a": [1]})
    with pytest.raises(MembershipMissingError):
        oses.indicator(other, "a")


def test_brute_force_size_cap():
    sizes = [1, 13, 13]
    pm = {(2, u): 1 for u in range(1, 14)} | {(3, u): u for u in range(1, 14)}
    s = build_spine(sizes, pm)
    with pytest.raises(TooLargeError):
        brute_force_osed(s, [1] + [0] * 12)


def test_brute_force_validates_indicator(figure1_spine):
    with pytest.raises(ValueError):
        brute_force_osed(figure1_spine, [1])
    with pytest.raises(ValueError):
        brute_force_osed(figure1_spine, [2, 0])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_recursion_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    s = random_spine(rng)
    ind = random_indicator(rng, s.num_blocks)
    oses = OseSet.from_block_indices(s, {"k": [j + 1 for j in range(s.num_blocks) if ind[j]]})
    assert osed_all(s, oses)["k"] == brute_force_osed(s, ind)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_milp_matches_plain_enumeration_on_tiny_spines(seed):
    """The two oracle search paths agree where both are feasible."""
    from spinopt import osed as osed_mod

    rng = np.random.default_rng(seed)
    s = random_spine(rng, max_levels=3, max_blocks=5, max_units=9)
    ind = random_indicator(rng, s.num_blocks)
    rows = osed_mod._geounit_rows(s)
    target = np.asarray(ind)
    assert osed_mod._milp_min_selection(rows, target) == exhaustive_signed_selection(s, ind)
    assert osed_mod._exhaustive_min_selection(rows, target) == exhaustive_signed_selection(s, ind)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_table_pair_gap_at_most_one(seed):
    rng = np.random.default_rng(seed)
    s = random_spine(rng)
    oses = random_oses(rng, s)
    table = osed_table(s, oses)
    for c, cc in zip(table.c, table.c_comp):
        assert np.abs(c - cc).max() <= 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_complement_symmetry(seed):
    rng = np.random.default_rng(seed)
    s = random_spine(rng)
    ind = random_indicator(rng, s.num_blocks)
    member = [j + 1 for j in range(s.num_blocks) if ind[j]]
    non_member = [j + 1 for j in range(s.num_blocks) if not ind[j]]
    oses = OseSet.from_block_indices(s, {"k": member, "comp": non_member})
    table = osed_table(s, oses)
    c_k, cc_k = table.pair("k", GeounitId(1, 1))
    c_c, cc_c = table.pair("comp", GeounitId(1, 1))
    assert c_k == cc_c and cc_k == c_c


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_refinement_never_increases_distance(seed):
    """Adding an intermediate level that groups two siblings only adds
    composition options."""
    from spinopt.spine import _spine_from_tree, _tree_from_spine, _Node

    rng = np.random.default_rng(seed)
    s = random_spine(rng, max_levels=3, max_blocks=10, max_units=20)
    parent = None
    for (l, u), node in s.units():
        if l < s.num_levels and len(node.children) >= 2:
            parent = GeounitId(l, u)
    if parent is None:
        return
    root, lookup = _tree_from_spine(s)

    def wrap(node, at_level):
        # push every subtree down one level; group the chosen pair under one unit
        if at_level == parent.level:
            tgt = lookup[parent]
            new_kids = []
            if node is tgt:
                grouped = _Node("grp", node.children[:2])
                rest = [_Node(f"w:{k.label}", [k]) for k in node.children[2:]]
                node.children = [grouped] + rest
                return
            node.children = [_Node(f"w:{k.label}", [k]) for k in node.children]
            return
        for kid in node.children:
            wrap(kid, at_level + 1)

    wrap(root, 1)
    refined, _ = _spine_from_tree(root, s.num_levels + 1)
    refined.validate()
    ind = random_indicator(rng, s.num_blocks)
    members = [j + 1 for j in range(s.num_blocks) if ind[j]]
    before = osed_all(s, OseSet.from_block_indices(s, {"k": members}))["k"]
    after_oses = OseSet.from_labels(refined, {"k": [s.block_labels[j - 1] for j in members]})
    after = osed_all(refined, after_oses)["k"]
    assert after <= before


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_incremental_combine_matches_full_recompute(seed):
    rng = np.random.default_rng(seed)
    s = random_spine(rng, min_levels=3)
    oses = random_oses(rng, s)
    pair = None
    for (l, u), node in s.units():
        if 1 <= l < s.num_levels - 1 and len(node.children) >= 2:
            pair = (GeounitId(l + 1, node.children[0]), GeounitId(l + 1, node.children[1]))
            break
    if pair is None or pair[0].level == 1:
        return
    table = osed_table(s, oses)
    predicted = root_osed_after_combine(s, table, *pair)
    merged = combine_siblings(s, *pair)
    assert predicted == osed_all(merged, oses)
