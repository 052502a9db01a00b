from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinopt.allocation import Allocation
from spinopt.bypass import pareto_pass
from spinopt.fileio import (
    CrossRefError,
    ParseError,
    ProjectBundle,
    format_allocation,
    format_histogram,
    format_oses,
    format_spine,
    load_bundle,
    parse_allocation,
    parse_histogram,
    parse_oses,
    parse_spine,
    parse_workload,
)
from spinopt.spine import build_spine

from conftest import random_beta, random_oses, random_spine

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def test_figure1_bundle_loads():
    bundle = load_bundle(ProjectBundle.from_dir(FIXTURES / "figure1"))
    assert bundle.spine.num_blocks == 2
    assert bundle.oses.names == ("pme",)
    assert bundle.allocation.budget == 1.0
    assert bundle.workload.num_cells == 4
    assert bundle.histogram.shape == (2, 4)


def test_beta_sum_crossref():
    bundle = load_bundle(ProjectBundle.from_dir(FIXTURES / "figure1"))
    text = format_allocation(bundle.allocation, bundle.spine).replace("0.5", "0.45", 1)
    with pytest.raises(CrossRefError, match="beta sums to 0.9"):
        parse_allocation(text, bundle.spine, bundle.workload)


def test_ose_block_out_of_range():
    s = build_spine([1, 10], {(2, u): 1 for u in range(1, 11)})
    text = "format_version=1\nentity,block_index\nfoo,999\n"
    with pytest.raises(CrossRefError):
        parse_oses(text, s)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_spine_round_trip(seed):
    rng = np.random.default_rng(seed)
    s = random_spine(rng)
    assert parse_spine(format_spine(s)) == s


def test_spine_round_trip_after_pipeline():
    rng = np.random.default_rng(4)
    s = random_spine(rng, min_levels=3)
    alloc = Allocation.fresh(s, "pure", 1.0, random_beta(rng, s.num_levels), (1.0,))
    s2, alloc2 = pareto_pass(s, alloc)
    assert parse_spine(format_spine(s2)) == s2
    round_tripped = parse_allocation(format_allocation(alloc2, s2), s2, None)
    assert round_tripped == alloc2


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_ose_round_trip(seed):
    rng = np.random.default_rng(seed)
    s = random_spine(rng)
    oses = random_oses(rng, s)
    parsed = parse_oses(format_oses(oses, s), s)
    # memberless entities have no rows to carry them through the CSV
    assert parsed.members == {k: v for k, v in oses.members.items() if v}


def test_histogram_round_trip():
    s = build_spine([1, 3], {(2, u): 1 for u in range(1, 4)})
    x = np.arange(12).reshape(3, 4)
    assert np.array_equal(parse_histogram(format_histogram(x, 4), s), x)


def test_gamma_overrides_round_trip_flags_skips():
    s = build_spine([1, 1, 1], {(2, 1): 1, (3, 1): 1})
    alloc = Allocation.fresh(s, "zcdp", 1.0, (0.2, 0.3, 0.5), (1.0,))
    s2, alloc2 = pareto_pass(s, alloc)  # single-child mid unit is bypassed
    text = format_allocation(alloc2, s2)
    assert '"skip_measurement": true' in text
    assert parse_allocation(text, s2, None) == alloc2


def test_parse_errors_carry_location():
    with pytest.raises(ParseError, match="spine.txt:1"):
        parse_spine("levels=2\n", "spine.txt")
    with pytest.raises(ParseError, match=":3"):
        parse_spine("format_version=1\nlevels=2\n2,1,1\n", "s")
    with pytest.raises(ParseError, match="format_version"):
        parse_oses("entity,block_index\n", build_spine([1], {}), "o")
    with pytest.raises(ParseError):
        parse_workload("format_version=1\nQ(2)\n")
    with pytest.raises(ParseError):
        parse_allocation("{not json", build_spine([1], {}), None)


def test_spine_rejects_mutations():
    good = format_spine(build_spine([1, 2, 3], {(2, 1): 1, (2, 2): 1, (3, 1): 1, (3, 2): 1, (3, 3): 2}))
    mutations = [
        good.replace("format_version=1", "format_version=2"),
        good.replace("levels=3", "levels=4"),
        good.replace("2,2,1,", "2,2,9,"),  # parent out of range
        good + "3,3,2,dup\n",  # duplicate geounit
        good.replace("3,3,2", "4,3,2"),  # level out of range
    ]
    for text in mutations:
        with pytest.raises((ParseError, CrossRefError)):
            parse_spine(text)


def test_histogram_rejects_mutations():
    s = build_spine([1, 2], {(2, 1): 1, (2, 2): 1})
    good = format_histogram(np.ones((2, 2), dtype=int), 2)
    for text in [
        good.replace("1,1,1", "1,1"),  # short row
        good.replace("2,1,1", "1,1,1"),  # duplicate block
        good.replace("1,1,1", "1,-1,1"),  # negative count
    ]:
        with pytest.raises((ParseError, CrossRefError)):
            parse_histogram(text, s)


def test_ose_and_workload_reject_mutations():
    s = build_spine([1, 2], {(2, 1): 1, (2, 2): 1})
    good_oses = "format_version=1\nentity,block_index\nfoo,1\n"
    for text in [
        good_oses.replace("format_version=1", "format_version=3"),
        good_oses.replace("entity,block_index", "entity;block_index"),
        good_oses.replace("foo,1", "foo,one"),
        good_oses.replace("foo,1", "foo,1,2"),
        good_oses.replace("foo,1", "foo,0"),
    ]:
        with pytest.raises((ParseError, CrossRefError)):
            parse_oses(text, s)
    good_w = "format_version=1\ntotal=1(2)\n"
    for text in [
        good_w.replace("format_version=1", "version=1"),
        good_w.replace("1(2)", "1(2"),
        good_w.replace("1(2)", "L(2)"),
        "format_version=1\n",
    ]:
        with pytest.raises(ParseError):
            parse_workload(text)


def test_missing_file_is_parse_error(tmp_path):
    with pytest.raises(ParseError, match="does not exist"):
        load_bundle(ProjectBundle.from_dir(tmp_path))


def test_alloc_alpha_group_count_checked():
    bundle = load_bundle(ProjectBundle.from_dir(FIXTURES / "figure1"))
    text = format_allocation(bundle.allocation, bundle.spine)
    doc = text.replace(
        '"1": [\n      0.25,\n      0.25,\n      0.25,\n      0.25\n    ]',
        '"1": [\n      0.5,\n      0.5\n    ]',
    )
    with pytest.raises(CrossRefError):
        parse_allocation(doc, bundle.spine, bundle.workload)


def test_emitted_reports_are_deterministic(tmp_path):
    from spinopt.fileio import write_audit_json, write_variance_csv
    from spinopt.matmech import variance_diagonals
    from spinopt.privacy import audit_pure

    bundle = load_bundle(ProjectBundle.from_dir(FIXTURES / "figure1"))
    report = variance_diagonals(bundle.spine, bundle.allocation, bundle.workload)
    audit = audit_pure(bundle.spine, bundle.allocation, bundle.workload)
    for i in (1, 2):
        write_variance_csv(report, tmp_path / f"v{i}.csv")
        write_audit_json(audit, tmp_path / f"a{i}.json")
    assert (tmp_path / "v1.csv").read_bytes() == (tmp_path / "v2.csv").read_bytes()
    assert (tmp_path / "a1.json").read_bytes() == (tmp_path / "a2.json").read_bytes()
