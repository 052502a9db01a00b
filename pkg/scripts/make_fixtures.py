#!/usr/bin/env python3
"""Regenerate the bundled example inputs under fixtures/.

figure1/    one root with two blocks, a 2x2 histogram schema, the total,
            both one-way marginals, and the detailed cell group.
twocounty/  six-level spine with two counties, used to exercise the full
            two-stage optimization.
"""

from pathlib import Path

import numpy as np

from spinopt.allocation import Allocation
from spinopt.fileio import (
    format_allocation,
    format_histogram,
    format_oses,
    format_spine,
    format_workload,
)
from spinopt.matmech import QueryGroup, Workload, identity, ones_row
from spinopt.osed import OseSet
from spinopt.spine import build_spine

ROOT = Path(__file__).resolve().parent.parent / "fixtures"


def write_bundle(name, spine, oses, alloc, workload, histogram):
    d = ROOT / name
    d.mkdir(parents=True, exist_ok=True)
    (d / "spine.txt").write_text(format_spine(spine))
    (d / "oses.csv").write_text(format_oses(oses, spine))
    (d / "allocation.json").write_text(format_allocation(alloc, spine))
    (d / "workload.txt").write_text(format_workload(workload))
    if histogram is not None:
        (d / "histogram.csv").write_text(format_histogram(histogram, workload.num_cells))
    print(f"wrote {d}")


def figure1():
    spine = build_spine(
        [1, 2],
        {(2, 1): 1, (2, 2): 1},
        labels={(1, 1): "US", (2, 1): "blockA", (2, 2): "blockB"},
    )
    oses = OseSet.from_labels(spine, {"pme": ["blockA"]})
    workload = Workload(
        (
            QueryGroup((ones_row(2), ones_row(2)), "total"),
            QueryGroup((identity(2), ones_row(2)), "row_marginal"),
            QueryGroup((ones_row(2), identity(2)), "col_marginal"),
            QueryGroup((identity(2), identity(2)), "detailed"),
        )
    )
    alloc = Allocation.fresh(spine, "pure", 1.0, (0.5, 0.5), (0.25, 0.25, 0.25, 0.25))
    histogram = np.array([[1, 2, 3, 4], [5, 6, 7, 8]])
    write_bundle("figure1", spine, oses, alloc, workload, histogram)


def twocounty():
    labels, pm = {}, {}
    labels[(1, 1)] = "US"
    for c in (1, 2):
        pm[(2, c)] = 1
        labels[(2, c)] = f"c{c}"
    tracts = [("t1", 1), ("t2", 1), ("t3", 1), ("t4", 1), ("t5", 2), ("t6", 2)]
    for i, (name, county) in enumerate(tracts, start=1):
        pm[(3, i)] = county
        labels[(3, i)] = f"tg{i}"
        pm[(4, i)] = i
        labels[(4, i)] = name
        pm[(5, i)] = i
        labels[(5, i)] = f"bg-{name}"
    for i in range(1, 7):
        for side, tag in ((2 * i - 1, "a"), (2 * i, "b")):
            pm[(6, side)] = i
            labels[(6, side)] = f"b{i}{tag}"
    spine = build_spine([1, 2, 6, 6, 6, 12], pm, labels=labels)
    oses = OseSet.from_labels(
        spine,
        {
            "pme": ["b1a", "b1b", "b2a", "b2b"],
            "gq_dorms": ["b3a", "b5a", "b5b"],
        },
    )
    workload = Workload(
        (
            QueryGroup((ones_row(2),), "total"),
            QueryGroup((identity(2),), "detailed"),
        )
    )
    alloc = Allocation.fresh(
        spine, "pure", 1.0, (0.1, 0.15, 0.15, 0.2, 0.2, 0.2), (0.5, 0.5)
    )
    rng = np.random.default_rng(20260809)
    histogram = rng.integers(0, 50, (12, 2))
    write_bundle("twocounty", spine, oses, alloc, workload, histogram)


if __name__ == "__main__":
    figure1()
    twocounty()
