import numpy as np
import pytest

from spinopt.allocation import Allocation
from spinopt.matmech import QueryGroup, Workload, identity, ones_row
from spinopt.osed import OseSet
from spinopt.spine import Spine, build_spine


def random_spine(
    rng: np.random.Generator,
    max_levels: int = 4,
    max_blocks: int = 12,
    max_units: int = 25,
    min_levels: int = 2,
) -> Spine:
    """Random valid spine: non-decreasing level sizes, random parentage.

    Half the draws push the block count toward the cap so large instances
    are routinely covered, not just sampled by luck.
    """
    while True:
        L = int(rng.integers(min_levels, max_levels + 1))
        lo_blocks = max(1, max_blocks // 2) if rng.random() < 0.5 else 1
        B = int(rng.integers(lo_blocks, max_blocks + 1))
        mids = sorted(int(rng.integers(1, B + 1)) for _ in range(L - 2))
        sizes = [1] + mids + ([B] if L > 1 else [])
        if sum(sizes) <= max_units:
            break
    parent_map = {}
    for l in range(2, L + 1):
        up, here = sizes[l - 2], sizes[l - 1]
        # surjective assignment: first `up` children get distinct parents
        parents = list(range(1, up + 1)) + [int(rng.integers(1, up + 1)) for _ in range(here - up)]
        rng.shuffle(parents)
        for u, p in enumerate(parents, start=1):
            parent_map[(l, u)] = p
    return build_spine(sizes, parent_map)


def random_indicator(rng: np.random.Generator, num_blocks: int) -> np.ndarray:
    p = rng.uniform(0.2, 0.8)
    return (rng.random(num_blocks) < p).astype(np.int64)


def random_oses(rng: np.random.Generator, spine: Spine, count: int = 3) -> OseSet:
    members = {}
    for k in range(count):
        ind = random_indicator(rng, spine.num_blocks)
        members[f"ose{k + 1}"] = [j + 1 for j in range(spine.num_blocks) if ind[j]]
    return OseSet.from_block_indices(spine, members)


def random_beta(rng: np.random.Generator, levels: int) -> tuple[float, ...]:
    raw = rng.uniform(0.1, 1.0, levels)
    return tuple(raw / raw.sum())


def random_alpha(rng: np.random.Generator, groups: int) -> tuple[float, ...]:
    raw = rng.uniform(0.2, 1.0, groups)
    return tuple(raw / raw.sum())


@pytest.fixture
def figure1_spine() -> Spine:
    return build_spine(
        [1, 2],
        {(2, 1): 1, (2, 2): 1},
        labels={(1, 1): "US", (2, 1): "blockA", (2, 2): "blockB"},
    )


@pytest.fixture
def figure1_workload() -> Workload:
    """Total, both one-way marginals, and detailed cells on a 2x2 schema."""
    return Workload(
        (
            QueryGroup((ones_row(2), ones_row(2)), "total"),
            QueryGroup((identity(2), ones_row(2)), "row_marginal"),
            QueryGroup((ones_row(2), identity(2)), "col_marginal"),
            QueryGroup((identity(2), identity(2)), "detailed"),
        )
    )


@pytest.fixture
def figure1_alloc(figure1_spine, figure1_workload) -> Allocation:
    return Allocation.fresh(
        figure1_spine, "pure", 1.0, (0.5, 0.5), (0.25, 0.25, 0.25, 0.25)
    )
