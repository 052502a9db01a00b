"""First-stage spine restructuring.

Within each tract, blocks sharing the same entity-membership signature are
regrouped into block groups of bounded size, and tract groups are then
greedily combined whenever doing so does not worsen the sorted vector of
entity distances. By convention the bottom levels of an L-level spine are
block = L, block group = L-1, tract = L-2, tract group = L-3 and
county = L-4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Sequence

from .osed import OseSet, osed_table, root_osed_after_combine
from .spine import GeounitId, Spine, _Node, _spine_from_tree, _tree_from_spine, combine_siblings


class LevelConventionError(Exception):
    """The spine is too shallow for the tract/block-group conventions."""


@dataclass(frozen=True)
class OptConfig:
    """Knobs for the first optimization stage.

    fanout_cutoff is the slack added to ceil(sqrt(n)) when bounding group
    sizes; the reducer is fixed to the sorted descending distance vector.
    """

    fanout_cutoff: int = 2
    max_outer_iterations: int = 100
    reducer: str = "sorted_descending"

    def __post_init__(self):
        if self.fanout_cutoff < 0:
            raise ValueError("fanout_cutoff must be nonnegative")
        if self.max_outer_iterations < 1:
            raise ValueError("max_outer_iterations must be at least 1")
        if self.reducer != "sorted_descending":
            raise ValueError("the optimizer reduces by sorted_descending only")


def lex_leq(x: Sequence[int], y: Sequence[int]) -> bool:
    """Lexicographic less-or-equal; shorter vectors are right-padded with zeros."""
    n = max(len(x), len(y))
    xt = tuple(x) + (0,) * (n - len(x))
    yt = tuple(y) + (0,) * (n - len(y))
    return xt <= yt


def _group_limit(n_blocks: int, cutoff: int) -> int:
    # ceil(sqrt(n)) is the smallest achievable maximum fanout for n blocks
    return math.isqrt(n_blocks - 1) + 1 + cutoff if n_blocks > 0 else cutoff


def redefine_block_groups(spine: Spine, oses: OseSet, cfg: OptConfig) -> Spine:
    """Rebuild every tract's block groups from entity-membership signatures.

    Blocks of one tract are partitioned by their signature (the membership
    bit vector across entities); each class is chunked, in canonical block
    order, into groups of at most ceil(sqrt(n)) + fanout_cutoff blocks,
    where n is the tract's block count.
    """
    L = spine.num_levels
    if L < 3:
        raise LevelConventionError("block-group redefinition needs at least 3 geolevels")
    sigs = oses.signatures(spine)
    root, lookup = _tree_from_spine(spine)
    tract_level = L - 2
    for t in range(1, spine.level_size(tract_level) + 1):
        tid = GeounitId(tract_level, t)
        tract = lookup[tid]
        lo, hi = spine.block_range(tid)
        blocks = [grp_child for bg in tract.children for grp_child in bg.children]
        limit = _group_limit(hi - lo, cfg.fanout_cutoff)
        classes: dict[tuple[int, ...], list[_Node]] = {}
        for offset, blk in enumerate(blocks):
            classes.setdefault(sigs[lo - 1 + offset], []).append(blk)
        groups = []
        for members in classes.values():
            for start in range(0, len(members), limit):
                chunk = members[start : start + limit]
                groups.append(_Node(f"{tract.label}:bg{len(groups) + 1}", chunk))
        tract.children = groups
    out, _ = _spine_from_tree(root, L)
    return out


def initialize_tract_groups(spine: Spine) -> Spine:
    """Rebuild the tract-group level so every tract group has one tract."""
    L = spine.num_levels
    if L < 5:
        raise LevelConventionError("tract groups need at least 5 geolevels")
    root, lookup = _tree_from_spine(spine)
    county_level = L - 4
    for c in range(1, spine.level_size(county_level) + 1):
        county = lookup[GeounitId(county_level, c)]
        tracts = [t for tg in county.children for t in tg.children]
        county.children = [_Node(f"tg:{t.label}", [t]) for t in tracts]
    out, _ = _spine_from_tree(root, L)
    return out


def optimize_tract_groups(
    spine: Spine,
    oses: OseSet,
    cfg: OptConfig,
    on_accept: Callable[[Spine, tuple[int, ...]], None] | None = None,
) -> Spine:
    """Greedily combine sibling tract groups while the sorted descending
    distance vector does not increase lexicographically.

    County by county, sibling pairs are tried in ascending index order and
    re-enumerated after every accepted combine; a pair whose combined child
    count would exceed ceil(sqrt(n)) + fanout_cutoff (n tracts in the
    county) is skipped. Ties are accepted since they shrink the spine.
    Passes repeat until one changes nothing or max_outer_iterations is hit.
    """
    L = spine.num_levels
    if L < 5:
        raise LevelConventionError("tract-group optimization needs at least 5 geolevels")
    county_level = L - 4
    tg_level = L - 3

    table = osed_table(spine, oses)
    current = tuple(sorted(table.root_distances().values(), reverse=True))

    for _ in range(cfg.max_outer_iterations):
        changed = False
        for county_idx in range(1, spine.level_size(county_level) + 1):
            while True:
                county = GeounitId(county_level, county_idx)
                n_tracts = sum(len(spine.unit(tg).children) for tg in spine.children_ids(county))
                limit = _group_limit(n_tracts, cfg.fanout_cutoff)
                accepted = False
                for a, b in combinations(spine.children_ids(county), 2):
                    if len(spine.unit(a).children) + len(spine.unit(b).children) > limit:
                        continue
                    test = tuple(
                        sorted(root_osed_after_combine(spine, table, a, b).values(), reverse=True)
                    )
                    if lex_leq(test, current):
                        spine = combine_siblings(spine, a, b)
                        table = osed_table(spine, oses)
                        assert tuple(sorted(table.root_distances().values(), reverse=True)) == test
                        current = test
                        accepted = changed = True
                        if on_accept is not None:
                            on_accept(spine, current)
                        break
                if not accepted:
                    break
        if not changed:
            break
    return spine


__all__ = [
    "LevelConventionError",
    "OptConfig",
    "lex_leq",
    "redefine_block_groups",
    "initialize_tract_groups",
    "optimize_tract_groups",
]
