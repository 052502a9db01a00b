"""Hierarchical geographic spines and their matrix representation.

A spine is a rooted tree of geounits arranged in L geolevels: level 1 holds
the single root and level L holds the blocks, one geounit per block. Blocks
are numbered 1..B in canonical order, lexicographic by the path of child
indices from the root, so every geounit's block descendants form a
contiguous range. Spines are immutable; structural edits return new spines
with positions recomputed canonically while string labels persist.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, NamedTuple

import numpy as np


class SpineError(Exception):
    """Base class for spine construction and editing errors."""


class CycleOrForestError(SpineError):
    """Parent assignments do not define a single tree rooted at (1, 1)."""


class LevelSkipError(SpineError):
    """A geounit's parent is not exactly one geolevel above it."""


class EmptyGeounitError(SpineError):
    """An internal geounit has no children."""


class NotSiblingsError(SpineError):
    """combine_siblings needs two distinct geounits sharing one parent."""


class GeounitId(NamedTuple):
    level: int
    index: int


@dataclass(frozen=True)
class Geounit:
    """One node of the spine. Indices are 1-based and positional."""

    label: str
    parent: int  # index within the level above; 0 for the root
    children: tuple[int, ...]  # indices within the level below
    block_lo: int  # first covered block, 1-based inclusive
    block_hi: int  # one past the last covered block

    @property
    def block_count(self) -> int:
        return self.block_hi - self.block_lo


@dataclass(frozen=True)
class LevelMatrix:
    """0/1 block-membership matrix of one geolevel, stored as row ranges.

    Row u carries ones exactly on the block descendants of geounit u, which
    are contiguous under the canonical ordering, so the matrix is never
    materialized densely unless asked.
    """

    rows: int
    cols: int
    ranges: tuple[tuple[int, int], ...]  # per row: (lo, hi), 1-based half-open

    def row_counts(self) -> tuple[int, ...]:
        return tuple(hi - lo for lo, hi in self.ranges)

    def dense(self) -> np.ndarray:
        out = np.zeros((self.rows, self.cols), dtype=np.int64)
        for r, (lo, hi) in enumerate(self.ranges):
            out[r, lo - 1 : hi - 1] = 1
        return out


@dataclass(frozen=True)
class Spine:
    levels: tuple[tuple[Geounit, ...], ...]

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    @property
    def num_blocks(self) -> int:
        return self.levels[0][0].block_count

    def level_size(self, level: int) -> int:
        return len(self.levels[level - 1])

    @property
    def level_sizes(self) -> tuple[int, ...]:
        return tuple(len(lv) for lv in self.levels)

    @property
    def total_units(self) -> int:
        return sum(self.level_sizes)

    def unit(self, g: GeounitId) -> Geounit:
        if not (1 <= g.level <= self.num_levels):
            raise ValueError(f"no geolevel {g.level} in a {self.num_levels}-level spine")
        if not (1 <= g.index <= self.level_size(g.level)):
            raise ValueError(f"no geounit {g} at geolevel {g.level}")
        return self.levels[g.level - 1][g.index - 1]

    def units(self) -> Iterator[tuple[GeounitId, Geounit]]:
        """All geounits in level-major, index-ascending order."""
        for l, lv in enumerate(self.levels, start=1):
            for u, node in enumerate(lv, start=1):
                yield GeounitId(l, u), node

    def parent_id(self, g: GeounitId) -> GeounitId | None:
        node = self.unit(g)
        if node.parent == 0:
            return None
        return GeounitId(g.level - 1, node.parent)

    def children_ids(self, g: GeounitId) -> tuple[GeounitId, ...]:
        node = self.unit(g)
        return tuple(GeounitId(g.level + 1, c) for c in node.children)

    def block_range(self, g: GeounitId) -> tuple[int, int]:
        node = self.unit(g)
        return node.block_lo, node.block_hi

    @property
    def block_labels(self) -> tuple[str, ...]:
        return tuple(n.label for n in self.levels[-1])

    def ancestry(self, block: int) -> tuple[GeounitId, ...]:
        """Root-to-block chain of geounit ids covering the given block."""
        if not (1 <= block <= self.num_blocks):
            raise ValueError(f"block {block} out of range 1..{self.num_blocks}")
        chain = []
        g = GeounitId(self.num_levels, block)
        while g is not None:
            chain.append(g)
            g = self.parent_id(g)
        return tuple(reversed(chain))

    def validate(self) -> None:
        """Assert every structural invariant; raises SpineError on failure."""
        L = self.num_levels
        if self.level_size(1) != 1:
            raise CycleOrForestError("geolevel 1 must hold exactly one root geounit")
        if self.levels[0][0].parent != 0:
            raise CycleOrForestError("root geounit must have no parent")
        B = self.num_blocks
        for l, lv in enumerate(self.levels, start=1):
            cursor = 1
            for u, node in enumerate(lv, start=1):
                if node.block_lo != cursor:
                    raise SpineError(f"blocks of geounit ({l},{u}) are not contiguous")
                if node.block_hi <= node.block_lo:
                    raise SpineError(f"geounit ({l},{u}) covers no blocks")
                cursor = node.block_hi
                if l < L:
                    if not node.children:
                        raise EmptyGeounitError(f"internal geounit ({l},{u}) has no children")
                    kids = [self.levels[l][c - 1] for c in node.children]
                    if node.children != tuple(range(node.children[0], node.children[0] + len(kids))):
                        raise SpineError(f"children of ({l},{u}) are not consecutive")
                    if kids[0].block_lo != node.block_lo or kids[-1].block_hi != node.block_hi:
                        raise SpineError(f"children of ({l},{u}) do not cover its block range")
                    for c, kid in zip(node.children, kids):
                        if kid.parent != u:
                            raise SpineError(f"parent link of ({l + 1},{c}) disagrees with ({l},{u})")
                else:
                    if node.children:
                        raise SpineError(f"block geounit ({l},{u}) has children")
                    if node.block_count != 1:
                        raise SpineError(f"block geounit ({l},{u}) must cover exactly one block")
                if l > 1:
                    if not (1 <= node.parent <= self.level_size(l - 1)):
                        raise CycleOrForestError(f"geounit ({l},{u}) has no valid parent")
            if cursor != B + 1:
                raise SpineError(f"geolevel {l} does not cover all {B} blocks")
        labels = self.block_labels
        if len(set(labels)) != len(labels):
            raise SpineError("block labels must be unique")


class _Node:
    """Mutable tree node used for canonical rebuilds."""

    __slots__ = ("label", "children", "gamma")

    def __init__(self, label: str, children: Iterable["_Node"] = (), gamma: float | None = None):
        self.label = label
        self.children = list(children)
        self.gamma = gamma


def _tree_from_spine(spine: Spine, gamma=None) -> tuple[_Node, dict[GeounitId, _Node]]:
    lookup: dict[GeounitId, _Node] = {}
    for l in range(spine.num_levels, 0, -1):
        for u, node in enumerate(spine.levels[l - 1], start=1):
            gid = GeounitId(l, u)
            g = None if gamma is None else gamma[l - 1][u - 1]
            kids = [lookup[GeounitId(l + 1, c)] for c in node.children]
            lookup[gid] = _Node(node.label, kids, g)
    return lookup[GeounitId(1, 1)], lookup


def _spine_from_tree(root: _Node, num_levels: int) -> tuple[Spine, tuple[tuple[float, ...], ...]]:
    """Rebuild a spine (and aligned per-node gamma) from a uniform-depth tree."""
    per_level: list[list[Geounit]] = [[] for _ in range(num_levels)]
    gammas: list[list[float]] = [[] for _ in range(num_levels)]
    block_counter = 0

    def visit(node: _Node, level: int, parent_idx: int) -> tuple[int, int, int]:
        nonlocal block_counter
        my_idx = len(per_level[level - 1]) + 1
        per_level[level - 1].append(None)  # reserve slot; children assigned next
        gammas[level - 1].append(0.0 if node.gamma is None else float(node.gamma))
        if level == num_levels:
            if node.children:
                raise SpineError(f"leaf {node.label!r} sits above the block geolevel")
            block_counter += 1
            lo, hi = block_counter, block_counter + 1
            kid_span = ()
        else:
            if not node.children:
                raise EmptyGeounitError(f"internal geounit {node.label!r} has no children")
            first_kid = len(per_level[level]) + 1
            lo = None
            for kid in node.children:
                k_idx, k_lo, k_hi = visit(kid, level + 1, my_idx)
                if lo is None:
                    lo = k_lo
                hi = k_hi
            kid_span = tuple(range(first_kid, first_kid + len(node.children)))
        per_level[level - 1][my_idx - 1] = Geounit(node.label, parent_idx, kid_span, lo, hi)
        return my_idx, lo, hi

    visit(root, 1, 0)
    spine = Spine(tuple(tuple(lv) for lv in per_level))
    return spine, tuple(tuple(g) for g in gammas)


def build_spine(
    level_sizes: Iterable[int],
    parent_map: Mapping[tuple[int, int], object] | Iterable[tuple[tuple[int, int], object]],
    labels: Mapping[tuple[int, int], str] | None = None,
) -> Spine:
    """Build a validated spine from per-level counts and parent assignments.

    Args:
        level_sizes: number of geounits per geolevel, root level first.
        parent_map: maps each non-root geounit, keyed by (level, index) in
            input numbering, to its parent given either as (level-1, index)
            or as the bare parent index. An iterable of (child, parent)
            pairs is also accepted; a duplicated child key means a geounit
            points at two parents and raises CycleOrForestError.
        labels: optional labels per (level, index); defaults are generated
            from the input position. Block labels must be unique.

    The returned spine is canonical: geounits are renumbered in
    lexicographic path order so each geounit's blocks are contiguous.
    """
    sizes = [int(s) for s in level_sizes]
    if not sizes or any(s < 1 for s in sizes):
        raise CycleOrForestError("every geolevel needs at least one geounit")
    if sizes[0] != 1:
        raise CycleOrForestError("geolevel 1 must hold exactly one root geounit")
    L = len(sizes)

    assignments: dict[tuple[int, int], tuple[int, int]] = {}
    items = parent_map.items() if isinstance(parent_map, Mapping) else parent_map
    for child, parent in items:
        child = (int(child[0]), int(child[1]))
        if child in assignments:
            raise CycleOrForestError(f"geounit {child} is assigned two parents")
        if isinstance(parent, (tuple, list)):
            p = (int(parent[0]), int(parent[1]))
        else:
            p = (child[0] - 1, int(parent))
        assignments[child] = p

    node_labels: dict[tuple[int, int], str] = {}
    for l in range(1, L + 1):
        for u in range(1, sizes[l - 1] + 1):
            default = "root" if l == 1 else f"{l}.{u}"
            node_labels[(l, u)] = str(labels.get((l, u), default)) if labels else default

    for key in assignments:
        l, u = key
        if not (2 <= l <= L) or not (1 <= u <= sizes[l - 1]):
            raise CycleOrForestError(f"parent assignment for nonexistent geounit {key}")
    children: dict[tuple[int, int], list[tuple[int, int]]] = {
        (l, u): [] for l in range(1, L + 1) for u in range(1, sizes[l - 1] + 1)
    }
    for l in range(2, L + 1):
        for u in range(1, sizes[l - 1] + 1):
            key = (l, u)
            if key not in assignments:
                raise CycleOrForestError(f"geounit {key} has no parent; not a single tree")
            pl, pu = assignments[key]
            if pl != l - 1:
                raise LevelSkipError(f"parent of {key} must sit at geolevel {l - 1}, got {pl}")
            if not (1 <= pu <= sizes[pl - 1]):
                raise CycleOrForestError(f"parent ({pl},{pu}) of {key} does not exist")
            children[(pl, pu)].append(key)
    for l in range(1, L):
        for u in range(1, sizes[l - 1] + 1):
            if not children[(l, u)]:
                raise EmptyGeounitError(f"internal geounit ({l},{u}) has no children")

    def make(key: tuple[int, int]) -> _Node:
        kids = [make(k) for k in sorted(children[key])]
        return _Node(node_labels[key], kids)

    spine, _ = _spine_from_tree(make((1, 1)), L)
    spine.validate()
    return spine


def level_matrix(spine: Spine, l: int) -> LevelMatrix:
    """Block-membership matrix of geolevel l; level 1 is the all-ones row
    and level L the identity."""
    if not (1 <= l <= spine.num_levels):
        raise ValueError(f"geolevel {l} out of range 1..{spine.num_levels}")
    ranges = tuple((n.block_lo, n.block_hi) for n in spine.levels[l - 1])
    return LevelMatrix(rows=spine.level_size(l), cols=spine.num_blocks, ranges=ranges)


def fanout(spine: Spine, g: GeounitId) -> int:
    """Number of children of geounit g; blocks have fanout 0."""
    return len(spine.unit(g).children)


def combine_siblings(spine: Spine, u: GeounitId, v: GeounitId) -> Spine:
    """Replace sibling geounits u and v by one geounit holding the union of
    their children; block ordering is recomputed canonically."""
    if u == v:
        raise NotSiblingsError("cannot combine a geounit with itself")
    if u.level != v.level:
        raise NotSiblingsError(f"{u} and {v} sit at different geolevels")
    a, b = (u, v) if u.index < v.index else (v, u)
    if spine.unit(a).parent != spine.unit(b).parent or a.level == 1:
        raise NotSiblingsError(f"{u} and {v} do not share a parent")
    if u.level == spine.num_levels:
        raise SpineError("block geounits cannot be combined")
    root, lookup = _tree_from_spine(spine)
    na, nb = lookup[a], lookup[b]
    merged = _Node(f"{na.label}+{nb.label}", na.children + nb.children)
    parent = lookup[spine.parent_id(a)]
    parent.children = [merged if kid is na else kid for kid in parent.children if kid is not nb]
    out, _ = _spine_from_tree(root, spine.num_levels)
    return out
