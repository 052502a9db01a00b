"""Off-spine entity distances.

The distance of an entity is the minimum number of geounits that must be
added or subtracted from one another to compose the entity's block set
exactly. It is computed bottom-up over the spine: each block contributes
its membership indicator, and an internal geounit composes the entity
either by summing its children's compositions or by taking itself minus
the composition of the complement within it, at the cost of one extra
geounit. The same recursion tracks the complement distance, and the two
can never drift apart by more than one.

brute_force_osed is the independent check: it searches signed selections
of geounits directly and is used to validate the recursion, never the
other way around.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

from .spine import GeounitId, Spine

_CAP = 2**31 - 1  # distances are bounded by the geounit count; cap documents intent
_EXHAUSTIVE_LIMIT = 12  # beyond this the oracle switches to integer programming
_ORACLE_LIMIT = 25


class MembershipMissingError(Exception):
    """A block of the spine is not covered by the entity indicators."""


class TooLargeError(Exception):
    """The spine exceeds the size cap of the brute-force search."""


@dataclass(frozen=True)
class OseSet:
    """Named off-spine entities as block membership sets.

    Membership is stored by block label so it follows blocks through
    structural spine edits; ``universe`` records every block label of the
    companion spine. Entities may overlap.
    """

    names: tuple[str, ...]
    members: Mapping[str, frozenset[str]]
    universe: frozenset[str]

    @classmethod
    def from_labels(cls, spine: Spine, members: Mapping[str, Iterable[str]]) -> "OseSet":
        universe = frozenset(spine.block_labels)
        out = {}
        for name, labels in members.items():
            got = frozenset(str(x) for x in labels)
            stray = got - universe
            if stray:
                raise MembershipMissingError(f"entity {name!r} names unknown blocks {sorted(stray)}")
            out[name] = got
        return cls(tuple(members.keys()), out, universe)

    @classmethod
    def from_block_indices(cls, spine: Spine, members: Mapping[str, Iterable[int]]) -> "OseSet":
        labels = spine.block_labels
        resolved = {}
        for name, idxs in members.items():
            picked = []
            for i in idxs:
                i = int(i)
                if not (1 <= i <= len(labels)):
                    raise MembershipMissingError(
                        f"entity {name!r} references block {i} of a {len(labels)}-block spine"
                    )
                picked.append(labels[i - 1])
            resolved[name] = picked
        return cls.from_labels(spine, resolved)

    def indicator(self, spine: Spine, name: str) -> np.ndarray:
        """0/1 membership vector over the spine's blocks in canonical order."""
        wanted = self.members[name]
        out = np.zeros(spine.num_blocks, dtype=np.int64)
        for j, label in enumerate(spine.block_labels):
            if label not in self.universe:
                raise MembershipMissingError(f"block {label!r} is not covered by the entity set")
            if label in wanted:
                out[j] = 1
        return out

    def indicator_matrix(self, spine: Spine) -> np.ndarray:
        """(num_entities, num_blocks) stacked indicators."""
        if not self.names:
            return np.zeros((0, spine.num_blocks), dtype=np.int64)
        return np.stack([self.indicator(spine, name) for name in self.names])

    def signatures(self, spine: Spine) -> list[tuple[int, ...]]:
        """Per-block membership bit vector across all entities."""
        mat = self.indicator_matrix(spine)
        return [tuple(int(b) for b in mat[:, j]) for j in range(spine.num_blocks)]


@dataclass(eq=False)
class OsedTable:
    """Distances and complement distances per (entity, geolevel, geounit)."""

    names: tuple[str, ...]
    c: tuple[np.ndarray, ...]  # per level: (num_entities, U[l]) int array
    c_comp: tuple[np.ndarray, ...]

    def pair(self, name: str, g: GeounitId) -> tuple[int, int]:
        k = self.names.index(name)
        return int(self.c[g.level - 1][k, g.index - 1]), int(self.c_comp[g.level - 1][k, g.index - 1])

    def root_distances(self) -> dict[str, int]:
        return {name: int(self.c[0][k, 0]) for k, name in enumerate(self.names)}


def _combine_children(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # x, y: summed child distances for the entity and its complement
    c = np.minimum(np.minimum(x, y + 1), _CAP)
    cc = np.minimum(np.minimum(y, x + 1), _CAP)
    return c, cc


def osed_table(spine: Spine, oses: OseSet) -> OsedTable:
    """Full bottom-up distance table, all entities in one pass per level."""
    L = spine.num_levels
    ind = oses.indicator_matrix(spine)
    c: list[np.ndarray] = [None] * L
    cc: list[np.ndarray] = [None] * L
    c[L - 1] = ind.copy()
    cc[L - 1] = 1 - ind
    for l in range(L - 1, 0, -1):
        starts = [spine.unit(GeounitId(l, u)).children[0] - 1 for u in range(1, spine.level_size(l) + 1)]
        x = np.add.reduceat(c[l], starts, axis=1)
        y = np.add.reduceat(cc[l], starts, axis=1)
        c[l - 1], cc[l - 1] = _combine_children(x, y)
    return OsedTable(oses.names, tuple(c), tuple(cc))


def osed_all(spine: Spine, oses: OseSet) -> dict[str, int]:
    """Distance of every entity, computed by the bottom-up recursion."""
    return osed_table(spine, oses).root_distances()


def osed_reduced(spine: Spine, oses: OseSet, reducer: str):
    """Reduce the entity distances: 'max', 'mean', or 'sorted_descending'
    (the full vector, largest first)."""
    values = list(osed_all(spine, oses).values())
    if reducer == "max":
        return max(values) if values else 0
    if reducer == "mean":
        return float(np.mean(values)) if values else 0.0
    if reducer == "sorted_descending":
        return sorted(values, reverse=True)
    raise ValueError(f"unknown reducer {reducer!r}")


def root_osed_after_combine(spine: Spine, table: OsedTable, u: GeounitId, v: GeounitId) -> dict[str, int]:
    """Root distances if siblings u and v were combined, without rebuilding.

    Only the merged node and its ancestors change, so the existing table is
    reused everywhere else. Shares the child-combination rule with
    osed_table, and optimize_tract_groups asserts agreement with a full
    recomputation after every accepted combine.
    """
    ku = spine.unit(u).children
    kv = spine.unit(v).children
    child_level = u.level  # children arrays live at index u.level (level u.level + 1)
    idx = [w - 1 for w in ku + kv]
    x = table.c[child_level][:, idx].sum(axis=1)
    y = table.c_comp[child_level][:, idx].sum(axis=1)
    new_c, new_cc = _combine_children(x, y)

    level = u.level
    removed = {u.index, v.index}
    while level > 1:
        parent = spine.parent_id(GeounitId(level, next(iter(removed))))
        sibs = [w - 1 for w in spine.unit(parent).children if w not in removed]
        x = table.c[level - 1][:, sibs].sum(axis=1) + new_c
        y = table.c_comp[level - 1][:, sibs].sum(axis=1) + new_cc
        new_c, new_cc = _combine_children(x, y)
        removed = {parent.index}
        level -= 1
    return {name: int(new_c[k]) for k, name in enumerate(table.names)}


def _geounit_rows(spine: Spine) -> np.ndarray:
    rows = np.zeros((spine.total_units, spine.num_blocks), dtype=np.int64)
    r = 0
    for _, node in spine.units():
        rows[r, node.block_lo - 1 : node.block_hi - 1] = 1
        r += 1
    return rows


def _exhaustive_min_selection(rows: np.ndarray, target: np.ndarray) -> int:
    # Smallest signed selection first: enumerate by cardinality with early exit.
    n = rows.shape[0]
    upper = int(target.sum())  # selecting each member block is always feasible
    for m in range(upper + 1):
        for idx in itertools.combinations(range(n), m):
            sub = rows[list(idx)]
            for signs in itertools.product((1, -1), repeat=m):
                if np.array_equal(np.dot(signs, sub) if m else np.zeros_like(target), target):
                    return m
    raise AssertionError("selection of member blocks must be feasible")


def _milp_min_selection(rows: np.ndarray, target: np.ndarray) -> int:
    # min sum(t) s.t. rows^T s = target, |s| <= t, s integer in [-1, 1]
    n = rows.shape[0]
    b = rows.shape[1]
    cost = np.concatenate([np.zeros(n), np.ones(n)])
    eq = LinearConstraint(np.hstack([rows.T.astype(float), np.zeros((b, n))]), target, target)
    eye = np.eye(n)
    absbound = LinearConstraint(
        np.vstack([np.hstack([eye, -eye]), np.hstack([-eye, -eye])]), -np.inf, 0.0
    )
    res = milp(
        cost,
        constraints=[eq, absbound],
        integrality=np.concatenate([np.ones(n), np.zeros(n)]),
        bounds=Bounds(np.concatenate([-np.ones(n), np.zeros(n)]), np.ones(2 * n)),
    )
    if not res.success:
        raise RuntimeError(f"integer program failed: {res.message}")
    s = np.rint(res.x[:n]).astype(np.int64)
    if not np.array_equal(rows.T @ s, target):
        raise RuntimeError("integer program returned an infeasible selection")
    return int(np.abs(s).sum())


def brute_force_osed(spine: Spine, indicator: Iterable[int]) -> int:
    """Minimum signed-selection size composing the indicator exactly.

    Searches selections s: geounits -> {-1, 0, +1} with
    sum_g s(g) * membership_row(g) equal to the indicator over blocks,
    minimizing sum |s|. Small instances are enumerated by increasing
    cardinality; larger ones (up to 25 geounits) go through an exact
    integer program whose returned selection is verified.
    """
    if spine.total_units > _ORACLE_LIMIT:
        raise TooLargeError(f"{spine.total_units} geounits exceed the search cap of {_ORACLE_LIMIT}")
    target = np.asarray(list(indicator), dtype=np.int64)
    if target.shape != (spine.num_blocks,):
        raise ValueError(f"indicator must have one entry per block ({spine.num_blocks})")
    if not np.isin(target, (0, 1)).all():
        raise ValueError("indicator entries must be 0 or 1")
    rows = _geounit_rows(spine)
    if spine.total_units <= _EXHAUSTIVE_LIMIT:
        return _exhaustive_min_selection(rows, target)
    return _milp_min_selection(rows, target)
