"""Second-stage spine update: bypassing low-fanout parents.

Bypassing a parent with c children creates c new geounits at the parent's
level, one per former child, each carrying the parent's proportion plus
that child's; the old parent is removed and the children's proportions are
zeroed. The level count never changes and the proportion sum along every
root-to-block path is preserved, so the privacy audit is unaffected.

Under the Laplace family the reallocation cannot increase any query
variance of the least-squares output when
gamma_child >= (c - 1) * gamma_parent / 2; under the Gaussian family only
single-child parents are bypassed, since with two or more children some
variance always increases.
"""

from __future__ import annotations

from .allocation import Allocation
from .spine import GeounitId, Spine, _Node, _spine_from_tree, _tree_from_spine


class RootOrLeafError(Exception):
    """The root and block geounits are never bypassed."""


class UnequalChildGammaError(Exception):
    """Children of the parent carry different proportions."""


def bypass_rule(gamma_parent: float, gamma_child: float, c: int, pure_dp: bool) -> bool:
    """Scalar decision rule; gamma_child is the minimum over the children.

    Boundary equality is accepted: at gamma_child == (c-1)*gamma_parent/2
    every variance is left unchanged or reduced.
    """
    if c < 1:
        raise ValueError("a bypass candidate must have at least one child")
    if pure_dp:
        return gamma_child >= (c - 1) * gamma_parent / 2.0
    return c == 1


def should_bypass(spine: Spine, alloc: Allocation, parent: GeounitId, pure_dp: bool) -> bool:
    """Apply the decision rule at a geounit, taking the minimum child gamma."""
    children = spine.children_ids(parent)
    if not children:
        raise RootOrLeafError("block geounits have no children to bypass to")
    gamma_child = min(alloc.gamma_of(ch) for ch in children)
    return bypass_rule(alloc.gamma_of(parent), gamma_child, len(children), pure_dp)


def bypass_parent(
    spine: Spine,
    alloc: Allocation,
    parent: GeounitId,
    allow_unequal_children: bool = False,
) -> tuple[Spine, Allocation]:
    """Bypass one parent geounit; returns the rebuilt spine and allocation.

    With allow_unequal_children the equal-proportion requirement on the
    children is waived, which the frontier pass needs once earlier bypasses
    have zeroed some proportions below.
    """
    L = spine.num_levels
    if not (2 <= parent.level <= L - 1):
        raise RootOrLeafError(f"geounit {parent} is the root or a block and cannot be bypassed")
    children = spine.children_ids(parent)
    gammas = [alloc.gamma_of(ch) for ch in children]
    if not allow_unequal_children and max(gammas) != min(gammas):
        raise UnequalChildGammaError(f"children of {parent} carry unequal proportions {gammas}")
    gp = alloc.gamma_of(parent)

    root, lookup = _tree_from_spine(spine, alloc.gamma)
    node = lookup[parent]
    replacements = []
    for kid in node.children:
        replacements.append(_Node(f"{node.label}>{kid.label}", [kid], gp + kid.gamma))
        kid.gamma = 0.0
    holder = lookup[spine.parent_id(parent)]
    at = holder.children.index(node)
    holder.children[at : at + 1] = replacements
    out_spine, out_gamma = _spine_from_tree(root, L)
    return out_spine, alloc.with_gamma_table(out_gamma)


def pareto_pass(spine: Spine, alloc: Allocation, pure_dp: bool | None = None) -> tuple[Spine, Allocation]:
    """One bottom-up sweep bypassing every parent the rule selects.

    Levels are processed from L-1 down to 2 (the root stays), parents in
    index order; geounits created by a bypass are not revisited within the
    sweep. Bypasses that cannot change any measurement, a zero-proportion
    parent or a single child already at zero, are skipped, which makes the
    sweep idempotent: applying it twice returns the first result unchanged.
    """
    if pure_dp is None:
        pure_dp = alloc.is_pure
    for level in range(spine.num_levels - 1, 1, -1):
        offset = 0
        for orig in range(1, spine.level_size(level) + 1):
            gid = GeounitId(level, orig + offset)
            children = spine.children_ids(gid)
            c = len(children)
            gp = alloc.gamma_of(gid)
            gc = min(alloc.gamma_of(ch) for ch in children)
            if gp == 0.0 or (c == 1 and gc == 0.0):
                continue  # measurement-neutral; skipping keeps the pass a fixed point
            if bypass_rule(gp, gc, c, pure_dp):
                spine, alloc = bypass_parent(spine, alloc, gid, allow_unequal_children=True)
                offset += c - 1
    return spine, alloc


def blended_parent_variance(gamma_parent: float, gamma_child: float, c: int) -> float:
    """Best unbiased total-count variance for an unbypassed parent.

    Inverse-variance weighting of the parent's own answer (variance
    2/gamma_parent^2) against the summed child answers (2c/gamma_child^2).
    """
    return 2.0 * c / (c * gamma_parent**2 + gamma_child**2)


def bypassed_parent_variance(gamma_parent: float, gamma_child: float, c: int) -> float:
    """Total-count variance for the parent after bypassing: summed children
    at the boosted proportion."""
    return 2.0 * c / (gamma_parent + gamma_child) ** 2
