"""Privacy-loss budget allocations over a spine.

An allocation fixes the global budget (epsilon for the pure-Laplace family,
rho for the Gaussian family), per-geolevel proportions beta, per-geounit
proportions gamma aligned with a companion spine, and per-level, per-query-
group proportions alpha. On a fresh spine gamma equals beta on every
geounit of the level; bypassing moves gamma around while keeping the sum
along every root-to-block path equal to one.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .spine import GeounitId, Spine

PURE = "pure"
ZCDP = "zcdp"


class AllocationInvalidError(Exception):
    """Budget proportions violate their normalization or shape contract."""


def _as_alpha(alpha, num_levels: int) -> tuple[tuple[float, ...], ...]:
    seq = list(alpha)
    if seq and not isinstance(seq[0], (list, tuple, np.ndarray)):
        one = tuple(float(a) for a in seq)
        return tuple(one for _ in range(num_levels))
    return tuple(tuple(float(a) for a in level) for level in seq)


@dataclass(frozen=True)
class Allocation:
    budget_kind: str  # PURE or ZCDP
    budget: float  # epsilon or rho
    beta: tuple[float, ...]  # per geolevel, sums to 1
    alpha: tuple[tuple[float, ...], ...]  # per geolevel, per query group
    gamma: tuple[tuple[float, ...], ...]  # per geolevel, per geounit
    discrete: bool = False  # integer-valued noise family

    @classmethod
    def fresh(
        cls,
        spine: Spine,
        budget_kind: str,
        budget: float,
        beta: Sequence[float],
        alpha: Iterable,
        discrete: bool = False,
    ) -> "Allocation":
        """Allocation with gamma equal to beta on every geounit of a level."""
        beta_t = tuple(float(b) for b in beta)
        gamma = tuple(
            tuple(beta_t[l] for _ in range(spine.level_size(l + 1)))
            for l in range(spine.num_levels)
        )
        out = cls(budget_kind, float(budget), beta_t, _as_alpha(alpha, spine.num_levels), gamma, discrete)
        out.validate(spine)
        return out

    @property
    def is_pure(self) -> bool:
        return self.budget_kind == PURE

    def gamma_of(self, g: GeounitId) -> float:
        return self.gamma[g.level - 1][g.index - 1]

    def with_gamma(self, g: GeounitId, value: float) -> "Allocation":
        """Copy with one geounit's proportion replaced (test/corruption aid)."""
        level = list(self.gamma[g.level - 1])
        level[g.index - 1] = float(value)
        gamma = self.gamma[: g.level - 1] + (tuple(level),) + self.gamma[g.level :]
        return replace(self, gamma=gamma)

    def with_gamma_table(self, gamma: tuple[tuple[float, ...], ...]) -> "Allocation":
        return replace(self, gamma=gamma)

    def validate(self, spine: Spine, tol: float = 1e-12) -> None:
        if self.budget_kind not in (PURE, ZCDP):
            raise AllocationInvalidError(f"unknown budget kind {self.budget_kind!r}")
        if not self.budget > 0:
            raise AllocationInvalidError("budget must be positive")
        L = spine.num_levels
        if len(self.beta) != L:
            raise AllocationInvalidError(f"beta has {len(self.beta)} entries for {L} geolevels")
        if any(b <= 0 for b in self.beta):
            raise AllocationInvalidError("beta proportions must be positive")
        if abs(sum(self.beta) - 1.0) > tol:
            raise AllocationInvalidError(f"beta sums to {sum(self.beta)}")
        if len(self.alpha) != L:
            raise AllocationInvalidError(f"alpha has {len(self.alpha)} levels for {L} geolevels")
        for l, row in enumerate(self.alpha, start=1):
            if not row or any(a <= 0 for a in row):
                raise AllocationInvalidError(f"alpha proportions at geolevel {l} must be positive")
            if abs(sum(row) - 1.0) > tol:
                raise AllocationInvalidError(f"alpha at geolevel {l} sums to {sum(row)}")
        if len(self.gamma) != L or any(
            len(self.gamma[l - 1]) != spine.level_size(l) for l in range(1, L + 1)
        ):
            raise AllocationInvalidError("gamma shape does not match the spine")
        if any(g < 0 for level in self.gamma for g in level):
            raise AllocationInvalidError("gamma proportions must be nonnegative")

    def path_sums(self, spine: Spine) -> np.ndarray:
        """Sum of gamma along the ancestor chain of every block."""
        out = np.zeros(spine.num_blocks)
        for (l, u), node in spine.units():
            out[node.block_lo - 1 : node.block_hi - 1] += self.gamma[l - 1][u - 1]
        return out

    def kept_units(self, spine: Spine) -> list[GeounitId]:
        """Geounits with positive gamma, level-major; the measured rows."""
        return [gid for gid, _ in spine.units() if self.gamma_of(gid) > 0.0]
