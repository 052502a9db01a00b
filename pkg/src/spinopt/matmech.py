"""Kronecker-structured workload and strategy algebra.

Per-geounit queries are query groups: Kronecker products of identity and
ones-row factors over the histogram schema, stacked into a shared workload
W. The measured strategy is the spine representation A (rows with positive
proportion) crossed with W and rescaled so errors are homoskedastic, which
factors its gram matrix as G x H with

    G = A' diag(w) A   over blocks,   w = gamma^2 (Laplace) or gamma (Gaussian)
    H = W' diag(q) W   over cells,    q = (alpha eps / 2)^2 or alpha rho.

Every variance of the least-squares output V xhat, with V the full spine
workload, is then a product of a block-side and a cell-side quadratic form;
the full variance matrix is never materialized.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
import scipy.sparse as sp

from .allocation import Allocation
from .spine import GeounitId, Spine


class DimensionMismatchError(Exception):
    """Shapes of workload, allocation, or answers disagree."""


class SingularError(Exception):
    """The strategy gram matrix is rank-deficient."""


@dataclass(frozen=True)
class Factor:
    kind: str  # "identity" | "ones"
    size: int

    def __post_init__(self):
        if self.kind not in ("identity", "ones"):
            raise ValueError(f"unknown factor kind {self.kind!r}")
        if self.size < 1:
            raise ValueError("factor size must be positive")

    @property
    def rows(self) -> int:
        return self.size if self.kind == "identity" else 1

    @property
    def cols(self) -> int:
        return self.size

    def matrix(self) -> sp.csr_matrix:
        if self.kind == "identity":
            return sp.identity(self.size, dtype=np.int64, format="csr")
        return sp.csr_matrix(np.ones((1, self.size), dtype=np.int64))

    def __str__(self) -> str:
        return f"I({self.size})" if self.kind == "identity" else f"1({self.size})"


def identity(k: int) -> Factor:
    return Factor("identity", k)


def ones_row(k: int) -> Factor:
    return Factor("ones", k)


_FACTOR_RE = re.compile(r"^(I|1)\((\d+)\)$")


@dataclass(frozen=True)
class QueryGroup:
    """One marginal of the histogram as an ordered list of Kronecker factors."""

    factors: tuple[Factor, ...]
    name: str = ""

    def __post_init__(self):
        if not self.factors:
            raise ValueError("a query group needs at least one factor")

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(f.size for f in self.factors)

    @property
    def num_rows(self) -> int:
        out = 1
        for f in self.factors:
            out *= f.rows
        return out

    @property
    def num_cols(self) -> int:
        out = 1
        for f in self.factors:
            out *= f.cols
        return out

    @property
    def label(self) -> str:
        return self.name or "*".join(str(f) for f in self.factors)


def parse_query_group(text: str, name: str = "") -> QueryGroup:
    factors = []
    for part in text.strip().split("*"):
        m = _FACTOR_RE.match(part.strip())
        if m is None:
            raise ValueError(f"cannot parse factor {part!r}; expected I(k) or 1(k)")
        factors.append(identity(int(m.group(2))) if m.group(1) == "I" else ones_row(int(m.group(2))))
    return QueryGroup(tuple(factors), name)


def realize_query_group(group: QueryGroup) -> sp.csr_matrix:
    """Kronecker product of the factors, kept sparse."""
    out = None
    for f in group.factors:
        out = f.matrix() if out is None else sp.kron(out, f.matrix(), format="csr")
    return out


@dataclass(frozen=True)
class Workload:
    """Stacked query groups sharing one histogram schema."""

    groups: tuple[QueryGroup, ...]

    def __post_init__(self):
        if not self.groups:
            raise ValueError("a workload needs at least one query group")
        cols = {g.num_cols for g in self.groups}
        if len(cols) != 1:
            raise DimensionMismatchError(f"query groups disagree on cell count: {sorted(cols)}")

    @property
    def num_cells(self) -> int:
        return self.groups[0].num_cols

    @property
    def num_rows(self) -> int:
        return sum(g.num_rows for g in self.groups)

    @property
    def group_spans(self) -> tuple[tuple[int, int], ...]:
        spans, at = [], 0
        for g in self.groups:
            spans.append((at, at + g.num_rows))
            at += g.num_rows
        return tuple(spans)

    def matrix(self) -> sp.csr_matrix:
        return sp.vstack([realize_query_group(g) for g in self.groups], format="csr")

    def dense(self) -> np.ndarray:
        return self.matrix().toarray().astype(float)

    def row_weights(self, per_group: Sequence[float]) -> np.ndarray:
        """Expand one value per group to one value per workload row."""
        if len(per_group) != len(self.groups):
            raise DimensionMismatchError(
                f"{len(per_group)} group weights for {len(self.groups)} query groups"
            )
        return np.repeat(np.asarray(per_group, dtype=float), [g.num_rows for g in self.groups])

    def assert_column_partition(self) -> None:
        """Each group must touch every cell exactly once (marginal queries)."""
        for g in self.groups:
            counts = np.asarray(realize_query_group(g).sum(axis=0)).ravel()
            if not np.array_equal(counts, np.ones(g.num_cols)):
                raise DimensionMismatchError(f"query group {g.label!r} does not partition the cells")


def _uniform_alpha(alloc: Allocation, workload: Workload) -> np.ndarray:
    first = alloc.alpha[0]
    if any(level != first for level in alloc.alpha):
        raise ValueError(
            "variance analytics require identical query-group proportions in every geolevel"
        )
    if len(first) != len(workload.groups):
        raise DimensionMismatchError(
            f"{len(first)} proportions for {len(workload.groups)} query groups"
        )
    return np.asarray(first, dtype=float)


def _sym_inverse(mat: np.ndarray, what: str) -> np.ndarray:
    eigval, eigvec = np.linalg.eigh(mat)
    threshold = 1e-12 * float(np.abs(np.diag(mat)).max())
    if eigval.min() <= threshold:
        raise SingularError(f"{what} is singular (min eigenvalue {eigval.min():.3e})")
    return (eigvec / eigval) @ eigvec.T


@dataclass(eq=False)
class GramInverse:
    """Factored inverse of the rescaled strategy gram matrix."""

    g_inv: np.ndarray  # blocks x blocks
    h_inv: np.ndarray  # cells x cells
    kept: tuple[GeounitId, ...]  # measured spine rows, level-major
    unit_error_variance: float  # 2 for unit Laplace errors, 1 for unit Gaussian


def gram_inverse(spine: Spine, alloc: Allocation, workload: Workload) -> GramInverse:
    """Inverse gram factors (G^-1, H^-1) of the rescaled strategy.

    Requires the workload to have full column rank (include the detailed
    cell group) and every block to lie under some positively weighted row.
    """
    alloc.validate(spine)
    alpha = _uniform_alpha(alloc, workload)
    kept = tuple(alloc.kept_units(spine))
    B = spine.num_blocks

    G = np.zeros((B, B))
    for gid in kept:
        lo, hi = spine.block_range(gid)
        gamma = alloc.gamma_of(gid)
        w = gamma**2 if alloc.is_pure else gamma
        G[lo - 1 : hi - 1, lo - 1 : hi - 1] += w

    if alloc.is_pure:
        q = (workload.row_weights(alpha) * alloc.budget / 2.0) ** 2
        unit_var = 2.0
    else:
        q = workload.row_weights(alpha) * alloc.budget
        unit_var = 1.0
    Wd = workload.dense()
    H = Wd.T @ (q[:, None] * Wd)

    return GramInverse(
        g_inv=_sym_inverse(G, "block-side gram"),
        h_inv=_sym_inverse(H, "cell-side gram"),
        kept=kept,
        unit_error_variance=unit_var,
    )


@dataclass(eq=False)
class VarianceReport:
    """Expected squared error of every (geounit, query) workload answer."""

    units: tuple[GeounitId, ...]
    group_labels: tuple[str, ...]
    group_spans: tuple[tuple[int, int], ...]
    values: np.ndarray  # (num_units, workload rows)

    def rows(self) -> Iterator[tuple[int, int, str, int, float]]:
        """Yields (level, geounit, query_group, query_index, value)."""
        for r, gid in enumerate(self.units):
            for label, (lo, hi) in zip(self.group_labels, self.group_spans):
                for j in range(lo, hi):
                    yield gid.level, gid.index, label, j - lo + 1, float(self.values[r, j])

    def for_unit(self, gid: GeounitId) -> np.ndarray:
        return self.values[self.units.index(gid)]


def variance_diagonals(spine: Spine, alloc: Allocation, workload: Workload) -> VarianceReport:
    """diag(V (S'S)^-1 V') for the full spine workload V, factor by factor.

    Each workload row is a block-range row crossed with a query row, so its
    variance is (unit error variance) x (range quadratic form in G^-1)
    x (query quadratic form in H^-1).
    """
    gram = gram_inverse(spine, alloc, workload)
    Wd = workload.dense()
    h_vals = np.einsum("ij,jk,ik->i", Wd, gram.h_inv, Wd)

    units = tuple(gid for gid, _ in spine.units())
    g_vals = np.empty(len(units))
    for r, gid in enumerate(units):
        lo, hi = spine.block_range(gid)
        g_vals[r] = gram.g_inv[lo - 1 : hi - 1, lo - 1 : hi - 1].sum()

    values = gram.unit_error_variance * np.outer(g_vals, h_vals)
    return VarianceReport(
        units=units,
        group_labels=tuple(g.label for g in workload.groups),
        group_spans=workload.group_spans,
        values=values,
    )


def _strategy_weights(alloc: Allocation, workload: Workload, kept) -> tuple[np.ndarray, np.ndarray]:
    """Squared rescaling weights split into block-side and cell-side parts."""
    alpha = _uniform_alpha(alloc, workload)
    gammas = np.array([alloc.gamma_of(g) for g in kept])
    if alloc.is_pure:
        return gammas**2, (workload.row_weights(alpha) * alloc.budget / 2.0) ** 2
    return gammas, workload.row_weights(alpha) * alloc.budget


def kept_rows_dense(spine: Spine, kept: Sequence[GeounitId]) -> np.ndarray:
    """0/1 block membership rows of the measured geounits."""
    A = np.zeros((len(kept), spine.num_blocks))
    for r, gid in enumerate(kept):
        lo, hi = spine.block_range(gid)
        A[r, lo - 1 : hi - 1] = 1.0
    return A


@dataclass(eq=False)
class StrategyParts:
    """Kronecker decomposition of the rescaled strategy.

    The realized strategy equals kron(diag(block_scale) @ spine_rows,
    diag(query_scale) @ query_rows); noise scales per measured answer are
    ``noise_scale[i, j]`` (b for the Laplace pair, sigma^2 for Gaussian).
    """

    kept: tuple[GeounitId, ...]
    spine_rows: np.ndarray  # (num kept, num blocks) 0/1
    query_rows: np.ndarray  # (workload rows, cells)
    block_scale: np.ndarray  # per kept geounit
    query_scale: np.ndarray  # per workload row
    noise_scale: np.ndarray  # (num kept, workload rows)

    def realized(self) -> np.ndarray:
        return np.kron(
            self.block_scale[:, None] * self.spine_rows,
            self.query_scale[:, None] * self.query_rows,
        )


def strategy_parts(spine: Spine, alloc: Allocation, workload: Workload) -> StrategyParts:
    """Measured rows and rescaling factors of the strategy matrix."""
    alloc.validate(spine)
    alpha = _uniform_alpha(alloc, workload)
    kept = tuple(alloc.kept_units(spine))
    gammas = np.array([alloc.gamma_of(g) for g in kept])
    alpha_rows = workload.row_weights(alpha)
    if alloc.is_pure:
        block_scale = gammas * alloc.budget / 2.0
        query_scale = alpha_rows
        noise = 2.0 / (alloc.budget * np.outer(gammas, alpha_rows))
    else:
        block_scale = np.sqrt(gammas)
        query_scale = np.sqrt(alpha_rows * alloc.budget)
        noise = 1.0 / (alloc.budget * np.outer(gammas, alpha_rows))
    return StrategyParts(
        kept=kept,
        spine_rows=kept_rows_dense(spine, kept),
        query_rows=workload.dense(),
        block_scale=block_scale,
        query_scale=query_scale,
        noise_scale=noise,
    )


def ols_estimate(
    spine: Spine, alloc: Allocation, workload: Workload, answers: np.ndarray
) -> np.ndarray:
    """Least-squares histogram estimate from per-(geounit, query) answers.

    ``answers`` holds the mechanism outputs for the measured rows, flat in
    (geounit-major, query-minor) order or shaped (num kept units, num
    queries); the rescaling to homoskedastic errors happens internally.
    Returns the block-major cell estimate of length num_blocks x num_cells.
    With noiseless answers the estimate reproduces the true histogram.
    """
    gram = gram_inverse(spine, alloc, workload)
    kept = gram.kept
    m = workload.num_rows
    Z = np.asarray(answers, dtype=float)
    if Z.ndim == 1:
        if Z.size != len(kept) * m:
            raise DimensionMismatchError(
                f"expected {len(kept) * m} answers ({len(kept)} measured rows x {m} queries), got {Z.size}"
            )
        Z = Z.reshape(len(kept), m)
    elif Z.shape != (len(kept), m):
        raise DimensionMismatchError(f"answers shaped {Z.shape}, expected ({len(kept)}, {m})")

    wA, wQ = _strategy_weights(alloc, workload, kept)
    A = kept_rows_dense(spine, kept)
    Wd = workload.dense()
    # normal equations, Kronecker-factored: xhat = G^-1 (A' D_A Z D_Q W) H^-1
    M = A.T @ (wA[:, None] * Z * wQ[None, :]) @ Wd
    xhat = gram.g_inv @ M @ gram.h_inv
    return xhat.reshape(-1)
