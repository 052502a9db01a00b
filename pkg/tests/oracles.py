"""Independent dense oracles used to validate the factored implementations.

Everything here is built from the definitions with plain numpy: the
rescaled strategy is materialized row by row, grams are inverted densely,
and the conversion objective is minimized by exhaustive grid search. None
of it shares code with the library paths under test.
"""

import numpy as np

from spinopt.allocation import Allocation
from spinopt.matmech import Workload
from spinopt.spine import Spine


def dense_spine_rows(spine: Spine, only_positive_gamma: Allocation | None = None) -> np.ndarray:
    """0/1 block membership rows of all geounits, level-major."""
    rows = []
    for (l, u), node in spine.units():
        if only_positive_gamma is not None and only_positive_gamma.gamma[l - 1][u - 1] <= 0.0:
            continue
        row = np.zeros(spine.num_blocks)
        row[node.block_lo - 1 : node.block_hi - 1] = 1.0
        rows.append(row)
    return np.array(rows)


def dense_strategy(spine: Spine, alloc: Allocation, workload: Workload) -> np.ndarray:
    """Rescaled strategy matrix, materialized in full."""
    A = dense_spine_rows(spine, only_positive_gamma=alloc)
    Wd = workload.dense()
    gammas = np.array(
        [alloc.gamma[l - 1][u - 1] for (l, u), _ in spine.units() if alloc.gamma[l - 1][u - 1] > 0]
    )
    alpha_rows = workload.row_weights(alloc.alpha[0])
    if alloc.is_pure:
        cA = gammas * alloc.budget / 2.0
        cW = alpha_rows
    else:
        cA = np.sqrt(gammas)
        cW = np.sqrt(alpha_rows * alloc.budget)
    return np.kron(cA[:, None] * A, cW[:, None] * Wd)


def dense_variance_matrix(spine: Spine, alloc: Allocation, workload: Workload) -> np.ndarray:
    """Full variance matrix of the workload answers of the OLS estimate."""
    S = dense_strategy(spine, alloc, workload)
    V = np.kron(dense_spine_rows(spine), workload.dense())
    unit_var = 2.0 if alloc.is_pure else 1.0
    M = np.linalg.inv(S.T @ S)
    return unit_var * V @ M @ V.T


def dense_ols(spine: Spine, alloc: Allocation, workload: Workload, answers: np.ndarray) -> np.ndarray:
    """Normal-equations solve on the materialized strategy."""
    S = dense_strategy(spine, alloc, workload)
    gammas = np.array(
        [alloc.gamma[l - 1][u - 1] for (l, u), _ in spine.units() if alloc.gamma[l - 1][u - 1] > 0]
    )
    alpha_rows = workload.row_weights(alloc.alpha[0])
    if alloc.is_pure:
        r = np.kron(gammas * alloc.budget / 2.0, alpha_rows)
    else:
        r = np.kron(np.sqrt(gammas), np.sqrt(alpha_rows * alloc.budget))
    z_scaled = r * np.asarray(answers, dtype=float).reshape(-1)
    return np.linalg.solve(S.T @ S, S.T @ z_scaled)


def exhaustive_signed_selection(spine: Spine, indicator) -> int:
    """Plain 3^n enumeration over signed geounit selections (tiny spines)."""
    import itertools

    rows = dense_spine_rows(spine).astype(np.int64)
    target = np.asarray(list(indicator), dtype=np.int64)
    best = None
    n = rows.shape[0]
    for signs in itertools.product((-1, 0, 1), repeat=n):
        if best is not None and sum(abs(s) for s in signs) >= best:
            continue
        if np.array_equal(np.dot(signs, rows), target):
            best = sum(abs(s) for s in signs)
    assert best is not None
    return best


def grid_search_delta(rho: float, eps: float, points: int = 10**6) -> float:
    """Exhaustive two-stage grid minimization of the conversion objective.

    Stage one scans a log-spaced grid over the order; stage two rescans a
    uniform grid between the neighbors of the stage-one argmin. Pure grid
    evaluation, no derivative or section search.
    """

    def log_objective(alpha: np.ndarray) -> np.ndarray:
        return (alpha - 1.0) * (alpha * rho - eps) - np.log(alpha - 1.0) + alpha * np.log1p(
            -1.0 / alpha
        )

    am1 = np.logspace(-9, 9, points)
    vals = log_objective(1.0 + am1)
    i = int(np.argmin(vals))
    lo = am1[max(i - 1, 0)]
    hi = am1[min(i + 1, points - 1)]
    fine = np.linspace(lo, hi, points)
    best = float(np.min(log_objective(1.0 + fine)))
    return 1.0 if best >= 0 else float(np.exp(best))
