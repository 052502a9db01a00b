"""Privacy accounting, budget conversion, and noise generation.

The audit recomputes the privacy guarantee from first principles: along
every root-to-block path the per-geounit proportions of the measured rows
are summed, and the achieved budget is the global budget times the worst
path sum. Bypassing preserves path sums, so a valid pipeline output always
audits exactly at its budget. Conversion from the Gaussian-family budget
rho to an (epsilon, delta) guarantee solves a one-dimensional infimum over
the Renyi order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from .allocation import PURE, ZCDP, Allocation, AllocationInvalidError
from .matmech import Workload
from .spine import GeounitId, Spine

_SUM_TOL = 1e-12


class ConvergenceError(Exception):
    """The infimum search failed to bracket a minimizer."""


@dataclass(frozen=True)
class PrivacyAudit:
    """Achieved budget with the worst path as evidence."""

    budget_kind: str
    budget: float
    achieved: float
    worst_block: int  # 1-based canonical block index attaining the maximum
    worst_block_label: str
    per_level: tuple[float, ...]  # proportions along the worst path, level 1 first

    def within(self, tol: float = 1e-9) -> bool:
        return self.achieved <= self.budget + tol


@dataclass(frozen=True)
class NoiseSpec:
    """One noise family with its scale: b for the Laplace pair, sigma^2 for
    the Gaussian pair. Discrete families return integers."""

    family: str  # laplace | discrete_laplace | gaussian | discrete_gaussian
    scale: float
    loc: float = 0.0

    def __post_init__(self):
        if self.family not in ("laplace", "discrete_laplace", "gaussian", "discrete_gaussian"):
            raise ValueError(f"unknown noise family {self.family!r}")
        if not self.scale > 0:
            raise ValueError("noise scale must be positive")
        if self.family.startswith("discrete") and self.loc != int(self.loc):
            raise ValueError("discrete noise supports integer shifts only")


class DeltaBound(NamedTuple):
    delta: float
    alpha: float  # minimizing Renyi order


def _check_workload_identity(alloc: Allocation, workload: Workload) -> None:
    workload.assert_column_partition()
    Wd = workload.dense()
    for l, per_group in enumerate(alloc.alpha, start=1):
        row_alpha = workload.row_weights(per_group)
        colsums = row_alpha @ Wd
        if np.abs(colsums - 1.0).max() > _SUM_TOL:
            raise AllocationInvalidError(
                f"weighted query rows at geolevel {l} do not sum to one per cell"
            )


def _audit(spine: Spine, alloc: Allocation, workload: Workload | None) -> PrivacyAudit:
    alloc.validate(spine, tol=_SUM_TOL)
    if workload is not None:
        _check_workload_identity(alloc, workload)
    sums = alloc.path_sums(spine)
    worst = int(np.argmax(sums)) + 1
    chain = spine.ancestry(worst)
    return PrivacyAudit(
        budget_kind=alloc.budget_kind,
        budget=alloc.budget,
        achieved=float(alloc.budget * sums[worst - 1]),
        worst_block=worst,
        worst_block_label=spine.unit(chain[-1]).label,
        per_level=tuple(alloc.gamma_of(g) for g in chain),
    )


def audit_pure(spine: Spine, alloc: Allocation, workload: Workload | None = None) -> PrivacyAudit:
    """Achieved epsilon of the Laplace-family mechanism on this spine."""
    if alloc.budget_kind != PURE:
        raise AllocationInvalidError("audit_pure needs a pure-budget allocation")
    return _audit(spine, alloc, workload)


def audit_zcdp(spine: Spine, alloc: Allocation, workload: Workload | None = None) -> PrivacyAudit:
    """Achieved rho of the Gaussian-family mechanism on this spine."""
    if alloc.budget_kind != ZCDP:
        raise AllocationInvalidError("audit_zcdp needs a zcdp-budget allocation")
    return _audit(spine, alloc, workload)


def _log_objective(t: float, rho: float, eps: float) -> float:
    # t parameterizes alpha = 1 + e^t; log of exp((a-1)(a rho - eps)) (1 - 1/a)^a / (a - 1).
    # a log(1 - 1/a) is expanded as a (t - log a), with a - 1 = e^t held exactly,
    # to avoid cancellation when a approaches one.
    am1 = math.exp(t)
    a = 1.0 + am1
    return am1 * (a * rho - eps) + t * am1 - a * math.log1p(am1)


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_T_LIMIT = 700.0


def zcdp_to_approx_dp(rho: float, eps: float) -> DeltaBound:
    """Smallest delta for which a rho budget implies an (eps, delta) guarantee.

    Minimizes exp((a-1)(a*rho - eps)) * (1 - 1/a)^a / (a - 1) over the
    order a in (1, inf) by golden-section search on log(a - 1) after
    expanding a bracket around the minimizer; the result is clamped to
    [0, 1] since it bounds a probability.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    if eps < 0:
        raise ValueError("eps must be nonnegative")

    f = lambda t: _log_objective(t, rho, eps)
    # start near the stationary point of the quadratic part of the exponent
    t_mid = math.log(max((eps + rho) / (2.0 * rho) - 1.0, 1e-8))
    step = 1.0
    lo, hi = t_mid - step, t_mid + step
    while f(lo) <= f(t_mid):
        t_mid, hi = lo, t_mid
        step *= 2.0
        lo = t_mid - step
        if lo < -_T_LIMIT:
            raise ConvergenceError("bracket expansion ran past the lower search limit")
    step = 1.0
    while f(hi) <= f(t_mid):
        t_mid, lo = hi, t_mid
        step *= 2.0
        hi = t_mid + step
        if hi > _T_LIMIT:
            raise ConvergenceError("bracket expansion ran past the upper search limit")

    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(300):
        if b - a < 1e-13:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    t_star = (a + b) / 2.0
    log_delta = f(t_star)
    delta = 1.0 if log_delta >= 0.0 else math.exp(log_delta)
    return DeltaBound(delta=delta, alpha=1.0 + math.exp(t_star))


def _sample_discrete_laplace(b: float, count: int, rng: np.random.Generator) -> np.ndarray:
    # difference of two geometric variables has mass proportional to exp(-|x|/b)
    p = -np.expm1(-1.0 / b)
    return rng.geometric(p, count).astype(np.int64) - rng.geometric(p, count).astype(np.int64)


def _sample_discrete_gaussian(sigma2: float, count: int, rng: np.random.Generator) -> np.ndarray:
    # rejection from a discrete Laplace envelope with scale floor(sqrt(sigma2)) + 1
    t = float(math.floor(math.sqrt(sigma2))) + 1.0
    out = np.empty(count, dtype=np.int64)
    filled = 0
    while filled < count:
        batch = max(1024, int((count - filled) * 1.7))
        cand = _sample_discrete_laplace(t, batch, rng)
        accept_logp = -((np.abs(cand) - sigma2 / t) ** 2) / (2.0 * sigma2)
        kept = cand[rng.random(batch) < np.exp(accept_logp)]
        take = kept[: count - filled]
        out[filled : filled + take.size] = take
        filled += take.size
    return out


def sample(spec: NoiseSpec, count: int, rng: np.random.Generator) -> np.ndarray:
    """Independent draws from the noise family; the caller owns the seeding."""
    if spec.family == "laplace":
        return rng.laplace(spec.loc, spec.scale, count)
    if spec.family == "gaussian":
        return rng.normal(spec.loc, math.sqrt(spec.scale), count)
    if spec.family == "discrete_laplace":
        return _sample_discrete_laplace(spec.scale, count, rng) + int(spec.loc)
    return _sample_discrete_gaussian(spec.scale, count, rng) + int(spec.loc)


def noise_spec_for(alloc: Allocation, gamma: float, alpha: float) -> NoiseSpec:
    """Noise family and scale of one measured query row."""
    if alloc.is_pure:
        family = "discrete_laplace" if alloc.discrete else "laplace"
        return NoiseSpec(family, 2.0 / (alloc.budget * gamma * alpha))
    family = "discrete_gaussian" if alloc.discrete else "gaussian"
    return NoiseSpec(family, 1.0 / (alloc.budget * gamma * alpha))


@dataclass(eq=False)
class MechanismRun:
    """Noisy per-(geounit, query) answers for the measured spine rows."""

    units: tuple[GeounitId, ...]
    group_labels: tuple[str, ...]
    group_spans: tuple[tuple[int, int], ...]
    true_answers: np.ndarray  # (num kept units, workload rows)
    noisy_answers: np.ndarray
    scales: np.ndarray  # b or sigma^2 per answer

    def answers_vector(self) -> np.ndarray:
        return self.noisy_answers.reshape(-1)

    def rows(self) -> Iterator[tuple[int, int, str, int, float, float, float]]:
        """Yields (level, geounit, group, query, true, noisy, scale)."""
        for r, gid in enumerate(self.units):
            for label, (lo, hi) in zip(self.group_labels, self.group_spans):
                for j in range(lo, hi):
                    yield (
                        gid.level,
                        gid.index,
                        label,
                        j - lo + 1,
                        float(self.true_answers[r, j]),
                        float(self.noisy_answers[r, j]),
                        float(self.scales[r, j]),
                    )


def _histogram_matrix(spine: Spine, workload: Workload, x) -> np.ndarray:
    X = np.asarray(x)
    n = workload.num_cells
    if X.ndim == 1:
        if X.size != spine.num_blocks * n:
            raise ValueError(
                f"histogram must hold {spine.num_blocks} blocks x {n} cells = "
                f"{spine.num_blocks * n} counts, got {X.size}"
            )
        X = X.reshape(spine.num_blocks, n)
    elif X.shape != (spine.num_blocks, n):
        raise ValueError(f"histogram shaped {X.shape}, expected ({spine.num_blocks}, {n})")
    if np.any(X < 0) or not np.array_equal(X, np.floor(X)):
        raise ValueError("histogram counts must be nonnegative integers")
    return X.astype(float)


def run_mechanism(
    spine: Spine,
    alloc: Allocation,
    workload: Workload,
    x,
    seed: int,
    zero_noise: bool = False,
) -> MechanismRun:
    """Answer every query of every positively weighted geounit with noise.

    Scales are 2 / (eps * gamma * alpha) for the Laplace pair and variance
    1 / (rho * gamma * alpha) for the Gaussian pair; zero-proportion
    geounits are skipped entirely. Each measured geounit draws from its own
    substream of the seed, so outputs are reproducible regardless of
    evaluation order.
    """
    alloc.validate(spine)
    _check_workload_identity(alloc, workload)
    X = _histogram_matrix(spine, workload, x)
    Wd = workload.dense()
    kept = alloc.kept_units(spine)
    m = workload.num_rows

    true = np.empty((len(kept), m))
    scales = np.empty((len(kept), m))
    for r, gid in enumerate(kept):
        lo, hi = spine.block_range(gid)
        true[r] = Wd @ X[lo - 1 : hi - 1].sum(axis=0)
        gamma = alloc.gamma_of(gid)
        alpha = alloc.alpha[gid.level - 1]
        for (glo, ghi), a in zip(workload.group_spans, alpha, strict=True):
            spec = noise_spec_for(alloc, gamma, a)
            scales[r, glo:ghi] = spec.scale

    if zero_noise:
        noisy = true.copy()
    else:
        noisy = np.empty_like(true)
        streams = np.random.SeedSequence(seed).spawn(len(kept))
        for r, gid in enumerate(kept):
            rng = np.random.default_rng(streams[r])
            gamma = alloc.gamma_of(gid)
            alpha = alloc.alpha[gid.level - 1]
            row = np.empty(m)
            for (glo, ghi), a in zip(workload.group_spans, alpha, strict=True):
                spec = noise_spec_for(alloc, gamma, a)
                row[glo:ghi] = sample(spec, ghi - glo, rng)
            noisy[r] = true[r] + row

    return MechanismRun(
        units=tuple(kept),
        group_labels=tuple(g.label for g in workload.groups),
        group_spans=workload.group_spans,
        true_answers=true,
        noisy_answers=noisy,
        scales=scales,
    )
