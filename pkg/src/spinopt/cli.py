"""Command-line driver for the spine optimization pipeline.

Subcommands: ``optimize`` runs block-group redefinition, greedy tract-group
combining, and the bypass sweep, then writes the optimized spine with
before/after distance and variance reports; ``audit`` recomputes the
achieved privacy budget of a bundle and fails when it exceeds the target;
``simulate`` runs the noisy mechanism, the least-squares estimate, and a
replicated empirical-vs-analytic error comparison.

Exit codes: 0 success, 1 audit or computation failure, 2 invalid input.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .allocation import Allocation, AllocationInvalidError, PURE, ZCDP
from .bypass import pareto_pass
from .fileio import (
    CrossRefError,
    ParseError,
    ProjectBundle,
    emit_spine,
    load_bundle,
    write_audit_json,
    write_measurements_csv,
    write_osed_report,
    write_variance_csv,
)
from .matmech import (
    Workload,
    gram_inverse,
    kept_rows_dense,
    ols_estimate,
    strategy_parts,
    variance_diagonals,
)
from .osed import osed_all
from .privacy import (
    audit_pure,
    audit_zcdp,
    run_mechanism,
    zcdp_to_approx_dp,
    _sample_discrete_gaussian,
    _sample_discrete_laplace,
)
from .regroup import (
    LevelConventionError,
    OptConfig,
    initialize_tract_groups,
    optimize_tract_groups,
    redefine_block_groups,
)
from .spine import Spine, SpineError


@dataclass(frozen=True)
class RunConfig:
    """Validated flags of one CLI invocation."""

    command: str
    bundle: Path
    out: Path
    fanout_cutoff: int = 2
    mode: str | None = None  # override allocation budget kind
    eps: float | None = None
    rho: float | None = None
    delta_for_eps: float | None = None
    seed: int = 0
    stage: str = "full"
    replications: int = 1000
    threads: int = 1
    reducer: str = "sorted_descending"
    zero_noise: bool = False

    def __post_init__(self):
        if self.fanout_cutoff < 0:
            raise ValueError("--fanout-cutoff must be nonnegative")
        if self.stage not in ("full", "osed-only"):
            raise ValueError("--stage must be full or osed-only")
        if self.replications < 1:
            raise ValueError("--replications must be positive")
        if self.threads < 1:
            raise ValueError("--threads must be positive")
        if self.mode not in (None, PURE, ZCDP):
            raise ValueError("--mode must be pure or zcdp")
        if self.reducer not in ("max", "mean", "sorted_descending"):
            raise ValueError("--reducer must be max, mean, or sorted_descending")


def _apply_overrides(alloc: Allocation, cfg: RunConfig) -> Allocation:
    kind = cfg.mode or alloc.budget_kind
    if kind == PURE:
        budget = cfg.eps if cfg.eps is not None else (alloc.budget if alloc.budget_kind == PURE else None)
    else:
        budget = cfg.rho if cfg.rho is not None else (alloc.budget if alloc.budget_kind == ZCDP else None)
    if budget is None:
        flag = "--eps" if kind == PURE else "--rho"
        raise AllocationInvalidError(f"switching to {kind} requires {flag}")
    from dataclasses import replace

    return replace(alloc, budget_kind=kind, budget=float(budget))


def _audit_for(spine, alloc, workload):
    if alloc.is_pure:
        return audit_pure(spine, alloc, workload)
    return audit_zcdp(spine, alloc, workload)


def _write_variance(spine, alloc, workload, path) -> bool:
    try:
        write_variance_csv(variance_diagonals(spine, alloc, workload), path)
        return True
    except ValueError as err:
        print(f"note: variance report skipped: {err}", file=sys.stderr)
        return False


def _print_osed_summary(label: str, distances: dict[str, int], reducer: str) -> None:
    values = sorted(distances.values(), reverse=True)
    if reducer == "max":
        shown = max(values) if values else 0
    elif reducer == "mean":
        shown = float(np.mean(values)) if values else 0.0
    else:
        shown = values
    print(f"{label} distance ({reducer}): {shown}")


def cmd_optimize(cfg: RunConfig) -> int:
    bundle = load_bundle(ProjectBundle.from_dir(cfg.bundle))
    spine, oses = bundle.spine, bundle.oses
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    osed_before = osed_all(spine, oses)
    _write_variance(spine, bundle.allocation, bundle.workload, out / "variance_input.csv")

    optcfg = OptConfig(fanout_cutoff=cfg.fanout_cutoff)
    if spine.num_levels >= 3:
        spine = redefine_block_groups(spine, oses, optcfg)
    else:
        print("note: fewer than 3 geolevels, no block groups to redefine", file=sys.stderr)
    if spine.num_levels >= 5:
        spine = initialize_tract_groups(spine)
        spine = optimize_tract_groups(spine, oses, optcfg)
    else:
        print("note: fewer than 5 geolevels, no tract groups to optimize", file=sys.stderr)

    # distances after restructuring; the bypass sweep below only moves
    # budget into rows with identical footprints and cannot hurt any query
    osed_after = osed_all(spine, oses)

    base = bundle.allocation
    alloc = Allocation.fresh(
        spine, base.budget_kind, base.budget, base.beta, base.alpha, discrete=base.discrete
    )
    alloc = _apply_overrides(alloc, cfg)

    if cfg.stage == "full":
        spine, alloc = pareto_pass(spine, alloc)
    emit_spine(spine, alloc, out)
    write_osed_report(osed_before, osed_after, out / "osed_report.csv")
    _write_variance(spine, alloc, bundle.workload, out / "variance.csv")
    audit = _audit_for(spine, alloc, bundle.workload)
    write_audit_json(audit, out / "audit.json")

    _print_osed_summary("input", osed_before, cfg.reducer)
    _print_osed_summary("optimized", osed_after, cfg.reducer)
    print(f"achieved {audit.budget_kind} budget: {audit.achieved!r} (target {audit.budget!r})")
    return 0


def cmd_audit(cfg: RunConfig) -> int:
    bundle = load_bundle(ProjectBundle.from_dir(cfg.bundle))
    alloc = _apply_overrides(bundle.allocation, cfg)
    audit = _audit_for(bundle.spine, alloc, bundle.workload)

    delta_report = None
    if not alloc.is_pure:
        eps_at = cfg.delta_for_eps if cfg.delta_for_eps is not None else cfg.eps
        if eps_at is not None:
            bound = zcdp_to_approx_dp(audit.achieved, float(eps_at))
            delta_report = (float(eps_at), bound)
            print(f"delta at eps={eps_at}: {bound.delta!r} (alpha*={bound.alpha!r})")

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_audit_json(audit, out / "audit.json", delta_for_eps=delta_report)
    print(f"achieved {audit.budget_kind} budget: {audit.achieved!r} (target {audit.budget!r})")
    if not audit.within(1e-9):
        print(
            f"AUDIT FAILURE: achieved {audit.achieved!r} exceeds target {audit.budget!r}",
            file=sys.stderr,
        )
        return 1
    return 0


def _noise_tensor(alloc: Allocation, scales: np.ndarray, reps: int, rng) -> np.ndarray:
    shape = (reps,) + scales.shape
    if not alloc.discrete:
        if alloc.is_pure:
            return rng.laplace(0.0, scales, shape)
        return rng.normal(0.0, np.sqrt(scales), shape)
    out = np.empty(shape)
    for s in np.unique(scales):
        mask = scales == s
        count = int(mask.sum()) * reps
        if alloc.is_pure:
            draws = _sample_discrete_laplace(float(s), count, rng)
        else:
            draws = _sample_discrete_gaussian(float(s), count, rng)
        out[:, mask] = draws.reshape(reps, -1)
    return out


def _empirical_mse(spine, alloc, workload: Workload, X, reps: int, rng):
    """Mean squared error of every workload answer over noisy replications."""
    gram = gram_inverse(spine, alloc, workload)
    parts = strategy_parts(spine, alloc, workload)
    A, Wd = parts.spine_rows, parts.query_rows
    wA, wQ = parts.block_scale**2, parts.query_scale**2
    Xf = X.astype(float)
    true_kept = A @ Xf @ Wd.T

    Z = true_kept[None, :, :] + _noise_tensor(alloc, parts.noise_scale, reps, rng)
    ZW = Z * wA[None, :, None] * wQ[None, None, :]
    M = np.einsum("ab,rbm,mn->ran", A.T, ZW, Wd)
    XH = np.einsum("pa,ran,nq->rpq", gram.g_inv, M, gram.h_inv)

    units = tuple(gid for gid, _ in spine.units())
    U = kept_rows_dense(spine, units)
    Y = np.einsum("ub,rbn,mn->rum", U, XH, Wd)
    Ytrue = U @ Xf @ Wd.T
    mse = ((Y - Ytrue[None, :, :]) ** 2).mean(axis=0)
    return units, mse


def write_mse_comparison_csv(units, group_labels, group_spans, mse, analytic, path) -> None:
    lines = ["level,geounit,query_group,query_index,empirical_mse,analytic_variance,ratio"]
    for r, gid in enumerate(units):
        for label, (lo, hi) in zip(group_labels, group_spans):
            for j in range(lo, hi):
                emp, ana = float(mse[r, j]), float(analytic[r, j])
                lines.append(
                    f"{gid.level},{gid.index},{label},{j - lo + 1},{emp!r},{ana!r},{emp / ana!r}"
                )
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_simulate(cfg: RunConfig) -> int:
    bundle = load_bundle(ProjectBundle.from_dir(cfg.bundle))
    if bundle.histogram is None:
        raise CrossRefError(f"{cfg.bundle}: simulate needs a histogram.csv in the bundle")
    alloc = _apply_overrides(bundle.allocation, cfg)
    spine, workload, X = bundle.spine, bundle.workload, bundle.histogram
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    run = run_mechanism(spine, alloc, workload, X, cfg.seed, zero_noise=cfg.zero_noise)
    write_measurements_csv(run, out / "measurements.csv")

    xhat = ols_estimate(spine, alloc, workload, run.noisy_answers)
    n = workload.num_cells
    lines = ["block_index,cell_index,estimate"]
    for b in range(spine.num_blocks):
        for c in range(n):
            lines.append(f"{b + 1},{c + 1},{float(xhat[b * n + c])!r}")
    (out / "xhat.csv").write_text("\n".join(lines) + "\n")

    report = variance_diagonals(spine, alloc, workload)
    write_variance_csv(report, out / "variance.csv")

    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5EED]))
    units, mse = _empirical_mse(spine, alloc, workload, X, cfg.replications, rng)
    write_mse_comparison_csv(
        units, report.group_labels, report.group_spans, mse, report.values, out / "mse_comparison.csv"
    )
    worst = float(np.abs(mse / report.values - 1.0).max())
    print(f"replications: {cfg.replications}, worst empirical/analytic deviation: {worst:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spinopt",
        description="Optimize geographic spines for private hierarchical histogram release",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--bundle", required=True, type=Path, help="bundle directory")
        p.add_argument("--out", required=True, type=Path, help="output directory")
        p.add_argument("--mode", choices=(PURE, ZCDP), default=None, help="override budget kind")
        p.add_argument("--eps", type=float, default=None, help="pure budget override")
        p.add_argument("--rho", type=float, default=None, help="zcdp budget override")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1, help="worker cap (reserved)")

    p_opt = sub.add_parser("optimize", help="run both optimization stages")
    common(p_opt)
    p_opt.add_argument("--fanout-cutoff", type=int, default=2)
    p_opt.add_argument("--stage", choices=("full", "osed-only"), default="full")
    p_opt.add_argument(
        "--reducer", choices=("max", "mean", "sorted_descending"), default="sorted_descending"
    )

    p_audit = sub.add_parser("audit", help="recompute the achieved privacy budget")
    common(p_audit)
    p_audit.add_argument("--delta-for-eps", type=float, default=None)

    p_sim = sub.add_parser("simulate", help="run the mechanism and compare errors")
    common(p_sim)
    p_sim.add_argument("--replications", type=int, default=1000)
    p_sim.add_argument("--zero-noise", action="store_true")
    return parser


_COMMANDS = {"optimize": cmd_optimize, "audit": cmd_audit, "simulate": cmd_simulate}


def config_from_args(args: argparse.Namespace) -> RunConfig:
    return RunConfig(
        command=args.command,
        bundle=args.bundle,
        out=args.out,
        fanout_cutoff=getattr(args, "fanout_cutoff", 2),
        mode=args.mode,
        eps=args.eps,
        rho=args.rho,
        delta_for_eps=getattr(args, "delta_for_eps", None),
        seed=args.seed,
        stage=getattr(args, "stage", "full"),
        replications=getattr(args, "replications", 1000),
        threads=args.threads,
        reducer=getattr(args, "reducer", "sorted_descending"),
        zero_noise=getattr(args, "zero_noise", False),
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    try:
        return _COMMANDS[cfg.command](cfg)
    except (ParseError, CrossRefError, FileNotFoundError) as err:
        print(f"{type(err).__name__}: {err}", file=sys.stderr)
        return 2
    except (SpineError, AllocationInvalidError, LevelConventionError, ValueError) as err:
        print(f"{type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
