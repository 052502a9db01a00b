"""Parsing and emission of the project file formats.

All formats are versioned: text files start with a ``format_version=1``
line, JSON carries a ``format_version`` field. Emission is canonical and
deterministic, so identical inputs reproduce byte-identical files and
every format round-trips through parse(format(x)) == x.

spine file      header lines ``format_version=1``, ``levels=<L>``,
                ``root=<label>``; then one ``level,index,parent_index,label``
                line per non-root geounit in canonical order.
entity file     CSV ``entity,block_index`` after the version line; blocks
                absent from an entity are non-members.
allocation file JSON with budget_kind, budget, discrete, beta,
                alpha (per level), and gamma_overrides carrying
                skip_measurement flags for zeroed geounits.
workload file   one query group per line as factor strings, e.g.
                ``I(63)*1(2)*I(2)``, optionally prefixed ``name=``.
histogram file  ``cells=<n>`` header, then ``block_index,<n counts>`` rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .allocation import Allocation
from .matmech import Workload, parse_query_group
from .osed import OseSet
from .privacy import MechanismRun, PrivacyAudit
from .spine import GeounitId, Spine, SpineError, build_spine

FORMAT_VERSION = 1


class ParseError(Exception):
    """A file violates its format; the message carries file and line."""


class CrossRefError(Exception):
    """Files of one bundle are individually valid but mutually inconsistent."""


def _fail(path, lineno: int | None, msg: str):
    where = str(path) if lineno is None else f"{path}:{lineno}"
    raise ParseError(f"{where}: {msg}")


def _lines(text: str):
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line:
            yield i, line


def _expect_header(path, lines, key: str) -> str:
    try:
        lineno, line = next(lines)
    except StopIteration:
        _fail(path, None, f"missing {key}= header line")
    if not line.startswith(f"{key}="):
        _fail(path, lineno, f"expected {key}= header line, got {line!r}")
    return line.split("=", 1)[1]


# ---------------------------------------------------------------- spine


def format_spine(spine: Spine) -> str:
    out = [f"format_version={FORMAT_VERSION}", f"levels={spine.num_levels}"]
    out.append(f"root={spine.levels[0][0].label}")
    for (l, u), node in spine.units():
        if "\n" in node.label:
            raise ValueError(f"label {node.label!r} cannot be written to a line format")
        if l == 1:
            continue
        out.append(f"{l},{u},{node.parent},{node.label}")
    return "\n".join(out) + "\n"


def parse_spine(text: str, path="<spine>") -> Spine:
    lines = _lines(text)
    version = _expect_header(path, lines, "format_version")
    if version != str(FORMAT_VERSION):
        _fail(path, 1, f"unsupported format_version {version!r}")
    try:
        L = int(_expect_header(path, lines, "levels"))
    except ValueError:
        _fail(path, 2, "levels= must be an integer")
    if L < 1:
        _fail(path, 2, f"levels={L} is not a valid level count")

    root_label = "root"
    records: dict[tuple[int, int], tuple[int, str]] = {}
    for lineno, line in lines:
        if line.startswith("root="):
            root_label = line.split("=", 1)[1]
            continue
        parts = line.split(",", 3)
        if len(parts) != 4:
            _fail(path, lineno, "expected level,index,parent_index,label")
        try:
            l, u, p = int(parts[0]), int(parts[1]), int(parts[2])
        except ValueError:
            _fail(path, lineno, f"non-integer field in {line!r}")
        if not (2 <= l <= L):
            _fail(path, lineno, f"geolevel {l} outside 2..{L}")
        if (l, u) in records:
            _fail(path, lineno, f"duplicate geounit ({l},{u})")
        records[(l, u)] = (p, parts[3])

    sizes = [1] + [0] * (L - 1)
    for l, _ in records:
        sizes[l - 1] += 1
    for l in range(2, L + 1):
        seen = {u for (ll, u) in records if ll == l}
        if seen != set(range(1, sizes[l - 1] + 1)):
            _fail(path, None, f"geolevel {l} indices are not contiguous from 1")

    parent_map = {key: p for key, (p, _) in records.items()}
    labels = {key: lab for key, (_, lab) in records.items()}
    labels[(1, 1)] = root_label
    try:
        spine = build_spine(sizes, parent_map, labels)
    except SpineError as err:
        _fail(path, None, str(err))
    return spine


# ---------------------------------------------------------------- entities


def format_oses(oses: OseSet, spine: Spine) -> str:
    index_of = {label: j + 1 for j, label in enumerate(spine.block_labels)}
    out = [f"format_version={FORMAT_VERSION}", "entity,block_index"]
    for name in oses.names:
        if "," in name or "\n" in name:
            raise ValueError(f"entity name {name!r} cannot be written to CSV")
        for idx in sorted(index_of[label] for label in oses.members[name]):
            out.append(f"{name},{idx}")
    return "\n".join(out) + "\n"


def parse_oses(text: str, spine: Spine, path="<oses>") -> OseSet:
    lines = _lines(text)
    version = _expect_header(path, lines, "format_version")
    if version != str(FORMAT_VERSION):
        _fail(path, 1, f"unsupported format_version {version!r}")
    try:
        lineno, header = next(lines)
    except StopIteration:
        _fail(path, None, "missing entity,block_index header")
    if header != "entity,block_index":
        _fail(path, lineno, f"expected entity,block_index header, got {header!r}")

    members: dict[str, list[int]] = {}
    for lineno, line in lines:
        parts = line.split(",")
        if len(parts) != 2:
            _fail(path, lineno, "expected entity,block_index")
        name = parts[0]
        try:
            idx = int(parts[1])
        except ValueError:
            _fail(path, lineno, f"block_index {parts[1]!r} is not an integer")
        if not (1 <= idx <= spine.num_blocks):
            raise CrossRefError(
                f"{path}:{lineno}: entity {name!r} references block {idx} "
                f"of a {spine.num_blocks}-block spine"
            )
        members.setdefault(name, []).append(idx)
    return OseSet.from_block_indices(spine, members)


# ---------------------------------------------------------------- allocation


def format_allocation(alloc: Allocation, spine: Spine) -> str:
    overrides = []
    for (l, u), _ in spine.units():
        gamma = alloc.gamma[l - 1][u - 1]
        if gamma != alloc.beta[l - 1]:
            overrides.append(
                {"level": l, "index": u, "gamma": gamma, "skip_measurement": gamma == 0.0}
            )
    doc = {
        "format_version": FORMAT_VERSION,
        "budget_kind": alloc.budget_kind,
        "budget": alloc.budget,
        "discrete": alloc.discrete,
        "beta": list(alloc.beta),
        "alpha": {str(l + 1): list(row) for l, row in enumerate(alloc.alpha)},
        "gamma_overrides": overrides,
    }
    return json.dumps(doc, indent=2) + "\n"


def parse_allocation(text: str, spine: Spine, workload: Workload | None, path="<allocation>") -> Allocation:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        _fail(path, err.lineno, f"invalid JSON: {err.msg}")
    if doc.get("format_version") != FORMAT_VERSION:
        _fail(path, None, f"unsupported format_version {doc.get('format_version')!r}")
    for field in ("budget_kind", "budget", "beta", "alpha"):
        if field not in doc:
            _fail(path, None, f"missing field {field!r}")

    beta = [float(b) for b in doc["beta"]]
    if len(beta) != spine.num_levels:
        raise CrossRefError(
            f"{path}: beta has {len(beta)} entries for a {spine.num_levels}-level spine"
        )
    if abs(sum(beta) - 1.0) > 1e-9:
        raise CrossRefError(f"{path}: beta sums to {sum(beta)}")

    raw_alpha = doc["alpha"]
    if isinstance(raw_alpha, dict):
        try:
            alpha = [
                [float(a) for a in raw_alpha[str(l)]] for l in range(1, spine.num_levels + 1)
            ]
        except KeyError as err:
            raise CrossRefError(f"{path}: alpha is missing geolevel {err}") from None
    else:
        alpha = [float(a) for a in raw_alpha]
    if workload is not None:
        rows = alpha if isinstance(alpha[0], list) else [alpha]
        for row in rows:
            if len(row) != len(workload.groups):
                raise CrossRefError(
                    f"{path}: alpha lists {len(row)} proportions for "
                    f"{len(workload.groups)} query groups"
                )

    alloc = Allocation.fresh(
        spine,
        str(doc["budget_kind"]),
        float(doc["budget"]),
        beta,
        alpha,
        discrete=bool(doc.get("discrete", False)),
    )
    for entry in doc.get("gamma_overrides", []):
        gid = GeounitId(int(entry["level"]), int(entry["index"]))
        if not (1 <= gid.level <= spine.num_levels) or not (
            1 <= gid.index <= spine.level_size(gid.level)
        ):
            raise CrossRefError(f"{path}: gamma override targets nonexistent geounit {gid}")
        alloc = alloc.with_gamma(gid, float(entry["gamma"]))
    alloc.validate(spine)
    return alloc


# ---------------------------------------------------------------- workload


def format_workload(workload: Workload) -> str:
    out = [f"format_version={FORMAT_VERSION}"]
    for g in workload.groups:
        factors = "*".join(str(f) for f in g.factors)
        out.append(f"{g.name}={factors}" if g.name else factors)
    return "\n".join(out) + "\n"


def parse_workload(text: str, path="<workload>") -> Workload:
    lines = _lines(text)
    version = _expect_header(path, lines, "format_version")
    if version != str(FORMAT_VERSION):
        _fail(path, 1, f"unsupported format_version {version!r}")
    groups = []
    for lineno, line in lines:
        name, _, factors = line.rpartition("=")
        try:
            groups.append(parse_query_group(factors, name))
        except ValueError as err:
            _fail(path, lineno, str(err))
    if not groups:
        _fail(path, None, "workload lists no query groups")
    return Workload(tuple(groups))


# ---------------------------------------------------------------- histogram


def format_histogram(x: np.ndarray, num_cells: int) -> str:
    X = np.asarray(x).reshape(-1, num_cells)
    out = [f"format_version={FORMAT_VERSION}", f"cells={num_cells}"]
    for b, row in enumerate(X, start=1):
        out.append(",".join([str(b)] + [str(int(v)) for v in row]))
    return "\n".join(out) + "\n"


def parse_histogram(text: str, spine: Spine, path="<histogram>") -> np.ndarray:
    lines = _lines(text)
    version = _expect_header(path, lines, "format_version")
    if version != str(FORMAT_VERSION):
        _fail(path, 1, f"unsupported format_version {version!r}")
    try:
        n = int(_expect_header(path, lines, "cells"))
    except ValueError:
        _fail(path, 2, "cells= must be an integer")
    rows: dict[int, list[int]] = {}
    for lineno, line in lines:
        parts = line.split(",")
        if len(parts) != n + 1:
            _fail(path, lineno, f"expected block_index plus {n} counts")
        try:
            idx = int(parts[0])
            counts = [int(v) for v in parts[1:]]
        except ValueError:
            _fail(path, lineno, f"non-integer count in {line!r}")
        if any(v < 0 for v in counts):
            _fail(path, lineno, "counts must be nonnegative")
        if idx in rows:
            _fail(path, lineno, f"duplicate block {idx}")
        rows[idx] = counts
    if set(rows) != set(range(1, spine.num_blocks + 1)):
        raise CrossRefError(
            f"{path}: histogram covers blocks {sorted(rows)} of a {spine.num_blocks}-block spine"
        )
    return np.array([rows[b] for b in range(1, spine.num_blocks + 1)], dtype=np.int64)


# ---------------------------------------------------------------- bundle


@dataclass(frozen=True)
class ProjectBundle:
    spine_path: Path
    ose_path: Path
    allocation_path: Path
    workload_path: Path
    histogram_path: Path | None = None

    @classmethod
    def from_dir(cls, directory) -> "ProjectBundle":
        d = Path(directory)
        hist = d / "histogram.csv"
        return cls(
            spine_path=d / "spine.txt",
            ose_path=d / "oses.csv",
            allocation_path=d / "allocation.json",
            workload_path=d / "workload.txt",
            histogram_path=hist if hist.exists() else None,
        )


@dataclass(eq=False)
class LoadedBundle:
    spine: Spine
    oses: OseSet
    allocation: Allocation
    workload: Workload
    histogram: np.ndarray | None


def load_bundle(bundle: ProjectBundle) -> LoadedBundle:
    """Parse and cross-validate a bundle; every invariant is asserted here."""
    for p in (bundle.spine_path, bundle.ose_path, bundle.allocation_path, bundle.workload_path):
        if not Path(p).exists():
            raise ParseError(f"{p}: file does not exist")
    spine = parse_spine(Path(bundle.spine_path).read_text(), bundle.spine_path)
    spine.validate()
    oses = parse_oses(Path(bundle.ose_path).read_text(), spine, bundle.ose_path)
    workload = parse_workload(Path(bundle.workload_path).read_text(), bundle.workload_path)
    alloc = parse_allocation(
        Path(bundle.allocation_path).read_text(), spine, workload, bundle.allocation_path
    )
    histogram = None
    if bundle.histogram_path is not None:
        histogram = parse_histogram(
            Path(bundle.histogram_path).read_text(), spine, bundle.histogram_path
        )
        if histogram.shape[1] != workload.num_cells:
            raise CrossRefError(
                f"{bundle.histogram_path}: histogram has {histogram.shape[1]} cells, "
                f"workload expects {workload.num_cells}"
            )
    return LoadedBundle(spine, oses, alloc, workload, histogram)


def emit_spine(spine: Spine, alloc: Allocation | None, directory, stem: str = "spine_optimized") -> list[Path]:
    """Write a spine (and its allocation when given) under a directory."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = [d / f"{stem}.txt"]
    paths[0].write_text(format_spine(spine))
    if alloc is not None:
        p = d / "allocation_optimized.json"
        p.write_text(format_allocation(alloc, spine))
        paths.append(p)
    return paths


# ---------------------------------------------------------------- reports


def write_audit_json(audit: PrivacyAudit, path, delta_for_eps=None) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "budget_kind": audit.budget_kind,
        "budget": audit.budget,
        "achieved": audit.achieved,
        "worst_path_block": audit.worst_block,
        "worst_path_block_label": audit.worst_block_label,
        "per_level": list(audit.per_level),
    }
    if delta_for_eps is not None:
        eps, bound = delta_for_eps
        doc["delta_for_eps"] = {"eps": eps, "delta": bound.delta, "alpha_star": bound.alpha}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def write_variance_csv(report, path) -> None:
    lines = ["level,geounit,query_group,query_index,expected_squared_error"]
    for level, unit, group, query, value in report.rows():
        lines.append(f"{level},{unit},{group},{query},{value!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_measurements_csv(run: MechanismRun, path, include_true: bool = True) -> None:
    head = "level,geounit,query_group,query_index,"
    head += "true_answer,noisy_answer,scale" if include_true else "noisy_answer,scale"
    lines = [head]
    for level, unit, group, query, true, noisy, scale in run.rows():
        fields = [str(level), str(unit), group, str(query)]
        if include_true:
            fields.append(repr(true))
        fields.extend([repr(noisy), repr(scale)])
        lines.append(",".join(fields))
    Path(path).write_text("\n".join(lines) + "\n")


def write_osed_report(before: dict[str, int], after: dict[str, int], path) -> None:
    lines = ["entity,osed_before,osed_after"]
    for name in before:
        lines.append(f"{name},{before[name]},{after[name]}")
    Path(path).write_text("\n".join(lines) + "\n")
