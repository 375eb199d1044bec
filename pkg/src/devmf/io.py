"""Matrix and fit serialization shared by the library and the CLI.

Dense CSV is the canonical interchange format (plain numeric rows, no
header); weights travel as a second file of identical shape. MatrixMarket
coordinate files are also read, with unlisted entries becoming zeros of
weight one, or holdout entries (weight zero) on request.

All writers format floats with ``repr``, the shortest decimal that survives
a round trip, so outputs are byte-identical for identical inputs and
read-back reproduces fits exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .canonicalize import CanonicalFit, CenteredFit
from .engine import DataMatrix
from .families import Family, Link, get_family, get_link

META_NAME = "meta.json"


class ParseError(ValueError):
    """Malformed input file; the message carries the offending line number."""


def _fmt(x: float) -> str:
    return repr(float(x))


def _parse_dense_csv(text: str, path) -> np.ndarray:
    rows = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        cells = line.split(",")
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise ParseError(f"{path}: line {lineno}: expected {width} columns, "
                             f"got {len(cells)}")
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            raise ParseError(f"{path}: line {lineno}: non-numeric cell") from None
    if not rows:
        raise ParseError(f"{path}: no data rows")
    out = np.asarray(rows, dtype=float)
    if not np.all(np.isfinite(out)):
        raise ParseError(f"{path}: non-finite value in matrix")
    return out


def _parse_matrix_market(text: str, path, missing_as_holdout: bool):
    lines = text.splitlines()
    if not lines or not lines[0].startswith("%%MatrixMarket"):
        raise ParseError(f"{path}: line 1: missing MatrixMarket header")
    header = lines[0].lower().split()
    if "coordinate" not in header:
        raise ParseError(f"{path}: line 1: only coordinate format is supported")
    body = [(i, ln) for i, ln in enumerate(lines[1:], start=2)
            if ln.strip() and not ln.lstrip().startswith("%")]
    if not body:
        raise ParseError(f"{path}: missing size line")
    lineno, size_line = body[0]
    parts = size_line.split()
    if len(parts) != 3:
        raise ParseError(f"{path}: line {lineno}: size line needs 'rows cols nnz'")
    try:
        n, p, nnz = (int(v) for v in parts)
    except ValueError:
        raise ParseError(f"{path}: line {lineno}: non-integer size entry") from None
    if len(body) - 1 != nnz:
        raise ParseError(f"{path}: declared {nnz} entries, found {len(body) - 1}")
    x = np.zeros((n, p))
    w = np.zeros((n, p)) if missing_as_holdout else np.ones((n, p))
    for lineno, line in body[1:]:
        parts = line.split()
        if len(parts) != 3:
            raise ParseError(f"{path}: line {lineno}: entry needs 'row col value'")
        try:
            i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise ParseError(f"{path}: line {lineno}: non-numeric entry") from None
        if not (1 <= i <= n and 1 <= j <= p):
            raise ParseError(f"{path}: line {lineno}: index ({i}, {j}) out of range")
        x[i - 1, j - 1] = v
        w[i - 1, j - 1] = 1.0
    return x, w


def read_matrix(path, fmt: str = "csv", missing_as_holdout: bool = False) -> DataMatrix:
    """Read a dense matrix; MatrixMarket also yields a weight pattern."""
    text = Path(path).read_text()
    if fmt == "csv":
        return DataMatrix(_parse_dense_csv(text, path))
    if fmt in ("mm", "matrixmarket"):
        x, w = _parse_matrix_market(text, path, missing_as_holdout)
        return DataMatrix(x, w)
    raise ValueError(f"unknown matrix format {fmt!r}; use 'csv' or 'matrixmarket'")


def write_matrix(path, values) -> None:
    values = np.atleast_2d(np.asarray(values, dtype=float))
    lines = [",".join(_fmt(v) for v in row) for row in values]
    Path(path).write_text("\n".join(lines) + "\n")


def write_vector(path, values) -> None:
    Path(path).write_text("\n".join(_fmt(v) for v in np.asarray(values).ravel()) + "\n")


@dataclass
class FitBundle:
    """A fit read back from disk, with its model configuration."""

    fit: CanonicalFit | CenteredFit
    family: Family
    link: Link
    meta: dict


def write_fit(directory, fit: CanonicalFit | CenteredFit, family: Family,
              link: Link, extra_meta: dict | None = None) -> None:
    """Write factor matrices plus a metadata document into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    centered = isinstance(fit, CenteredFit)
    core = fit.residual if centered else fit
    write_matrix(directory / "lambda.csv", core.scores)
    write_matrix(directory / "v.csv", core.v)
    write_vector(directory / "d.csv", core.d)
    if centered:
        write_matrix(directory / "base.csv", fit.base)
        write_matrix(directory / "base_loadings.csv", fit.base_loadings)
    raw = fit.raw
    meta = {
        "format_version": 1,
        "family": family.name,
        "phi": float(family.phi),
        "trials": float(family.trials),
        "link": link.name,
        "rank": int(core.rank),
        "n": int(core.u.shape[0]),
        "p": int(core.v.shape[0]),
        "centered": centered,
        "converged": bool(raw.converged) if raw is not None else None,
        "iterations": int(raw.iterations) if raw is not None else None,
        "deviance_trace": [float(v) for v in raw.deviance_trace] if raw is not None else [],
    }
    if extra_meta:
        meta.update(extra_meta)
    (directory / META_NAME).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_fit(directory) -> FitBundle:
    """Load a fit directory written by ``write_fit``."""
    directory = Path(directory)
    meta_path = directory / META_NAME
    if not meta_path.exists():
        raise FileNotFoundError(f"{directory} does not contain a fit ({META_NAME} missing); "
                                "run the fit command first")
    meta = json.loads(meta_path.read_text())
    scores = _parse_dense_csv((directory / "lambda.csv").read_text(), directory / "lambda.csv")
    v = _parse_dense_csv((directory / "v.csv").read_text(), directory / "v.csv")
    d = _parse_dense_csv((directory / "d.csv").read_text(), directory / "d.csv").ravel()
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(d > 0, scores / d, 0.0)
    core = CanonicalFit(u=u, d=d, v=v)
    family = get_family(meta["family"], phi=meta.get("phi"), trials=meta.get("trials"))
    link = get_link(meta["link"], phi=meta.get("phi"))
    if meta.get("centered"):
        base = _parse_dense_csv((directory / "base.csv").read_text(), directory / "base.csv")
        base_loadings = _parse_dense_csv((directory / "base_loadings.csv").read_text(),
                                         directory / "base_loadings.csv")
        fit = CenteredFit(base=base, base_loadings=base_loadings, residual=core)
        return FitBundle(fit=fit, family=family, link=link, meta=meta)
    return FitBundle(fit=core, family=family, link=link, meta=meta)


def write_gof_report(directory, report) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    doc = {
        "statistic": report.statistic,
        "df": report.df,
        "p_value": report.p_value,
        "n_groups_requested": report.n_groups_requested,
        "phi": report.phi,
        "cuts": [float(v) for v in report.cuts],
        "group_counts": [int(v) for v in report.group_counts],
        "group_residuals": [float(v) for v in report.group_stats],
    }
    (directory / "gof_report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    write_vector(directory / "group_residuals.csv", report.group_stats)


def write_rank_report(directory, report) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    doc = {
        "q_hat": int(report.q_hat),
        "q_max": int(report.q_max),
        "delta": float(report.delta),
        "mode": report.mode,
        "converged": bool(report.converged),
        "no_signal": bool(report.no_signal),
        "history": [[int(c), float(dl), int(q)] for c, dl, q in report.history],
    }
    (directory / "rank_report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    profile = "\n".join(f"{i + 1}\t{_fmt(v)}" for i, v in enumerate(report.eigenvalues))
    (directory / "eigenvalues.tsv").write_text(profile + "\n")
    gaps = "\n".join(f"{i + 1}\t{_fmt(v)}" for i, v in enumerate(report.gaps))
    (directory / "gaps.tsv").write_text(gaps + "\n")


def write_result_table(path, table) -> None:
    Path(path).write_text(table.to_delimited())
