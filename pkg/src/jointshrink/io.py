"""Plain-text readers and writers.

Dense matrices are delimited text with a header row of variable names and
the observation name in the first column. The sparse triplet format has a
``rows cols nnz`` header followed by 1-indexed ``i j value`` lines, with row
and column names in separate one-per-line files. Floats are written with 17
significant digits so every value survives a write/read cycle unchanged.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .covariance import MIN_GROUP_SIZE, GroupedDataset
from .errors import GroupTooSmall, ParseError, UnknownObservation, UnlabeledObservation
from .inference import EdgeSet


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _delimiter(path: Path, first_line: str) -> str:
    if path.suffix.lower() == ".csv":
        return ","
    if "\t" in first_line:
        return "\t"
    if "," in first_line:
        return ","
    return "\t"


def _lines(path: Path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if line.strip():
                yield lineno, line


def read_dense_matrix(path) -> tuple[np.ndarray, list[str], list[str]]:
    """Return ``(values, row_names, column_names)`` from a delimited file."""
    path = Path(path)
    it = _lines(path)
    try:
        lineno, header = next(it)
    except StopIteration:
        raise ParseError("empty matrix file", path=path) from None
    delim = _delimiter(path, header)
    cols = header.split(delim)[1:]
    if not cols:
        raise ParseError("header has no column names", lineno, path)
    rows, names = [], []
    for lineno, line in it:
        fields = line.split(delim)
        if len(fields) != len(cols) + 1:
            raise ParseError(f"expected {len(cols) + 1} fields, found {len(fields)}", lineno, path)
        try:
            rows.append(np.array(fields[1:], dtype=np.float64))
        except ValueError:
            raise ParseError("non-numeric value", lineno, path) from None
        names.append(fields[0])
    if not rows:
        raise ParseError("matrix has no data rows", path=path)
    return np.vstack(rows), names, cols


def _read_names(path) -> list[str]:
    return [line.strip() for _, line in _lines(Path(path))]


def read_triplet_matrix(path, row_names_path, col_names_path) -> tuple[np.ndarray, list[str], list[str]]:
    path = Path(path)
    it = ((n, l) for n, l in _lines(path) if not l.lstrip().startswith("%"))
    try:
        lineno, header = next(it)
    except StopIteration:
        raise ParseError("empty triplet file", path=path) from None
    try:
        nrow, ncol, nnz = (int(x) for x in header.split())
    except ValueError:
        raise ParseError("header must be 'rows cols nnz'", lineno, path) from None
    X = np.zeros((nrow, ncol))
    count = 0
    for lineno, line in it:
        parts = line.split()
        if len(parts) != 3:
            raise ParseError("expected 'i j value'", lineno, path)
        try:
            i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise ParseError("malformed triplet", lineno, path) from None
        if not (1 <= i <= nrow and 1 <= j <= ncol):
            raise ParseError(f"index ({i}, {j}) outside {nrow}x{ncol}", lineno, path)
        X[i - 1, j - 1] = v
        count += 1
    if count != nnz:
        raise ParseError(f"header announces {nnz} entries, found {count}", path=path)
    rnames, cnames = _read_names(row_names_path), _read_names(col_names_path)
    if len(rnames) != nrow or len(cnames) != ncol:
        raise ParseError(
            f"name files list {len(rnames)} rows and {len(cnames)} columns for a {nrow}x{ncol} matrix",
            path=path,
        )
    return X, rnames, cnames


def read_labels(path) -> list[tuple[str, str]]:
    """Observation-to-group pairs from a two-column file with a header row."""
    path = Path(path)
    it = _lines(path)
    try:
        _, header = next(it)
    except StopIteration:
        raise ParseError("empty labels file", path=path) from None
    delim = _delimiter(path, header)
    out = []
    seen = set()
    for lineno, line in it:
        fields = [f.strip() for f in line.split(delim)]
        if len(fields) != 2 or not all(fields):
            raise ParseError("expected 'observation<TAB>group'", lineno, path)
        if fields[0] in seen:
            raise ParseError(f"observation {fields[0]!r} labelled twice", lineno, path)
        seen.add(fields[0])
        out.append((fields[0], fields[1]))
    return out


def load_dataset(
    matrix_path,
    labels_path,
    *,
    matrix_format: str = "dense",
    row_names=None,
    col_names=None,
    transpose: bool = False,
) -> GroupedDataset:
    """Read an expression matrix plus labels and split it into groups.

    Groups appear in order of first mention in the labels file, observations
    keep their matrix order within a group.
    """
    if matrix_format == "dense":
        X, rnames, cnames = read_dense_matrix(matrix_path)
    elif matrix_format == "triplet":
        if row_names is None or col_names is None:
            raise ParseError("triplet format needs row and column name files", path=matrix_path)
        X, rnames, cnames = read_triplet_matrix(matrix_path, row_names, col_names)
    else:
        raise ParseError(f"unknown matrix format {matrix_format!r}")
    if transpose:
        X, rnames, cnames = X.T, cnames, rnames
    labels = read_labels(labels_path)
    index = {name: k for k, name in enumerate(rnames)}
    if len(index) != len(rnames):
        raise ParseError("duplicate observation names in matrix", path=matrix_path)
    members: dict[str, list[int]] = {}
    labelled = set()
    for obs, grp in labels:
        if obs not in index:
            raise UnknownObservation(obs)
        members.setdefault(grp, []).append(index[obs])
        labelled.add(obs)
    for name in rnames:
        if name not in labelled:
            raise UnlabeledObservation(name)
    groups = []
    for grp, rows in members.items():
        if len(rows) < MIN_GROUP_SIZE:
            raise GroupTooSmall(grp, len(rows))
        groups.append(X[np.sort(np.asarray(rows))])
    return GroupedDataset(groups, list(cnames), list(members))


# ------------------------------------------------------------------ writers


def write_dense_matrix(path, X, row_names, col_names, corner: str = "observation"):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join([corner, *col_names]) + "\n")
        for name, row in zip(row_names, np.asarray(X)):
            fh.write(name + "\t" + "\t".join(fmt(v) for v in row) + "\n")


def write_plain_matrix(path, X):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in np.asarray(X):
            fh.write("\t".join(fmt(v) for v in row) + "\n")


def read_plain_matrix(path) -> np.ndarray:
    rows = []
    for lineno, line in _lines(Path(path)):
        try:
            rows.append(np.array(line.split("\t"), dtype=np.float64))
        except ValueError:
            raise ParseError("non-numeric value", lineno, path) from None
    return np.vstack(rows)


def write_labels(path, observations, groups):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("observation\tgroup\n")
        for o, g in zip(observations, groups):
            fh.write(f"{o}\t{g}\n")


def write_edge_list(path, edges: EdgeSet, names):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("gene_i\tgene_j\tweight\n")
        for i, j, w in edges:
            fh.write(f"{names[i]}\t{names[j]}\t{fmt(w)}\n")


_TRUE = {"true", "1", "yes"}


def read_edge_list(path, names, group=None) -> EdgeSet:
    """Read an edge TSV keyed by variable name.

    Accepts the simulator's ``gene_i gene_j weight`` files and the per-group
    output of ``infer`` (only rows with ``selected`` true are kept).
    """
    path = Path(path)
    index = {n: k for k, n in enumerate(names)}
    it = _lines(path)
    try:
        lineno, header = next(it)
    except StopIteration:
        raise ParseError("empty edge list", path=path) from None
    cols = header.split("\t")
    if cols[:2] != ["gene_i", "gene_j"]:
        raise ParseError("edge list header must start with gene_i, gene_j", lineno, path)
    wcol = next((cols.index(c) for c in ("weight", "partial_correlation") if c in cols), None)
    scol = cols.index("selected") if "selected" in cols else None
    ii, jj, ww = [], [], []
    for lineno, line in it:
        f = line.split("\t")
        if len(f) != len(cols):
            raise ParseError(f"expected {len(cols)} fields", lineno, path)
        if scol is not None and f[scol].strip().lower() not in _TRUE:
            continue
        try:
            a, b = index[f[0]], index[f[1]]
        except KeyError as exc:
            raise ParseError(f"unknown variable {exc.args[0]!r}", lineno, path) from None
        try:
            w = float(f[wcol]) if wcol is not None else 1.0
        except ValueError:
            raise ParseError("non-numeric weight", lineno, path) from None
        ii.append(a)
        jj.append(b)
        ww.append(w)
    return EdgeSet(np.array(ii, np.int64), np.array(jj, np.int64), np.array(ww), group)
