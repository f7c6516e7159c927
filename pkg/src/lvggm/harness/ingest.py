"""CSV ingestion and CSV writers.

Dialect: comma separated, ``.`` decimal point, mandatory header row, UTF-8.
"""

from __future__ import annotations

import csv
import warnings
from pathlib import Path

import numpy as np

from ..linalg import InputError
from ..lvmodel import SampleCovariance

SYMMETRY_TOL = 1e-8


class IngestError(InputError):
    """Malformed CSV input. Carries the 1-based file ``line`` and ``column`` when known."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.line = line
        self.column = column


class ConstantColumnWarning(UserWarning):
    pass


def _read_numeric(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise IngestError(f"{path} is not UTF-8 text") from exc
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise IngestError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    width = len(header)
    if width == 0:
        raise IngestError("empty header row", line=1)
    body = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not cell.strip() for cell in row):
            continue  # blank line
        if len(row) != width:
            raise IngestError(f"ragged row: expected {width} fields, found {len(row)}", line=lineno)
        values = []
        for col, cell in enumerate(row, start=1):
            try:
                v = float(cell)
            except ValueError:
                raise IngestError(f"non-numeric cell {cell.strip()!r}", line=lineno, column=col) from None
            if not np.isfinite(v):
                raise IngestError(f"non-finite cell {cell.strip()!r}", line=lineno, column=col)
            values.append(v)
        body.append(values)
    if not body:
        raise IngestError(f"{path} has a header but no data rows")
    return header, np.array(body, dtype=float)


def ingest_csv(path, mode: str = "samples", n: int | None = None) -> SampleCovariance:
    """Read a samples or covariance CSV into a :class:`SampleCovariance`.

    ``samples``: rows are observations and columns are variables. Columns are
    centered and the covariance is ``Xc^T Xc / n``. Zero-variance columns
    trigger a :class:`ConstantColumnWarning`.

    ``covariance``: a square symmetric matrix under a header of variable
    names; the sample count must be passed as ``n``.
    """
    header, X = _read_numeric(path)
    if mode == "samples":
        n_obs = X.shape[0]
        if n is not None and n != n_obs:
            raise IngestError(f"n={n} given but the file holds {n_obs} observations")
        Xc = X - X.mean(axis=0)
        const = np.flatnonzero(np.all(Xc == 0.0, axis=0))
        if const.size:
            names = ", ".join(header[j] for j in const)
            warnings.warn(f"constant column(s) with zero variance: {names}", ConstantColumnWarning, stacklevel=2)
        return SampleCovariance(Xc.T @ Xc / n_obs, n_obs)
    if mode == "covariance":
        if n is None or n < 1:
            raise IngestError("covariance mode needs the sample count n >= 1")
        if X.shape[0] != X.shape[1]:
            raise IngestError(f"covariance must be square, got {X.shape[0]} rows and {X.shape[1]} columns")
        gap = np.abs(X - X.T)
        scale = max(1.0, float(np.abs(X).max()))
        if gap.max() > SYMMETRY_TOL * scale:
            i, j = np.unravel_index(np.argmax(gap), gap.shape)
            raise IngestError(f"matrix is not symmetric: |C[{i},{j}] - C[{j},{i}]| = {gap[i, j]:.3e}",
                              line=int(i) + 2, column=int(j) + 1)
        return SampleCovariance(0.5 * (X + X.T), int(n))
    raise IngestError(f"unknown mode {mode!r}; expected 'samples' or 'covariance'")


def _names(p: int, names=None) -> list[str]:
    if names is None:
        return [f"x{k}" for k in range(p)]
    if len(names) != p:
        raise ValueError("need one name per variable")
    return list(names)


def write_matrix_csv(path, M, names=None) -> None:
    """Write a matrix with a header row; values use ``repr`` so they read back exactly."""
    M = np.asarray(M, dtype=float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_names(M.shape[1], names))
        for row in M:
            w.writerow([repr(float(v)) for v in row])


def write_edges_csv(path, S, support_tol: float, names=None) -> int:
    """Edge list (``i < j``) of the thresholded sign pattern of ``S``. Returns the edge count."""
    S = np.asarray(S, dtype=float)
    labels = _names(S.shape[0], names)
    count = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "name_i", "name_j", "value", "sign"])
        for i, j in zip(*np.triu_indices_from(S, 1)):
            v = S[i, j]
            if abs(v) > support_tol:
                w.writerow([int(i), int(j), labels[i], labels[j], repr(float(v)), int(np.sign(v))])
                count += 1
    return count


def read_header(path) -> list[str]:
    return _read_numeric(path)[0]
