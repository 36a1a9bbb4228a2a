"""File formats: panels and matrices as CSV, structured documents as JSON."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError


def read_panel(path) -> tuple[np.ndarray, list[str]]:
    """CSV with a header row of asset names; returns ``(n x p array, names)``."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read panel {path}: {exc}") from exc
    if len(rows) < 2:
        raise ConfigError(f"panel {path} needs a header and at least one row")
    names = [h.strip() for h in rows[0]]
    try:
        X = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"non-numeric value in panel {path}: {exc}") from exc
    if X.ndim != 2 or X.shape[1] != len(names):
        raise ConfigError(f"panel {path} rows do not match the header width")
    if not np.isfinite(X).all():
        raise ConfigError(f"panel {path} contains non-finite values")
    return X, names


def write_panel(path, X: np.ndarray, names: Optional[list[str]] = None) -> None:
    X = np.asarray(X, dtype=float)
    names = names or [f"x{k + 1}" for k in range(X.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        w.writerows([[repr(float(v)) for v in row] for row in X])


def read_matrix(path) -> np.ndarray:
    """A ``p x p`` matrix from JSON (``{"dim", "values"}``) or headerless CSV.

    Empty CSV fields (an upper triangle left blank) are filled by symmetry;
    ``nan`` values are kept as given.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read matrix {path}: {exc}") from exc
    if path.suffix.lower() == ".json":
        try:
            doc = json.loads(text)
            M = np.array([[np.nan if v is None else float(v) for v in row] for row in doc["values"]])
            dim = int(doc.get("dim", M.shape[0]))
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"malformed matrix document {path}: {exc}") from exc
        if M.shape != (dim, dim):
            raise ConfigError(f"matrix {path} is not {dim}x{dim}")
        return M
    rows = [r for r in csv.reader(text.splitlines()) if r]
    p = len(rows)
    M = np.full((p, p), np.nan)
    blank = np.zeros((p, p), dtype=bool)
    try:
        for a, r in enumerate(rows):
            for b in range(p):
                v = r[b].strip() if b < len(r) else ""
                if v == "":
                    blank[a, b] = True
                else:
                    M[a, b] = float(v)
    except ValueError as exc:
        raise ConfigError(f"non-numeric value in matrix {path}: {exc}") from exc
    M[blank] = M.T[blank]
    return M


def write_matrix(path, M: np.ndarray, measure: Optional[dict] = None, extra: Optional[dict] = None) -> None:
    path = Path(path)
    M = np.asarray(M, dtype=float)
    if path.suffix.lower() == ".json":
        doc = {"dim": int(M.shape[0]), "measure": measure, "values": M.tolist()}
        if extra:
            doc.update(extra)
        path.write_text(json.dumps(doc, indent=2))
    else:
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows([[repr(float(v)) for v in row] for row in M])


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read JSON document {path}: {exc}") from exc


def write_json(path, doc: dict) -> None:
    text = json.dumps(doc, indent=2, sort_keys=False)
    if path is None or str(path) == "-":
        print(text)
    else:
        Path(path).write_text(text + "\n")
