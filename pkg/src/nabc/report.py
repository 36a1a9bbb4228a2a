"""Inference report container and its JSON form."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np


def _plain(v):
    """JSON-safe copy: arrays to lists, numpy scalars to Python, nan to None."""
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        v = v.item()
    if isinstance(v, float) and not np.isfinite(v):
        return None
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


@dataclass
class InferenceReport:
    """Cell- and matrix-level results of one test.

    ``cells`` lists the 1-based ``(i, j)`` labels the p-values refer to, in
    the same order as ``cell_pvalues``. Bound matrices are full ``p x p``
    correlation matrices; ``None`` when not applicable.
    """

    kind: str
    dim: int
    cells: list
    cell_pvalues: np.ndarray
    matrix_pvalue: float
    alpha: float
    floored: Optional[np.ndarray] = None
    simultaneous_alphas: Optional[tuple] = None
    cell_ci_lower: Optional[np.ndarray] = None
    cell_ci_upper: Optional[np.ndarray] = None
    matrix_ci_lower: Optional[np.ndarray] = None
    matrix_ci_upper: Optional[np.ndarray] = None
    lnp: Optional[float] = None
    diagnostics: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def pvalue_matrix(self) -> np.ndarray:
        """p-values placed in a ``p x p`` array (``nan`` where not tested)."""
        M = np.full((self.dim, self.dim), np.nan)
        for (i, j), v in zip(self.cells, self.cell_pvalues):
            M[i - 1, j - 1] = M[j - 1, i - 1] = v
        return M

    def check(self, tol: float = 1e-12) -> None:
        """Re-derive the matrix p-value from the cell p-values."""
        pv = np.asarray(self.cell_pvalues, dtype=float)
        expect = 1.0 - np.prod(1.0 - pv)
        if abs(expect - self.matrix_pvalue) > tol:
            raise AssertionError(
                f"matrix p-value {self.matrix_pvalue} disagrees with cell p-values ({expect})"
            )

    def to_dict(self) -> dict[str, Any]:
        self.check()
        d = {
            "kind": self.kind,
            "dim": self.dim,
            "alpha": self.alpha,
            "matrix_pvalue": self.matrix_pvalue,
            "cells": [list(c) for c in self.cells],
            "cell_pvalues": self.cell_pvalues,
            "pvalue_matrix": self.pvalue_matrix(),
        }
        for name in ("floored", "simultaneous_alphas", "cell_ci_lower", "cell_ci_upper",
                     "matrix_ci_lower", "matrix_ci_upper", "lnp"):
            v = getattr(self, name)
            if v is not None:
                d[name] = v
        d["diagnostics"] = self.diagnostics
        d["extra"] = self.extra
        d["provenance"] = self.provenance
        return _plain(d)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)
