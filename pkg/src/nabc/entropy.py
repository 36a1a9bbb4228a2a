"""Matrix-level summaries: LNP, eigenvalue entropy and Minkowski norms.

Norms treat a shift of 0.02 near 0.97 the same as near 0.37. LNP, the sum
of log two-sided cell p-values, instead measures how improbable the whole
matrix is under the calibrated law, which is why it is the preferred
distance here; the norms are included for comparison.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import matrix as mx
from .errors import DimensionMismatch, DomainError, ZeroPValue


def lnp(pvalues) -> float:
    """Sum of log p-values.

    Raises
    ------
    ZeroPValue
        If any p-value is exactly 0; floor empirical zeros first.
    """
    pv = np.asarray(pvalues, dtype=float)
    if np.any(pv == 0):
        raise ZeroPValue("LNP undefined for a zero p-value")
    if np.any((pv < 0) | (pv > 1)):
        raise DomainError("p-values must lie in (0, 1]")
    return float(np.log(pv).sum())


def lnp_batch(pvalues: np.ndarray) -> np.ndarray:
    """Row-wise :func:`lnp` for a ``(m, cells)`` array."""
    pv = np.asarray(pvalues, dtype=float)
    if np.any(pv == 0):
        raise ZeroPValue("LNP undefined for a zero p-value")
    return np.log(pv).sum(axis=-1)


def matrix_entropy(R) -> float:
    """``-sum(l log l)`` over eigenvalues ``l`` of ``R / p``; ``0 log 0 = 0``."""
    R = np.asarray(R, dtype=float)
    lam = mx.eigenvalues(R) / R.shape[0]
    lam = lam[lam > 0]
    return float(-(lam * np.log(lam)).sum())


def matrix_entropy_batch(Rs: np.ndarray) -> np.ndarray:
    Rs = np.asarray(Rs, dtype=float)
    lam = np.linalg.eigvalsh(Rs) / Rs.shape[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(lam > 0, lam * np.log(np.where(lam > 0, lam, 1.0)), 0.0)
    return -t.sum(axis=-1)


def minkowski_norm(R, R_ref, m=2) -> float:
    """Norm of the lower-triangle differences; ``m`` in ``{1, 2, inf}`` or any ``m >= 1``."""
    R = np.asarray(R, dtype=float)
    R_ref = np.asarray(R_ref, dtype=float)
    if R.shape != R_ref.shape:
        raise DimensionMismatch(f"shapes differ: {R.shape} vs {R_ref.shape}")
    d = np.abs(mx.lower_vector(R) - mx.lower_vector(R_ref))
    if d.size == 0:
        return 0.0
    if m in (np.inf, "inf"):
        return float(d.max())
    m = float(m)
    if m < 1:
        raise DomainError("norm order must be >= 1")
    return float((d ** m).sum() ** (1.0 / m))


@dataclass
class DiagnosticsReport:
    lnp: Optional[float]
    entropy: float
    taxi: Optional[float]
    frobenius: Optional[float]
    chebyshev: Optional[float]
    reference: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def diagnostics(R, pvalues=None, R_ref=None, reference: str = "") -> DiagnosticsReport:
    norms = [None, None, None]
    if R_ref is not None:
        norms = [minkowski_norm(R, R_ref, m) for m in (1, 2, np.inf)]
    return DiagnosticsReport(
        lnp=lnp(pvalues) if pvalues is not None else None,
        entropy=matrix_entropy(R),
        taxi=norms[0],
        frobenius=norms[1],
        chebyshev=norms[2],
        reference=reference,
    )
