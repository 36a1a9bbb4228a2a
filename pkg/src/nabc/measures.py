"""Bivariate dependence measures and all-pairwise matrices.

Every bivariate function takes two equal-length 1-d sequences. Rank-based
measures use average ranks for ties unless stated otherwise. The Chatterjee
family breaks ties in ``x`` at random; pass ``seed`` to make that
reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from . import matrix as mx
from .errors import (
    AllTied,
    CellEstimationFailure,
    ConstantSeries,
    DimensionMismatch,
    NoExceedances,
    NotPositiveDefinite,
    OutOfRange,
    TooFewExceedances,
)

SIGNED = {"pearson", "spearman", "kendall", "kendall_b", "tail_kendall"}
UNIT = {
    "tail_upper", "tail_lower", "szekely", "lancaster", "lancaster_linear",
    "chatterjee", "chatterjee_sym", "chatterjee_improved", "zhang",
}
ASYMMETRIC = {"chatterjee", "chatterjee_improved", "zhang", "tail_kendall", "tail_upper", "tail_lower"}
TAIL = {"tail_upper", "tail_lower", "tail_kendall"}
SEEDED = {"chatterjee", "chatterjee_sym", "chatterjee_improved", "zhang"}
MEASURES = sorted(SIGNED | UNIT)


def _pair(x, y, min_n: int = 2) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise DimensionMismatch(f"lengths differ: {x.size} vs {y.size}")
    if x.size < min_n:
        raise DimensionMismatch(f"need at least {min_n} observations, got {x.size}")
    return x, y


def _nonconstant(*series):
    for s in series:
        if np.ptp(s) == 0:
            raise ConstantSeries("series is constant")


# --- linear and rank correlations -------------------------------------------

def pearson(x, y) -> float:
    """Sample Pearson correlation."""
    x, y = _pair(x, y, 3)
    _nonconstant(x, y)
    xc = x - x.mean()
    yc = y - y.mean()
    r = (xc @ yc) / math.sqrt((xc @ xc) * (yc @ yc))
    return float(min(1.0, max(-1.0, r)))


def spearman(x, y) -> float:
    """Pearson correlation of average ranks."""
    x, y = _pair(x, y, 3)
    _nonconstant(x, y)
    return pearson(rankdata(x), rankdata(y))


def spearman_squared_differences(x, y) -> float:
    """``1 - 6 sum(d^2) / (n^3 - n)``; equals :func:`spearman` without ties."""
    x, y = _pair(x, y, 3)
    d = rankdata(x) - rankdata(y)
    n = x.size
    return float(1.0 - 6.0 * (d @ d) / (n ** 3 - n))


def _sign_pairs(v: np.ndarray) -> np.ndarray:
    i, j = np.triu_indices(v.shape[-1], 1)
    return np.sign(v[..., i] - v[..., j])


def kendall_tau(x, y) -> float:
    """Kendall's tau-a: (concordant - discordant) / C(n, 2)."""
    x, y = _pair(x, y, 2)
    n = x.size
    s = _sign_pairs(x) @ _sign_pairs(y)
    return float(2.0 * s / (n * (n - 1)))


def kendall_tau_b(x, y) -> float:
    """Kendall's tau-b with exact tie-group corrections."""
    x, y = _pair(x, y, 2)
    sx = _sign_pairs(x)
    sy = _sign_pairs(y)
    n0 = sx.size
    _, tx = np.unique(x, return_counts=True)
    _, ty = np.unique(y, return_counts=True)
    n1 = float((tx * (tx - 1) // 2).sum())
    n2 = float((ty * (ty - 1) // 2).sum())
    den = math.sqrt((n0 - n1) * (n0 - n2))
    if den == 0:
        raise AllTied("tau-b undefined: one series is entirely tied")
    return float((sx @ sy) / den)


# --- tails -------------------------------------------------------------------

def tail_dependence(x, y, q: float, side: str = "upper") -> float:
    """Empirical joint-exceedance frequency at a fixed quantile level.

    ``upper``: share of ``x > Qx(q)`` points that also have ``y > Qy(q)``.
    ``lower``: share of ``x <= Qx(q)`` points that also have ``y <= Qy(q)``.
    Quantiles are the linearly interpolated (type 7) sample quantiles.
    """
    x, y = _pair(x, y, 2)
    if not 0 < q < 1:
        raise OutOfRange("q must be in (0, 1)")
    qx = np.quantile(x, q)
    qy = np.quantile(y, q)
    if side == "upper":
        cond = x > qx
        joint = cond & (y > qy)
    elif side == "lower":
        cond = x <= qx
        joint = cond & (y <= qy)
    else:
        raise ValueError(f"side must be 'upper' or 'lower', got {side!r}")
    m = int(cond.sum())
    if m == 0:
        raise NoExceedances(f"no {side} exceedances of the {q} quantile")
    return float(joint.sum() / m)


def tail_kendall(x, y, q: float) -> float:
    """Kendall's tau over pairs whose ``x`` values both exceed ``X_(n-k)``.

    ``k = round(n (1 - q))`` and the sum is divided by ``C(k, 2)``. The
    conditioning is on ``x`` only, so the measure is directional.
    """
    x, y = _pair(x, y, 2)
    n = x.size
    k = int(round(n * (1 - q)))
    if k < 2:
        raise TooFewExceedances(f"k = {k} < 2 at q = {q}, n = {n}")
    thresh = np.sort(x)[n - k - 1]
    sel = x > thresh
    s = _sign_pairs(x[sel]) @ _sign_pairs(y[sel])
    return float(s / (k * (k - 1) / 2))


# --- distance and Lancaster correlations -------------------------------------

def _double_centre(v: np.ndarray) -> np.ndarray:
    d = np.abs(v[:, None] - v[None, :])
    return d - d.mean(axis=0, keepdims=True) - d.mean(axis=1, keepdims=True) + d.mean()


def szekely_dcorr(x, y) -> float:
    """Distance correlation ``sqrt(dCov^2 / sqrt(dVar_x^2 dVar_y^2))``."""
    x, y = _pair(x, y, 2)
    A = _double_centre(x)
    B = _double_centre(y)
    vx = (A * A).mean()
    vy = (B * B).mean()
    if vx <= 0 or vy <= 0:
        raise ConstantSeries("zero distance variance")
    c = max((A * B).mean(), 0.0)
    return float(min(1.0, math.sqrt(c / math.sqrt(vx * vy))))


def _standardise(v: np.ndarray) -> np.ndarray:
    return (v - v.mean()) / v.std(ddof=1)


def lancaster(x, y, variant: str = "normalized") -> float:
    """``max(|r(X, Y)|, |r(X^2, Y^2)|)`` on transformed margins.

    ``normalized`` maps each margin to normal scores ``Phi^-1(rank/(n+1))``
    for both terms; ``linear`` uses the raw series for the first term and
    standardised values for the squared term.
    """
    x, y = _pair(x, y, 3)
    _nonconstant(x, y)
    if variant == "normalized":
        xt = ndtri(rankdata(x) / (x.size + 1))
        yt = ndtri(rankdata(y) / (y.size + 1))
        first = pearson(xt, yt)
    elif variant == "linear":
        first = pearson(x, y)
        xt = _standardise(x)
        yt = _standardise(y)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    x2, y2 = xt * xt, yt * yt
    second = pearson(x2, y2) if np.ptp(x2) > 0 and np.ptp(y2) > 0 else 0.0
    return float(max(abs(first), abs(second)))


# --- Chatterjee family -------------------------------------------------------

def _order_by_x(x: np.ndarray, seed) -> np.ndarray:
    """Sort by x; ties go by `default_rng(seed).random(n)` drawn per observation."""
    rng = np.random.default_rng(seed)
    return np.lexsort((rng.random(x.size), x))


def _chatterjee_ranks(x, y, seed):
    order = _order_by_x(x, seed)
    ys = y[order]
    srt = np.sort(y)
    r = np.searchsorted(srt, ys, side="right").astype(float)  # #{j: y_j <= y_(i)}
    l = (y.size - np.searchsorted(srt, ys, side="left")).astype(float)  # #{j: y_j >= y_(i)}
    return r, l


def chatterjee(x, y, seed=0) -> float:
    """Chatterjee's rank correlation of ``y`` on ``x``.

    Uses ``1 - 3 sum|r_{i+1} - r_i| / (n^2 - 1)`` when ``y`` is tie-free and
    the tie-corrected ``1 - n sum|r_{i+1} - r_i| / (2 sum l_i (n - l_i))``
    otherwise. The two coincide without ties.
    """
    x, y = _pair(x, y, 3)
    n = x.size
    r, l = _chatterjee_ranks(x, y, seed)
    s = np.abs(np.diff(r)).sum()
    if np.unique(y).size == n:
        return float(1.0 - 3.0 * s / (n * n - 1.0))
    den = 2.0 * (l * (n - l)).sum()
    if den == 0:
        raise ConstantSeries("y is constant")
    return float(1.0 - n * s / den)


def chatterjee_sym(x, y, seed=0) -> float:
    return max(chatterjee(x, y, seed), chatterjee(y, x, seed))


def chatterjee_improved(x, y, seed=0, normalization: str = "inverse_distance") -> float:
    """Rank-gap statistic over all pairs weighted by ``1/|i - j|``.

    ``1 - sum_{i!=j} |r_i - r_j| / |i - j|  /  ((n + 1) / 3 * D)``. With
    ``normalization="inverse_distance"`` (default) ``D = sum_{i!=j} 1/|i-j|``,
    which centres the statistic at 0 under independence. ``"printed"`` uses
    ``D = sum_{i!=j} |i - j|``; that variant tends to 1 for any data and is
    kept only for comparison.
    """
    x, y = _pair(x, y, 3)
    n = x.size
    r, _ = _chatterjee_ranks(x, y, seed)
    gap = np.arange(1, n)
    mult = (n - gap).astype(float)  # pairs at each distance, one orientation
    num = 0.0
    for g in gap:
        num += np.abs(r[g:] - r[:-g]).sum() / g
    num *= 2.0
    if normalization == "inverse_distance":
        D = 2.0 * (mult / gap).sum()
    elif normalization == "printed":
        D = 2.0 * (mult * gap).sum()
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    return float(1.0 - num / ((n + 1) / 3.0 * D))


def zhang_combined(x, y, seed=0) -> float:
    """``max(|spearman|, sqrt(5/2) * chatterjee)`` clamped to ``[0, 1]``."""
    v = max(abs(spearman(x, y)), math.sqrt(2.5) * chatterjee(x, y, seed))
    return float(min(1.0, max(0.0, v)))


# --- conversions -------------------------------------------------------------

def _in_unit(v):
    v = np.asarray(v, dtype=float)
    if np.any(np.abs(v) > 1):
        raise OutOfRange("argument outside [-1, 1]")
    return v


def _out(v):
    return float(v) if np.ndim(v) == 0 else v


def tau_from_pearson(r):
    return _out(2.0 / np.pi * np.arcsin(_in_unit(r)))


def pearson_from_tau(tau):
    return _out(np.sin(np.pi * _in_unit(tau) / 2.0))


def spearman_from_pearson(r):
    return _out(6.0 / np.pi * np.arcsin(_in_unit(r) / 2.0))


def pearson_from_spearman(s):
    return _out(2.0 * np.sin(np.pi * _in_unit(s) / 6.0))


# --- matrices ----------------------------------------------------------------

@dataclass(frozen=True)
class MeasureSpec:
    """Which measure to compute and its parameters."""

    kind: str = "pearson"
    q: Optional[float] = None
    seed: int = 0
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in MEASURES:
            raise ValueError(f"unknown measure {self.kind!r}; choose from {MEASURES}")
        if (self.kind in TAIL) != (self.q is not None):
            raise ValueError(f"q is required for tail measures and only for them ({self.kind})")
        if self.q is not None and not 0 < self.q < 1:
            raise OutOfRange("q must be in (0, 1)")

    @property
    def signed(self) -> bool:
        return self.kind in SIGNED

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "seed": self.seed}
        if self.q is not None:
            d["q"] = self.q
        if self.options:
            d["options"] = dict(self.options)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MeasureSpec":
        return cls(kind=d.get("kind", "pearson"), q=d.get("q"), seed=int(d.get("seed", 0)),
                   options=dict(d.get("options", {})))


def cell_seed(base: int, i: int, j: int) -> int:
    """Tie-break seed for the 1-based cell ``(i, j)``."""
    return int(np.random.SeedSequence([int(base), int(i), int(j)]).generate_state(1)[0])


def bivariate(spec: MeasureSpec, x, y, seed=None) -> float:
    """Evaluate ``spec`` on one ordered pair."""
    s = spec.seed if seed is None else seed
    k = spec.kind
    if k == "pearson":
        return pearson(x, y)
    if k == "spearman":
        return spearman(x, y)
    if k == "kendall":
        return kendall_tau(x, y)
    if k == "kendall_b":
        return kendall_tau_b(x, y)
    if k == "tail_upper":
        return tail_dependence(x, y, spec.q, "upper")
    if k == "tail_lower":
        return tail_dependence(x, y, spec.q, "lower")
    if k == "szekely":
        return szekely_dcorr(x, y)
    if k == "lancaster":
        return lancaster(x, y, "normalized")
    if k == "lancaster_linear":
        return lancaster(x, y, "linear")
    if k == "chatterjee":
        return chatterjee(x, y, s)
    if k == "chatterjee_sym":
        return chatterjee_sym(x, y, s)
    if k == "chatterjee_improved":
        return chatterjee_improved(x, y, s, spec.options.get("normalization", "inverse_distance"))
    if k == "zhang":
        return zhang_combined(x, y, s)
    if k == "tail_kendall":
        return tail_kendall(x, y, spec.q)
    raise ValueError(k)


def pairwise_matrix(panel, spec: MeasureSpec, check_pd: bool = True) -> np.ndarray:
    """All-pairwise matrix of a returns panel (rows are observations).

    Cell ``(i, j)`` with ``i > j`` holds ``measure(X_j, X_i)``, the lower
    column index first, and is mirrored to ``(j, i)``.

    Raises
    ------
    CellEstimationFailure
        If the measure fails on a pair; the message names the cell.
    NotPositiveDefinite
        If ``check_pd`` and the assembled matrix fails the Cholesky test.
    """
    X = np.asarray(getattr(panel, "values", panel), dtype=float)
    if X.ndim != 2:
        raise DimensionMismatch("panel must be 2-d (observations x assets)")
    n, p = X.shape
    if n <= p:
        raise DimensionMismatch(f"need more observations than assets (n={n}, p={p})")
    fast = estimate_batch(X[None], spec)
    if fast is not None:
        R = fast[0]
    else:
        R = np.eye(p)
        for i, j in mx.cell_labels(p):
            try:
                v = bivariate(spec, X[:, j - 1], X[:, i - 1], cell_seed(spec.seed, i, j))
            except Exception as exc:  # surface which cell failed
                raise CellEstimationFailure(str(exc), cell=(i, j)) from exc
            R[i - 1, j - 1] = R[j - 1, i - 1] = v
    if check_pd and not mx.is_positive_definite(R):
        raise NotPositiveDefinite("assembled dependence matrix is not positive definite")
    return R


def estimate_batch(panels: np.ndarray, spec: MeasureSpec) -> Optional[np.ndarray]:
    """Vectorised matrices for a stack of panels ``(m, n, p)``.

    Returns ``None`` for measures without a batched implementation.
    """
    P = np.asarray(panels, dtype=float)
    k = spec.kind
    if k == "pearson":
        return _batch_pearson(P)
    if k == "spearman":
        return _batch_pearson(rankdata(P, axis=1))
    if k in ("kendall", "kendall_b"):
        return _batch_kendall(P, k == "kendall_b")
    return None


def _batch_pearson(P: np.ndarray) -> np.ndarray:
    Z = P - P.mean(axis=1, keepdims=True)
    ss = np.sqrt(np.einsum("mnp,mnp->mp", Z, Z))
    if np.any(ss == 0):
        raise ConstantSeries("a panel column is constant")
    Z = Z / ss[:, None, :]
    R = np.einsum("mnp,mnq->mpq", Z, Z)
    np.clip(R, -1.0, 1.0, out=R)
    idx = np.arange(P.shape[2])
    R[:, idx, idx] = 1.0
    return R


def _batch_kendall(P: np.ndarray, tau_b: bool, budget: int = 4_000_000) -> np.ndarray:
    m, n, p = P.shape
    i, j = np.triu_indices(n, 1)
    chunk_pairs = max(1, budget // (m * p))
    G = np.zeros((m, p, p))
    for s in range(0, i.size, chunk_pairs):
        ii, jj = i[s:s + chunk_pairs], j[s:s + chunk_pairs]
        S = np.sign(P[:, ii, :] - P[:, jj, :])
        G += np.einsum("mkp,mkq->mpq", S, S)
    if tau_b:
        d = np.sqrt(np.einsum("mpp->mp", G))
        if np.any(d == 0):
            raise AllTied("a panel column is entirely tied")
        R = G / (d[:, :, None] * d[:, None, :])
    else:
        R = G / i.size
    idx = np.arange(p)
    R[:, idx, idx] = 1.0
    return R


def estimate_matrices(panels, spec: MeasureSpec, seeds=None) -> np.ndarray:
    """Matrices for a stack of panels; generic per-cell loop when no batch path exists.

    ``seeds`` gives one base tie-break seed per panel (defaults to ``spec.seed``).
    """
    P = np.asarray(panels, dtype=float)
    fast = estimate_batch(P, spec)
    if fast is not None:
        return fast
    m, n, p = P.shape
    out = np.empty((m, p, p))
    for r in range(m):
        base = spec.seed if seeds is None else int(seeds[r])
        local = MeasureSpec(spec.kind, spec.q, base, spec.options)
        out[r] = pairwise_matrix(P[r], local, check_pd=False)
    return out
