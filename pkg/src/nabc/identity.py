"""Closed-form angle laws when the population matrix is the identity.

Under a Gaussian identity matrix every angle is independent with density
``c_k sin(x)^k`` on ``(0, pi)``. The cdf is a signed regularised incomplete
beta in ``cos(x)^2`` and the quantile inverts it directly, so cell and
matrix inference need no simulation at all.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import matrix as mx
from .errors import DomainError, InvalidK
from .special import gauss_2f1, inv_reg_inc_beta, log_gamma, reg_inc_beta


@dataclass(frozen=True)
class IdentityAngleLaw:
    """Angle law with density ``c_k sin(x)^k``."""

    k: int

    def __post_init__(self):
        if self.k < 1:
            raise InvalidK(f"k must be >= 1, got {self.k}")

    @property
    def c_k(self) -> float:
        k = self.k
        return math.exp(log_gamma(k / 2 + 1) - log_gamma(k / 2 + 0.5)) / math.sqrt(math.pi)

    @property
    def beta_b(self) -> float:
        return (1 + self.k) / 2

    def pdf(self, x):
        return angle_pdf(x, self)

    def cdf(self, x):
        return angle_cdf(x, self)

    def quantile(self, prob):
        return angle_quantile(prob, self)


@dataclass(frozen=True)
class SampleSizeContext:
    n: int
    p: int

    def __post_init__(self):
        if self.n <= self.p:
            raise InvalidK(f"need n > p, got n={self.n}, p={self.p}")


def k_for_cell(ctx: SampleSizeContext, col: int, mode: str = "finite_sample") -> int:
    """Exponent for a 1-based column.

    ``uniform`` gives ``p - col`` (angles of a uniformly random matrix);
    ``finite_sample`` gives ``n - col - 2`` (sample matrices of ``n``
    Gaussian observations under the identity).
    """
    if mode == "uniform":
        k = ctx.p - col
    elif mode == "finite_sample":
        k = ctx.n - col - 2
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if k < 1:
        raise InvalidK(f"k={k} < 1 for column {col} (n={ctx.n}, p={ctx.p})")
    return int(k)


def _as_law(law) -> IdentityAngleLaw:
    return law if isinstance(law, IdentityAngleLaw) else IdentityAngleLaw(int(law))


def angle_pdf(x, law):
    law = _as_law(law)
    x = np.asarray(x, dtype=float)
    out = law.c_k * np.sin(x) ** law.k
    out = np.where((x <= 0) | (x >= np.pi), 0.0, out)
    return out if out.ndim else float(out)


def angle_cdf(x, law):
    """Cdf of the angle law.

    For ``x < pi/2`` this is ``1/2 - I(cos^2 x; 1/2, (1+k)/2) / 2`` and the
    mirror image above ``pi/2``. Near the ends the equivalent
    ``I(sin^2 x; (1+k)/2, 1/2) / 2`` form is used to keep precision.
    """
    law = _as_law(law)
    x = np.asarray(x, dtype=float)
    a, b = 0.5, law.beta_b
    xc = np.clip(x, 0.0, np.pi)
    low = xc < np.pi / 2
    d = np.where(low, xc, np.pi - xc)  # distance to the nearer end
    c2 = np.cos(d) ** 2
    s2 = np.sin(d) ** 2
    near_end = d < np.pi / 4
    # tail mass beyond d on the near side
    tail = np.where(
        near_end,
        0.5 * reg_inc_beta(s2, b, a),
        0.5 - 0.5 * reg_inc_beta(c2, a, b),
    )
    out = np.where(low, tail, 1.0 - tail)
    return out if out.ndim else float(out)


def angle_cdf_hypergeometric(x, law):
    """Same cdf through ``1/2 - c_k cos(x) 2F1(1/2, (1-k)/2; 3/2; cos^2 x)``.

    Only used as an independent cross-check. The sign of ``cos(x)`` carries
    the branch, so one expression covers both halves of ``(0, pi)``.
    """
    law = _as_law(law)
    x = np.asarray(x, dtype=float)
    c = np.cos(x)
    f = gauss_2f1(0.5, (1 - law.k) / 2, 1.5, c * c)
    out = 0.5 - law.c_k * c * f
    return out if np.ndim(out) else float(out)


def angle_quantile(prob, law):
    """Inverse of :func:`angle_cdf` on ``(0, 1)``."""
    law = _as_law(law)
    prob = np.asarray(prob, dtype=float)
    if np.any((prob <= 0) | (prob >= 1)) or np.any(np.isnan(prob)):
        raise DomainError("angle_quantile needs prob in (0, 1)")
    a, b = 0.5, law.beta_b
    t = np.minimum(prob, 1.0 - prob)  # tail probability on the near side
    q = 1.0 - 2.0 * t
    # cos^2 of the distance d to the nearer end; use the sin^2 branch when d is small
    y = inv_reg_inc_beta(q, a, b)
    y = np.asarray(y, dtype=float)
    small = y > 0.5
    d = np.empty_like(y)
    d[~small] = np.arccos(np.sqrt(y[~small]))
    if small.any():
        s = np.asarray(inv_reg_inc_beta(2.0 * t[small], b, a), dtype=float)
        d[small] = np.arcsin(np.sqrt(s))
    out = np.where(prob < 0.5, d, np.pi - d)
    return out if out.ndim else float(out)


def identity_k_vector(p: int, n: int | None = None, mode: str = "finite_sample") -> np.ndarray:
    """Per-cell exponents in flat cell order."""
    ctx = SampleSizeContext(n if n is not None else p + 1, p)
    _, cols = mx.cell_indices(p)
    return np.array([k_for_cell(ctx, int(c) + 1, mode) for c in cols], dtype=int)


def sample_identity_angles(p: int, n: int, N: int, seed: int, mode: str = "finite_sample") -> np.ndarray:
    """Angle vectors, shape ``(N, p(p-1)/2)``, by inverse-transform sampling.

    Replicate ``r`` uses its own stream derived from ``(seed, r)`` so the
    result does not depend on how replicates are batched.
    """
    ks = identity_k_vector(p, n, mode)
    m = len(ks)
    u = np.empty((N, m))
    ss = np.random.SeedSequence(seed)
    for r in range(N):
        rng = np.random.default_rng(np.random.SeedSequence(ss.entropy, spawn_key=(r,)))
        u[r] = rng.random(m)
    # guard the open interval
    u = np.clip(u, 1e-300, 1 - 1e-16)
    theta = np.empty_like(u)
    for k in np.unique(ks):
        cols = ks == k
        theta[:, cols] = angle_quantile(u[:, cols], IdentityAngleLaw(int(k)))
    return theta


def sample_identity_matrices(p: int, n: int, N: int, seed: int, mode: str = "finite_sample") -> np.ndarray:
    """``N`` sample matrices under the identity, shape ``(N, p, p)``."""
    return mx.angle_vectors_to_corr(sample_identity_angles(p, n, N, seed, mode), p)


def cell_pvalue(x, law, sides: str = "two"):
    """Tail p-value of an observed angle under the identity law."""
    F = angle_cdf(x, law)
    one = np.minimum(F, 1.0 - F)
    if sides == "one":
        return one
    if sides == "two":
        return np.minimum(2.0 * one, 1.0)
    raise ValueError(f"sides must be 'one' or 'two', got {sides!r}")


def cell_ci(law, alpha: float) -> dict:
    """Equal-tailed angle interval and the matching correlation interval.

    ``cos`` is decreasing, so the high angle gives the low correlation.
    """
    if not 0 < alpha <= 1:
        raise DomainError("alpha must be in (0, 1]")
    if alpha == 1:
        lo = hi = np.pi / 2
    else:
        lo = angle_quantile(alpha / 2, law)
        hi = angle_quantile(1 - alpha / 2, law)
    return {
        "angle_low": float(lo),
        "angle_high": float(hi),
        "corr_low": float(np.cos(hi)),
        "corr_high": float(np.cos(lo)),
    }


def matrix_pvalue(cell_pvalues: Iterable[float]) -> float:
    """Probability that at least one cell is as extreme: ``1 - prod(1 - p_i)``."""
    pv = np.asarray(list(cell_pvalues), dtype=float)
    if np.any((pv < 0) | (pv > 1)):
        raise DomainError("p-values must lie in [0, 1]")
    return float(1.0 - np.prod(1.0 - pv))


def simultaneous_alphas(alpha: float, n_cells: int) -> tuple[float, float]:
    """Per-cell quantile levels for simultaneous coverage ``1 - alpha``."""
    if not 0 < alpha < 1:
        raise DomainError("alpha must be in (0, 1)")
    if n_cells < 1:
        raise DomainError("n_cells must be >= 1")
    low = 1.0 - (1.0 - alpha / 2) ** (1.0 / n_cells)
    return low, 1.0 - low


@dataclass
class PDProbability:
    """Chance that uniform(-1, 1) off-diagonals give a PD matrix."""

    p: int
    printed_formula: float
    upper_bound: float
    gamma_ratio_formula: float
    monte_carlo: float | None = None
    standard_error: float | None = None
    draws: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def pd_probability_printed(p: int) -> float:
    """``prod_j [sqrt(pi) Gamma((j+1)/2)]^j / 2^(p(p-1)/2)`` as commonly printed.

    Returns about 0.886 at ``p = 2`` although the true value is 1; kept only
    for comparison with :func:`pd_probability_monte_carlo`.
    """
    logv = sum(j * (0.5 * math.log(math.pi) + log_gamma((j + 1) / 2)) for j in range(1, p))
    return math.exp(logv - mx.n_cells(p) * math.log(2))


def pd_probability_gamma_ratio(p: int) -> float:
    """Variant with ``Gamma((j+2)/2)`` dividing each factor; equals 1 at ``p = 2``."""
    logv = sum(
        j * (0.5 * math.log(math.pi) + log_gamma((j + 1) / 2) - log_gamma((j + 2) / 2))
        for j in range(1, p)
    )
    return math.exp(logv - mx.n_cells(p) * math.log(2))


def pd_probability_bound(p: int) -> float:
    """``(sqrt(pi)/2)^(p(p-1)/2)``; fails as a bound at small ``p`` (0.886 < 1 at ``p = 2``)."""
    return (math.sqrt(math.pi) / 2) ** mx.n_cells(p)


def pd_probability_monte_carlo(p: int, draws: int, seed: int = 0, chunk: int = 200_000) -> tuple[float, float]:
    """Share of PD matrices among uniform random symmetric unit-diagonal draws."""
    rng = np.random.default_rng(seed)
    m = mx.n_cells(p)
    hits = 0
    done = 0
    while done < draws:
        b = min(chunk, draws - done)
        v = rng.uniform(-1.0, 1.0, size=(b, m))
        _, ok = mx.cholesky_batch(mx.symmetric_from_vector(v, p))
        hits += int(ok.sum())
        done += b
    est = hits / draws
    return est, math.sqrt(est * (1 - est) / draws)


def pd_probability(p: int, draws: int = 0, seed: int = 0) -> PDProbability:
    if p < 2:
        raise DomainError("p must be >= 2")
    out = PDProbability(
        p=p,
        printed_formula=pd_probability_printed(p),
        upper_bound=pd_probability_bound(p),
        gamma_ratio_formula=pd_probability_gamma_ratio(p),
    )
    if draws:
        out.monte_carlo, out.standard_error = pd_probability_monte_carlo(p, draws, seed)
        out.draws = draws
    return out


def identity_inference(R_obs, n: int, alpha: float = 0.05) -> dict:
    """Cell and matrix inference for an observed matrix against the identity.

    Returns two-sided cell p-values, the matrix p-value, and correlation
    bound matrices at the cell-level and simultaneous levels.
    """
    R_obs = mx.check_dependence_matrix(R_obs)
    p = R_obs.shape[0]
    theta = mx.lower_vector(mx.corr_to_angles(R_obs))
    ks = identity_k_vector(p, n)
    pv = np.array([cell_pvalue(t, int(k)) for t, k in zip(theta, ks)])
    a_lo, a_hi = simultaneous_alphas(alpha, len(ks))
    def bound(level):
        ang = np.array([angle_quantile(level, int(k)) for k in ks])
        return mx.angle_vectors_to_corr(ang[None], p)[0]
    return {
        "dim": p,
        "n": n,
        "alpha": alpha,
        "cells": mx.cell_labels(p),
        "cell_pvalues": pv,
        "matrix_pvalue": matrix_pvalue(pv),
        "simultaneous_alphas": (a_lo, a_hi),
        "cell_ci_upper": bound(alpha / 2),
        "cell_ci_lower": bound(1 - alpha / 2),
        "matrix_ci_upper": bound(a_lo),
        "matrix_ci_lower": bound(a_hi),
    }
