"""Special functions for the identity-case angle law.

Vectorised over array arguments. The incomplete beta uses the modified
Lentz continued fraction with the usual symmetry split, its inverse a
bracketed Newton iteration, and the hypergeometric function a plain power
series (only used as a cross-check on the beta form).
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DomainError, NoConvergence

_TINY = 1e-300
_EPS = 1e-16
_MAXIT = 20000

_lgamma = np.frompyfunc(math.lgamma, 1, 1)


def log_gamma(x):
    """``ln |Gamma(x)|`` for positive arguments (scalar or array)."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("log_gamma needs positive arguments")
    out = np.asarray(_lgamma(x), dtype=float)
    return out if out.ndim else float(out)


def log_beta(a, b):
    return log_gamma(a) + log_gamma(b) - log_gamma(np.asarray(a) + np.asarray(b))


def _betacf(x, a, b):
    """Continued fraction for the incomplete beta (Lentz), vectorised."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < _TINY, _TINY, d)
    d = 1.0 / d
    h = d.copy()
    active = np.ones(x.shape, dtype=bool)
    for m in range(1, _MAXIT + 1):
        if not active.any():
            return h
        idx = np.nonzero(active)
        xa, aa_, ba, qa, qp, qm = x[idx], a[idx], b[idx], qab[idx], qap[idx], qam[idx]
        ca, da, ha = c[idx], d[idx], h[idx]
        m2 = 2 * m
        num = m * (ba - m) * xa / ((qm + m2) * (aa_ + m2))
        da = 1.0 + num * da
        da = np.where(np.abs(da) < _TINY, _TINY, da)
        ca = 1.0 + num / ca
        ca = np.where(np.abs(ca) < _TINY, _TINY, ca)
        da = 1.0 / da
        ha = ha * da * ca
        num = -(aa_ + m) * (qa + m) * xa / ((aa_ + m2) * (qp + m2))
        da = 1.0 + num * da
        da = np.where(np.abs(da) < _TINY, _TINY, da)
        ca = 1.0 + num / ca
        ca = np.where(np.abs(ca) < _TINY, _TINY, ca)
        da = 1.0 / da
        delta = da * ca
        ha = ha * delta
        c[idx], d[idx], h[idx] = ca, da, ha
        done = np.abs(delta - 1.0) < _EPS
        active[idx[0][done]] = False
    raise NoConvergence("incomplete beta continued fraction did not converge")


def reg_inc_beta(x, a, b):
    """Regularised incomplete beta ``I_x(a, b)``.

    Parameters
    ----------
    x : array_like
        Points in ``[0, 1]``.
    a, b : array_like
        Positive shape parameters; broadcast against ``x``.

    Returns
    -------
    float or ndarray

    Examples
    --------
    >>> round(reg_inc_beta(0.25, 0.5, 1.0), 12)
    0.5
    """
    x, a, b = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, a, b)))
    shape = x.shape
    if np.any((x < 0) | (x > 1)) or np.any(np.isnan(x)):
        raise DomainError("reg_inc_beta needs x in [0, 1]")
    if np.any(a <= 0) or np.any(b <= 0):
        raise DomainError("reg_inc_beta needs a, b > 0")
    x = x.ravel().astype(float)
    a = a.ravel().astype(float)
    b = b.ravel().astype(float)
    out = np.empty_like(x)
    out[x <= 0] = 0.0
    out[x >= 1] = 1.0
    mid = (x > 0) & (x < 1)
    if mid.any():
        xm, am, bm = x[mid], a[mid], b[mid]
        flip = xm > (am + 1.0) / (am + bm + 2.0)
        xs = np.where(flip, 1.0 - xm, xm)
        as_ = np.where(flip, bm, am)
        bs = np.where(flip, am, bm)
        lf = as_ * np.log(xs) + bs * np.log1p(-xs) - log_beta(as_, bs)
        val = np.exp(lf) * _betacf(xs, as_, bs) / as_
        out[mid] = np.where(flip, 1.0 - val, val)
    out = np.clip(out, 0.0, 1.0)
    return out.reshape(shape) if shape else float(out[0])


def _beta_pdf(x, a, b):
    return np.exp((a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x) - log_beta(a, b))


def inv_reg_inc_beta(p, a, b, tol: float = 1e-14):
    """Inverse of :func:`reg_inc_beta` in its first argument.

    Bracketed Newton iteration; any step leaving the current bracket is
    replaced by bisection.
    """
    p, a, b = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (p, a, b)))
    shape = p.shape
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise DomainError("inv_reg_inc_beta needs p in [0, 1]")
    if np.any(a <= 0) or np.any(b <= 0):
        raise DomainError("inv_reg_inc_beta needs a, b > 0")
    p = p.ravel().astype(float)
    a = a.ravel().astype(float)
    b = b.ravel().astype(float)
    x = np.empty_like(p)
    x[p <= 0] = 0.0
    x[p >= 1] = 1.0
    mid = (p > 0) & (p < 1)
    if mid.any():
        x[mid] = _invert(p[mid], a[mid], b[mid], tol)
    return x.reshape(shape) if shape else float(x[0])


def _invert(p, a, b, tol):
    lo = np.zeros_like(p)
    hi = np.ones_like(p)
    # starting point: small-x and small-(1-x) power approximations of the cdf
    lb = log_beta(a, b)
    x_small = np.exp((np.log(p) + np.log(a) + lb) / a)
    x_large = 1.0 - np.exp((np.log1p(-p) + np.log(b) + lb) / b)
    mean = a / (a + b)
    x = np.where(p < reg_inc_beta(mean, a, b), x_small, x_large)
    x = np.clip(np.nan_to_num(x, nan=0.5), 1e-300, 1 - 1e-16)
    x = np.where((x <= 0) | (x >= 1), mean, x)
    active = np.ones(p.shape, dtype=bool)
    prev_f = np.full(p.shape, np.inf)
    for _ in range(400):
        if not active.any():
            break
        i = np.nonzero(active)[0]
        xi = x[i]
        f = reg_inc_beta(xi, a[i], b[i]) - p[i]
        pos = f > 0
        hi[i] = np.where(pos, xi, hi[i])
        lo[i] = np.where(pos, lo[i], xi)
        dens = _beta_pdf(xi, a[i], b[i])
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = xi - f / dens
        # bisect when Newton leaves the bracket or |f| fails to halve
        # (crawling near a singular density, or stuck at rounding noise)
        slow = np.abs(f) > 0.5 * prev_f[i]
        bad = ~np.isfinite(xn) | (xn <= lo[i]) | (xn >= hi[i]) | slow
        xn = np.where(bad, 0.5 * (lo[i] + hi[i]), xn)
        xn = np.where(f == 0, xi, xn)
        prev_f[i] = np.abs(f)
        step = np.abs(xn - xi)
        x[i] = xn
        # relative to the distance from the nearer end of (0, 1)
        scale = np.maximum(np.minimum(xn, 1.0 - xn), 1e-290)
        width = hi[i] - lo[i]
        near = np.maximum(np.minimum(lo[i], 1.0 - hi[i]), 1e-290)
        done = (f == 0) | ((step <= tol * scale) & ~bad) | (width <= tol * near) | (width <= 4e-16)
        active[i[done]] = False
    else:
        raise NoConvergence("inverse incomplete beta did not converge")
    return x


def gauss_2f1(a, b, c, z, rtol: float = 1e-15, max_terms: int = 1_000_000):
    """Gauss hypergeometric function by its power series, ``|z| < 1``.

    Examples
    --------
    >>> round(gauss_2f1(1.0, 1.0, 2.0, 0.5), 10)
    1.3862943611
    """
    z = np.asarray(z, dtype=float)
    if np.any(np.abs(z) >= 1):
        raise ValueError("gauss_2f1 series needs |z| < 1")
    if float(c) <= 0 and float(c) == int(c):
        raise ValueError("c must not be a nonpositive integer")
    near = z > 0.5
    if z.ndim and near.any() and not near.all():
        # the transforms below are chosen per side of z = 1/2
        out = np.empty_like(z)
        out[near] = gauss_2f1(a, b, c, z[near], rtol, max_terms)
        out[~near] = gauss_2f1(a, b, c, z[~near], rtol, max_terms)
        return out
    for u, v in ((a, b), (b, a)):
        m = -float(v)
        if m >= 0 and m == int(m) and np.all(z > 0.5):
            out = _terminating_2f1(float(u), int(m), float(c), z)
            if out is not None:
                return out if out.ndim else float(out)
    # a negative parameter makes the direct series alternate and cancel; the
    # Euler transform (1-z)^(c-a-b) 2F1(c-a, c-b; c; z) has positive terms
    ca, cb = float(c) - float(a), float(c) - float(b)
    if min(float(a), float(b)) < 0 and ca > 0 and cb > 0 and float(c) > 0 and np.all(z > 0):
        expo = ca + cb - float(c)
        out = None
        if np.all(z > 0.5) and expo != round(expo):
            # near 1 the Euler series needs ~|b|/(1-z) terms; go to 1-z instead
            out = _connection_2f1(float(a), float(b), float(c), z, rtol, max_terms)
        elif np.all(expo * -np.log1p(-z) < 600):
            out = (1.0 - z) ** expo * np.asarray(gauss_2f1(ca, cb, c, z, rtol, max_terms))
        if out is not None:
            return out if out.ndim else float(out)
    term = np.ones_like(z)
    total = np.ones_like(z)
    active = np.ones(z.shape, dtype=bool)
    for n in range(max_terms):
        term = term * ((a + n) * (b + n) / ((c + n) * (n + 1.0))) * z
        total = total + term
        active = np.abs(term) > rtol * np.abs(total)
        if not active.any():
            return total if total.ndim else float(total)
    raise NoConvergence(f"2F1 series did not converge in {max_terms} terms")


def _signed_lgamma(x: float):
    """``(log|Gamma(x)|, sign Gamma(x))``."""
    if x > 0:
        return math.lgamma(x), 1.0
    return math.lgamma(x), (-1.0 if math.floor(x) % 2 else 1.0)


def _connection_2f1(a: float, b: float, c: float, z: np.ndarray, rtol: float, max_terms: int):
    """``2F1(a, b; c; z)`` through the two-term expansion around ``z = 1``.

    Needs ``c - a - b`` non-integer. Returns ``None`` if a gamma argument
    is a pole.
    """
    s = c - a - b
    args = (c, s, c - a, c - b, -s, a, b)
    if any(v <= 0 and v == int(v) for v in args):
        return None
    lg = {v: _signed_lgamma(v) for v in args}
    l1 = lg[c][0] + lg[s][0] - lg[c - a][0] - lg[c - b][0]
    s1 = lg[c][1] * lg[s][1] * lg[c - a][1] * lg[c - b][1]
    l2 = lg[c][0] + lg[-s][0] - lg[a][0] - lg[b][0]
    s2 = lg[c][1] * lg[-s][1] * lg[a][1] * lg[b][1]
    w = 1.0 - z
    f1 = np.asarray(gauss_2f1(a, b, 1.0 - s, w, rtol, max_terms))
    f2 = np.asarray(gauss_2f1(c - a, c - b, 1.0 + s, w, rtol, max_terms))
    # w^s * exp(l2) evaluated in logs so that large |s| does not overflow
    return s1 * math.exp(l1) * f1 + s2 * np.exp(l2 + s * np.log(w)) * f2


def _terminating_2f1(a: float, m: int, c: float, z: np.ndarray):
    """``2F1(a, -m; c; z)`` expanded around ``z = 1``.

    Uses ``(c-a)_m / (c)_m * 2F1(a, -m; a-c-m+1; 1-z)``, which avoids the
    cancellation of the alternating polynomial near ``z = 1``. Returns
    ``None`` when the transformed series hits a zero denominator early.
    """
    c2 = a - c - m + 1.0
    w = 1.0 - z
    pref = 1.0
    for n in range(m):
        pref *= (c - a + n) / (c + n)
    term = np.ones_like(z)
    total = np.ones_like(z)
    for n in range(m):
        den = (c2 + n) * (n + 1.0)
        if den == 0:
            return None
        term = term * ((a + n) * (n - m) / den) * w
        total = total + term
    return pref * total
