"""Kernel angle laws: calibration, sampling and inference for any DGM.

Pipeline:

1. simulate ``N`` panels from a data-generating mechanism,
2. estimate a dependence matrix from each and convert it to angles,
3. fit a boundary-reflected kernel density to every angle cell,
4. sample angles from those kernels (pick a stored angle, add kernel noise,
   reflect at 0 and pi),
5. map the sampled angles back to matrices, which are PD by construction.

Two-sided cell p-values allow for skewed angle laws by measuring the
distance of the observed cdf value from the cdf value of the mean matrix's
angle (``mcdf``).

Cdf matrices for :func:`matrix_quantile` are in correlation direction: a
larger cdf value means a larger dependence value, hence a smaller angle.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr

from . import __version__
from . import matrix as mx
from .entropy import lnp as _lnp, matrix_entropy, minkowski_norm
from .errors import (
    ConfigError,
    DimensionMismatch,
    MeasureMismatch,
    NabcError,
    NonPDReplicate,
)
from .identity import matrix_pvalue, simultaneous_alphas
from .measures import MeasureSpec, estimate_matrices
from .report import InferenceReport

log = logging.getLogger(__name__)

KERNELS = ("epanechnikov", "gaussian")
BANDWIDTH_RULES = ("silverman_min", "silverman_1", "silverman_iqr", "hansen")
ARTIFACT_VERSION = 1
_GAUSS_WINDOW = 9.0
_ROW_OFFSET = 16.0  # separates rows when searching a flattened block
_QUANTILE_TOL = 1e-8


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family, bandwidth rule and the tightening factor applied to it.

    ``resolution`` is the number of grid points used by
    :meth:`AngleDistributionSet.cdf_table` when tabulating a cell's cdf; the
    cdf itself is always evaluated exactly.
    """

    kernel: str = "epanechnikov"
    bandwidth: str = "silverman_min"
    tightening: float = 0.15
    resolution: int = 1024

    def __post_init__(self):
        if self.kernel not in KERNELS:
            raise ConfigError(f"unknown kernel {self.kernel!r}")
        if self.bandwidth not in BANDWIDTH_RULES:
            raise ConfigError(f"unknown bandwidth rule {self.bandwidth!r}")
        if self.bandwidth == "hansen" and self.kernel != "epanechnikov":
            raise ConfigError("the hansen rule is defined for the Epanechnikov kernel only")
        if not self.tightening > 0:
            raise ConfigError("tightening factor must be positive")
        if self.resolution < 1024:
            raise ConfigError("resolution must be at least 1024")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(**{k: d[k] for k in ("kernel", "bandwidth", "tightening", "resolution") if k in d})


def bandwidth(samples: np.ndarray, rule: str = "silverman_min", tightening: float = 0.15) -> np.ndarray:
    """Per-row bandwidth for samples of shape ``(..., N)``.

    >>> round(float(_rule_value(0.1, 0.2, 10000, "silverman_min") * 0.15), 7)
    0.0021396
    """
    x = np.asarray(samples, dtype=float)
    N = x.shape[-1]
    sd = x.std(axis=-1, ddof=1)
    q75, q25 = np.percentile(x, [75, 25], axis=-1)
    h = _rule_value(sd, q75 - q25, N, rule) * tightening
    return np.maximum(h, 1e-12)


def _rule_value(sd, iqr, N, rule):
    f = N ** -0.2
    if rule == "silverman_1":
        return 1.06 * sd * f
    if rule == "silverman_iqr":
        return 0.79 * iqr * f
    if rule == "silverman_min":
        return 0.9 * np.minimum(iqr / 1.34, sd) * f
    if rule == "hansen":
        return 2.34 * sd * f
    raise ConfigError(f"unknown bandwidth rule {rule!r}")


def _kernel_cdf(u, kernel):
    if kernel == "epanechnikov":
        u = np.clip(u, -1.0, 1.0)
        return 0.5 + 0.75 * u - 0.25 * u ** 3
    return ndtr(u)


def kernel_noise(rng: np.random.Generator, shape, kernel: str) -> np.ndarray:
    """Unit-bandwidth kernel draws; Epanechnikov as the median of three uniforms."""
    if kernel == "epanechnikov":
        return np.median(rng.uniform(-1.0, 1.0, size=(3,) + tuple(shape)), axis=0)
    return rng.standard_normal(shape)


def reflect(theta: np.ndarray) -> np.ndarray:
    """Fold values back into ``[0, pi]``: ``-t`` below 0 and ``2 pi - t`` above pi."""
    t = np.where(theta < 0, -theta, theta)
    return np.where(t > np.pi, 2 * np.pi - t, t)


class _Block:
    """Exact reflected-kernel mixture cdf for a block of cells.

    The Epanechnikov window sums come from differences of prefix sums of
    powers of the standardized angles, which costs about ``1e-11`` absolute
    accuracy in the cdf through cancellation.
    """

    def __init__(self, theta: np.ndarray, h: np.ndarray, kernel: str):
        self.theta = theta  # (c, N) sorted
        self.h = h
        self.kernel = kernel
        self.c, self.N = theta.shape
        self.w = 1.0 if kernel == "epanechnikov" else _GAUSS_WINDOW
        self.off = (np.arange(self.c) * _ROW_OFFSET)[:, None]
        self.flat = (theta + self.off).ravel()
        if kernel == "epanechnikov":
            self.centre = theta[:, self.N // 2].copy()
            phi = (theta - self.centre[:, None]) / h[:, None]
            P = np.zeros((self.c, self.N + 1, 3))
            np.cumsum(phi, axis=1, out=P[:, 1:, 0])
            np.cumsum(phi * phi, axis=1, out=P[:, 1:, 1])
            np.cumsum(phi ** 3, axis=1, out=P[:, 1:, 2])
            self.P = P
        wh = self.w * h
        self.n_low = np.array([np.searchsorted(theta[r], wh[r]) for r in range(self.c)])
        self.n_high = self.N - np.array(
            [np.searchsorted(theta[r], np.pi - wh[r], side="right") for r in range(self.c)]
        )

    def _count(self, x, side):
        rows = np.arange(self.c)[:, None] * self.N
        return np.searchsorted(self.flat, (x + self.off).ravel(), side=side).reshape(x.shape) - rows

    def cdf(self, x: np.ndarray) -> np.ndarray:
        """``x`` of shape ``(c, q)``; returns the mixture cdf at every point."""
        x_raw = np.asarray(x, dtype=float)
        x = np.clip(x_raw, 0.0, np.pi)
        h = self.h[:, None]
        wh = self.w * h
        lo = self._count(x - wh, "left")
        hi = self._count(x + wh, "right")
        total = lo.astype(float)
        if self.kernel == "epanechnikov":
            rows = np.arange(self.c)[:, None]
            S1 = self.P[rows, hi, 0] - self.P[rows, lo, 0]
            S2 = self.P[rows, hi, 1] - self.P[rows, lo, 1]
            S3 = self.P[rows, hi, 2] - self.P[rows, lo, 2]
            nw = (hi - lo).astype(float)
            xi = (x - self.centre[:, None]) / h
            total += (0.5 * nw + 0.75 * (nw * xi - S1)
                      - 0.25 * (nw * xi ** 3 - 3 * xi * xi * S1 + 3 * xi * S2 - S3))
        else:
            total += self._gather(x, lo, hi - lo, lambda t: _kernel_cdf((x - t) / h, self.kernel))
        if self.n_low.any():
            start = np.zeros_like(lo)
            total += self._gather(x, start, np.broadcast_to(self.n_low[:, None], x.shape),
                                  lambda t: _kernel_cdf((x + t) / h, self.kernel) - 1.0)
        if self.n_high.any():
            start = np.broadcast_to((self.N - self.n_high)[:, None], x.shape)
            total += self._gather(x, start, np.broadcast_to(self.n_high[:, None], x.shape),
                                  lambda t: _kernel_cdf((x - 2 * np.pi + t) / h, self.kernel))
        F = np.clip(total / self.N, 0.0, 1.0)
        # reflection puts no mass outside [0, pi]; pin the ends exactly
        F[x_raw <= 0.0] = 0.0
        F[x_raw >= np.pi] = 1.0
        return F

    def _gather(self, x, start, count, fn):
        out = np.zeros(x.shape)
        width = int(count.max()) if count.size else 0
        rows = np.arange(self.c)[:, None]
        for o in range(width):
            idx = np.minimum(start + o, self.N - 1)
            t = self.theta[rows, idx]
            out += np.where(o < count, fn(t), 0.0)
        return out

    def quantile(self, prob: np.ndarray) -> np.ndarray:
        """Bisection inverse of :meth:`cdf` to ``1e-8`` in angle."""
        prob = np.asarray(prob, dtype=float)
        h = self.h[:, None]
        wh = self.w * h
        rows = np.arange(self.c)[:, None]
        k = prob * self.N
        k_lo = np.clip(np.floor(k).astype(int) - 1, 0, self.N - 1)
        k_hi = np.clip(np.ceil(k).astype(int), 0, self.N - 1)
        lo = np.clip(self.theta[rows, k_lo] - wh, 0.0, np.pi)
        hi = np.clip(self.theta[rows, k_hi] + wh, 0.0, np.pi)
        lo = np.where(self.cdf(lo) <= prob, lo, 0.0)
        hi = np.where(self.cdf(hi) >= prob, hi, np.pi)
        while True:
            gap = hi - lo
            if gap.max() <= _QUANTILE_TOL:
                break
            mid = 0.5 * (lo + hi)
            below = self.cdf(mid) < prob
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)


def asymmetric_two_sided(mcdf, cdf):
    """Two-sided p-value around a possibly off-centre mean.

    ``max(0, mcdf - d) + max(0, 1 - (mcdf + d))`` with ``d = |mcdf - cdf|``.
    Works on plain numbers and on :class:`fractions.Fraction`, so the result
    is exact for exact inputs.

    >>> from fractions import Fraction as F
    >>> asymmetric_two_sided(F(3, 5), F(1, 10))
    Fraction(1, 10)
    >>> asymmetric_two_sided(F(3, 5), F(17, 20))
    Fraction(1, 2)
    """
    d = abs(mcdf - cdf)
    return max(0, mcdf - d) + max(0, 1 - (mcdf + d))


def asymmetric_two_sided_array(mcdf, cdf) -> np.ndarray:
    mcdf = np.asarray(mcdf, dtype=float)
    cdf = np.asarray(cdf, dtype=float)
    d = np.abs(mcdf - cdf)
    return np.maximum(0.0, mcdf - d) + np.maximum(0.0, 1.0 - (mcdf + d))


def floor_pvalues(pv: np.ndarray, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Replace exact zeros by ``1/(N+1)`` and return the flags."""
    pv = np.asarray(pv, dtype=float)
    zero = pv <= 0.0
    return np.where(zero, 1.0 / (N + 1), pv), zero


def _replicate_rng(seed: int, r: int, attempt: int = 0) -> np.random.Generator:
    key = (r,) if attempt == 0 else (r, attempt)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def _normalise_cell(p: int, cell) -> int:
    if isinstance(cell, (tuple, list)):
        return mx.cell_position(p, int(cell[0]), int(cell[1]))
    return int(cell)


class AngleDistributionSet:
    """Calibrated per-cell angle laws.

    Attributes
    ----------
    p : int
        Matrix dimension.
    angles : ndarray, shape (p(p-1)/2, N)
        Sorted calibration angles per cell, in flat cell order.
    bandwidths : ndarray
        Kernel bandwidth per cell (tightening already applied).
    mean_matrix : ndarray
        Mean of the calibration matrices.
    joint : ndarray or None
        Replicate-aligned angle vectors ``(N, cells)``; optional.
    mean_angles, mcdf : ndarray
        Angles of the mean matrix and their cdf positions.
    """

    def __init__(self, angles, bandwidths, kernel: KernelSpec, mean_matrix, measure: Optional[dict] = None,
                 provenance: Optional[dict] = None, joint: Optional[np.ndarray] = None,
                 block_budget: int = 3_000_000):
        self.angles = np.asarray(angles, dtype=float)
        # replicate-aligned angles (N, cells); needed to re-express the set
        # in a permuted asset order
        self.joint = None if joint is None else np.asarray(joint, dtype=float)
        self.ncells, self.N = self.angles.shape
        self.p = mx.dim_from_cells(self.ncells)
        self.bandwidths = np.asarray(bandwidths, dtype=float)
        self.kernel = kernel
        self.mean_matrix = np.asarray(mean_matrix, dtype=float)
        self.measure = dict(measure or {})
        self.provenance = dict(provenance or {})
        self.block = max(1, block_budget // max(self.N, 1))
        if np.any(self.angles <= 0) or np.any(self.angles >= np.pi):
            raise NabcError("stored angles must lie strictly inside (0, pi)")
        self.mean_angles = mx.lower_vector(mx.corr_to_angles(self.mean_matrix))
        self.mcdf = self.cdf(self.mean_angles)

    # construction ---------------------------------------------------------
    @classmethod
    def from_angle_samples(cls, theta: np.ndarray, kernel: Optional[KernelSpec] = None,
                           mean_matrix=None, measure: Optional[dict] = None,
                           provenance: Optional[dict] = None) -> "AngleDistributionSet":
        """Build from raw angle vectors of shape ``(N, p(p-1)/2)``."""
        kernel = kernel or KernelSpec()
        theta = np.asarray(theta, dtype=float)
        p = mx.dim_from_cells(theta.shape[1])
        if mean_matrix is None:
            mean_matrix = _mean_matrix_from_angles(theta, p)
        A = np.sort(theta.T, axis=1)
        h = bandwidth(A, kernel.bandwidth, kernel.tightening)
        return cls(A, h, kernel, mean_matrix, measure, provenance, joint=theta)

    @classmethod
    def from_matrices(cls, matrices, kernel: Optional[KernelSpec] = None, measure: Optional[dict] = None,
                      provenance: Optional[dict] = None) -> "AngleDistributionSet":
        """Build from user-supplied matrices (any estimator, any generator)."""
        Rs = np.asarray(matrices, dtype=float)
        theta, ok = mx.corr_to_angle_vectors(Rs)
        if not ok.all():
            raise NonPDReplicate(f"{int((~ok).sum())} supplied matrices are not positive definite")
        return cls.from_angle_samples(theta, kernel, Rs.mean(axis=0), measure, provenance)

    # evaluation -------------------------------------------------------------
    def _blocks(self):
        for s in range(0, self.ncells, self.block):
            e = min(self.ncells, s + self.block)
            yield s, e, _Block(self.angles[s:e], self.bandwidths[s:e], self.kernel.kernel)

    def _per_cell(self, values, op: str) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        if v.ndim == 0:
            v = np.full(self.ncells, float(v))
        if v.shape[-1] != self.ncells:
            raise DimensionMismatch(f"expected {self.ncells} cells, got {v.shape[-1]}")
        lead = v.shape[:-1]
        V = v.reshape(-1, self.ncells).T  # (cells, q)
        out = np.empty_like(V)
        for s, e, blk in self._blocks():
            out[s:e] = getattr(blk, op)(V[s:e])
        return out.T.reshape(lead + (self.ncells,))

    def cdf(self, x) -> np.ndarray:
        """Kernel cdf for every cell; ``x`` has shape ``(..., cells)``."""
        return self._per_cell(x, "cdf")

    def quantile(self, prob) -> np.ndarray:
        """Kernel quantile for every cell; ``prob`` is scalar or ``(..., cells)``."""
        pr = np.asarray(prob, dtype=float)
        if np.any((pr <= 0) | (pr >= 1)):
            raise ValueError("probabilities must lie in (0, 1)")
        return self._per_cell(pr, "quantile")

    def cdf_cell(self, cell, x) -> np.ndarray:
        c = _normalise_cell(self.p, cell)
        blk = _Block(self.angles[c:c + 1], self.bandwidths[c:c + 1], self.kernel.kernel)
        x = np.asarray(x, dtype=float)
        out = blk.cdf(np.atleast_1d(x)[None, :])[0]
        return out.reshape(x.shape) if x.ndim else float(out[0])

    def quantile_cell(self, cell, prob) -> np.ndarray:
        c = _normalise_cell(self.p, cell)
        blk = _Block(self.angles[c:c + 1], self.bandwidths[c:c + 1], self.kernel.kernel)
        pr = np.asarray(prob, dtype=float)
        out = blk.quantile(np.atleast_1d(pr)[None, :])[0]
        return out.reshape(pr.shape) if pr.ndim else float(out[0])

    def cdf_table(self, cell) -> tuple[np.ndarray, np.ndarray]:
        """Cell cdf on ``kernel.resolution`` evenly spaced angles in ``[0, pi]``."""
        grid = np.linspace(0.0, np.pi, self.kernel.resolution)
        return grid, self.cdf_cell(cell, grid)

    # sampling ---------------------------------------------------------------
    def sample_angles(self, N_out: int, seed: int, chunk: int = 1000) -> np.ndarray:
        """Kernel draws of angle vectors, shape ``(N_out, cells)``.

        Draw ``r`` uses its own stream keyed by ``(seed, r)``.
        """
        out = np.empty((N_out, self.ncells))
        cells = np.arange(self.ncells)
        for r in range(N_out):
            rng = _replicate_rng(seed, r)
            idx = rng.integers(0, self.N, size=self.ncells)
            noise = kernel_noise(rng, (self.ncells,), self.kernel.kernel)
            out[r] = self.angles[cells, idx] + self.bandwidths * noise
        out = reflect(out)
        return np.clip(out, 1e-15, np.pi - 1e-15)

    def sample_matrices(self, N_out: int, seed: int) -> np.ndarray:
        return mx.angle_vectors_to_corr(self.sample_angles(N_out, seed), self.p)

    def permuted(self, order: Sequence[int], chunk: int = 2000) -> "AngleDistributionSet":
        """The same calibration expressed in a reordered asset basis.

        Every stored replicate is mapped to its matrix, permuted, and mapped
        back to angles; kernels are refitted with the same rule.
        """
        order = np.asarray(order, dtype=int)
        if np.array_equal(order, np.arange(self.p)):
            return self
        if self.joint is None:
            raise NabcError("re-basing needs the replicate-aligned angles (joint)")
        out = np.empty_like(self.joint)
        for s in range(0, self.N, chunk):
            Rs = mx.angle_vectors_to_corr(self.joint[s:s + chunk], self.p)
            Rs = Rs[:, order][:, :, order]
            out[s:s + chunk], ok = mx.corr_to_angle_vectors(Rs)
            if not ok.all():
                raise NonPDReplicate("a stored replicate lost positive definiteness under permutation")
        prov = dict(self.provenance, permutation=order.tolist())
        return AngleDistributionSet.from_angle_samples(out, self.kernel, mx.permute(self.mean_matrix, order),
                                                       self.measure, prov)

    # persistence ------------------------------------------------------------
    def summary(self) -> dict:
        return {
            "format_version": ARTIFACT_VERSION,
            "package_version": __version__,
            "dim": self.p,
            "N": self.N,
            "kernel": self.kernel.to_dict(),
            "measure": self.measure,
            "provenance": self.provenance,
            "mean_matrix": self.mean_matrix.tolist(),
            "mcdf": self.mcdf.tolist(),
        }

    def save(self, path) -> Path:
        """Write ``path`` (binary arrays) and ``path + '.json'`` (provenance)."""
        path = Path(path)
        meta = json.dumps({k: v for k, v in self.summary().items() if k not in ("mean_matrix", "mcdf")})
        arrays = dict(format_version=np.array(ARTIFACT_VERSION), angles=self.angles,
                      bandwidths=self.bandwidths, mean_matrix=self.mean_matrix, meta=np.array(meta))
        if self.joint is not None:
            arrays["joint"] = self.joint
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)
        Path(str(path) + ".json").write_text(json.dumps(self.summary(), indent=2))
        return path

    @classmethod
    def load(cls, path) -> "AngleDistributionSet":
        path = Path(path)
        try:
            with np.load(path, allow_pickle=False) as z:
                version = int(z["format_version"])
                if version != ARTIFACT_VERSION:
                    raise ConfigError(f"unsupported calibration format version {version}")
                meta = json.loads(str(z["meta"]))
                return cls(z["angles"], z["bandwidths"], KernelSpec.from_dict(meta["kernel"]),
                           z["mean_matrix"], meta.get("measure"), meta.get("provenance"),
                           joint=z["joint"] if "joint" in z.files else None)
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot read calibration artifact {path}: {exc}") from exc


def _mean_matrix_from_angles(theta: np.ndarray, p: int, chunk: int = 2000) -> np.ndarray:
    acc = np.zeros((p, p))
    for s in range(0, theta.shape[0], chunk):
        acc += mx.angle_vectors_to_corr(theta[s:s + chunk], p).sum(axis=0)
    return acc / theta.shape[0]


# calibration ----------------------------------------------------------------

def _generate(dgm, n: int, rngs) -> np.ndarray:
    if hasattr(dgm, "generate_batch"):
        return dgm.generate_batch(n, rngs)
    gen = dgm.generate if hasattr(dgm, "generate") else dgm
    return np.stack([np.asarray(gen(n, r), dtype=float) for r in rngs])


def _tie_seeds(measure: MeasureSpec, seed: int, reps, attempt: int = 0):
    return [int(np.random.SeedSequence([measure.seed, seed, r, attempt]).generate_state(1)[0]) for r in reps]


def _estimate_one(dgm, measure, n, seed, r, attempt):
    rng = _replicate_rng(seed, r, attempt)
    panel = _generate(dgm, n, [rng])
    return estimate_matrices(panel, measure, _tie_seeds(measure, seed, [r], attempt))[0]


def _calibrate_chunk(dgm, measure, n, seed, start, stop, max_attempts):
    reps = list(range(start, stop))
    rngs = [_replicate_rng(seed, r) for r in reps]
    panels = _generate(dgm, n, rngs)
    try:
        mats = estimate_matrices(panels, measure, _tie_seeds(measure, seed, reps))
        errors = [None] * len(reps)
    except NabcError:
        mats = np.empty((len(reps), panels.shape[2], panels.shape[2]))
        errors = []
        for k, r in enumerate(reps):
            try:
                mats[k] = estimate_matrices(panels[k:k + 1], measure, _tie_seeds(measure, seed, [r]))[0]
                errors.append(None)
            except NabcError as exc:
                errors.append(exc)
    theta, ok = mx.corr_to_angle_vectors(mats)
    ok &= np.array([e is None for e in errors])
    failures = {"non_pd": 0, "estimation": 0}
    for k in np.nonzero(~ok)[0]:
        r = reps[k]
        kind = "estimation" if errors[k] is not None else "non_pd"
        for attempt in range(1, max_attempts + 1):
            failures[kind] += 1
            try:
                R = _estimate_one(dgm, measure, n, seed, r, attempt)
            except NabcError:
                kind = "estimation"
                continue
            t, good = mx.corr_to_angle_vectors(R[None])
            if good[0]:
                mats[k], theta[k] = R, t[0]
                break
            kind = "non_pd"
        else:
            raise NonPDReplicate(f"replicate {r} failed {max_attempts} redraws")
    return theta, mats.sum(axis=0), failures


def calibrate(dgm, measure: MeasureSpec, n: int, N: int, kernel: Optional[KernelSpec] = None,
              seed: int = 0, workers: int = 1, chunk: int = 200, max_failure_rate: float = 0.01,
              max_attempts: int = 50) -> AngleDistributionSet:
    """Simulate, estimate and fit kernel angle laws.

    Parameters
    ----------
    dgm : DgmSpec or object with ``generate(n, rng)``
        Data-generating mechanism; its ``baseline`` (if any) is recorded.
    measure : MeasureSpec
    n : int
        Observations per simulated panel.
    N : int
        Number of simulated panels.
    kernel : KernelSpec, optional
    seed : int
        Replicate ``r`` uses the stream keyed by ``(seed, r)``; failed
        replicates are redrawn from ``(seed, r, attempt)``.
    workers : int
        Threads used for chunks of replicates. Results do not depend on it.

    Raises
    ------
    NonPDReplicate
        When more than ``max_failure_rate`` of replicates had to be redrawn.
    """
    kernel = kernel or KernelSpec()
    p = getattr(dgm, "p", None)
    if p is not None and n <= p:
        raise ConfigError(f"need n > p (n={n}, p={p})")
    if N < 2:
        raise ConfigError("N must be at least 2")
    t0 = time.perf_counter()
    bounds = [(s, min(N, s + chunk)) for s in range(0, N, chunk)]
    job = lambda b: _calibrate_chunk(dgm, measure, n, seed, b[0], b[1], max_attempts)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, bounds))
    else:
        results = [job(b) for b in bounds]
    theta = np.concatenate([r[0] for r in results])
    mean = sum(r[1] for r in results) / N
    failures = {k: sum(r[2][k] for r in results) for k in ("non_pd", "estimation")}
    total_fail = failures["non_pd"] + failures["estimation"]
    if total_fail:
        log.info("calibration redrew %d replicates (%s)", total_fail, failures)
    if total_fail > max_failure_rate * N:
        raise NonPDReplicate(f"{total_fail} of {N} replicates failed; above {max_failure_rate:.0%}")
    provenance = {
        "dgm": dgm.to_dict() if hasattr(dgm, "to_dict") else repr(dgm),
        "n": n,
        "N": N,
        "seed": seed,
        "failures": failures,
        "seconds": round(time.perf_counter() - t0, 3),
        "package_version": __version__,
    }
    return AngleDistributionSet.from_angle_samples(theta, kernel, mean, measure.to_dict(), provenance)


# inference ------------------------------------------------------------------

def one_sided_cell_pvalue(aset: AngleDistributionSet, cell, x) -> tuple[float, bool]:
    """``min(F, 1 - F)``; exact zeros are floored to ``1/(N+1)`` and flagged."""
    F = aset.cdf_cell(cell, x)
    pv, flag = floor_pvalues(np.minimum(F, 1.0 - F), aset.N)
    return float(pv), bool(flag)


def two_sided_cell_pvalue(aset: AngleDistributionSet, cell, x) -> tuple[float, bool]:
    c = _normalise_cell(aset.p, cell)
    F = aset.cdf_cell(c, x)
    pv, flag = floor_pvalues(asymmetric_two_sided_array(aset.mcdf[c], F), aset.N)
    return float(pv), bool(flag)


def _check_same_dim(aset: AngleDistributionSet, R) -> np.ndarray:
    R = mx.check_dependence_matrix(R)
    if R.shape[0] != aset.p:
        raise DimensionMismatch(f"matrix is {R.shape[0]}x{R.shape[0]}, calibration is {aset.p}x{aset.p}")
    return R


def quantile_angle_matrix(aset: AngleDistributionSet, angle_levels) -> np.ndarray:
    """Matrices from per-cell angle quantile levels (shape ``(..., cells)`` or scalar)."""
    th = aset.quantile(angle_levels)
    return mx.angle_vectors_to_corr(np.atleast_2d(th), aset.p).reshape(np.shape(th)[:-1] + (aset.p, aset.p))


def bound_matrices(aset: AngleDistributionSet, alpha: float, n_cells: Optional[int] = None,
                   frozen_angles: Optional[np.ndarray] = None, cells_mask: Optional[np.ndarray] = None) -> dict:
    """Cell-level and simultaneous correlation bound matrices.

    Upper correlation bounds come from the low angle quantiles. When
    ``cells_mask`` is given, cells outside it keep ``frozen_angles``.
    """
    m = aset.ncells if n_cells is None else n_cells
    a_lo, a_hi = simultaneous_alphas(alpha, m)
    levels = np.array([alpha / 2, 1 - alpha / 2, a_lo, a_hi])
    th = aset.quantile(np.repeat(levels[:, None], aset.ncells, axis=1))
    if cells_mask is not None:
        th[:, ~cells_mask] = frozen_angles[~cells_mask]
    mats = mx.angle_vectors_to_corr(th, aset.p)
    return {
        "cell_ci_upper": mats[0],
        "cell_ci_lower": mats[1],
        "matrix_ci_upper": mats[2],
        "matrix_ci_lower": mats[3],
        "simultaneous_alphas": (a_lo, a_hi),
    }


def matrix_inference(aset: AngleDistributionSet, R_obs, alpha: float = 0.05) -> InferenceReport:
    """Test an observed matrix against a calibrated set.

    Cell p-values use the asymmetry-aware two-sided rule, the matrix p-value
    is ``1 - prod(1 - p_i)``, and bound matrices are built from per-cell
    kernel quantiles at ``alpha/2`` and at the simultaneous levels.
    """
    R_obs = _check_same_dim(aset, R_obs)
    theta = mx.lower_vector(mx.corr_to_angles(R_obs))
    F = aset.cdf(theta)
    pv, floored = floor_pvalues(asymmetric_two_sided_array(aset.mcdf, F), aset.N)
    bounds = bound_matrices(aset, alpha)
    return InferenceReport(
        kind="one-sample",
        dim=aset.p,
        cells=mx.cell_labels(aset.p),
        cell_pvalues=pv,
        matrix_pvalue=matrix_pvalue(pv),
        alpha=alpha,
        floored=floored,
        lnp=_lnp(pv),
        diagnostics=_diagnostics(R_obs, aset.mean_matrix),
        provenance={"calibration": aset.provenance, "measure": aset.measure, "N": aset.N},
        extra={"cell_cdf": F, "mcdf": aset.mcdf},
        **bounds,
    )


def _diagnostics(R, ref) -> dict:
    return {
        "entropy": matrix_entropy(R),
        "taxi": minkowski_norm(R, ref, 1),
        "frobenius": minkowski_norm(R, ref, 2),
        "chebyshev": minkowski_norm(R, ref, np.inf),
        "reference": "calibration mean matrix",
    }


def matrix_quantile(aset: AngleDistributionSet, cdfs) -> np.ndarray:
    """Matrix whose cells sit at the given cdf positions (correlation direction).

    ``cdfs`` is a ``p x p`` array (lower triangle read) or a flat cell vector.
    """
    c = _cdf_vector(aset.p, cdfs)
    if np.any((c <= 0) | (c >= 1)):
        raise ValueError("cdf values must lie in (0, 1)")
    th = aset.quantile(1.0 - c)
    return mx.angle_vectors_to_corr(th[None], aset.p)[0]


def matrix_cdf(aset: AngleDistributionSet, R) -> np.ndarray:
    """Reverse lookup of :func:`matrix_quantile`: flat cdf vector of ``R``."""
    R = _check_same_dim(aset, R)
    return 1.0 - aset.cdf(mx.lower_vector(mx.corr_to_angles(R)))


def _cdf_vector(p: int, cdfs) -> np.ndarray:
    c = np.asarray(cdfs, dtype=float)
    if c.ndim == 2:
        if c.shape != (p, p):
            raise DimensionMismatch(f"cdf matrix must be {p}x{p}")
        return mx.lower_vector(c)
    if c.shape != (mx.n_cells(p),):
        raise DimensionMismatch(f"expected {mx.n_cells(p)} cdf values")
    return c


def cell_pvalues_batch(aset: AngleDistributionSet, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two-sided cell p-values for many angle vectors ``(m, cells)``."""
    F = aset.cdf(theta)
    return floor_pvalues(asymmetric_two_sided_array(aset.mcdf, F), aset.N)


def two_sample_from_angles(thetaA: np.ndarray, thetaB: np.ndarray) -> dict:
    """Cell p-values for ``H0: no difference`` from paired angle draws.

    ``Delta = thetaA - thetaB`` per cell. The cdf position of 0 and of the
    mean difference within the empirical ``Delta`` distribution feed the
    asymmetric two-sided rule. Cells whose differences are all zero get
    p-value 1 and are flagged degenerate.
    """
    A = np.asarray(thetaA, dtype=float)
    B = np.asarray(thetaB, dtype=float)
    if A.shape != B.shape:
        raise DimensionMismatch(f"draw shapes differ: {A.shape} vs {B.shape}")
    D = np.sort(A - B, axis=0)
    N = D.shape[0]
    def ecdf(col, v):
        return (np.searchsorted(col, v, "left") + np.searchsorted(col, v, "right")) / (2.0 * N)
    pv = np.empty(D.shape[1])
    mcdf = np.empty(D.shape[1])
    cdf0 = np.empty(D.shape[1])
    degenerate = np.zeros(D.shape[1], dtype=bool)
    for c in range(D.shape[1]):
        col = D[:, c]
        if np.all(col == 0):
            degenerate[c] = True
            pv[c], mcdf[c], cdf0[c] = 1.0, 0.5, 0.5
            continue
        mcdf[c] = ecdf(col, col.mean())
        cdf0[c] = ecdf(col, 0.0)
        pv[c] = asymmetric_two_sided(float(mcdf[c]), float(cdf0[c]))
    pv, floored = floor_pvalues(pv, N)
    return {"pvalues": pv, "floored": floored, "degenerate": degenerate, "mcdf": mcdf, "cdf_zero": cdf0,
            "mean_difference": D.mean(axis=0), "N": N}


def two_sample_test(setA: AngleDistributionSet, setB: AngleDistributionSet, alpha: float = 0.05,
                    N: Optional[int] = None, seed: int = 0) -> InferenceReport:
    """Test whether two calibrated sets describe the same population.

    ``N`` kernel draws are taken from each set (streams ``(seed, 0)`` and
    ``(seed, 1)``) and differenced cell by cell.
    """
    if setA.p != setB.p:
        raise DimensionMismatch(f"dimensions differ: {setA.p} vs {setB.p}")
    ka, kb = setA.measure.get("kind"), setB.measure.get("kind")
    if ka != kb:
        raise MeasureMismatch(f"measures differ: {ka} vs {kb}")
    N = N or min(setA.N, setB.N)
    sa = int(np.random.SeedSequence(seed, spawn_key=(0,)).generate_state(1)[0])
    sb = int(np.random.SeedSequence(seed, spawn_key=(1,)).generate_state(1)[0])
    res = two_sample_from_angles(setA.sample_angles(N, sa), setB.sample_angles(N, sb))
    pv = res["pvalues"]
    return InferenceReport(
        kind="two-sample",
        dim=setA.p,
        cells=mx.cell_labels(setA.p),
        cell_pvalues=pv,
        matrix_pvalue=matrix_pvalue(pv),
        alpha=alpha,
        floored=res["floored"],
        lnp=_lnp(pv),
        provenance={"seed": seed, "N": N, "measure": setA.measure,
                    "calibration_a": setA.provenance, "calibration_b": setB.provenance},
        extra={"degenerate": res["degenerate"], "mcdf": res["mcdf"], "cdf_zero": res["cdf_zero"],
               "mean_angle_difference": res["mean_difference"]},
    )
