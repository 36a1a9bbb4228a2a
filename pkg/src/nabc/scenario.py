"""Scenario-restricted sampling and inference.

Perturbing angle ``(i, j)`` of the Cholesky parameterization moves only the
correlation cells ``(i, l)`` for ``j <= l < i`` and ``(l, i)`` for ``l > i``.
Hence any prefix of the column-major fill order (rightmost column first,
top-down) is closed: angles inside it never move cells outside it. A
scenario reorders the assets so its target cells land in a short prefix,
samples that prefix from the kernels, and pins every other angle to the
mean-matrix angle, so all cells outside the prefix stay constant.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import matrix as mx
from .entropy import lnp as _lnp
from .errors import ConfigError, DimensionMismatch, InvalidPermutation
from .identity import matrix_pvalue, simultaneous_alphas
from .kernel import (
    AngleDistributionSet,
    asymmetric_two_sided_array,
    floor_pvalues,
    two_sample_from_angles,
    _diagnostics,
)
from .report import InferenceReport

EXHAUSTIVE_MAX_DIM = 8

Cell = tuple[int, int]


def _norm_cell(c, p: int) -> Cell:
    i, j = int(c[0]), int(c[1])
    if i < j:
        i, j = j, i
    if not (1 <= j < i <= p):
        raise ConfigError(f"cell {tuple(c)} is not a lower-triangle cell of a {p}x{p} matrix")
    return (i, j)


def fill_order(p: int) -> list[Cell]:
    """Cells (1-based) from the rightmost column leftward, top-down in each column.

    >>> fill_order(3)
    [(3, 2), (2, 1), (3, 1)]
    """
    if p < 2:
        raise ConfigError("fill order needs p >= 2")
    return [(i, j) for j in range(p - 1, 0, -1) for i in range(j + 1, p + 1)]


def fill_position_table(p: int) -> np.ndarray:
    """``T[i, j]`` = 1-based fill position of cell ``(i, j)`` (0-based indices, both orders)."""
    T = np.zeros((p, p), dtype=int)
    for k, (i, j) in enumerate(fill_order(p), start=1):
        T[i - 1, j - 1] = T[j - 1, i - 1] = k
    return T


def affected_cells(p: int, i: int, j: int) -> list[Cell]:
    """Correlation cells that move when only angle ``(i, j)`` changes."""
    i, j = _norm_cell((i, j), p)
    return [(i, l) for l in range(j, i)] + [(l, i) for l in range(i + 1, p + 1)]


def affected_mask(p: int, i: int, j: int) -> np.ndarray:
    M = np.zeros((p, p), dtype=bool)
    for a, b in affected_cells(p, i, j):
        M[a - 1, b - 1] = M[b - 1, a - 1] = True
    return M


@dataclass(frozen=True)
class ScenarioSpec:
    """Cells (original asset labels, 1-based) allowed to vary."""

    dim: int
    targets: tuple
    label: str = ""

    def __post_init__(self):
        if self.dim < 2:
            raise ConfigError("scenario dimension must be at least 2")
        if not self.targets:
            raise ConfigError("a scenario needs at least one target cell")
        cells = tuple(sorted({_norm_cell(c, self.dim) for c in self.targets}))
        object.__setattr__(self, "targets", cells)

    def to_dict(self) -> dict:
        return {"label": self.label, "dim": self.dim, "targets": [list(c) for c in self.targets]}

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        try:
            return cls(int(d["dim"]), tuple(tuple(c) for c in d["targets"]), str(d.get("label", "")))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed scenario document: {exc}") from exc


@dataclass
class ScenarioPlan:
    """A reordering that packs the targets into a fill-order prefix.

    ``order[k]`` is the original (0-based) asset placed at position ``k``.
    ``region`` is the prefix length; its cells are perturbed, the rest frozen.
    Cell lists use original labels except ``images`` and ``region_cells``.
    """

    spec: ScenarioSpec
    order: np.ndarray
    region: int
    images: list
    forced_extras: list
    frozen: list
    method: str
    region_cells: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.spec.dim

    def perturbed_mask(self) -> np.ndarray:
        """Flat-cell mask (reordered basis) of the perturbed cells."""
        p = self.dim
        mask = np.zeros(mx.n_cells(p), dtype=bool)
        for i, j in self.region_cells:
            mask[mx.cell_position(p, i, j)] = True
        return mask

    def to_original(self, cell: Cell) -> Cell:
        a, b = self.order[cell[0] - 1] + 1, self.order[cell[1] - 1] + 1
        return (int(max(a, b)), int(min(a, b)))

    def to_dict(self) -> dict:
        return {
            "scenario": self.spec.to_dict(),
            "permutation": (self.order + 1).tolist(),
            "region_size": self.region,
            "target_images": [list(c) for c in self.images],
            "forced_extras": [list(c) for c in self.forced_extras],
            "frozen": [list(c) for c in self.frozen],
            "method": self.method,
        }


def _region_sizes(orders: np.ndarray, targets: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Prefix length needed by each candidate order; ``orders`` is (m, p)."""
    pos = np.empty_like(orders)
    rows = np.arange(orders.shape[0])[:, None]
    pos[rows, orders] = np.arange(orders.shape[1])[None, :]
    a = pos[:, targets[:, 0]]
    b = pos[:, targets[:, 1]]
    return T[a, b].max(axis=1)


def _greedy(p: int, targets: np.ndarray, T: np.ndarray) -> np.ndarray:
    incidence = np.bincount(targets.ravel(), minlength=p)
    # low incidence first so that heavily targeted assets sit last
    order = np.array(sorted(range(p), key=lambda a: (incidence[a], -a)), dtype=int)
    best = _region_sizes(order[None], targets, T)[0]
    improved = True
    while improved:
        improved = False
        for u in range(p - 1):
            cands = np.repeat(order[None], p - u - 1, axis=0)
            vs = np.arange(u + 1, p)
            cands[np.arange(len(vs)), u] = order[vs]
            cands[np.arange(len(vs)), vs] = order[u]
            sizes = _region_sizes(cands, targets, T)
            k = int(np.argmin(sizes))
            if sizes[k] < best:
                best, order, improved = sizes[k], cands[k], True
    return order


def plan_scenario(spec: ScenarioSpec, exhaustive_max_dim: int = EXHAUSTIVE_MAX_DIM) -> ScenarioPlan:
    """Find an asset order that needs the fewest forced-extra cells.

    All ``p!`` orders are scanned for ``p <= exhaustive_max_dim`` (first
    optimum in lexicographic order, so the identity wins ties); larger
    problems use a greedy order refined by pairwise swaps.
    """
    p = spec.dim
    T = fill_position_table(p)
    tg = np.array([(i - 1, j - 1) for i, j in spec.targets], dtype=int)
    if p <= exhaustive_max_dim:
        best_order, best = None, None
        perms = itertools.permutations(range(p))
        while True:
            batch = np.array(list(itertools.islice(perms, 50_000)), dtype=int)
            if batch.size == 0:
                break
            sizes = _region_sizes(batch, tg, T)
            k = int(np.argmin(sizes))
            if best is None or sizes[k] < best:
                best, best_order = int(sizes[k]), batch[k]
        order, method = best_order, "exhaustive"
    else:
        order, method = _greedy(p, tg, T), "greedy-swap"
    return _build_plan(spec, np.asarray(order, dtype=int), method)


def plan_from_order(spec: ScenarioSpec, order: Sequence[int]) -> ScenarioPlan:
    """Plan for a caller-chosen order (0-based original index per position)."""
    order = np.asarray(order, dtype=int)
    if sorted(order.tolist()) != list(range(spec.dim)):
        raise InvalidPermutation(f"{order.tolist()} is not a permutation of 0..{spec.dim - 1}")
    return _build_plan(spec, order, "given")


def _build_plan(spec: ScenarioSpec, order: np.ndarray, method: str) -> ScenarioPlan:
    p = spec.dim
    T = fill_position_table(p)
    tg = np.array([(i - 1, j - 1) for i, j in spec.targets], dtype=int)
    region = int(_region_sizes(order[None], tg, T)[0])
    fo = fill_order(p)
    region_cells = fo[:region]
    plan = ScenarioPlan(spec, order, region, [], [], [], method, region_cells)
    target_set = set(spec.targets)
    pos = mx.inverse_permutation(order)
    plan.images = [(int(max(pos[i - 1], pos[j - 1]) + 1), int(min(pos[i - 1], pos[j - 1]) + 1))
                   for i, j in spec.targets]
    originals = [plan.to_original(c) for c in region_cells]
    plan.forced_extras = sorted(c for c in originals if c not in target_set)
    plan.frozen = sorted(plan.to_original(c) for c in fo[region:])
    return plan


# sampling and inference ----------------------------------------------------------

def _frozen_angles(based: AngleDistributionSet, plan: ScenarioPlan, constants) -> np.ndarray:
    if constants is None:
        return based.mean_angles
    C = mx.check_dependence_matrix(constants)
    if C.shape[0] != plan.dim:
        raise DimensionMismatch("declared constants have the wrong dimension")
    return mx.lower_vector(mx.corr_to_angles(mx.permute(C, plan.order)))


def _check(aset: AngleDistributionSet, plan: ScenarioPlan):
    if aset.p != plan.dim:
        raise DimensionMismatch(f"calibration is {aset.p}x{aset.p}, scenario is {plan.dim}x{plan.dim}")


def scenario_sample(aset: AngleDistributionSet, plan: ScenarioPlan, N_out: int, seed: int,
                    constants=None, based: Optional[AngleDistributionSet] = None) -> np.ndarray:
    """Matrices in which only the scenario's region varies.

    Parameters
    ----------
    constants : array_like, optional
        Declared matrix whose values pin the frozen cells instead of the
        calibration mean.
    based : AngleDistributionSet, optional
        ``aset.permuted(plan.order)`` if already computed.
    """
    _check(aset, plan)
    based = based or aset.permuted(plan.order)
    theta = based.sample_angles(N_out, seed)
    mask = plan.perturbed_mask()
    theta[:, ~mask] = _frozen_angles(based, plan, constants)[~mask]
    Rs = mx.angle_vectors_to_corr(theta, plan.dim)
    return mx.permute(Rs, mx.inverse_permutation(plan.order))


def _original_cells(plan: ScenarioPlan) -> tuple[list, np.ndarray]:
    """Perturbed cells in original labels with their reordered-basis flat index."""
    p = plan.dim
    cells, idx = [], []
    for c in plan.region_cells:
        cells.append(plan.to_original(c))
        idx.append(mx.cell_position(p, *c))
    order = np.argsort([mx.cell_position(p, *c) for c in cells])
    return [cells[k] for k in order], np.array(idx, dtype=int)[order]


def _unpermute(plan, R):
    return mx.permute(R, mx.inverse_permutation(plan.order))


def scenario_inference(aset: AngleDistributionSet, plan: ScenarioPlan, R_obs, alpha: float = 0.05,
                       constants=None, based: Optional[AngleDistributionSet] = None) -> InferenceReport:
    """One-sample test and bound matrices restricted to the perturbed cells.

    Frozen cells are excluded from the p-values and echo their pinned values
    in every bound matrix; the simultaneous levels use the number of
    perturbed cells.
    """
    _check(aset, plan)
    R_obs = mx.check_dependence_matrix(R_obs)
    if R_obs.shape[0] != plan.dim:
        raise DimensionMismatch("observed matrix has the wrong dimension")
    based = based or aset.permuted(plan.order)
    cells, idx = _original_cells(plan)
    theta = mx.lower_vector(mx.corr_to_angles(mx.permute(R_obs, plan.order)))
    F = based.cdf(theta)
    pv_all = asymmetric_two_sided_array(based.mcdf, F)
    pv, floored = floor_pvalues(pv_all[idx], based.N)

    m = len(idx)
    a_lo, a_hi = simultaneous_alphas(alpha, m)
    levels = np.array([alpha / 2, 1 - alpha / 2, a_lo, a_hi])
    th = np.tile(_frozen_angles(based, plan, constants), (4, 1))
    mask = plan.perturbed_mask()
    th[:, mask] = based.quantile(np.repeat(levels[:, None], based.ncells, axis=1))[:, mask]
    mats = _unpermute(plan, mx.angle_vectors_to_corr(th, plan.dim))
    extras = set(plan.forced_extras)
    return InferenceReport(
        kind="scenario-one-sample",
        dim=plan.dim,
        cells=cells,
        cell_pvalues=pv,
        matrix_pvalue=matrix_pvalue(pv),
        alpha=alpha,
        floored=floored,
        simultaneous_alphas=(a_lo, a_hi),
        cell_ci_upper=mats[0],
        cell_ci_lower=mats[1],
        matrix_ci_upper=mats[2],
        matrix_ci_lower=mats[3],
        lnp=_lnp(pv),
        diagnostics=_diagnostics(R_obs, aset.mean_matrix),
        provenance={"scenario": plan.to_dict(), "calibration": aset.provenance, "N": aset.N},
        extra={"forced_extra": [c in extras for c in cells], "declared_constants": constants is not None},
    )


def scenario_quantile(aset: AngleDistributionSet, plan: ScenarioPlan, cdfs, constants=None,
                      based: Optional[AngleDistributionSet] = None) -> np.ndarray:
    """Matrix at the given cdf positions (correlation direction) on perturbed cells.

    ``cdfs`` is a ``p x p`` array in original labels; only perturbed cells
    are read (forced extras without a value default to their mean position).
    """
    _check(aset, plan)
    based = based or aset.permuted(plan.order)
    C = np.asarray(cdfs, dtype=float)
    if C.shape != (plan.dim, plan.dim):
        raise DimensionMismatch("cdf matrix has the wrong dimension")
    th = _frozen_angles(based, plan, constants).copy()
    p = plan.dim
    for c in plan.region_cells:
        a, b = plan.to_original(c)
        k = mx.cell_position(p, *c)
        v = C[a - 1, b - 1]
        if not np.isfinite(v):
            v = 1.0 - based.mcdf[k]
        if not 0 < v < 1:
            raise ValueError(f"cdf value {v} for cell {(a, b)} is outside (0, 1)")
        th[k] = based.quantile_cell(k, 1.0 - v)
    return _unpermute(plan, mx.angles_to_corr(mx.angle_matrix_from_vector(th, p)))


def scenario_two_sample(setA: AngleDistributionSet, setB: AngleDistributionSet, plan: ScenarioPlan,
                        alpha: float = 0.05, N: Optional[int] = None, seed: int = 0) -> InferenceReport:
    """Two-sample test over the perturbed cells only; frozen cells are ignored."""
    _check(setA, plan)
    _check(setB, plan)
    if setA.measure.get("kind") != setB.measure.get("kind"):
        from .errors import MeasureMismatch
        raise MeasureMismatch("the two calibrations use different measures")
    A = setA.permuted(plan.order)
    B = setB.permuted(plan.order)
    N = N or min(A.N, B.N)
    sa = int(np.random.SeedSequence(seed, spawn_key=(0,)).generate_state(1)[0])
    sb = int(np.random.SeedSequence(seed, spawn_key=(1,)).generate_state(1)[0])
    cells, idx = _original_cells(plan)
    res = two_sample_from_angles(A.sample_angles(N, sa)[:, idx], B.sample_angles(N, sb)[:, idx])
    pv = res["pvalues"]
    return InferenceReport(
        kind="scenario-two-sample",
        dim=plan.dim,
        cells=cells,
        cell_pvalues=pv,
        matrix_pvalue=matrix_pvalue(pv),
        alpha=alpha,
        floored=res["floored"],
        lnp=_lnp(pv),
        provenance={"scenario": plan.to_dict(), "seed": seed, "N": N},
        extra={"degenerate": res["degenerate"]},
    )
