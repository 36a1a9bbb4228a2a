"""Command-line entry point: ``nabc <subcommand> ...``.

Exit codes: 0 success, 1 domain error, 2 configuration or I/O error. Errors
are printed to stderr as a single JSON object.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import io as nio
from . import matrix as mx
from .dgm import DgmSpec, gaussian_spec, stylized_five_asset
from .entropy import diagnostics
from .errors import ConfigError, NabcError
from .identity import identity_inference, pd_probability
from .kernel import (
    AngleDistributionSet,
    KernelSpec,
    calibrate,
    matrix_cdf,
    matrix_inference,
    matrix_quantile,
    two_sample_test,
)
from .measures import MEASURES, MeasureSpec, pairwise_matrix
from .report import _plain
from .scenario import (
    ScenarioSpec,
    plan_scenario,
    scenario_inference,
    scenario_quantile,
    scenario_sample,
    scenario_two_sample,
)


def _seed(args) -> int:
    if args.seed is not None:
        return int(args.seed)
    return int(np.random.SeedSequence().generate_state(1)[0])


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return max(1, int(args.threads))
    env = os.environ.get("NABC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"NABC_THREADS must be an integer, got {env!r}") from exc
    return 1


def _alpha(a: float) -> float:
    if not 0 < a < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    return a


def _measure(args) -> MeasureSpec:
    opts = {}
    if getattr(args, "normalization", None):
        opts["normalization"] = args.normalization
    try:
        return MeasureSpec(args.measure, q=args.q, seed=args.tie_seed, options=opts)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _provenance(args, seed=None, **more) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    d = {"version": __version__, "command": args.command, "config": cfg}
    if seed is not None:
        d["seed"] = seed
    d.update(more)
    return d


def _emit(args, doc: dict) -> None:
    nio.write_json(getattr(args, "out", None), _plain(doc))


def _load_dgm(args) -> DgmSpec:
    if args.dgm:
        return DgmSpec.from_dict(nio.read_json(args.dgm))
    if not args.matrix:
        raise ConfigError("give --dgm or --matrix")
    R = nio.read_matrix(args.matrix)
    if args.stylized:
        if R.shape[0] != 5:
            raise ConfigError("--stylized uses the five-margin configuration; supply a DGM JSON for other sizes")
        return stylized_five_asset(R)
    return gaussian_spec(R)


def _observed(path) -> np.ndarray:
    return mx.check_dependence_matrix(nio.read_matrix(path))


# subcommands ----------------------------------------------------------------

def cmd_estimate(args) -> None:
    X, names = nio.read_panel(args.panel)
    spec = _measure(args)
    R = pairwise_matrix(X, spec, check_pd=False)
    repaired = False
    if not mx.is_positive_definite(R):
        if not args.repair:
            from .errors import NotPositiveDefinite
            raise NotPositiveDefinite("estimated matrix is not positive definite (use --repair to force)")
        R, repaired = mx.nearest_pd(R), True
    doc = {"dim": R.shape[0], "measure": spec.to_dict(), "assets": names, "values": R,
           "repaired": repaired, "provenance": _provenance(args)}
    if args.out and not args.out.endswith(".json"):
        nio.write_matrix(args.out, R)
    else:
        _emit(args, doc)


def cmd_generate(args) -> None:
    dgm = _load_dgm(args)
    seed = _seed(args)
    X = dgm.generate(args.n, np.random.default_rng(seed))
    out = args.out or "-"
    if out == "-":
        _print_panel(X)
    else:
        nio.write_panel(out, X)
    print(json.dumps({"seed": seed, "n": args.n, "p": dgm.p}), file=sys.stderr)


def _print_panel(X):
    import csv
    w = csv.writer(sys.stdout)
    w.writerow([f"x{k + 1}" for k in range(X.shape[1])])
    w.writerows([[repr(float(v)) for v in row] for row in X])


def cmd_identity(args) -> None:
    alpha = _alpha(args.alpha)
    if args.n <= args.p:
        raise ConfigError("need n > p")
    R = _observed(args.observed) if args.observed else np.eye(args.p)
    if R.shape[0] != args.p:
        raise ConfigError("observed matrix does not match --p")
    doc = identity_inference(R, args.n, alpha)
    seed = _seed(args) if args.pd_draws else None
    doc["pd_probability"] = pd_probability(args.p, args.pd_draws, seed or 0).to_dict()
    doc["provenance"] = _provenance(args, seed)
    _emit(args, doc)


def _kernel(args) -> KernelSpec:
    return KernelSpec(args.kernel, args.bandwidth, args.tightening, args.resolution)


def cmd_calibrate(args) -> None:
    if not args.out:
        raise ConfigError("calibrate writes a binary artifact; give --out")
    dgm = _load_dgm(args)
    seed = _seed(args)
    aset = calibrate(dgm, _measure(args), args.n, args.N, _kernel(args), seed=seed, workers=_threads(args))
    aset.save(args.out)
    summary = {k: v for k, v in aset.summary().items() if k != "mean_matrix"}
    print(json.dumps(_plain({"artifact": args.out, "seed": seed, **summary})))


def _load_set(path) -> AngleDistributionSet:
    if not path:
        raise ConfigError("a calibration artifact is required (--calibration)")
    return AngleDistributionSet.load(path)


def cmd_sample(args) -> None:
    aset = _load_set(args.calibration)
    seed = _seed(args)
    Rs = aset.sample_matrices(args.N, seed)
    if args.out and args.out.endswith(".npy"):
        np.save(args.out, Rs)
        print(json.dumps({"seed": seed, "N": args.N, "out": args.out}))
    else:
        _emit(args, {"seed": seed, "dim": aset.p, "matrices": Rs, "provenance": _provenance(args, seed)})


def cmd_infer(args) -> None:
    aset = _load_set(args.calibration)
    rep = matrix_inference(aset, _observed(args.observed), _alpha(args.alpha))
    rep.provenance["run"] = _provenance(args)
    _emit(args, rep.to_dict())


def cmd_quantile(args) -> None:
    aset = _load_set(args.calibration)
    if args.reverse:
        c = matrix_cdf(aset, _observed(args.observed))
        # same layout as a --cdf input so the output can be fed straight back
        _emit(args, {"dim": aset.p, "values": mx.symmetric_from_vector(c, aset.p, diag=np.nan),
                     "provenance": _provenance(args)})
    else:
        if not args.cdf:
            raise ConfigError("give --cdf (or --reverse with --observed)")
        R = matrix_quantile(aset, nio.read_matrix(args.cdf))
        _emit(args, {"dim": aset.p, "values": R, "provenance": _provenance(args)})


def cmd_two_sample(args) -> None:
    A, B = _load_set(args.calibration_a), _load_set(args.calibration_b)
    seed = _seed(args)
    rep = two_sample_test(A, B, _alpha(args.alpha), args.N, seed)
    rep.provenance["run"] = _provenance(args, seed)
    _emit(args, rep.to_dict())


def cmd_scenario(args) -> None:
    spec = ScenarioSpec.from_dict(nio.read_json(args.spec))
    plan = plan_scenario(spec)
    doc = {"plan": plan.to_dict()}
    if args.plan_only:
        _emit(args, doc)
        return
    aset = _load_set(args.calibration)
    constants = nio.read_matrix(args.constants) if args.constants else None
    based = aset.permuted(plan.order)
    seed = _seed(args)
    if args.observed:
        rep = scenario_inference(aset, plan, _observed(args.observed), _alpha(args.alpha), constants, based)
        doc["inference"] = rep.to_dict()
    if args.cdf:
        doc["quantile"] = scenario_quantile(aset, plan, nio.read_matrix(args.cdf), constants, based)
    if args.calibration_b:
        rep = scenario_two_sample(aset, _load_set(args.calibration_b), plan, _alpha(args.alpha), args.N, seed)
        doc["two_sample"] = rep.to_dict()
    if args.samples:
        doc["samples"] = scenario_sample(aset, plan, args.samples, seed, constants, based)
    doc["provenance"] = _provenance(args, seed)
    _emit(args, doc)


def cmd_entropy(args) -> None:
    R = _observed(args.observed)
    ref = _observed(args.reference) if args.reference else None
    pv = None
    if args.pvalues:
        P = nio.read_matrix(args.pvalues)
        pv = mx.lower_vector(P)
    rep = diagnostics(R, pv, ref, args.reference or "")
    _emit(args, {"diagnostics": rep.to_dict(), "provenance": _provenance(args)})


# parser ---------------------------------------------------------------------

def _add_measure(p):
    p.add_argument("--measure", default="pearson", choices=sorted(MEASURES))
    p.add_argument("--q", type=float, default=None, help="quantile level for tail measures")
    p.add_argument("--tie-seed", type=int, default=0, help="base seed for random tie-breaking")
    p.add_argument("--normalization", choices=["inverse_distance", "printed"], default=None)


def _add_dgm(p):
    p.add_argument("--dgm", help="DGM JSON document")
    p.add_argument("--matrix", help="baseline matrix (Gaussian DGM unless --stylized)")
    p.add_argument("--stylized", action="store_true", help="five-margin stylized generator on --matrix")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nabc", description="Finite-sample inference for dependence matrices.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--out", default=None, help="output path (stdout if omitted)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None, help="worker cap (falls back to NABC_THREADS)")
        return p

    p = add("estimate", cmd_estimate, "panel CSV -> dependence matrix")
    p.add_argument("panel")
    _add_measure(p)
    p.add_argument("--repair", action="store_true", help="force a non-PD estimate to PD (marked in output)")

    p = add("generate", cmd_generate, "DGM -> panel CSV")
    _add_dgm(p)
    p.add_argument("--n", type=int, required=True)

    p = add("identity", cmd_identity, "analytic identity-case laws and inference")
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--observed", help="matrix to test against the identity")
    p.add_argument("--pd-draws", type=int, default=0, help="Monte Carlo draws for the PD probability")

    p = add("calibrate", cmd_calibrate, "simulate and fit kernel angle laws")
    _add_dgm(p)
    _add_measure(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--kernel", default="epanechnikov", choices=["epanechnikov", "gaussian"])
    p.add_argument("--bandwidth", default="silverman_min",
                   choices=["silverman_min", "silverman_1", "silverman_iqr", "hansen"])
    p.add_argument("--tightening", type=float, default=0.15)
    p.add_argument("--resolution", type=int, default=1024)

    p = add("sample", cmd_sample, "draw matrices from a calibration")
    p.add_argument("--calibration", required=True)
    p.add_argument("--N", type=int, required=True)

    p = add("infer", cmd_infer, "one-sample test of an observed matrix")
    p.add_argument("--calibration", required=True)
    p.add_argument("--observed", required=True)
    p.add_argument("--alpha", type=float, default=0.05)

    p = add("quantile", cmd_quantile, "matrix from a cdf matrix, or the reverse lookup")
    p.add_argument("--calibration", required=True)
    p.add_argument("--cdf")
    p.add_argument("--reverse", action="store_true")
    p.add_argument("--observed")

    p = add("two-sample", cmd_two_sample, "test two calibrations for a common population")
    p.add_argument("--calibration-a", required=True)
    p.add_argument("--calibration-b", required=True)
    p.add_argument("--N", type=int, default=None)
    p.add_argument("--alpha", type=float, default=0.05)

    p = add("scenario", cmd_scenario, "scenario-restricted planning, sampling and inference")
    p.add_argument("--spec", required=True, help="scenario JSON document")
    p.add_argument("--plan-only", action="store_true")
    p.add_argument("--calibration")
    p.add_argument("--calibration-b", help="second calibration for a restricted two-sample test")
    p.add_argument("--observed")
    p.add_argument("--cdf")
    p.add_argument("--constants", help="declared matrix pinning the frozen cells instead of the mean")
    p.add_argument("--samples", type=int, default=0)
    p.add_argument("--N", type=int, default=None)
    p.add_argument("--alpha", type=float, default=0.05)

    p = add("entropy", cmd_entropy, "LNP, eigenvalue entropy and norms")
    p.add_argument("--observed", required=True)
    p.add_argument("--reference")
    p.add_argument("--pvalues", help="matrix of two-sided cell p-values")
    return ap


def _error(kind: str, exc: Exception, code: int) -> int:
    rec = {"error": type(exc).__name__, "kind": kind, "message": str(exc)}
    cell = getattr(exc, "cell", None)
    if cell is not None:
        rec["cell"] = list(cell)
    rec["module"] = type(exc).__module__
    print(json.dumps(rec), file=sys.stderr)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except NabcError as exc:
        return _error("domain", exc, 1)
    except (ConfigError, OSError, ValueError) as exc:
        return _error("config", exc, 2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
