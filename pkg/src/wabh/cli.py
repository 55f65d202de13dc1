"""Command-line entry points: ``wabh analyze``, ``wabh weights`` and ``wabh simulate``.

Exit codes: 0 success, 1 usage error, 2 bad input data, 3 numerical failure
(130 when a simulation is interrupted; the partial table is still written).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .core import INCONCLUSIVE_CUTOFF, HypothesisGrid, parse_pi0_mode
from .errors import DomainError, InputError, WABHError
from .glm import FitStatus, TRANSFORMS, Dataset, analyze_dataset
from .io import (
    align_coords,
    read_coords,
    read_matrix,
    read_pertest,
    write_records,
)
from .pipeline import PROCEDURES, build_weights, run_procedure
from .prior import DEFAULT_BANDWIDTH, DEFAULT_SCREEN, PriorField, constant_prior, ingest_prior, spatial_kernel_prior
from .sim import REPLICATE_COLUMNS, RESULT_COLUMNS, SIM_PROCEDURES, SimConfig, run_experiment

logger = logging.getLogger("wabh")

DEFAULT_TAU = 0.9
EXIT_USAGE = 1
EXIT_INTERRUPTED = 130


class UsageError(DomainError):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad flags; ours is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _probability(text):
    value = float(text)
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError(f"{text} is not in (0, 1)")
    return value


def _positive(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"{text} is not positive (g_m = eta / S_m must be > 0)")
    return value


def _pi0(text):
    try:
        parse_pi0_mode(text)
    except DomainError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return text


# ---------------------------------------------------------------------------
# shared input handling


@dataclass
class TestInputs:
    """Everything known per test before a procedure runs, in test-id order."""

    test_ids: np.ndarray
    pvalue: np.ndarray
    s_m: Optional[np.ndarray]
    xbar: Optional[np.ndarray]
    status: np.ndarray
    candidate: np.ndarray
    coords: Optional[np.ndarray]
    prior_column: Optional[np.ndarray] = None
    kind: str = "matrix"

    __test__ = False

    @property
    def shape(self):
        if self.coords is None:
            return None
        return tuple(int(c) + 1 for c in self.coords.max(axis=0))


def _is_pertest(path) -> bool:
    with open(path) as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            return line.split(",")[0].strip().lower() == "test_id"
    raise InputError(f"{path}: empty file")


def load_inputs(path, coords_path=None, transform="identity", workers=None, require=("test_id", "pvalue")) -> TestInputs:
    """Read a lesion matrix (and fit it) or a per-test statistics file."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"cannot read {path}: no such file")
    coords = None
    if _is_pertest(path):
        cols = read_pertest(path, require=require)
        ids = cols["test_id"]
        pvalue = cols.get("pvalue", np.full(ids.size, np.nan))
        s_m, xbar = cols.get("s_m"), cols.get("xbar")
        status = np.full(ids.size, int(FitStatus.OK))
        candidate = np.ones(ids.size, dtype=bool)
        if "pvalue" in cols:
            candidate &= np.isfinite(pvalue)
        if s_m is not None:
            candidate &= np.isfinite(s_m)
        inputs = TestInputs(ids, pvalue, s_m, xbar, status, candidate, None, cols.get("p_nonnull"), "pertest")
    else:
        mat = read_matrix(path)
        data = Dataset(mat.Y, mat.X, transform)
        fit = analyze_dataset(data, workers=workers)
        candidate = fit.usable & np.isfinite(fit.pvalue) & np.isfinite(fit.s_m)
        counts = fit.counts()
        logger.info("fitted %d tests: %s", mat.test_ids.size, counts)
        inputs = TestInputs(mat.test_ids, fit.pvalue, fit.s_m, fit.xbar, np.asarray(fit.status, dtype=int), candidate, None)
    if coords_path is not None:
        cids, ccoords = read_coords(coords_path)
        inputs.coords = align_coords(inputs.test_ids, cids, ccoords, source=str(coords_path))
    if not inputs.candidate.any():
        raise InputError(f"{path}: no test could be fitted")
    return inputs


def _candidate_grid(inputs: TestInputs):
    """Grid over candidates plus the permutation from test-id to grid order."""
    if inputs.coords is None:
        raise UsageError("the spatial-kernel prior needs --coords")
    shape = inputs.shape
    coords = inputs.coords[inputs.candidate]
    lin = np.ravel_multi_index(tuple(coords.T), shape)
    mask = np.zeros(int(np.prod(shape)), dtype=bool)
    mask[lin] = True
    return HypothesisGrid(shape, mask), np.argsort(lin)


def resolve_prior(args, inputs: TestInputs) -> PriorField:
    """Prior for the candidate tests, from file, input column or estimator."""
    ids = inputs.test_ids[inputs.candidate]
    P = inputs.pvalue[inputs.candidate]
    if args.prior is not None:
        return ingest_prior(args.prior, ids)
    if inputs.prior_column is not None and args.prior_source is None:
        return PriorField(inputs.prior_column[inputs.candidate], "external-file", meta=f"{args.input}:p_nonnull")
    source = args.prior_source or "constant"
    if not np.all(np.isfinite(P)):
        raise InputError("estimating a prior needs p-values for every test")
    if source == "constant":
        return constant_prior(P, args.prior_kappa)
    grid, order = _candidate_grid(inputs)
    est = spatial_kernel_prior(P[order], grid, args.bandwidth, args.screen)
    p = np.empty_like(est.p)
    p[order] = est.p
    return PriorField(p, est.source, est.meta)


def _prior_params(args, prior: Optional[PriorField]) -> dict:
    if prior is None:
        return {"prior_source": "none"}
    out = {"prior_source": prior.source, "prior_meta": prior.meta}
    if prior.source == "constant":
        out["prior_kappa"] = args.prior_kappa
    return out


def _coord_columns(inputs: TestInputs) -> List[str]:
    if inputs.coords is None:
        return []
    return ["x", "y", "z"][: inputs.coords.shape[1]]


# ---------------------------------------------------------------------------
# analyze

TEST_COLUMNS = (
    "test_id", "candidate", "status", "xbar", "s_m", "p_m", "weight", "pvalue",
    "q_value", "decision", "inconclusive",
)
SUMMARY_COLUMNS = ("key", "value")


def cmd_analyze(args) -> int:
    if args.procedure in ("wabh", "wbh") and args.tau is None and args.eta is None:
        args.tau = DEFAULT_TAU
    inputs = load_inputs(args.input, args.coords, args.transform, args.threads)
    cand = inputs.candidate
    P = inputs.pvalue[cand]
    s = None if inputs.s_m is None else inputs.s_m[cand]
    xbar = None if inputs.xbar is None else inputs.xbar[cand]

    prior = None
    if args.procedure in ("wabh", "wbh"):
        if s is None:
            raise InputError(f"{args.procedure} needs predicted standard errors: add an s_m column")
        prior = resolve_prior(args, inputs)
    if args.procedure == "ten-rule" and xbar is None:
        raise InputError("ten-rule needs lesion frequencies: add an xbar column")

    kind, kappa = parse_pi0_mode(args.pi0)
    result = run_procedure(
        args.procedure, P, alpha=args.alpha, s=s, xbar=xbar, prior=prior,
        tau=args.tau if prior is not None else None, eta=args.eta if prior is not None else None,
        pi0_mode=args.pi0, kappa=kappa if kind == "storey" else 0.5,
        inconclusive_cutoff=args.inconclusive_cutoff,
    )
    dec = result.decisions
    w = result.weights

    params = {
        "command": "analyze",
        "version": __version__,
        "input": args.input,
        "coords": args.coords,
        "procedure": args.procedure,
        "alpha": args.alpha,
        "tau": w.tau if w.tau is not None else args.tau,
        "eta": w.eta if w.eta is not None else args.eta,
        "transform": args.transform,
        "pi0": args.pi0,
        "abh_kappa": kappa if kind == "storey" else 0.5,
        "inconclusive_cutoff": args.inconclusive_cutoff,
        "weight_source": w.source,
    }
    params.update(_prior_params(args, prior))

    M = inputs.test_ids.size
    full = {
        "p_m": np.full(M, np.nan), "weight": np.full(M, np.nan), "q_value": np.full(M, np.nan),
        "decision": np.zeros(M, dtype=int), "inconclusive": np.zeros(M, dtype=int),
    }
    if prior is not None:
        full["p_m"][cand] = prior.p
    full["weight"][cand] = w.weights
    full["q_value"][cand] = dec.q_values
    full["decision"][cand] = dec.decisions
    full["inconclusive"][cand] = w.weights < args.inconclusive_cutoff

    coord_cols = _coord_columns(inputs)
    columns = ["test_id"] + coord_cols + list(TEST_COLUMNS[1:])
    xbar_all = inputs.xbar if inputs.xbar is not None else np.full(M, np.nan)
    s_all = inputs.s_m if inputs.s_m is not None else np.full(M, np.nan)
    rows = []
    for i in range(M):
        row = [inputs.test_ids[i]]
        if coord_cols:
            row += list(inputs.coords[i])
        row += [
            int(cand[i]), FitStatus(int(inputs.status[i])).name.lower(), xbar_all[i], s_all[i],
            full["p_m"][i], full["weight"][i], inputs.pvalue[i], full["q_value"][i],
            full["decision"][i], full["inconclusive"][i],
        ]
        rows.append(row)

    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    tests_path = prefix.with_name(prefix.name + ".tests.csv")
    summary_path = prefix.with_name(prefix.name + ".summary.csv")
    write_records(tests_path, columns, rows, params)

    impact = dec.impact
    summary = {
        "n_tests": M,
        "n_candidates": int(cand.sum()),
        "n_rejected": dec.n_rejected,
        "frac_upweighted": impact.frac_upweighted,
        "frac_inconclusive": impact.frac_inconclusive,
        "max_weight": impact.max_weight,
        "eta": w.eta,
        "lambda_hat": w.lambda_hat,
        "pi0_hat": dec.pi0_hat,
        "alpha": dec.alpha,
        "threshold": dec.threshold,
    }
    write_records(summary_path, SUMMARY_COLUMNS, summary.items(), params)

    if not args.no_figures:
        from .plotting import analysis_panels

        coords = None if inputs.coords is None else inputs.coords[cand]
        analysis_panels(
            np.full(P.size, np.nan) if s is None else s, w.weights, P, dec.decisions,
            prefix.with_name(prefix.name + ".png"), coords, inputs.shape,
        )
    print(f"{args.procedure}: {dec.n_rejected} of {int(cand.sum())} tests rejected at alpha={args.alpha}; "
          f"report in {tests_path}")
    return 0


# ---------------------------------------------------------------------------
# weights

WEIGHT_COLUMNS = ("parameter", "value", "test_id", "s_m", "p_m", "w_m", "eta", "lambda_hat")


def cmd_weights(args) -> int:
    inputs = load_inputs(args.input, args.coords, args.transform, args.threads, require=("test_id", "s_m"))
    if inputs.s_m is None:
        raise InputError(f"{args.input}: needs an s_m column")
    cand = inputs.candidate
    s = inputs.s_m[cand]
    prior = resolve_prior(args, inputs)
    settings = [("tau", t) for t in args.tau] if args.tau else [("eta", e) for e in args.eta]

    rows, curves = [], {}
    for name, value in settings:
        kwargs = {name: value}
        scheme = build_weights(s, prior, alpha=args.alpha, **kwargs)
        curves[f"{name}={value:g}"] = (s, scheme.weights)
        for tid, sm, pm, wm in zip(inputs.test_ids[cand], s, prior.p, scheme.weights):
            rows.append([name, value, tid, sm, pm, wm, scheme.eta, scheme.lambda_hat])

    params = {
        "command": "weights", "version": __version__, "input": args.input, "coords": args.coords,
        "alpha": args.alpha, "transform": args.transform,
    }
    params.update(_prior_params(args, prior))
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    out = prefix.with_name(prefix.name + ".weights.csv")
    write_records(out, WEIGHT_COLUMNS, rows, params)
    if not args.no_figures:
        from .plotting import weight_curves

        weight_curves(curves, prefix.with_name(prefix.name + ".weights.png"), args.inconclusive_cutoff)
    print(f"{len(settings)} weight setting(s) for {s.size} tests written to {out}")
    return 0


# ---------------------------------------------------------------------------
# simulate

SIM_FLAGS = ("K", "C", "s", "theta", "n", "B", "alpha", "seed", "tau", "abh_kappa", "const_kappa",
             "kernel_bandwidth", "kernel_threshold", "intercept_scale")


def build_sim_config(args) -> SimConfig:
    base = {}
    if args.config is not None:
        try:
            with open(args.config) as fh:
                base = json.load(fh)
        except OSError as exc:
            raise InputError(f"cannot read {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(base, dict):
            raise UsageError(f"{args.config}: expected a JSON object")
    for name in SIM_FLAGS:
        value = getattr(args, name)
        if value is not None:
            base[name] = value
    if args.grid is not None:
        base["grid"] = args.grid
    if args.procedures is not None:
        base["procedures"] = args.procedures
    if "seed" not in base:
        raise UsageError("simulations need an explicit --seed (or a seed in the config file)")
    try:
        return SimConfig.from_dict(base)
    except TypeError as exc:
        raise UsageError(f"invalid simulation config: {exc}") from None


def cmd_simulate(args) -> int:
    config = build_sim_config(args)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)

    def progress(rep):
        logger.info("replicate %d done", rep.b)

    result = run_experiment(config, workers=args.threads, on_replicate=progress)
    params = {"command": "simulate", "version": __version__}
    for key, value in config.to_dict().items():
        params[key] = json.dumps(value) if isinstance(value, list) else value
    params["complete"] = int(result.complete)
    params["B_done"] = len(result.replicates)

    rows = result.rows()
    table = prefix.with_name(prefix.name + ".csv")
    write_records(table, RESULT_COLUMNS, ([r[c] for c in RESULT_COLUMNS] for r in rows), params)
    if args.replicate_log:
        log = prefix.with_name(prefix.name + ".replicates.csv")
        write_records(log, REPLICATE_COLUMNS, ([r[c] for c in REPLICATE_COLUMNS] for r in result.replicate_rows()), params)
    if not args.no_figures:
        from .plotting import simulation_summary

        simulation_summary([dict(r, alpha=config.alpha) for r in rows], prefix.with_name(prefix.name + ".png"))
    for r in rows:
        print(f"{r['procedure']:>10}  fdr={r['fdr']:.4f} (se {r['fdr_se']:.4f})  "
              f"power={r['power']:.4f} (se {r['power_se']:.4f})")
    if not result.complete:
        print(f"interrupted: {len(result.replicates)} of {config.B} replicates", file=sys.stderr)
        return EXIT_INTERRUPTED
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(p, with_prior=True):
    p.add_argument("input", help="lesion matrix (y,<id>,...) or per-test file (test_id,...)")
    p.add_argument("--coords", help="sidecar coordinates file test_id,x,y[,z]")
    p.add_argument("--alpha", type=_probability, default=0.05, help="FDR level (default 0.05)")
    p.add_argument("--transform", choices=TRANSFORMS, default="identity",
                   help="outcome transform; logit also applies to the lesion-burden covariate")
    p.add_argument("--inconclusive-cutoff", type=float, default=INCONCLUSIVE_CUTOFF,
                   help="weights below this are reported as inconclusive (default 0.1)")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default $WABH_THREADS or 1)")
    p.add_argument("-o", "--out", default="wabh", help="output path prefix (default ./wabh)")
    p.add_argument("--no-figures", action="store_true", help="skip the PNG figure")
    if with_prior:
        g = p.add_argument_group("prior")
        g.add_argument("--prior", help="prior file test_id,p_nonnull")
        g.add_argument("--prior-source", choices=("constant", "spatial-kernel"), default=None,
                       help="estimate the prior when no file is given (default constant)")
        g.add_argument("--prior-kappa", type=_probability, default=0.5,
                       help="Storey threshold for the constant prior (default 0.5)")
        g.add_argument("--bandwidth", type=float, default=DEFAULT_BANDWIDTH,
                       help=f"spatial kernel bandwidth in grid units (default {DEFAULT_BANDWIDTH})")
        g.add_argument("--screen", type=_probability, default=DEFAULT_SCREEN,
                       help=f"spatial kernel screening level (default {DEFAULT_SCREEN})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wabh", description="Weighted adaptive BH testing for lesion-symptom maps.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analyze", help="fit every test and run a testing procedure")
    _add_common(a)
    a.add_argument("--procedure", choices=PROCEDURES, default="wabh")
    a.add_argument("--pi0", type=_pi0, default="prior", help="prior or storey:<kappa> (default prior)")
    eff = a.add_mutually_exclusive_group()
    eff.add_argument("--tau", type=_probability, help=f"MMW level (default {DEFAULT_TAU})")
    eff.add_argument("--eta", type=_positive, help="fixed common effect size")
    a.set_defaults(func=cmd_analyze)

    w = sub.add_parser("weights", help="tabulate optimal weights against S_m")
    _add_common(w)
    eff = w.add_mutually_exclusive_group(required=True)
    eff.add_argument("--tau", type=_probability, nargs="+")
    eff.add_argument("--eta", type=_positive, nargs="+")
    w.set_defaults(func=cmd_weights)

    s = sub.add_parser("simulate", help="Monte Carlo FDR and power benchmark")
    s.add_argument("--config", help="JSON file of simulation settings; flags override it")
    s.add_argument("--grid", type=int, nargs="+")
    s.add_argument("--K", type=int)
    s.add_argument("--C", type=float)
    s.add_argument("--s", type=float)
    s.add_argument("--theta", type=float)
    s.add_argument("--n", type=int)
    s.add_argument("--B", type=int)
    s.add_argument("--alpha", type=_probability)
    s.add_argument("--seed", type=int)
    s.add_argument("--tau", type=_probability)
    s.add_argument("--abh-kappa", type=_probability)
    s.add_argument("--const-kappa", type=_probability)
    s.add_argument("--kernel-bandwidth", type=float)
    s.add_argument("--kernel-threshold", type=_probability)
    s.add_argument("--intercept-scale", type=float)
    s.add_argument("--procedures", nargs="+", choices=sorted(SIM_PROCEDURES))
    s.add_argument("--threads", type=int, default=None)
    s.add_argument("-o", "--out", default="wabh_sim", help="output path prefix (default ./wabh_sim)")
    s.add_argument("--replicate-log", action="store_true", help="also write per-replicate counts")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_simulate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    if args.threads is None:
        args.threads = None if "WABH_THREADS" in os.environ else 1
    elif args.threads < 1:
        parser.exit(EXIT_USAGE, "wabh: error: --threads must be at least 1\n")
    try:
        return args.func(args)
    except WABHError as exc:
        print(f"wabh: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"wabh: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
