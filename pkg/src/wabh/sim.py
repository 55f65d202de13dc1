"""Monte Carlo benchmark: spatially clustered signals in logistic lesion data.

One replicate draws

* the signal set: the ``K`` largest values of a GRF with scale ``s``;
* lesion status ``logit P(X_im = 1) = -1 + a0_m + a1_m Y_i + b_i`` with
  ``a0`` a GRF of variance ``C^2``, ``a1_m ~ U(0, 2 theta)`` on signals (0
  elsewhere), ``b_i ~ N(0, 0.8^2)`` and ``Y_i = 0.5 b_i + N(0, 0.5^2)``;

then fits every test with the leave-one-out logit lesion burden as nuisance
covariate, runs each configured procedure and scores decisions against the
truth.  Replicate ``b`` draws from its own Philox stream keyed by
``(seed, b)``, so results do not depend on scheduling or thread count.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from .core import HypothesisGrid, WeightScheme
from .errors import DegenerateError, DomainError, NoSolutionError
from .glm import default_workers, fit_mass_univariate, total_lesion_covariate
from .grf import grf_sample
from .pipeline import build_weights, run_procedure
from .prior import constant_prior, spatial_kernel_prior

logger = logging.getLogger(__name__)

BASE_INTERCEPT = -1.0
SUBJECT_SD = 0.8
OUTCOME_LOADING = 0.5
OUTCOME_NOISE_SD = 0.5
INTERCEPT_SCALE_FULL = 50.0

# name -> (pipeline procedure, prior source)
SIM_PROCEDURES = {
    "wabh-mmw": ("wabh", "spatial-kernel"),
    "wabh-const": ("wabh", "constant"),
    "abh": ("abh", None),
    "bh": ("bh", None),
    "ten-rule": ("ten-rule", None),
}
DEFAULT_PROCEDURES = ("wabh-mmw", "abh", "bh", "ten-rule")
RESULT_COLUMNS = ("procedure", "C", "s", "K", "theta", "B", "fdr", "fdr_se", "power", "power_se")
REPLICATE_COLUMNS = ("procedure", "C", "s", "K", "theta", "b", "V", "S", "R", "n_excluded", "fallback")


@dataclass
class SimConfig:
    grid: Tuple[int, ...] = (50, 50)
    K: int = 125
    C: float = 1.5
    s: float = 5.0
    theta: float = 0.75
    n: int = 200
    B: int = 100
    alpha: float = 0.05
    seed: int = 0
    tau: float = 0.9
    procedures: Tuple[str, ...] = DEFAULT_PROCEDURES
    abh_kappa: float = 0.05
    const_kappa: float = 0.5
    kernel_bandwidth: float = 4.5
    kernel_threshold: float = 0.9
    intercept_scale: Optional[float] = None

    def __post_init__(self):
        self.grid = tuple(int(g) for g in self.grid)
        self.procedures = tuple(self.procedures)
        if len(self.grid) not in (2, 3) or min(self.grid) < 1:
            raise DomainError(f"grid must be 2-D or 3-D, got {self.grid}")
        M = int(np.prod(self.grid))
        if not 0 <= self.K < M:
            raise DomainError(f"K must satisfy 0 <= K < M={M}, got {self.K}")
        if self.C < 0:
            raise DomainError("C must be non-negative")
        if not self.s > 0:
            raise DomainError("s must be positive")
        if not self.theta > 0:
            raise DomainError("theta must be positive")
        if self.n < 4:
            raise DomainError("n must be at least 4")
        if self.B < 1:
            raise DomainError("B must be at least 1")
        if not 0 < self.alpha < 1:
            raise DomainError("alpha must be in (0, 1)")
        unknown = [p for p in self.procedures if p not in SIM_PROCEDURES]
        if unknown or not self.procedures:
            raise DomainError(f"unknown procedures {unknown}; choose from {sorted(SIM_PROCEDURES)}")
        if self.intercept_scale is None:
            self.intercept_scale = INTERCEPT_SCALE_FULL * self.grid[0] / 100.0

    @property
    def M(self) -> int:
        return int(np.prod(self.grid))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["grid"] = list(self.grid)
        d["procedures"] = list(self.procedures)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise DomainError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "SimConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def replicate_rng(seed: int, b: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(b)])))


def select_signals(field, K: int) -> np.ndarray:
    """Indices of the ``K`` largest values, ties to the lower index, sorted."""
    field = np.asarray(field, dtype=float).ravel()
    if not 0 <= K <= field.size:
        raise DomainError(f"K={K} outside [0, {field.size}]")
    order = np.argsort(-field, kind="stable")
    return np.sort(order[:K])


@dataclass
class SimulatedData:
    Y: np.ndarray
    X: np.ndarray
    truth: np.ndarray
    intercepts: np.ndarray
    slopes: np.ndarray


def generate_dataset(config: SimConfig, signals, rng) -> SimulatedData:
    """Draw outcome and lesion matrix for one replicate."""
    rng = np.random.default_rng(rng)
    M = config.M
    truth = np.zeros(M, dtype=bool)
    truth[np.asarray(signals, dtype=np.int64)] = True
    intercepts = grf_sample(config.grid, config.intercept_scale, config.C**2, rng).ravel()
    slopes = np.where(truth, rng.uniform(0.0, 2.0 * config.theta, M), 0.0)
    b = rng.normal(0.0, SUBJECT_SD, config.n)
    Y = OUTCOME_LOADING * b + rng.normal(0.0, OUTCOME_NOISE_SD, config.n)
    eta = BASE_INTERCEPT + intercepts[None, :] + Y[:, None] * slopes[None, :] + b[:, None]
    X = (rng.random((config.n, M)) < expit(eta)).astype(np.uint8)
    return SimulatedData(Y, X, truth, intercepts, slopes)


@dataclass
class ReplicateResult:
    b: int
    counts: Dict[str, Tuple[int, int, int]]
    n_excluded: int
    fallback: Dict[str, bool] = field(default_factory=dict)
    pvalues: Optional[np.ndarray] = None
    truth: Optional[np.ndarray] = None


def _score(decisions_full, truth) -> Tuple[int, int, int]:
    R = int(decisions_full.sum())
    V = int((decisions_full & ~truth).sum())
    return V, R - V, R


def run_replicate(config: SimConfig, b: int, *, workers: int = 1, keep_pvalues: bool = False) -> ReplicateResult:
    """Generate, fit and test one replicate; return (V, S, R) per procedure.

    With ``keep_pvalues`` the result also carries the full-grid p-values (NaN
    for excluded tests) and the truth mask.
    """
    rng = replicate_rng(config.seed, b)
    signal_field = grf_sample(config.grid, config.s, 1.0, rng)
    signals = select_signals(signal_field, config.K)
    data = generate_dataset(config, signals, rng)

    Xplus = total_lesion_covariate(data.X, transform="logit")
    fit = fit_mass_univariate(data.Y, data.X, Xplus, workers=workers)
    keep = fit.usable & np.isfinite(fit.pvalue) & np.isfinite(fit.s_m)
    n_excluded = int(config.M - keep.sum())
    extra = {}
    if keep_pvalues:
        extra = {"pvalues": np.where(keep, fit.pvalue, np.nan), "truth": data.truth}
    if not keep.any():
        zero = {name: (0, 0, 0) for name in config.procedures}
        return ReplicateResult(b, zero, n_excluded, {name: False for name in config.procedures}, **extra)

    ids = np.flatnonzero(keep)
    grid = HypothesisGrid(config.grid, keep)
    P, S, xbar = fit.pvalue[ids], fit.s_m[ids], fit.xbar[ids]

    counts, fallback = {}, {}
    for name in config.procedures:
        procedure, prior_source = SIM_PROCEDURES[name]
        prior, weights, fell_back = None, None, False
        if prior_source == "spatial-kernel":
            prior = spatial_kernel_prior(P, grid, config.kernel_bandwidth, config.kernel_threshold)
        elif prior_source == "constant":
            prior = constant_prior(P, config.const_kappa)
        if prior is not None:
            try:
                weights = build_weights(S, prior, alpha=config.alpha, tau=config.tau)
            except NoSolutionError as exc:
                logger.info("replicate %d, %s: weights unavailable (%s); using unit weights", b, name, exc)
                weights, fell_back = WeightScheme.unit(P.size), True
        try:
            result = run_procedure(
                procedure, P, alpha=config.alpha, xbar=xbar, prior=prior, weights=weights,
                pi0_mode="prior", kappa=config.abh_kappa,
            )
            decided = result.decisions.decisions
        except (DegenerateError, DomainError) as exc:
            # ten-rule with no test in [0.1, 0.9]: nothing is tested
            logger.info("replicate %d, %s: %s", b, name, exc)
            decided, fell_back = np.zeros(P.size, dtype=bool), True
        full = np.zeros(config.M, dtype=bool)
        full[ids] = decided
        counts[name] = _score(full, data.truth)
        fallback[name] = fell_back
    return ReplicateResult(b, counts, n_excluded, fallback, **extra)


@dataclass
class SimMetrics:
    procedure: str
    V: np.ndarray
    S: np.ndarray
    R: np.ndarray
    K: int

    @property
    def B(self) -> int:
        return int(self.R.size)

    @property
    def fdp(self) -> np.ndarray:
        return np.where(self.R > 0, self.V / np.maximum(self.R, 1), 0.0)

    @property
    def fdr(self) -> float:
        return float(self.fdp.mean())

    @property
    def fdr_se(self) -> float:
        return _mc_se(self.fdp)

    @property
    def power(self) -> float:
        return float(self.S.mean() / self.K) if self.K > 0 else float("nan")

    @property
    def power_se(self) -> float:
        return _mc_se(self.S / self.K) if self.K > 0 else float("nan")


def _mc_se(x) -> float:
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return 0.0
    return float(x.std(ddof=1) / np.sqrt(x.size))


@dataclass
class ExperimentResult:
    config: SimConfig
    metrics: Dict[str, SimMetrics]
    replicates: List[ReplicateResult]
    complete: bool = True

    def rows(self) -> List[dict]:
        c = self.config
        out = []
        for name in c.procedures:
            m = self.metrics[name]
            out.append(
                {"procedure": name, "C": c.C, "s": c.s, "K": c.K, "theta": c.theta, "B": m.B,
                 "fdr": m.fdr, "fdr_se": m.fdr_se, "power": m.power, "power_se": m.power_se}
            )
        return out

    def replicate_rows(self) -> List[dict]:
        c = self.config
        out = []
        for rep in self.replicates:
            for name in c.procedures:
                V, S, R = rep.counts[name]
                out.append(
                    {"procedure": name, "C": c.C, "s": c.s, "K": c.K, "theta": c.theta, "b": rep.b,
                     "V": V, "S": S, "R": R, "n_excluded": rep.n_excluded, "fallback": int(rep.fallback[name])}
                )
        return out


def aggregate(config: SimConfig, replicates: Sequence[ReplicateResult]) -> Dict[str, SimMetrics]:
    metrics = {}
    for name in config.procedures:
        counts = np.array([rep.counts[name] for rep in replicates], dtype=np.int64).reshape(-1, 3)
        metrics[name] = SimMetrics(name, counts[:, 0], counts[:, 1], counts[:, 2], config.K)
    return metrics


def run_experiment(
    config: SimConfig,
    *,
    workers: Optional[int] = None,
    on_replicate: Optional[Callable[[ReplicateResult], None]] = None,
    keep_pvalues: bool = False,
) -> ExperimentResult:
    """Run ``config.B`` replicates and aggregate FDR and power per procedure.

    Replicates run on ``workers`` threads (default ``WABH_THREADS``) and are
    consumed in order ``b = 0, 1, ...``; ``on_replicate`` sees each one as it
    completes, which lets callers stream a log.  On KeyboardInterrupt the
    replicates finished so far are aggregated and returned with
    ``complete=False``.
    """
    workers = default_workers() if workers is None else max(1, int(workers))
    replicates: List[ReplicateResult] = []
    complete = True
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        if pool is None:
            results = (run_replicate(config, b, keep_pvalues=keep_pvalues) for b in range(config.B))
        else:
            results = pool.map(lambda b: run_replicate(config, b, keep_pvalues=keep_pvalues), range(config.B))
        for rep in results:
            replicates.append(rep)
            if on_replicate is not None:
                on_replicate(rep)
    except KeyboardInterrupt:
        complete = False
        logger.warning("interrupted after %d of %d replicates", len(replicates), config.B)
    finally:
        if pool is not None:
            pool.shutdown(wait=complete, cancel_futures=True)
    if not replicates:
        raise KeyboardInterrupt
    return ExperimentResult(config, aggregate(config, replicates), replicates, complete)


def _format(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_table(rows: Sequence[dict], columns: Sequence[str], fh, header: bool = True) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    if header:
        writer.writerow(columns)
    for row in rows:
        writer.writerow([_format(row[c]) for c in columns])
