"""Mass-univariate logistic regression of lesion status on the outcome.

For every test m the lesion indicator ``X[:, m]`` is regressed on an
intercept, the outcome ``Y`` and a total-lesion-burden covariate ``X+_m``.
Fits are vectorized over fixed-size chunks of tests, and chunks are the unit
of parallel work, so results do not depend on the number of worker threads.
"""

from __future__ import annotations

import enum
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit, logit

from .errors import DegenerateError, DimensionError, InputError
from .normal import upper_tail

logger = logging.getLogger(__name__)

TOLERANCE = 1e-10
MAX_ITER = 50
SEPARATION_BOUND = 15.0
R2_CAP = 1.0 - 1e-12
CHUNK_SIZE = 512
TRANSFORMS = ("identity", "logit")


class FitStatus(enum.IntEnum):
    OK = 0
    DEGENERATE = 1
    SEPARATED = 2
    NONCONVERGED = 3


def default_workers() -> int:
    """Thread count from ``WABH_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("WABH_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class Dataset:
    """Outcome vector and n x M binary lesion matrix."""

    Y: np.ndarray
    X: np.ndarray
    transform: str = "identity"

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=float)
        X = np.asarray(self.X)
        if self.Y.ndim != 1 or X.ndim != 2 or X.shape[0] != self.Y.size:
            raise DimensionError(f"need Y of length n and X of shape (n, M); got {self.Y.shape}, {X.shape}")
        if self.Y.size < 3:
            raise DimensionError("need at least three subjects")
        if not np.all(np.isfinite(self.Y)):
            raise InputError("outcome contains non-finite values")
        if not np.all((X == 0) | (X == 1)):
            raise InputError("lesion matrix must be binary")
        self.X = X.astype(np.uint8)
        if self.transform not in TRANSFORMS:
            raise InputError(f"unknown transform {self.transform!r}")

    @property
    def n(self) -> int:
        return self.Y.size

    @property
    def M(self) -> int:
        return self.X.shape[1]

    @property
    def outcome(self) -> np.ndarray:
        """Y after the configured transform."""
        return _apply_transform(self.Y, self.transform)


def _apply_transform(values, transform, eps=None):
    if transform == "identity":
        return np.asarray(values, dtype=float)
    if transform == "logit":
        v = np.asarray(values, dtype=float)
        if eps is not None:
            v = np.clip(v, eps, 1.0 - eps)
        elif np.any((v <= 0) | (v >= 1)):
            raise InputError("logit transform needs values strictly inside (0, 1)")
        return logit(v)
    raise InputError(f"unknown transform {transform!r}")


def total_lesion_covariate(X, m: Optional[int] = None, transform: str = "identity") -> np.ndarray:
    """Leave-one-out lesion burden ``h(mean_{j != m} X_ij)``.

    Returns the covariate for test ``m`` (length n) or, when ``m`` is None, for
    all tests as an (n, M) array.  The logit transform clamps its argument to
    ``[eps, 1 - eps]`` with ``eps = 1 / (2 (M - 1))``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionError("X must be an (n, M) array")
    M = X.shape[1]
    if M < 2:
        raise DimensionError("leave-one-out burden needs at least two tests")
    total = X.sum(axis=1, keepdims=True)
    if m is None:
        loo = (total - X) / (M - 1)
    else:
        loo = (total[:, 0] - X[:, m]) / (M - 1)
    return _apply_transform(loo, transform, eps=1.0 / (2 * (M - 1)))


def r_squared(Y, Xplus) -> np.ndarray:
    """Squared sample correlation of ``Y`` with each column of ``Xplus``.

    Constant covariates give 0; the result is capped just below 1.
    """
    Y = np.asarray(Y, dtype=float)
    Z = np.asarray(Xplus, dtype=float)
    vector = Z.ndim == 1
    if vector:
        Z = Z[:, None]
    if Y.size < 3 or Z.shape[0] != Y.size:
        raise DimensionError("need matching samples of size >= 3")
    yc = Y - Y.mean()
    zc = Z - Z.mean(axis=0)
    szz = (zc * zc).sum(axis=0)
    syz = (yc[:, None] * zc).sum(axis=0)
    syy = (yc * yc).sum()
    with np.errstate(invalid="ignore", divide="ignore"):
        r2 = (syz * syz) / (syy * szz)
    r2 = np.where((szz > 0) & (syy > 0), np.minimum(r2, R2_CAP), 0.0)
    return float(r2[0]) if vector else r2


def predicted_se(xbar, r2, n):
    """``S_m = sqrt((1 - R^2) / (n xbar (1 - xbar)))``; NaN where xbar is 0 or 1."""
    xbar = np.asarray(xbar, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.sqrt((1.0 - r2) / (n * xbar * (1.0 - xbar)))
    return np.where((xbar > 0) & (xbar < 1), s, np.nan)


def se_approx(Y, xbar, r2, n=None):
    """Large-sample standard error of the outcome slope and its scale-free part.

    Returns ``(SE_m, S_m)`` with ``SE_m = S_m / s_Y``.
    """
    Y = np.asarray(Y, dtype=float)
    n = Y.size if n is None else n
    if n < 2:
        raise DimensionError("need at least two subjects")
    xbar_arr = np.asarray(xbar, dtype=float)
    if np.any((xbar_arr <= 0) | (xbar_arr >= 1)):
        raise DegenerateError("lesion frequency must lie strictly inside (0, 1)")
    r2_arr = np.asarray(r2, dtype=float)
    if np.any((r2_arr < 0) | (r2_arr >= 1)):
        raise DegenerateError("R^2 must lie in [0, 1)")
    s = predicted_se(xbar_arr, r2_arr, n)
    se = s / np.sqrt(Y.var(ddof=1))
    if np.ndim(s) == 0:
        return float(se), float(s)
    return se, s


@dataclass
class TestSummary:
    """Per-test fit results; fields are arrays over tests (or scalars for one test)."""

    xbar: np.ndarray
    r2: np.ndarray
    s_m: np.ndarray
    beta1: np.ndarray
    se: np.ndarray
    pvalue: np.ndarray
    status: np.ndarray
    iterations: Optional[np.ndarray] = None

    __test__ = False  # keep pytest from collecting this class

    @property
    def usable(self) -> np.ndarray:
        """Tests whose p-value may enter a testing procedure."""
        status = np.asarray(self.status)
        return (status == FitStatus.OK) | (status == FitStatus.SEPARATED)

    def counts(self) -> dict:
        status = np.atleast_1d(self.status)
        return {s.name.lower(): int(np.count_nonzero(status == s)) for s in FitStatus}


def _deviance(x, eta):
    # -2 log-likelihood, stable for large |eta|
    return 2.0 * (x * np.logaddexp(0.0, -eta) + (1.0 - x) * np.logaddexp(0.0, eta)).sum(axis=0)


def _solve_each(H, U):
    """Batched ``H x = U``; on a singular batch fall back to per-test solves.

    Returns the solutions for non-singular systems and the singular mask.
    """
    try:
        return np.linalg.solve(H, U[..., None])[..., 0], np.zeros(H.shape[0], dtype=bool)
    except np.linalg.LinAlgError:
        pass
    out, singular = [], np.zeros(H.shape[0], dtype=bool)
    for i in range(H.shape[0]):
        try:
            out.append(np.linalg.solve(H[i], U[i]))
        except np.linalg.LinAlgError:
            singular[i] = True
    return np.array(out).reshape(-1, H.shape[-1]), singular


def _irls_chunk(y, X, Z):
    """Fit ``logit P(X=1) = b0 + b1 y + b2 z`` for every column of X at once.

    ``Z`` may be None for the two-parameter model.  Converged, separated or
    degenerate columns are frozen while the rest keep iterating.
    """
    n, A = X.shape
    k = 2 if Z is None else 3
    X = X.astype(float)
    xbar = X.mean(axis=0)
    status = np.full(A, FitStatus.NONCONVERGED, dtype=np.int8)
    degenerate = (xbar <= 0) | (xbar >= 1)
    status[degenerate] = FitStatus.DEGENERATE

    if Z is not None:
        Z = np.asarray(Z, dtype=float)
        zc = Z - Z.mean(axis=0)
        flat_z = ~((zc * zc).sum(axis=0) > 0)
        Z = np.where(flat_z, 0.0, Z)
    else:
        flat_z = np.zeros(A, dtype=bool)

    beta = np.zeros((A, k))
    with np.errstate(divide="ignore"):
        beta[:, 0] = np.where(degenerate, 0.0, logit(np.clip(xbar, 1e-12, 1 - 1e-12)))
    yy = y[:, None]

    def linear(b):
        eta = b[:, 0] + yy * b[:, 1]
        if k == 3:
            eta = eta + Z * b[:, 2]
        return eta

    def information(eta):
        mu = expit(eta)
        w = mu * (1.0 - mu)
        wy = w * yy
        H = np.empty((A, k, k))
        H[:, 0, 0] = w.sum(axis=0)
        H[:, 0, 1] = H[:, 1, 0] = wy.sum(axis=0)
        H[:, 1, 1] = (wy * yy).sum(axis=0)
        if k == 3:
            wz = w * Z
            H[:, 0, 2] = H[:, 2, 0] = wz.sum(axis=0)
            H[:, 1, 2] = H[:, 2, 1] = (wz * yy).sum(axis=0)
            H[:, 2, 2] = (wz * Z).sum(axis=0)
            H[flat_z, 2, 2] = 1.0
        return mu, H

    active = ~degenerate
    iterations = np.zeros(A, dtype=np.int16)
    eta = linear(beta)
    dev = _deviance(X, eta)
    for _ in range(MAX_ITER):
        if not active.any():
            break
        mu, H = information(eta)
        U = np.empty((A, k))
        r = X - mu
        U[:, 0] = r.sum(axis=0)
        U[:, 1] = (r * yy).sum(axis=0)
        if k == 3:
            U[:, 2] = (r * Z).sum(axis=0)
        step, singular = _solve_each(H[active], U[active])
        if singular.any():
            stuck = np.flatnonzero(active)[singular]
            active[stuck] = False
            step = step[~singular]
        new_beta = beta.copy()
        new_beta[active] += step
        new_eta = linear(new_beta)
        new_dev = _deviance(X, new_eta)
        iterations[active] += 1

        separated = active & (np.abs(new_beta[:, 1]) > SEPARATION_BOUND)
        if separated.any():
            new_beta[separated, 1] = np.sign(new_beta[separated, 1]) * SEPARATION_BOUND
            status[separated] = FitStatus.SEPARATED
        converged = active & ~separated & (np.abs(new_dev - dev) / (np.abs(new_dev) + 0.1) < TOLERANCE)
        status[converged] = FitStatus.OK

        beta = np.where(active[:, None], new_beta, beta)
        active &= ~(separated | converged)
        eta = linear(beta)
        dev = _deviance(X, eta)

    _, H = information(eta)
    se = np.full(A, np.nan)
    fitted = ~degenerate
    if fitted.any():
        e1 = np.zeros((int(fitted.sum()), k))
        e1[:, 1] = 1.0
        col, singular = _solve_each(H[fitted], e1)
        var = np.full(singular.size, np.nan)
        var[~singular] = col[:, 1]
        se[fitted] = np.sqrt(var)
    beta1 = np.where(degenerate, np.nan, beta[:, 1])
    pvalue = np.where(degenerate, np.nan, upper_tail(beta1 / se))
    return beta1, se, pvalue, status, iterations


def fit_mass_univariate(
    Y,
    X,
    Xplus=None,
    *,
    workers: Optional[int] = None,
    chunk_size: int = CHUNK_SIZE,
) -> TestSummary:
    """Fit every test and collect Wald p-values and predicted standard errors.

    Parameters
    ----------
    Y : (n,) array
        Outcome, already transformed.
    X : (n, M) binary array
    Xplus : (n, M) array or None
        Per-test nuisance covariate.  ``None`` fits intercept and outcome only.
    workers : int, optional
        Threads over chunks; defaults to ``WABH_THREADS``.
    chunk_size : int
        Tests per vectorized block.  Fixing it fixes the floating-point
        reduction order, so output is identical for any ``workers``.

    Returns
    -------
    TestSummary
    """
    y = np.asarray(Y, dtype=float)
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise DimensionError(f"X must have shape (n, M) with n={y.size}")
    if y.size < 4:
        raise DimensionError("need at least four subjects")
    if not np.all(np.isfinite(y)):
        raise InputError("outcome contains non-finite values")
    if Xplus is not None:
        Xplus = np.asarray(Xplus, dtype=float)
        if Xplus.shape != X.shape:
            raise DimensionError("Xplus must match the shape of X")
        if not np.all(np.isfinite(Xplus)):
            raise InputError("covariate contains non-finite values")

    n, M = X.shape
    starts = range(0, M, chunk_size)

    def run(start):
        sl = slice(start, min(start + chunk_size, M))
        return _irls_chunk(y, X[:, sl], None if Xplus is None else Xplus[:, sl])

    workers = default_workers() if workers is None else max(1, int(workers))
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    beta1, se, pvalue, status, iterations = (np.concatenate(c) for c in zip(*parts))

    xbar = X.mean(axis=0)
    r2 = np.zeros(M) if Xplus is None else r_squared(y, Xplus)
    s_m = predicted_se(xbar, r2, n)
    n_bad = np.count_nonzero(status != FitStatus.OK)
    if n_bad:
        logger.info("%d of %d tests not cleanly fitted", n_bad, M)
    return TestSummary(xbar, r2, s_m, beta1, se, pvalue, status, iterations)


def fit_logistic(Y, X_m, Xplus=None) -> TestSummary:
    """Single-test fit; fields of the returned summary are scalars."""
    X_m = np.asarray(X_m)
    if X_m.ndim != 1:
        raise DimensionError("X_m must be a single column")
    Z = None if Xplus is None else np.asarray(Xplus, dtype=float)[:, None]
    res = fit_mass_univariate(Y, X_m[:, None], Z, workers=1)
    return TestSummary(
        *(float(np.asarray(v)[0]) for v in (res.xbar, res.r2, res.s_m, res.beta1, res.se, res.pvalue)),
        status=FitStatus(int(res.status[0])),
        iterations=int(res.iterations[0]),
    )


def analyze_dataset(data: Dataset, *, workers: Optional[int] = None) -> TestSummary:
    """Fit all tests of ``data`` with the leave-one-out burden covariate."""
    y = data.outcome
    Xplus = total_lesion_covariate(data.X, transform=data.transform)
    return fit_mass_univariate(y, data.X, Xplus, workers=workers)
