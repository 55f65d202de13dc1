"""Optimal p-value weights for one-sided normal tests.

A test of size ``t`` whose statistic is shifted by ``g`` (effect over standard
error) has power ``F(t) = Phi_bar(Phi_bar^{-1}(t) - g)``.  Maximizing expected
true positives subject to the FDR-type constraint

    G(t) = (1 - alpha) sum (1 - p_m) t_m - alpha sum p_m F_m(t_m) = 0

with a Lagrange multiplier ``lam`` gives per-test thresholds in closed form,

    t_m(lam) = Phi_bar(g_m / 2 + log c_m(lam) / g_m),
    c_m(lam) = lam (1 - p_m)(1 - alpha) / (p_m (1 + lam alpha)),

so only the scalar ``lam`` has to be found numerically.  The weights are the
thresholds rescaled to mean one.

The monotone minimum weight (MMW) variant fixes the common effect size at the
largest value for which weights stay non-increasing in the predicted standard
error ``S_m``:  ``eta = min(S) * sqrt(2 log c(lam))``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from .core import WeightScheme
from .errors import DegenerateError, DimensionError, DomainError, MMWInfeasibleError, NoSolutionError
from .normal import pdf, upper_quantile, upper_tail

logger = logging.getLogger(__name__)

PRIOR_CLAMP = 1e-6
LAMBDA_BRACKET = (1e-8, 1e8)
RESIDUAL_TOL = 1e-8
MAX_ITER = 200


def _check_size(t):
    t = np.asarray(t, dtype=float)
    if np.any(~((t > 0) & (t < 1))):
        raise DomainError("test size t must lie in (0, 1)")
    return t


def power_function(t, g):
    """Power of a one-sided normal test of size ``t`` at standardized shift ``g``."""
    t = _check_size(t)
    return upper_tail(upper_quantile(t) - np.asarray(g, dtype=float))


def density_ratio(t, g):
    """dF/dt = phi(z - g) / phi(z) with z = Phi_bar^{-1}(t), evaluated as exp(g z - g^2/2)."""
    t = _check_size(t)
    g = np.asarray(g, dtype=float)
    return np.exp(g * upper_quantile(t) - 0.5 * g * g)


def log_c_of_lambda(lam, p, alpha):
    lam = np.asarray(lam, dtype=float)
    p = np.asarray(p, dtype=float)
    return np.log(lam) + np.log1p(-p) + np.log1p(-alpha) - np.log(p) - np.log1p(lam * alpha)


def c_of_lambda(lam, p, alpha):
    """The value ``c_m(lam)`` that the density ratio must equal at the optimum."""
    lam = np.asarray(lam, dtype=float)
    p = np.asarray(p, dtype=float)
    return lam * (1.0 - p) * (1.0 - alpha) / (p * (1.0 + lam * alpha))


def threshold_of_lambda(lam, g, p, alpha):
    """Per-test size ``t_m(lam)`` solving ``density_ratio(t, g) = c(lam)``."""
    g = np.asarray(g, dtype=float)
    if np.any(g <= 0):
        raise DegenerateError("effect over standard error must be positive")
    return upper_tail(0.5 * g + log_c_of_lambda(lam, p, alpha) / g)


def threshold_derivative_s(lam, eta, s, tau, alpha):
    """d t / d S for thresholds with ``g = eta / S`` and a common prior ``tau``.

    Negative means the threshold (hence the weight) decreases as the standard
    error grows.  Vanishes exactly at ``eta = S sqrt(2 log c)``.
    """
    eta = np.asarray(eta, dtype=float)
    s = np.asarray(s, dtype=float)
    log_c = log_c_of_lambda(lam, tau, alpha)
    arg = eta / (2.0 * s) + log_c * s / eta
    return -pdf(arg) * (log_c / eta - eta / (2.0 * s * s))


@dataclass
class WeightProblem:
    """Inputs to the oracle weight optimization.

    ``g`` may contain zeros (no information); those tests receive weight 0 and
    are left out of the constraint.  Priors are clamped away from 0 and 1.
    """

    g: np.ndarray
    p: np.ndarray
    alpha: float = 0.05

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=float)
        p = np.asarray(self.p, dtype=float)
        if p.ndim == 0:
            p = np.full(self.g.shape, float(p))
        if self.g.ndim != 1 or self.g.size == 0:
            raise DimensionError("g must be a non-empty 1-D array")
        if p.shape != self.g.shape:
            raise DimensionError(f"{self.g.size} effects but {p.size} priors")
        if not np.all(np.isfinite(self.g)) or np.any(self.g < 0):
            raise DomainError("g must be finite and non-negative")
        if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
            raise DomainError("priors must lie in [0, 1]")
        if not 0 < self.alpha < 1:
            raise DomainError(f"alpha must be in (0, 1), got {self.alpha}")
        self.p = np.clip(p, PRIOR_CLAMP, 1.0 - PRIOR_CLAMP)

    @classmethod
    def from_effect(cls, eta, s, p, alpha=0.05) -> "WeightProblem":
        """Problem with a common effect ``eta`` and standard errors ``s``.

        Infinite ``s`` yields ``g = 0``.
        """
        if not eta > 0:
            raise DomainError(f"effect size must be positive, got {eta}")
        s = np.asarray(s, dtype=float)
        if np.any(~(s > 0)):
            raise DomainError("standard errors must be positive")
        return cls(eta / s, p, alpha)

    @property
    def informative(self) -> np.ndarray:
        return self.g > 0

    def thresholds(self, lam) -> Tuple[np.ndarray, np.ndarray]:
        """Thresholds and powers over the informative tests."""
        keep = self.informative
        g, p = self.g[keep], self.p[keep]
        shift = log_c_of_lambda(lam, p, self.alpha) / g
        return upper_tail(0.5 * g + shift), upper_tail(shift - 0.5 * g)


def constraint(t, power, p, alpha) -> float:
    """G = (1 - alpha) sum (1 - p) t - alpha sum p F, summed pairwise."""
    return float((1.0 - alpha) * np.sum((1.0 - p) * t) - alpha * np.sum(p * power))


@dataclass
class LagrangeSolution:
    lambda_hat: float
    residual: float
    thresholds: np.ndarray
    iterations: int = 0


def _bracket_from_one(G: Callable[[float], float], lo: float, hi: float):
    """Expand geometrically from 1 by factors of ten until G changes sign."""
    g_one = G(1.0)
    if g_one == 0.0:
        return 1.0, 1.0, g_one, g_one
    step = 10.0 if g_one > 0 else 0.1
    a, g_a = 1.0, g_one
    while True:
        b = a * step
        b = min(max(b, lo), hi)
        g_b = G(b)
        if np.sign(g_b) != np.sign(g_a):
            return (a, b, g_a, g_b) if a < b else (b, a, g_b, g_a)
        if b in (lo, hi):
            g_lo, g_hi = (g_b, G(hi)) if b == lo else (G(lo), g_b)
            raise NoSolutionError(
                f"no sign change of G on [{lo:g}, {hi:g}]: G(lo)={g_lo:.6g}, G(hi)={g_hi:.6g}"
            )
        a, g_a = b, g_b


def _refine(G, a: float, b: float) -> Tuple[float, int]:
    """Brent's method on log(lam): bisection safeguarded secant/inverse-quadratic steps."""
    if a == b:
        return a, 0
    root, info = brentq(
        lambda u: G(np.exp(u)),
        np.log(a),
        np.log(b),
        xtol=1e-15,
        rtol=4 * np.finfo(float).eps,
        maxiter=MAX_ITER,
        full_output=True,
        disp=False,
    )
    return float(np.exp(root)), info.iterations


def solve_lambda(problem: WeightProblem, rule=None) -> LagrangeSolution:
    """Find the multiplier at which the constraint G vanishes.

    Parameters
    ----------
    problem : WeightProblem
    rule : callable, optional
        ``rule(lam) -> (thresholds, powers)`` over the informative tests.
        Defaults to ``problem.thresholds``.

    Raises
    ------
    NoSolutionError
        If G keeps one sign on the whole bracket ``[1e-8, 1e8]``.
    """
    rule = rule or problem.thresholds
    p = problem.p[problem.informative]
    if p.size == 0:
        raise DegenerateError("no test has a positive effect over standard error")

    def G(lam):
        t, power = rule(lam)
        return constraint(t, power, p, problem.alpha)

    a, b, _, _ = _bracket_from_one(G, *LAMBDA_BRACKET)
    lam, iterations = _refine(G, a, b)
    t, _ = rule(lam)
    residual = abs(G(lam))
    if residual >= RESIDUAL_TOL:
        logger.warning("constraint residual %.3g exceeds %.1g at lambda=%.17g", residual, RESIDUAL_TOL, lam)
    return LagrangeSolution(lam, residual, t, iterations)


def _scheme_from_thresholds(problem: WeightProblem, t_informative, **kwargs) -> WeightScheme:
    t = np.zeros(problem.g.size)
    t[problem.informative] = t_informative
    return WeightScheme.normalized(t, **kwargs)


def optimal_weights(problem: WeightProblem, eta: Optional[float] = None, source="optimal-fixed-eta") -> WeightScheme:
    """Weights ``t_m(lam_hat) / mean(t(lam_hat))`` for a solved problem."""
    sol = solve_lambda(problem)
    return _scheme_from_thresholds(problem, sol.thresholds, source=source, eta=eta, lambda_hat=sol.lambda_hat)


def fixed_eta_weights(s, p, eta: float, alpha: float = 0.05) -> WeightScheme:
    """Optimal weights for a common effect size ``eta`` over standard errors ``s``."""
    return optimal_weights(WeightProblem.from_effect(eta, s, p, alpha), eta=float(eta))


@dataclass
class MMWSolution:
    eta: float
    lambda_hat: float
    residual: float
    thresholds: np.ndarray


def _mmw_rule(s, s_min, tau, alpha):
    def rule_from_log_c(log_c):
        g = s_min * np.sqrt(2.0 * log_c) / s
        shift = log_c / g
        return upper_tail(0.5 * g + shift), upper_tail(shift - 0.5 * g)

    return rule_from_log_c


def mmw_eta(s, tau: float = 0.9, alpha: float = 0.05, grid_points: int = 400) -> MMWSolution:
    """Largest common effect size keeping weights non-increasing in ``s``.

    Solves the constraint with every prior equal to ``tau`` and thresholds
    driven by ``g_m = min(s) sqrt(2 log c(lam)) / s_m``.  Only multipliers with
    ``log c > 0`` qualify; the search runs over ``log c`` itself, scanning a
    grid for the first sign change of G before refining with Brent's method.

    Raises
    ------
    MMWInfeasibleError
        If ``c(lam) <= 1`` for every admissible multiplier, or G never turns
        negative.
    """
    s = np.asarray(s, dtype=float)
    if s.ndim != 1 or s.size == 0:
        raise DimensionError("s must be a non-empty 1-D array")
    if np.any(~np.isfinite(s)) or np.any(s <= 0):
        raise DomainError("standard errors must be positive and finite")
    if not 0 < tau < 1:
        raise DomainError(f"tau must be in (0, 1), got {tau}")
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must be in (0, 1), got {alpha}")

    # c(lam) = lam k / (1 + lam alpha) increases to k / alpha
    k = (1.0 - tau) * (1.0 - alpha) / tau
    lam_lo, lam_hi = LAMBDA_BRACKET
    log_c_hi = float(log_c_of_lambda(lam_hi, tau, alpha))
    log_c_lo = max(float(log_c_of_lambda(lam_lo, tau, alpha)), 0.0)
    if log_c_hi <= 0:
        raise MMWInfeasibleError(
            f"c(lambda) never exceeds 1 for tau={tau}, alpha={alpha} (sup c = {k / alpha:.6g})"
        )

    s_min = float(s.min())
    rule = _mmw_rule(s, s_min, tau, alpha)

    def G(log_c):
        t, power = rule(log_c)
        return float((1.0 - alpha) * (1.0 - tau) * np.sum(t) - alpha * tau * np.sum(power))

    # G -> M/2 [(1-alpha)(1-tau) - alpha tau] as log c -> 0+
    span = log_c_hi - log_c_lo
    grid = log_c_lo + span * np.geomspace(1e-10, 1.0, grid_points)
    values = np.array([G(x) for x in grid])
    negative = np.flatnonzero(values < 0)
    if values[0] <= 0 or negative.size == 0:
        raise MMWInfeasibleError(
            "constraint has no admissible root with log c > 0: "
            f"G(log c={grid[0]:.3g})={values[0]:.6g}, G(log c={grid[-1]:.3g})={values[-1]:.6g}"
        )
    j = negative[0]
    root = brentq(G, grid[j - 1], grid[j], xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=MAX_ITER)
    c = np.exp(root)
    lam = float(c / (k - c * alpha))
    t, _ = rule(root)
    eta = s_min * np.sqrt(2.0 * root)
    return MMWSolution(float(eta), lam, abs(G(root)), t)


def mmw_weights(s, p, tau: float = 0.9, alpha: float = 0.05) -> WeightScheme:
    """MMW weights: effect size from :func:`mmw_eta` at ``tau``, then the
    optimal-weight solve with the (possibly heterogeneous) priors ``p``."""
    sol = mmw_eta(s, tau, alpha)
    problem = WeightProblem.from_effect(sol.eta, s, p, alpha)
    scheme = optimal_weights(problem, eta=sol.eta, source="mmw")
    scheme.tau = float(tau)
    return scheme


def ten_percent_rule(xbar, low: float = 0.1, high: float = 0.9) -> WeightScheme:
    """Equal weight on tests with lesion frequency in ``[low, high]``, zero elsewhere."""
    xbar = np.asarray(xbar, dtype=float)
    if xbar.ndim != 1 or xbar.size == 0:
        raise DimensionError("xbar must be a non-empty 1-D array")
    inside = (xbar >= low) & (xbar <= high)
    if not inside.any():
        raise DegenerateError(f"no test has lesion frequency in [{low}, {high}]")
    return WeightScheme.normalized(inside.astype(float), source="ten-percent-rule")
